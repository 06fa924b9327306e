"""A PGAS runtime: units, teams, global pointers, one-sided RMA, collectives and MCS locks."""

from .errors import (
    DartError,
    EpochViolation,
    InvalidArgument,
    InvalidConfig,
    InvalidPointer,
    InvalidState,
    NotAMember,
    NotInitialized,
    OutOfGlobalMemory,
    ResourceExhausted,
    RunAborted,
    UnitFailure,
)
from .gptr import FLAG_COLLECTIVE, GPTR_NULL, SEG_NONCOLLECTIVE, GlobalPtr
from .lock import LockRecord
from .runtime import RuntimeConfig, UnitContext, launch
from .team import DART_TEAM_ALL, TEAM_NULL, Group, group_addmember, group_init, group_union

__all__ = [
    "DART_TEAM_ALL", "TEAM_NULL", "FLAG_COLLECTIVE", "GPTR_NULL", "SEG_NONCOLLECTIVE",
    "GlobalPtr", "Group", "LockRecord", "RuntimeConfig", "UnitContext", "launch",
    "group_addmember", "group_init", "group_union",
    "DartError", "EpochViolation", "InvalidArgument", "InvalidConfig", "InvalidPointer",
    "InvalidState", "NotAMember", "NotInitialized", "OutOfGlobalMemory", "ResourceExhausted",
    "RunAborted", "UnitFailure",
]
