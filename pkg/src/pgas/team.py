"""Groups, teams and the per-unit team registry.

Groups are local, immutable, strictly ascending tuples of absolute unit ids.
Teams are collective: every member keeps its own :class:`TeamRegistry`
replica, and the collective operations here keep the replicas consistent.
"""

from __future__ import annotations

import struct
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Iterable

from .errors import InvalidArgument, NotAMember, ResourceExhausted

DART_TEAM_ALL = 0
TEAM_NULL = -1
EMPTY_SLOT = -1


class Group:
    """Ordered set of absolute unit ids.

    Operations return new groups; a group is never mutated in place.
    """

    __slots__ = ("_members",)

    def __init__(self, members: Iterable[int] = ()):
        ms = tuple(members)
        for a, b in zip(ms, ms[1:]):
            if a >= b:
                raise InvalidArgument(f"group members must be strictly ascending: {ms}")
        if ms and ms[0] < 0:
            raise InvalidArgument("unit ids are non-negative")
        self._members = ms

    @classmethod
    def of(cls, units: Iterable[int]) -> Group:
        """Build from any iterable of ids, sorting and dropping duplicates."""
        return cls(sorted(set(units)))

    @property
    def members(self) -> tuple[int, ...]:
        return self._members

    def size(self) -> int:
        return len(self._members)

    def ismember(self, unit: int) -> bool:
        i = bisect_left(self._members, unit)
        return i < len(self._members) and self._members[i] == unit

    def index(self, unit: int) -> int:
        i = bisect_left(self._members, unit)
        if i == len(self._members) or self._members[i] != unit:
            raise InvalidArgument(f"unit {unit} is not in {self}")
        return i

    def issubset(self, other: Group) -> bool:
        return all(other.ismember(u) for u in self._members)

    def __iter__(self):
        return iter(self._members)

    def __len__(self) -> int:
        return len(self._members)

    def __eq__(self, other) -> bool:
        return isinstance(other, Group) and self._members == other._members

    def __hash__(self) -> int:
        return hash(self._members)

    def __repr__(self) -> str:
        return f"Group({list(self._members)})"


def group_init() -> Group:
    return Group()


def group_union(g1: Group, g2: Group) -> Group:
    """Merge two ascending groups into one ascending group."""
    a, b = g1.members, g2.members
    out: list[int] = []
    i = j = 0
    while i < len(a) and j < len(b):
        if a[i] < b[j]:
            out.append(a[i])
            i += 1
        elif b[j] < a[i]:
            out.append(b[j])
            j += 1
        else:
            out.append(a[i])
            i += 1
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return Group(out)


def group_addmember(g: Group, unit: int, nunits: int) -> Group:
    if not 0 <= unit < nunits:
        raise InvalidArgument(f"unit {unit} outside [0, {nunits})")
    return group_union(g, Group((unit,)))


def group_split(g: Group, n: int):
    raise NotImplementedError("group_split is not provided")


@dataclass
class Team:
    team_id: int
    group: Group
    parent_id: int
    # per-team memory bookkeeping, filled in by the memory layer
    pool: object = None
    table: object = None
    alloc_seq: int = 0
    lock_seq: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def members(self) -> tuple[int, ...]:
        return self.group.members

    def size(self) -> int:
        return len(self.group)

    def g2l(self, unit: int) -> int:
        try:
            return self.group.index(unit)
        except InvalidArgument:
            raise InvalidArgument(f"unit {unit} is not a member of team {self.team_id}") from None

    def l2g(self, rel: int) -> int:
        if not 0 <= rel < len(self.group):
            raise InvalidArgument(f"relative id {rel} outside team {self.team_id} of size {len(self.group)}")
        return self.group.members[rel]


class TeamRegistry:
    """Fixed-capacity ``teamlist`` with a parallel ``teams`` array.

    A team's slot index is the key for its per-team structures. Slots are
    found by linear scan; ``EMPTY_SLOT`` marks a free one.
    """

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise InvalidArgument("teamlist capacity must be at least 1")
        self.teamlist = [EMPTY_SLOT] * capacity
        self.teams: list[Team | None] = [None] * capacity
        self.next_team_id = 0
        self._retired: set[int] = set()
        # teams created under a parent of ours that left us out
        self.foreign: set[int] = set()

    @property
    def capacity(self) -> int:
        return len(self.teamlist)

    def live(self) -> int:
        return sum(1 for t in self.teamlist if t != EMPTY_SLOT)

    def free_slot(self) -> int:
        for i, tid in enumerate(self.teamlist):
            if tid == EMPTY_SLOT:
                return i
        raise ResourceExhausted(f"teamlist full ({self.capacity} slots)")

    def install(self, slot: int, team: Team) -> None:
        if self.teamlist[slot] != EMPTY_SLOT:
            raise InvalidArgument(f"slot {slot} already holds team {self.teamlist[slot]}")
        if team.team_id < self.next_team_id or team.team_id in self._retired:
            raise InvalidArgument(f"team id {team.team_id} was already used")
        self.teamlist[slot] = team.team_id
        self.teams[slot] = team
        self.next_team_id = team.team_id + 1

    def slot_of(self, team_id: int) -> int:
        if team_id < 0:
            raise InvalidArgument(f"invalid team id {team_id}")
        for i, tid in enumerate(self.teamlist):
            if tid == team_id:
                return i
        raise InvalidArgument(f"unknown or destroyed team {team_id}")

    def lookup(self, team_id: int) -> Team:
        return self.teams[self.slot_of(team_id)]

    def find(self, team_id: int) -> Team | None:
        for i, tid in enumerate(self.teamlist):
            if tid == team_id:
                return self.teams[i]
        return None

    def remove(self, team_id: int) -> Team:
        slot = self.slot_of(team_id)
        team = self.teams[slot]
        self.teamlist[slot] = EMPTY_SLOT
        self.teams[slot] = None
        self._retired.add(team_id)
        return team

    def live_teams(self) -> list[Team]:
        return [t for t in self.teams if t is not None]

    def dump(self) -> str:
        rows = [f"teamlist capacity={self.capacity} live={self.live()} next_id={self.next_team_id}"]
        for i, tid in enumerate(self.teamlist):
            if tid != EMPTY_SLOT:
                rows.append(f"  [{i}] team {tid}: {list(self.teams[i].members)}")
        return "\n".join(rows)


_CREATE_REPLY = struct.Struct("<bq")
_OK, _FULL = 0, 1


class TeamMixin:
    """Team management methods of :class:`pgas.runtime.UnitContext`."""

    def team(self, team_id: int) -> Team:
        """The live team record, or ``InvalidArgument``."""
        return self._registry.lookup(team_id)

    def _member_team(self, team_id: int) -> Team:
        team = self._registry.find(team_id)
        if team is None:
            if team_id in self._registry.foreign:
                raise NotAMember(f"unit {self._unit} is not in team {team_id}")
            raise InvalidArgument(f"unknown or destroyed team {team_id}")
        if not team.group.ismember(self._unit):
            raise NotAMember(f"unit {self._unit} is not in team {team_id}")
        return team

    def group_addmember(self, g: Group, unit: int) -> Group:
        self._require_active()
        return group_addmember(g, unit, self._nunits)

    def team_create(self, parent: int, group: Group) -> int:
        """Collective over ``parent``. Returns the new id, or ``TEAM_NULL`` at non-members."""
        self._require_active()
        pteam = self._member_team(parent)
        if len(group) == 0:
            raise InvalidArgument("cannot create a team from an empty group")
        if not group.issubset(pteam.group):
            raise InvalidArgument(f"{group} is not a subset of team {parent}")

        inside = group.ismember(self._unit)
        slot = -1
        if inside:
            try:
                slot = self._registry.free_slot()
            except ResourceExhausted:
                slot = -1
        status = _OK if (not inside or slot >= 0) else _FULL
        statuses = self._gather_small(struct.pack("<b", status), pteam)

        reply = None
        if statuses is not None:
            worst = max(s[0] for s in statuses)
            new_id = self._next_team_id() if worst == _OK else -1
            reply = _CREATE_REPLY.pack(worst, new_id)
        worst, new_id = _CREATE_REPLY.unpack(self._bcast_small(reply, pteam, _CREATE_REPLY.size))
        if worst != _OK:
            raise ResourceExhausted(f"teamlist full at some member of team {parent}")
        if not inside:
            self._registry.foreign.add(new_id)
            return TEAM_NULL
        team = Team(new_id, group, parent)
        self._team_attach(team)
        self._registry.install(slot, team)
        return new_id

    def team_destroy(self, team_id: int) -> None:
        self._require_active()
        if team_id == DART_TEAM_ALL:
            raise InvalidArgument("the default team cannot be destroyed")
        team = self._member_team(team_id)
        self.barrier(team_id)
        self._team_detach(team)
        self._registry.remove(team_id)

    def team_myid(self, team_id: int = DART_TEAM_ALL) -> int:
        self._require_active()
        return self._member_team(team_id).g2l(self._unit)

    def team_size(self, team_id: int = DART_TEAM_ALL) -> int:
        self._require_active()
        return self._member_team(team_id).size()

    def team_get_group(self, team_id: int = DART_TEAM_ALL) -> Group:
        self._require_active()
        return Group(self._member_team(team_id).members)

    def team_unit_g2l(self, team_id: int, unit: int) -> int:
        self._require_active()
        return self.team(team_id).g2l(unit)

    def team_unit_l2g(self, team_id: int, rel: int) -> int:
        self._require_active()
        return self.team(team_id).l2g(rel)
