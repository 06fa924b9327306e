"""Exception hierarchy for the runtime.

Every error raised by the library derives from :class:`DartError`. The
argument-validation errors also derive from :class:`ValueError` so callers
that only care about "bad input" can catch the builtin.
"""


class DartError(Exception):
    """Base class for all runtime errors."""


class InvalidArgument(DartError, ValueError):
    pass


class NotInitialized(DartError):
    pass


class NotAMember(DartError):
    pass


class ResourceExhausted(DartError):
    pass


class OutOfGlobalMemory(ResourceExhausted):
    pass


class InvalidPointer(DartError):
    pass


class EpochViolation(DartError):
    pass


class InvalidState(DartError):
    pass


class InvalidConfig(DartError, ValueError):
    pass


class RunAborted(DartError):
    """Raised inside a unit whose run was cancelled because another unit failed."""


class UnitFailure(DartError):
    """Aggregated failure report from :func:`pgas.runtime.launch`."""

    @property
    def root_causes(self):
        return {u: e for u, e in self.failures.items() if not isinstance(e, RunAborted)}

    def __init__(self, failures):
        self.failures = dict(failures)
        # root causes first, then the units that were merely cancelled
        order = sorted(self.failures.items(), key=lambda kv: (isinstance(kv[1], RunAborted), kv[0]))
        lines = [f"unit {u}: {type(e).__name__}: {e}" for u, e in order]
        super().__init__(f"{len(self.failures)} unit(s) failed\n" + "\n".join(lines))
