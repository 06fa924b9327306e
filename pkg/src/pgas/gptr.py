"""128-bit global pointers.

Layout of the packed integer (bit 0 is the least significant bit)::

    [0, 32)    unit id (absolute)
    [32, 48)   segment id
    [48, 64)   flags
    [64, 128)  offset in bytes

``to_bytes`` serialises the packed value little-endian, so the unit id occupies
the first four bytes on the wire.
"""

from __future__ import annotations

import re
from typing import NamedTuple

from .errors import InvalidArgument

UNIT_BITS = 32
SEGMENT_BITS = 16
FLAGS_BITS = 16
OFFSET_BITS = 64

UNIT_SHIFT = 0
SEGMENT_SHIFT = UNIT_SHIFT + UNIT_BITS
FLAGS_SHIFT = SEGMENT_SHIFT + SEGMENT_BITS
OFFSET_SHIFT = FLAGS_SHIFT + FLAGS_BITS

UNIT_MAX = (1 << UNIT_BITS) - 1
SEGMENT_MAX = (1 << SEGMENT_BITS) - 1
FLAGS_MAX = (1 << FLAGS_BITS) - 1
OFFSET_MAX = (1 << OFFSET_BITS) - 1

FLAG_COLLECTIVE = 0x0001
FLAGS_DEFINED = FLAG_COLLECTIVE

# Segment id carried by every non-collective pointer.
SEG_NONCOLLECTIVE = 0xFFFF

GPTR_BYTES = 16


class GlobalPtr(NamedTuple):
    unit: int
    segment: int
    flags: int
    offset: int

    @property
    def is_collective(self) -> bool:
        return bool(self.flags & FLAG_COLLECTIVE)

    def pack(self) -> int:
        return encode(self.unit, self.segment, self.flags, self.offset)

    def to_bytes(self) -> bytes:
        return self.pack().to_bytes(GPTR_BYTES, "little")

    @classmethod
    def from_bytes(cls, raw: bytes) -> GlobalPtr:
        if len(raw) != GPTR_BYTES:
            raise InvalidArgument(f"global pointer needs {GPTR_BYTES} bytes, got {len(raw)}")
        return decode(int.from_bytes(raw, "little"))

    def advance(self, delta: int) -> GlobalPtr:
        return advance(self, delta)

    def with_unit(self, unit: int) -> GlobalPtr:
        _check_field("unit", unit, UNIT_MAX)
        return self._replace(unit=unit)

    def __str__(self) -> str:
        return f"u:{self.unit}/s:{self.segment}/f:{self.flags}/o:{self.offset}"


GPTR_NULL = GlobalPtr(0, 0, 0, 0)


def _check_field(name: str, value: int, maximum: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise InvalidArgument(f"{name} must be an int, got {type(value).__name__}")
    if value < 0 or value > maximum:
        raise InvalidArgument(f"{name}={value} outside [0, {maximum}]")


def encode(unit: int, segment: int, flags: int, offset: int) -> int:
    """Pack the four fields into a 128-bit integer."""
    _check_field("unit", unit, UNIT_MAX)
    _check_field("segment", segment, SEGMENT_MAX)
    _check_field("flags", flags, FLAGS_MAX)
    _check_field("offset", offset, OFFSET_MAX)
    if flags & ~FLAGS_DEFINED:
        raise InvalidArgument(f"reserved flag bits set: {flags:#06x}")
    return (
        (unit << UNIT_SHIFT)
        | (segment << SEGMENT_SHIFT)
        | (flags << FLAGS_SHIFT)
        | (offset << OFFSET_SHIFT)
    )


def decode(value: int) -> GlobalPtr:
    if value < 0 or value >> 128:
        raise InvalidArgument("packed global pointer must fit in 128 unsigned bits")
    return GlobalPtr(
        (value >> UNIT_SHIFT) & UNIT_MAX,
        (value >> SEGMENT_SHIFT) & SEGMENT_MAX,
        (value >> FLAGS_SHIFT) & FLAGS_MAX,
        (value >> OFFSET_SHIFT) & OFFSET_MAX,
    )


def make(unit: int, segment: int, flags: int, offset: int) -> GlobalPtr:
    """Validated constructor; same checks as :func:`encode`."""
    encode(unit, segment, flags, offset)
    return GlobalPtr(unit, segment, flags, offset)


def advance(p: GlobalPtr, delta: int) -> GlobalPtr:
    new = p.offset + delta
    if new < 0:
        raise InvalidArgument(f"offset underflow: {p.offset} + {delta}")
    if new > OFFSET_MAX:
        raise InvalidArgument(f"offset overflow: {p.offset} + {delta}")
    return p._replace(offset=new)


_TEXT_RE = re.compile(r"u:(\d+)/s:(\d+)/f:(\d+)/o:(\d+)")


def parse(text: str) -> GlobalPtr:
    """Inverse of ``str(GlobalPtr)``."""
    m = _TEXT_RE.fullmatch(text.strip())
    if m is None:
        raise InvalidArgument(f"not a global pointer: {text!r}")
    return make(*(int(g) for g in m.groups()))
