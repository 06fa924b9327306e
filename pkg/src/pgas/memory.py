"""Global memory management.

Two allocation kinds:

* non-collective -- carved out of the unit's partition of one pre-reserved
  global region. Pointer offsets are displacements from the partition base.
* collective -- every member of a team reserves the same range of the team's
  pool, so the returned offset is valid at every member. Each allocation gets
  its own transport region and one entry in the team's segment table.
"""

from __future__ import annotations

import struct
from bisect import bisect_right, insort
from dataclasses import dataclass

from .errors import InvalidArgument, InvalidPointer, OutOfGlobalMemory, ResourceExhausted
from .gptr import FLAG_COLLECTIVE, SEG_NONCOLLECTIVE, GlobalPtr
from .transport import Region

ALIGN = 8


def align_up(n: int, quantum: int = ALIGN) -> int:
    return -(-n // quantum) * quantum


class NonCollectivePool:
    """First-fit free list with coalescing over ``[0, capacity)``."""

    def __init__(self, capacity: int, align: int = ALIGN):
        if capacity < 0:
            raise InvalidArgument("pool capacity must be non-negative")
        self.capacity = capacity
        self.align = align
        self.free_list: list[list[int]] = [[0, capacity]] if capacity else []
        self.live: dict[int, int] = {}
        self._starts: list[int] = []

    def alloc(self, size: int) -> int:
        if size <= 0:
            raise InvalidArgument(f"allocation size must be positive, got {size}")
        need = align_up(size, self.align)
        for i, block in enumerate(self.free_list):
            off, length = block
            if length >= need:
                if length == need:
                    del self.free_list[i]
                else:
                    block[0] += need
                    block[1] -= need
                self.live[off] = need
                insort(self._starts, off)
                return off
        raise OutOfGlobalMemory(f"no free block of {need} bytes (capacity {self.capacity})")

    def free(self, offset: int) -> None:
        need = self.live.pop(offset, None)
        if need is None:
            raise InvalidArgument(f"offset {offset} is not a live allocation")
        self._starts.remove(offset)
        fl = self.free_list
        i = bisect_right(fl, [offset, need])
        fl.insert(i, [offset, need])
        if i + 1 < len(fl) and fl[i][0] + fl[i][1] == fl[i + 1][0]:
            fl[i][1] += fl[i + 1][1]
            del fl[i + 1]
        if i > 0 and fl[i - 1][0] + fl[i - 1][1] == fl[i][0]:
            fl[i - 1][1] += fl[i][1]
            del fl[i]

    def is_live(self, offset: int) -> bool:
        return offset in self.live

    def containing(self, offset: int) -> int | None:
        """Start of the live block covering ``offset``, if any."""
        i = bisect_right(self._starts, offset)
        if i == 0:
            return None
        start = self._starts[i - 1]
        return start if offset < start + self.live[start] else None

    def bytes_free(self) -> int:
        return sum(length for _, length in self.free_list)

    def reset(self) -> None:
        self.free_list = [[0, self.capacity]] if self.capacity else []
        self.live.clear()
        self._starts.clear()


@dataclass
class SegmentEntry:
    offset: int
    size: int
    region: Region | None

    @property
    def end(self) -> int:
        return self.offset + self.size


class SegmentTable:
    """Translation table: pool offset -> allocation (size, region)."""

    def __init__(self):
        self._offsets: list[int] = []
        self._entries: dict[int, SegmentEntry] = {}

    def add(self, entry: SegmentEntry) -> None:
        i = bisect_right(self._offsets, entry.offset)
        if i > 0 and self._entries[self._offsets[i - 1]].end > entry.offset:
            raise InvalidArgument(f"segment at {entry.offset} overlaps an existing entry")
        if i < len(self._offsets) and entry.end > self._offsets[i]:
            raise InvalidArgument(f"segment at {entry.offset} overlaps an existing entry")
        insort(self._offsets, entry.offset)
        self._entries[entry.offset] = entry

    def remove(self, offset: int) -> SegmentEntry:
        entry = self._entries.pop(offset, None)
        if entry is None:
            raise InvalidArgument(f"no segment starts at offset {offset}")
        self._offsets.remove(offset)
        return entry

    def get(self, offset: int) -> SegmentEntry | None:
        return self._entries.get(offset)

    def lookup(self, offset: int) -> SegmentEntry | None:
        """Entry whose range contains ``offset``."""
        i = bisect_right(self._offsets, offset)
        if i == 0:
            return None
        entry = self._entries[self._offsets[i - 1]]
        if offset < entry.end or (entry.size == 0 and offset == entry.offset):
            return entry
        return None

    def entries(self) -> list[SegmentEntry]:
        return [self._entries[o] for o in self._offsets]

    def __len__(self) -> int:
        return len(self._offsets)


class TeamPool:
    """Bump allocator with stack-discipline reclamation.

    Freeing the topmost allocation pops it (and any tombstones beneath it);
    freeing anything else only tombstones the range.
    """

    def __init__(self, capacity: int, align: int = ALIGN):
        self.capacity = capacity
        self.align = align
        self.bump_offset = 0
        self._stack: list[list] = []  # [offset, size, live]

    def alloc(self, size: int) -> int:
        if size <= 0:
            raise InvalidArgument(f"allocation size must be positive, got {size}")
        need = align_up(size, self.align)
        if self.bump_offset + need > self.capacity:
            raise OutOfGlobalMemory(
                f"team pool exhausted: {self.bump_offset} + {need} > {self.capacity}")
        off = self.bump_offset
        self._stack.append([off, need, True])
        self.bump_offset += need
        return off

    def can_alloc(self, size: int) -> bool:
        return size > 0 and self.bump_offset + align_up(size, self.align) <= self.capacity

    def free(self, offset: int) -> None:
        for rec in self._stack:
            if rec[0] == offset and rec[2]:
                rec[2] = False
                break
        else:
            raise InvalidArgument(f"offset {offset} is not a live team allocation")
        while self._stack and not self._stack[-1][2]:
            self._stack.pop()
        self.bump_offset = self._stack[-1][0] + self._stack[-1][1] if self._stack else 0

    def tombstones(self) -> list[tuple[int, int]]:
        return [(o, s) for o, s, live in self._stack if not live]


@dataclass(frozen=True)
class Target:
    """Where a global pointer lands in the transport."""

    region: Region
    rank: int
    disp: int


_ALLOC_REQ = struct.Struct("<q")
_ALLOC_REPLY = struct.Struct("<bq")
_ALLOC_OK, _ALLOC_MISMATCH, _ALLOC_OOM, _ALLOC_BADID = 0, 1, 2, 3


class MemoryMixin:
    """Global memory methods of :class:`pgas.runtime.UnitContext`."""

    # -- per-team bookkeeping, called by team create/destroy ---------------

    def _team_attach(self, team) -> None:
        team.pool = TeamPool(self.config.team_pool_bytes)
        team.table = SegmentTable()

    def _team_detach(self, team) -> None:
        for entry in team.table.entries():
            if entry.region is not None:
                self._ep.region_destroy(entry.region)
        team.table = SegmentTable()
        team.pool = None

    # -- non-collective ------------------------------------------------------

    def memalloc(self, nbytes: int) -> GlobalPtr:
        """Local allocation in this unit's partition of the global region."""
        self._require_active()
        off = self._local_pool.alloc(nbytes)
        return GlobalPtr(self._unit, SEG_NONCOLLECTIVE, 0, off)

    def memfree(self, p: GlobalPtr) -> None:
        self._require_active()
        if p.is_collective or p.segment != SEG_NONCOLLECTIVE:
            raise InvalidArgument(f"{p} is not a non-collective pointer")
        if p.unit != self._unit:
            raise InvalidArgument(f"{p} was not allocated by unit {self._unit}")
        self._local_pool.free(p.offset)

    # -- collective ----------------------------------------------------------

    def team_memalloc_aligned(self, team_id: int, nbytes: int) -> GlobalPtr:
        """Collective, symmetric allocation of ``nbytes`` at every member of ``team_id``."""
        self._require_active()
        team = self._member_team(team_id)
        sizes = self._gather_small(_ALLOC_REQ.pack(nbytes), team)
        reply = None
        if sizes is not None:
            vals = {_ALLOC_REQ.unpack(s)[0] for s in sizes}
            if len(vals) != 1 or nbytes <= 0:
                reply = _ALLOC_REPLY.pack(_ALLOC_MISMATCH, -1)
            elif team_id >= SEG_NONCOLLECTIVE:
                reply = _ALLOC_REPLY.pack(_ALLOC_BADID, -1)
            elif not team.pool.can_alloc(nbytes):
                reply = _ALLOC_REPLY.pack(_ALLOC_OOM, -1)
            else:
                reply = _ALLOC_REPLY.pack(_ALLOC_OK, team.pool.bump_offset)
        status, offset = _ALLOC_REPLY.unpack(self._bcast_small(reply, team, _ALLOC_REPLY.size))
        if status == _ALLOC_MISMATCH:
            raise InvalidArgument(f"team {team_id}: allocation sizes differ between members or are not positive")
        if status == _ALLOC_OOM:
            raise OutOfGlobalMemory(f"team {team_id}: pool cannot fit {nbytes} bytes")
        if status == _ALLOC_BADID:
            raise ResourceExhausted(f"team id {team_id} does not fit the 16-bit segment field")
        mine = team.pool.alloc(nbytes)
        assert mine == offset, "team pool replicas diverged"
        team.alloc_seq += 1
        region = self._ep.region_create(("seg", team_id, team.alloc_seq), team.members, nbytes)
        self._ep.region_epoch_open(region)
        team.table.add(SegmentEntry(offset, nbytes, region))
        return GlobalPtr(self._unit, team_id, FLAG_COLLECTIVE, offset)

    def team_memfree(self, team_id: int, p: GlobalPtr) -> None:
        self._require_active()
        if not p.is_collective:
            raise InvalidArgument(f"{p} is not a collective pointer")
        if p.segment != team_id:
            raise InvalidArgument(f"{p} does not belong to team {team_id}")
        team = self._member_team(team_id)
        entry = team.table.get(p.offset)
        if entry is None:
            raise InvalidArgument(f"{p} is not the start of a live segment of team {team_id}")
        self.barrier(team_id)
        team.table.remove(p.offset)
        team.pool.free(p.offset)
        self._ep.region_destroy(entry.region)

    # -- dereference ----------------------------------------------------------

    def dereference(self, p: GlobalPtr) -> Target:
        """Map a global pointer to ``(region, rank, displacement)``.

        Non-collective pointers need no unit translation. Collective pointers
        are translated to the relative id inside the owning team, and the
        segment table resolves the region.
        """
        self._require_active()
        if not p.is_collective:
            if p.segment != SEG_NONCOLLECTIVE:
                raise InvalidPointer(f"{p}: non-collective pointer with segment {p.segment}")
            if p.unit >= self._nunits:
                raise InvalidPointer(f"{p}: no unit {p.unit}")
            if p.offset >= self._global_region.nbytes:
                raise InvalidPointer(f"{p}: offset outside the global segment")
            if p.unit == self._unit and not self._local_owns(p.offset):
                raise InvalidPointer(f"{p}: not inside a live allocation")
            return Target(self._global_region, p.unit, p.offset)
        team = self._registry.find(p.segment)
        if team is None or team.table is None:
            raise InvalidPointer(f"{p}: team {p.segment} is not live here")
        entry = team.table.lookup(p.offset)
        if entry is None:
            raise InvalidPointer(f"{p}: offset not inside any live segment")
        try:
            rank = team.g2l(p.unit)
        except InvalidArgument:
            raise InvalidPointer(f"{p}: unit {p.unit} is not a member of team {p.segment}") from None
        return Target(entry.region, rank, p.offset - entry.offset)

    def _local_owns(self, offset: int) -> bool:
        return self._local_pool.containing(offset) is not None

    def getaddr(self, p: GlobalPtr, nbytes: int | None = None) -> memoryview:
        """Local memory behind a pointer owned by this unit."""
        t = self.dereference(p)
        if t.region.participants[t.rank] != self._unit:
            raise InvalidArgument(f"{p} is not local to unit {self._unit}")
        view = t.region.local_view(t.rank)
        end = t.region.nbytes if nbytes is None else t.disp + nbytes
        if end > t.region.nbytes:
            raise InvalidArgument(f"{nbytes} bytes at {p} exceed the segment")
        return view[t.disp:end]

    def gptr_setunit(self, p: GlobalPtr, unit: int) -> GlobalPtr:
        return p.with_unit(unit)
