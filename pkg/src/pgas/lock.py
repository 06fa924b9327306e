"""MCS queuing lock over remote atomics.

Per lock, the team's relative unit 0 holds ``tail`` (a non-collective word)
and every member owns one ``list`` cell (a collective allocation). Both hold
absolute unit ids, with -1 meaning "nobody". Acquire swaps the caller into
``tail`` and, when there was a predecessor, links itself into the
predecessor's cell and waits for a hand-off notification. Release either
CASes ``tail`` back to -1 or hands the lock to the successor.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .errors import InvalidPointer, InvalidState
from .gptr import GPTR_BYTES, GlobalPtr
from .transport import TraceEvent

NOBODY = -1
_WORD = 8
_NOBODY_BYTES = NOBODY.to_bytes(_WORD, "little", signed=True)

# release-side poll for the successor's link: yield a few times, then back off
_SPIN_YIELDS = 64
_BACKOFF_START = 1e-6
_BACKOFF_MAX = 1e-3


@dataclass
class LockRecord:
    team_id: int
    tail: GlobalPtr
    cell: GlobalPtr
    tag: tuple
    held: bool = False
    freed: bool = False


class LockMixin:
    """Lock methods of :class:`pgas.runtime.UnitContext`."""

    def _lock_event(self, kind: str, lock: LockRecord, **info) -> None:
        trace = self._fabric.trace
        if trace:
            now = time.perf_counter_ns()
            trace(TraceEvent(kind, self._unit, self._unit, 0, now, now, {"lock": lock.tag, **info}))

    def team_lock_init(self, team_id: int) -> LockRecord:
        """Collective over ``team_id``."""
        self._require_active()
        team = self._member_team(team_id)
        me = team.g2l(self._unit)
        raw = bytearray(GPTR_BYTES)
        if me == 0:
            tail = self.memalloc(_WORD)
            self.getaddr(tail, _WORD)[:] = _NOBODY_BYTES
            raw[:] = tail.to_bytes()
        self.bcast(raw, 0, team_id)
        tail = GlobalPtr.from_bytes(bytes(raw))
        cell = self.team_memalloc_aligned(team_id, _WORD)
        self.getaddr(cell, _WORD)[:] = _NOBODY_BYTES
        team.lock_seq += 1
        lock = LockRecord(team_id, tail, cell, ("lock", team_id, team.lock_seq))
        # nobody may touch a cell before its owner reset it
        self.barrier(team_id)
        return lock

    def _check_lock(self, lock: LockRecord) -> None:
        self._require_active()
        if lock.freed:
            raise InvalidPointer(f"lock {lock.tag} was freed")

    def lock_acquire(self, lock: LockRecord) -> None:
        self._check_lock(lock)
        if lock.held and self.config.debug:
            raise InvalidState(f"unit {self._unit} already holds lock {lock.tag}")
        self._lock_event("lock.acquire_start", lock)
        tail = self.dereference(lock.tail)
        prev = self._ep.fetch_and_store(tail.region, tail.rank, tail.disp, self._unit)
        if prev != NOBODY:
            self._lock_event("lock.queued", lock, prev=prev)
            self.put_blocking(lock.cell.with_unit(prev), self._unit.to_bytes(_WORD, "little", signed=True))
            self._ep.notify_recv(prev, lock.tag)
        lock.held = True
        self._lock_event("lock.acquired", lock, prev=prev)

    def lock_release(self, lock: LockRecord) -> None:
        self._check_lock(lock)
        if not lock.held:
            raise InvalidState(f"unit {self._unit} does not hold lock {lock.tag}")
        tail = self.dereference(lock.tail)
        observed = self._ep.compare_and_swap(tail.region, tail.rank, tail.disp, self._unit, NOBODY)
        if observed != self._unit:
            cell = self.getaddr(lock.cell, _WORD)
            successor = self._await_successor(cell)
            self._ep.notify_send(successor, lock.tag)
            cell[:] = _NOBODY_BYTES
        lock.held = False
        self._lock_event("lock.released", lock)

    def _await_successor(self, cell: memoryview) -> int:
        spins = 0
        delay = _BACKOFF_START
        fabric = self._fabric
        while True:
            succ = int.from_bytes(cell, "little", signed=True)
            if succ != NOBODY:
                return succ
            fabric.check_abort()
            if spins < _SPIN_YIELDS:
                spins += 1
                time.sleep(0)
            else:
                time.sleep(delay)
                delay = min(delay * 2, _BACKOFF_MAX)

    def lock_free(self, lock: LockRecord) -> None:
        """Collective; the lock must be idle."""
        self._check_lock(lock)
        team = self._member_team(lock.team_id)
        me = team.g2l(self._unit)
        flags = self._gather_small(bytes([lock.held]), team)
        verdict = None
        if flags is not None:
            busy = int.from_bytes(self.getaddr(lock.tail, _WORD), "little", signed=True) != NOBODY
            verdict = bytes([busy or any(f[0] for f in flags)])
        if self._bcast_small(verdict, team, 1)[0]:
            raise InvalidState(f"lock {lock.tag} is held or has waiters")
        if me == 0:
            self.memfree(lock.tail)
        self.team_memfree(lock.team_id, lock.cell)
        lock.freed = True
