"""In-process one-sided RMA transport.

A :class:`Fabric` is shared by every unit of a run; each unit talks to it
through its own :class:`Endpoint`. Regions are slabs of bytes, one slab per
participating rank, and are addressed as ``(region, rank-in-region, disp)``.

Semantics kept from passive-target RMA:

* RMA on a region is only legal while the origin holds an open shared-access
  epoch on it. Closing the epoch completes the origin's outstanding requests.
* Completion is driven entirely by the origin. The target never has to call
  into the transport for an operation to finish.
* Memory is unified: once a request is fully complete its effect is visible
  to plain local reads of the target slab.
* Conflicting plain accesses to the same bytes give undefined contents.
  Transport metadata is never corrupted by them.
"""

from __future__ import annotations

import enum
import itertools
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

from .errors import EpochViolation, InvalidArgument, InvalidState, RunAborted

ATOMIC_BYTES = 8


class RequestState(enum.IntEnum):
    PENDING = 0
    LOCAL = 1  # origin buffer may be reused; target not yet updated
    COMPLETE = 2


@dataclass(frozen=True)
class TraceEvent:
    kind: str
    source: int
    target: int
    nbytes: int
    t_start: int
    t_end: int
    info: dict = field(default_factory=dict)


TraceHook = Callable[[TraceEvent], None]


class Region:
    """A byte slab per participant plus the per-region atomic facility."""

    def __init__(self, rid: int, key: Hashable, participants: Sequence[int], nbytes: int):
        self.id = rid
        self.key = key
        self.participants = tuple(participants)
        self.nbytes = nbytes
        self.slabs = [bytearray(nbytes) for _ in self.participants]
        self.atomic_lock = threading.Lock()
        self.atomic_seq = 0
        self._epochs: set[int] = set()
        self._attached: set[int] = set()
        self._epoch_lock = threading.Lock()

    def __repr__(self) -> str:
        return f"Region(id={self.id}, key={self.key!r}, ranks={len(self.participants)}, nbytes={self.nbytes})"

    def epoch_open_for(self, origin: int) -> bool:
        return origin in self._epochs

    def local_view(self, rank: int) -> memoryview:
        return memoryview(self.slabs[rank])


class RmaRequest:
    __slots__ = ("id", "kind", "origin", "state", "_run", "nbytes")

    def __init__(self, rid: int, kind: str, origin: int, nbytes: int, run, state=RequestState.PENDING):
        self.id = rid
        self.kind = kind
        self.origin = origin
        self.nbytes = nbytes
        self.state = state
        self._run = run

    @property
    def complete(self) -> bool:
        return self.state is RequestState.COMPLETE

    def __repr__(self) -> str:
        return f"RmaRequest({self.id}, {self.kind}, origin={self.origin}, {self.state.name})"


class Fabric:
    """Everything the units of one run share."""

    def __init__(self, nranks: int, trace: TraceHook | None = None, poll_interval: float = 0.05):
        if nranks < 1:
            raise InvalidArgument("need at least one rank")
        self.nranks = nranks
        self.trace = trace
        self.poll_interval = poll_interval
        self.regions: dict[int, Region] = {}
        self._by_key: dict[Hashable, Region] = {}
        self._lock = threading.Lock()
        self._rids = itertools.count()
        self._reqids = itertools.count()
        self._channels: dict[tuple, queue.SimpleQueue] = {}
        self._aborted = threading.Event()
        self.endpoints = [Endpoint(self, r) for r in range(nranks)]

    # -- run control -------------------------------------------------------

    def abort(self) -> None:
        self._aborted.set()

    @property
    def aborted(self) -> bool:
        return self._aborted.is_set()

    def check_abort(self) -> None:
        if self._aborted.is_set():
            raise RunAborted("run aborted by a failing unit")

    def audit(self) -> list[str]:
        """Leftover resources; empty after a clean teardown."""
        leaks = [f"live region {r!r}" for r in self.regions.values()]
        for ep in self.endpoints:
            leaks.extend(f"outstanding request {q!r}" for q in ep.pending.values())
        return leaks

    def _channel(self, key: tuple) -> queue.SimpleQueue:
        ch = self._channels.get(key)
        if ch is None:
            with self._lock:
                ch = self._channels.setdefault(key, queue.SimpleQueue())
        return ch


class Endpoint:
    """One rank's view of the fabric. Not shared between units."""

    def __init__(self, fabric: Fabric, rank: int):
        self.fabric = fabric
        self.rank = rank
        self.pending: dict[int, RmaRequest] = {}

    # -- regions -----------------------------------------------------------

    def region_create(self, key: Hashable, participants: Sequence[int], nbytes: int) -> Region:
        """Collective over ``participants``: every one calls with the same key.

        The first caller creates the region; later callers attach to it.
        """
        participants = tuple(participants)
        if self.rank not in participants:
            raise InvalidArgument(f"rank {self.rank} is not a participant of region {key!r}")
        if nbytes < 0:
            raise InvalidArgument("region size must be non-negative")
        fab = self.fabric
        with fab._lock:
            r = fab._by_key.get(key)
            if r is None:
                r = Region(next(fab._rids), key, participants, nbytes)
                fab._by_key[key] = r
                fab.regions[r.id] = r
            elif r.participants != participants or r.nbytes != nbytes:
                raise InvalidArgument(f"region {key!r} created with mismatched arguments")
            if self.rank in r._attached:
                raise InvalidState(f"rank {self.rank} already attached to region {key!r}")
            r._attached.add(self.rank)
        return r

    def region_epoch_open(self, r: Region) -> None:
        with r._epoch_lock:
            if self.rank not in r._attached:
                raise InvalidState(f"rank {self.rank} is not attached to {r!r}")
            r._epochs.add(self.rank)

    def region_epoch_close(self, r: Region) -> None:
        self.flush()
        with r._epoch_lock:
            r._epochs.discard(self.rank)

    def region_destroy(self, r: Region) -> None:
        """Detach this rank; the region disappears once every participant detached."""
        if r._epochs and self.rank in r._epochs:
            self.region_epoch_close(r)
        fab = self.fabric
        with fab._lock:
            if self.rank not in r._attached:
                raise InvalidState(f"rank {self.rank} is not attached to {r!r}")
            r._attached.discard(self.rank)
            if not r._attached:
                fab.regions.pop(r.id, None)
                fab._by_key.pop(r.key, None)

    # -- one-sided transfers ----------------------------------------------

    def _check(self, r: Region, target: int, disp: int, nbytes: int) -> bytearray:
        if self.rank not in r._epochs:
            raise EpochViolation(f"rank {self.rank} has no open epoch on {r!r}")
        if not 0 <= target < len(r.participants):
            raise InvalidArgument(f"target rank {target} not in region of {len(r.participants)} ranks")
        if disp < 0 or nbytes < 0 or disp + nbytes > r.nbytes:
            raise InvalidArgument(f"[{disp}, {disp + nbytes}) outside region extent {r.nbytes}")
        return r.slabs[target]

    def put_nb(self, r: Region, target: int, disp: int, src) -> RmaRequest:
        src = memoryview(src).cast("B")
        n = len(src)
        slab = self._check(r, target, disp, n)
        fab = self.fabric
        t0 = time.perf_counter_ns() if fab.trace else 0
        data = bytes(src)  # local completion: origin buffer is free from here on

        def run():
            slab[disp:disp + n] = data

        req = RmaRequest(next(fab._reqids), "put", self.rank, n, run, RequestState.LOCAL)
        if n == 0:
            req.state = RequestState.COMPLETE
        else:
            self.pending[req.id] = req
        if fab.trace:
            fab.trace(TraceEvent("put", self.rank, r.participants[target], n, t0, time.perf_counter_ns(),
                                 {"region": r.id, "disp": disp}))
        return req

    def get_nb(self, r: Region, target: int, disp: int, nbytes: int, out=None):
        """Returns ``(request, out)``; ``out`` is filled once the request completes."""
        slab = self._check(r, target, disp, nbytes)
        if out is None:
            out = bytearray(nbytes)
        dst = memoryview(out).cast("B")
        if len(dst) != nbytes:
            raise InvalidArgument(f"destination holds {len(dst)} bytes, need {nbytes}")
        if dst.readonly:
            raise InvalidArgument("destination buffer is read-only")
        fab = self.fabric
        t0 = time.perf_counter_ns() if fab.trace else 0

        def run():
            dst[:] = slab[disp:disp + nbytes]

        req = RmaRequest(next(fab._reqids), "get", self.rank, nbytes, run)
        if nbytes == 0:
            req.state = RequestState.COMPLETE
        else:
            self.pending[req.id] = req
        if fab.trace:
            fab.trace(TraceEvent("get", self.rank, r.participants[target], nbytes, t0, time.perf_counter_ns(),
                                 {"region": r.id, "disp": disp}))
        return req, out

    def _progress(self, req: RmaRequest) -> None:
        if req.origin != self.rank:
            raise InvalidArgument(f"request {req.id} belongs to rank {req.origin}, not {self.rank}")
        if req.state is RequestState.COMPLETE:
            return
        req._run()
        req._run = None
        req.state = RequestState.COMPLETE
        self.pending.pop(req.id, None)

    def request_wait(self, reqs: RmaRequest | Iterable[RmaRequest]) -> None:
        if isinstance(reqs, RmaRequest):
            reqs = (reqs,)
        for req in reqs:
            self._progress(req)

    def request_test(self, reqs: RmaRequest | Iterable[RmaRequest]):
        """Non-blocking completion check; returns one flag or a list of flags.

        A successful test means full completion, the same as a wait.
        """
        if isinstance(reqs, RmaRequest):
            self._progress(reqs)
            return reqs.complete
        flags = []
        for req in reqs:
            self._progress(req)
            flags.append(req.complete)
        return flags

    def flush(self) -> None:
        """Complete every outstanding request of this origin."""
        for req in list(self.pending.values()):
            self._progress(req)

    # -- atomics -----------------------------------------------------------

    def _atomic_slot(self, r: Region, target: int, disp: int) -> bytearray:
        if disp % ATOMIC_BYTES:
            raise InvalidArgument(f"atomic displacement {disp} is not {ATOMIC_BYTES}-byte aligned")
        return self._check(r, target, disp, ATOMIC_BYTES)

    def _atomic(self, kind, r: Region, target: int, disp: int, update):
        slab = self._atomic_slot(r, target, disp)
        fab = self.fabric
        t0 = time.perf_counter_ns() if fab.trace else 0
        with r.atomic_lock:
            old = int.from_bytes(slab[disp:disp + ATOMIC_BYTES], "little", signed=True)
            new = update(old)
            if new != old:
                slab[disp:disp + ATOMIC_BYTES] = new.to_bytes(ATOMIC_BYTES, "little", signed=True)
            r.atomic_seq += 1
            seq = r.atomic_seq
        if fab.trace:
            fab.trace(TraceEvent(kind, self.rank, r.participants[target], ATOMIC_BYTES, t0, time.perf_counter_ns(),
                                 {"region": r.id, "disp": disp, "seq": seq, "old": old, "new": new}))
        return old

    def fetch_and_store(self, r: Region, target: int, disp: int, value: int) -> int:
        _check_i64(value)
        return self._atomic("fas", r, target, disp, lambda old: value)

    def compare_and_swap(self, r: Region, target: int, disp: int, expected: int, desired: int) -> int:
        _check_i64(expected)
        _check_i64(desired)
        return self._atomic("cas", r, target, disp, lambda old: desired if old == expected else old)

    def fetch_and_add(self, r: Region, target: int, disp: int, delta: int) -> int:
        def add(old):
            new = old + delta
            _check_i64(new)
            return new

        return self._atomic("faa", r, target, disp, add)

    # -- notifications -----------------------------------------------------

    def notify_send(self, target: int, tag: Hashable, payload: bytes = b"") -> None:
        if not 0 <= target < self.fabric.nranks:
            raise InvalidArgument(f"no rank {target}")
        fab = self.fabric
        fab._channel((self.rank, target, tag)).put(bytes(payload))
        if fab.trace:
            now = time.perf_counter_ns()
            fab.trace(TraceEvent("notify", self.rank, target, len(payload), now, now, {"tag": tag}))

    def notify_recv(self, source: int, tag: Hashable, timeout: float | None = None) -> bytes:
        """Block until the matching send arrives; channels are FIFO per (source, target, tag)."""
        if not 0 <= source < self.fabric.nranks:
            raise InvalidArgument(f"no rank {source}")
        fab = self.fabric
        ch = fab._channel((source, self.rank, tag))
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            try:
                return ch.get_nowait()
            except queue.Empty:
                pass
            fab.check_abort()
            wait = fab.poll_interval
            if deadline is not None:
                left = deadline - time.monotonic()
                if left <= 0:
                    raise TimeoutError(f"rank {self.rank}: no notification from {source} tag {tag!r}")
                wait = min(wait, left)
            try:
                return ch.get(timeout=wait)
            except queue.Empty:
                continue


def _check_i64(v: int) -> None:
    if not -(1 << 63) <= v < (1 << 63):
        raise InvalidArgument(f"{v} does not fit in a signed 64-bit word")
