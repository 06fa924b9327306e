"""One-sided and collective communication.

Collectives run over the transport's point-to-point notification channels:
binomial trees for bcast/scatter/gather and a dissemination barrier. Ranks
inside a collective are team-relative ids (ascending absolute id order).
"""

from __future__ import annotations

from typing import Iterable, Sequence

from .errors import InvalidArgument
from .gptr import GlobalPtr
from .transport import RmaRequest


class DartHandle:
    """Completion handle of a non-blocking put/get. Single use."""

    __slots__ = ("req", "gptr", "buffer", "consumed")

    def __init__(self, req: RmaRequest, gptr: GlobalPtr, buffer=None):
        self.req = req
        self.gptr = gptr
        self.buffer = buffer
        self.consumed = False

    def __repr__(self) -> str:
        state = "consumed" if self.consumed else self.req.state.name
        return f"DartHandle({self.req.kind} {self.gptr}, {state})"


def _pack_blocks(blocks: list[bytes]) -> bytes:
    parts = []
    for b in blocks:
        parts.append(len(b).to_bytes(8, "little"))
        parts.append(b)
    return b"".join(parts)


def _unpack_blocks(raw: bytes) -> list[bytes]:
    out = []
    i = 0
    while i < len(raw):
        size = int.from_bytes(raw[i:i + 8], "little")
        out.append(raw[i + 8:i + 8 + size])
        i += 8 + size
    return out


def _vrank(rank: int, root: int, n: int) -> int:
    return (rank - root) % n


class CommMixin:
    """Communication methods of :class:`pgas.runtime.UnitContext`."""

    # -- one-sided -----------------------------------------------------------

    def put(self, dest: GlobalPtr, src) -> DartHandle:
        """Non-blocking put; returns once the transfer is initiated."""
        self._require_active()
        t = self.dereference(dest)
        req = self._ep.put_nb(t.region, t.rank, t.disp, src)
        return DartHandle(req, dest)

    def get(self, dest, src: GlobalPtr) -> DartHandle:
        """Non-blocking get of ``len(dest)`` bytes into the writable buffer ``dest``."""
        self._require_active()
        t = self.dereference(src)
        n = memoryview(dest).nbytes
        req, _ = self._ep.get_nb(t.region, t.rank, t.disp, n, dest)
        return DartHandle(req, src, dest)

    def put_blocking(self, dest: GlobalPtr, src) -> None:
        """Returns after the data is in place at the target."""
        self.wait(self.put(dest, src))

    def get_blocking(self, dest, src: GlobalPtr) -> None:
        self.wait(self.get(dest, src))

    def get_bytes(self, src: GlobalPtr, nbytes: int) -> bytes:
        buf = bytearray(nbytes)
        self.get_blocking(buf, src)
        return bytes(buf)

    def _claim(self, h: DartHandle) -> None:
        if not isinstance(h, DartHandle):
            raise InvalidArgument(f"not a handle: {h!r}")
        if h.consumed:
            raise InvalidArgument(f"{h!r} was already completed")

    def wait(self, h: DartHandle) -> None:
        self._require_active()
        self._claim(h)
        self._ep.request_wait(h.req)
        h.consumed = True

    def waitall(self, hs: Iterable[DartHandle]) -> None:
        self._require_active()
        hs = list(hs)
        for h in hs:
            self._claim(h)
        self._ep.request_wait([h.req for h in hs])
        for h in hs:
            h.consumed = True

    def test(self, h: DartHandle) -> bool:
        self._require_active()
        self._claim(h)
        done = self._ep.request_test(h.req)
        if done:
            h.consumed = True
        return done

    def testall(self, hs: Sequence[DartHandle]) -> bool:
        self._require_active()
        for h in hs:
            self._claim(h)
        flags = self._ep.request_test([h.req for h in hs])
        if all(flags):
            for h in hs:
                h.consumed = True
            return True
        return False

    # -- collectives -------------------------------------------------------

    def _tag(self, team, kind: str, extra=0):
        return ("coll", team.team_id, kind, extra)

    def barrier(self, team_id: int = 0) -> None:
        """Dissemination barrier over the team."""
        self._require_active()
        team = self._member_team(team_id)
        members = team.members
        n = len(members)
        me = team.g2l(self._unit)
        ep = self._ep
        k = 1
        while k < n:
            tag = self._tag(team, "barrier", k)
            ep.notify_send(members[(me + k) % n], tag)
            ep.notify_recv(members[(me - k) % n], tag)
            k <<= 1

    def bcast(self, buf, root: int, team_id: int = 0):
        """Broadcast ``buf`` from relative id ``root``; filled in place elsewhere."""
        self._require_active()
        team = self._member_team(team_id)
        view = memoryview(buf).cast("B")
        data = self._bcast_bytes(bytes(view) if team.g2l(self._unit) == root else None, team, root)
        if len(data) != len(view):
            raise InvalidArgument(f"bcast buffer holds {len(view)} bytes, root sent {len(data)}")
        if team.g2l(self._unit) != root:
            view[:] = data
        return buf

    def scatter(self, send, recv, root: int, team_id: int = 0):
        """Relative id ``i`` receives block ``i`` of the root's ``send`` buffer."""
        self._require_active()
        team = self._member_team(team_id)
        n = team.size()
        rview = memoryview(recv).cast("B")
        block = len(rview)
        me = team.g2l(self._unit)
        blocks = None
        if me == root:
            sview = memoryview(send).cast("B")
            if len(sview) != n * block:
                raise InvalidArgument(f"scatter send buffer must hold {n} x {block} bytes, got {len(sview)}")
            blocks = [bytes(sview[i * block:(i + 1) * block]) for i in range(n)]
        mine = self._scatter_blocks(blocks, team, root)
        if len(mine) != block:
            raise InvalidArgument(f"scatter block is {len(mine)} bytes, receive buffer holds {block}")
        rview[:] = mine
        return recv

    def gather(self, send, recv, root: int, team_id: int = 0):
        """The root's ``recv`` receives every member's ``send`` in relative-id order."""
        self._require_active()
        team = self._member_team(team_id)
        n = team.size()
        me = team.g2l(self._unit)
        blocks = self._gather_blocks(bytes(memoryview(send).cast("B")), team, root)
        if me == root:
            rview = memoryview(recv).cast("B")
            block = len(blocks[0])
            if any(len(b) != block for b in blocks):
                raise InvalidArgument("gather contributions differ in length")
            if len(rview) != n * block:
                raise InvalidArgument(f"gather receive buffer must hold {n} x {block} bytes, got {len(rview)}")
            rview[:] = b"".join(blocks)
        return recv

    # -- tree algorithms on raw bytes -------------------------------------------

    def _bcast_bytes(self, data: bytes | None, team, root: int) -> bytes:
        members = team.members
        n = len(members)
        v = _vrank(team.g2l(self._unit), root, n)
        ep = self._ep
        tag = self._tag(team, "bcast")
        mask = 1
        while mask < n:
            if v & mask:
                data = ep.notify_recv(members[(v - mask + root) % n], tag)
                break
            mask <<= 1
        mask >>= 1
        while mask > 0:
            if v + mask < n:
                ep.notify_send(members[(v + mask + root) % n], tag, data)
            mask >>= 1
        return data

    def _scatter_blocks(self, blocks: list[bytes] | None, team, root: int) -> bytes:
        """``blocks`` is indexed by relative id at the root; returns this unit's block."""
        members = team.members
        n = len(members)
        v = _vrank(team.g2l(self._unit), root, n)
        ep = self._ep
        tag = self._tag(team, "scatter")
        if v == 0:
            # re-index by virtual rank
            have = [blocks[(i + root) % n] for i in range(n)]
            mask = 1
            while mask < n:
                mask <<= 1
        else:
            mask = v & -v
            parent = members[(v - mask + root) % n]
            count = min(mask, n - v)
            raw = ep.notify_recv(parent, tag)
            size = len(raw) // count
            have = [raw[i * size:(i + 1) * size] for i in range(count)]
        mask >>= 1
        while mask > 0:
            child = v + mask
            if child < n:
                part = have[mask:min(2 * mask, n - v)]
                ep.notify_send(members[(child + root) % n], tag, b"".join(part))
                del have[mask:]
            mask >>= 1
        return have[0]

    def _gather_blocks(self, mine: bytes, team, root: int) -> list[bytes] | None:
        """Returns all blocks indexed by relative id at the root, ``None`` elsewhere."""
        members = team.members
        n = len(members)
        v = _vrank(team.g2l(self._unit), root, n)
        ep = self._ep
        tag = self._tag(team, "gather")
        have = [mine]
        mask = 1
        while mask < n:
            if v & mask:
                ep.notify_send(members[(v - mask + root) % n], tag, _pack_blocks(have))
                return None
            child = v + mask
            if child < n:
                have.extend(_unpack_blocks(ep.notify_recv(members[(child + root) % n], tag)))
            mask <<= 1
        return [have[(i - root) % n] for i in range(n)]

    # -- small metadata exchanges used by team and memory management ---------

    def _gather_small(self, payload: bytes, team) -> list[bytes] | None:
        return self._gather_blocks(payload, team, 0)

    def _bcast_small(self, payload: bytes | None, team, size: int) -> bytes:
        data = self._bcast_bytes(payload, team, 0)
        if len(data) != size:
            raise InvalidArgument(f"expected a {size}-byte reply, got {len(data)}")
        return data
