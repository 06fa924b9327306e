"""Acceptance criteria, one check per criterion, each at its stated scale.

Every check returns ``(ok, detail)`` and prints a single ``PASS``/``FAIL``
line. Run under pytest, or directly with ``python tests/test_acceptance.py``.
"""

import csv
import io
import math
import random
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import pytest

from oracles import BitmapAllocator, FakeClock, SharedArray, SyntheticChannel
from pgas import DART_TEAM_ALL, TEAM_NULL, GlobalPtr, Group, RuntimeConfig, launch
from pgas import bench, gptr
from pgas.errors import OutOfGlobalMemory, ResourceExhausted
from pgas.lock import NOBODY
from pgas.memory import NonCollectivePool
from pgas.team import group_addmember, group_union

SMALL = dict(local_pool_bytes=1 << 16, team_pool_bytes=1 << 16, timeout=600)


def report(name, ok, detail, elapsed):
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail} [{elapsed:.2f}s]"
    print(line, flush=True)
    return line


def timed(fn):
    t0 = time.perf_counter()
    ok, detail = fn()
    return ok, detail, time.perf_counter() - t0


# -- global pointer codec ------------------------------------------------------------


def mask_shift_encode(u, s, f, o):
    return (u & 0xFFFFFFFF) | (s & 0xFFFF) << 32 | (f & 0xFFFF) << 48 | (o & 0xFFFFFFFFFFFFFFFF) << 64


def mask_shift_decode(v):
    return v & 0xFFFFFFFF, (v >> 32) & 0xFFFF, (v >> 48) & 0xFFFF, (v >> 64) & 0xFFFFFFFFFFFFFFFF


def check_gptr():
    failures = 0
    edges = lambda bits: sorted({0, 1, 2, (1 << (bits - 1)) - 1, 1 << (bits - 1), (1 << bits) - 2, (1 << bits) - 1})
    flag_values = (0, gptr.FLAG_COLLECTIVE)
    cases = [(u, s, f, o) for u in edges(32) for s in edges(16) for f in flag_values for o in edges(64)]
    rng = random.Random(2024)
    cases += [(rng.getrandbits(32), rng.getrandbits(16), rng.choice(flag_values), rng.getrandbits(64))
              for _ in range(10_000)]
    for fields in cases:
        v = gptr.encode(*fields)
        p = gptr.GlobalPtr.from_bytes(gptr.make(*fields).to_bytes())
        if v != mask_shift_encode(*fields) or gptr.decode(v) != fields or mask_shift_decode(v) != fields or p != fields:
            failures += 1
    # each field occupies exactly its bit range
    widths = [(gptr.UNIT_MAX, 0, 0, 0), (0, gptr.SEGMENT_MAX, 0, 0), (0, 0, 0, gptr.OFFSET_MAX)]
    masks = [(1 << 32) - 1, ((1 << 16) - 1) << 32, ((1 << 64) - 1) << 64]
    failures += sum(gptr.encode(*w) != m for w, m in zip(widths, masks))
    failures += gptr.decode(((1 << 16) - 1) << 48).flags != 0xFFFF
    return failures == 0, f"{len(cases)} round-trips, {failures} failures"


# -- group algebra ----------------------------------------------------------------


def check_groups():
    rng = random.Random(7)
    bad = 0
    for _ in range(1000):
        a = set(rng.sample(range(64), rng.randint(0, 20)))
        b = set(rng.sample(range(64), rng.randint(0, 20)))
        ga, gb = Group(sorted(a)), Group(sorted(b))
        u = group_union(ga, gb)
        bad += list(u.members) != sorted(a | b)
        g = ga
        for x in rng.sample(range(64), 5):
            g = group_addmember(g, x, 64)
            a.add(x)
            ms = g.members
            bad += list(ms) != sorted(a) or any(p >= q for p, q in zip(ms, ms[1:]))
    return bad == 0, f"1000 pairs, {bad} mismatches against sorted-set oracle"


# -- team registry -----------------------------------------------------------------


def check_registry():
    cap, ops = 8, 1000
    rng = random.Random(11)
    script = [rng.random() < 0.6 for _ in range(ops)]  # True: create, False: destroy one

    def prog(ctx):
        live, issued, problems, overflows = {}, [], 0, 0
        pick = random.Random(3)  # same choices at every unit
        for create in script:
            reg = ctx._registry
            if create or not live:
                expect_slot = next((i for i, t in enumerate(reg.teamlist) if t == -1), None)
                try:
                    tid = ctx.team_create(DART_TEAM_ALL, ctx.team_get_group())
                except ResourceExhausted:
                    overflows += 1
                    problems += reg.live() != cap
                    continue
                problems += expect_slot is None or reg.slot_of(tid) != expect_slot
                problems += bool(issued) and tid <= issued[-1]
                issued.append(tid)
                live[tid] = True
            else:
                tid = pick.choice(sorted(live))
                ctx.team_destroy(tid)
                del live[tid]
        for tid in live:
            ctx.team_destroy(tid)
        return problems, overflows, issued

    res = launch(RuntimeConfig(units=3, teamlist_cap=cap, **SMALL), prog)
    problems = sum(r[0] for r in res)
    ids = res[0][2]
    unique = len(set(ids)) == len(ids)
    same = all(r[2] == ids for r in res)
    ok = problems == 0 and unique and same and res[0][1] > 0
    return ok, f"{ops} ops, {len(ids)} teams, {res[0][1]} overflows (all at {cap} live), {problems} violations"


# -- memory ------------------------------------------------------------------------


def check_memory():
    rng = random.Random(13)
    cap = 1 << 14
    pool, oracle, live = NonCollectivePool(cap), BitmapAllocator(cap), []
    bad = 0
    for _ in range(10_000):
        if live and rng.random() < 0.45:
            off = live.pop(rng.randrange(len(live)))
            pool.free(off)
            oracle.free(off)
            continue
        size = rng.randint(1, 512)
        want = oracle.expected_offset(size)
        try:
            off = pool.alloc(size)
        except OutOfGlobalMemory:
            bad += want is not None
            continue
        try:
            oracle.alloc_at(off, size)  # raises on overlap
        except AssertionError:
            bad += 1
            continue
        bad += off != want
        live.append(off)
    for off in live:
        pool.free(off)
    leak = pool.bytes_free() != cap

    pick = random.Random(17)
    sizes = [pick.choice([8, 24, 100, 512, 4096]) for _ in range(100)]

    def prog(ctx):
        held, offsets = [], []
        frees = random.Random(19)
        for sz in sizes:
            p = ctx.team_memalloc_aligned(DART_TEAM_ALL, sz)
            offsets.append(p.offset)
            held.append(p)
            if len(held) > 3 and frees.random() < 0.5:
                ctx.team_memfree(DART_TEAM_ALL, held.pop())
        for p in reversed(held):
            ctx.team_memfree(DART_TEAM_ALL, p)
        return offsets

    res = launch(RuntimeConfig(units=8, **{**SMALL, "team_pool_bytes": 1 << 20}), prog)
    equal = sum(len({r[i] for r in res}) == 1 for i in range(100))
    ok = bad == 0 and not leak and equal == 100
    return ok, f"fuzz 10^4 ops: {bad} violations, leak={leak}; collective offsets equal {equal}/100"


# -- put/get -------------------------------------------------------------------------


def make_script(rng, units, nbytes, rounds=3):
    """Rounds of puts; inside a round no byte has more than one writer."""
    script = []
    for _ in range(rounds):
        taken = [[False] * nbytes for _ in range(units)]
        ops = []
        for _ in range(rng.randint(1, 2 * units)):
            target, n = rng.randrange(units), rng.randint(1, 16)
            off = rng.randrange(nbytes - n + 1)
            if any(taken[target][off:off + n]):
                continue
            taken[target][off:off + n] = [True] * n
            ops.append((rng.randrange(units), target, off, rng.randbytes(n), rng.random() < 0.5))
        script.append(ops)
    return script


def check_put_get():
    units, nbytes, nscripts = 8, 64, 1000
    rng = random.Random(23)
    scripts = [make_script(rng, units, nbytes) for _ in range(nscripts)]

    def prog(ctx):
        me = ctx.myid()
        p = ctx.team_memalloc_aligned(DART_TEAM_ALL, nbytes)
        local = ctx.getaddr(p, nbytes)
        oracle = SharedArray(units, nbytes)
        mismatches = 0
        for script in scripts:
            for ops in script:
                handles = []
                for origin, target, off, data, blocking in ops:
                    oracle.put(target, off, data)
                    if origin != me:
                        continue
                    dest = p.with_unit(target).advance(off)
                    if blocking:
                        ctx.put_blocking(dest, data)
                    else:
                        handles.append(ctx.put(dest, data))
                ctx.waitall(handles)
                ctx.barrier()
            mismatches += bytes(local) != oracle.get(me, 0, nbytes)
            peer = (me + 1) % units
            mismatches += ctx.get_bytes(p.with_unit(peer), nbytes) != oracle.get(peer, 0, nbytes)
            ctx.barrier()

        # blocking put, then a target-local read with no synchronization at all
        seen = 0
        trials = random.Random(29)
        target = (me + 1) % units
        region = ctx.dereference(p.with_unit(target))
        for _ in range(100):
            data = trials.randbytes(8)
            ctx.put_blocking(p.with_unit(target).advance(8 * me), data)
            seen += bytes(region.region.local_view(region.rank)[8 * me:8 * me + 8]) == data
        ctx.barrier()
        ctx.team_memfree(DART_TEAM_ALL, p)
        return mismatches, seen

    res = launch(RuntimeConfig(units=units, **SMALL), prog)
    mism = sum(r[0] for r in res)
    vis = min(r[1] for r in res)
    return mism == 0 and vis == 100, f"{nscripts} scripts x {units} units: {mism} image mismatches; " \
                                     f"blocking-put visibility {vis}/100"


# -- MCS lock --------------------------------------------------------------------------


def mcs_trial(seed, units=16, rounds=500):
    events = []

    def hook(ev):
        if ev.kind in ("fas", "lock.acquired"):
            events.append(ev)  # list.append is atomic under the GIL

    def prog(ctx):
        me = ctx.myid()
        rng = random.Random(seed * 1000 + me)
        lock = ctx.team_lock_init(DART_TEAM_ALL)
        raw = bytearray(16)
        if me == 0:
            c = ctx.memalloc(8)
            ctx.getaddr(c, 8)[:] = bytes(8)
            raw[:] = c.to_bytes()
        ctx.bcast(raw, 0)
        counter = GlobalPtr.from_bytes(bytes(raw))
        for _ in range(rounds):
            ctx.lock_acquire(lock)
            v = int.from_bytes(ctx.get_bytes(counter, 8), "little")
            if rng.random() < 0.1:
                time.sleep(0)
            ctx.put_blocking(counter, (v + 1).to_bytes(8, "little"))
            ctx.lock_release(lock)
        ctx.barrier()
        word = lambda q: int.from_bytes(ctx.get_bytes(q, 8), "little", signed=True)
        total = word(counter)
        quiet = word(lock.tail) == NOBODY and all(word(lock.cell.with_unit(u)) == NOBODY for u in range(ctx.size()))
        t = ctx.dereference(lock.tail)
        ctx.barrier()
        ctx.lock_free(lock)
        if me == 0:
            ctx.memfree(counter)
        return total, quiet, (t.region.id, t.disp)

    res = launch(RuntimeConfig(units=units, seed=seed, **SMALL), prog, trace=hook)
    where = res[0][2]
    swaps = sorted((e for e in events if e.kind == "fas" and (e.info["region"], e.info["disp"]) == where),
                   key=lambda e: e.info["seq"])
    entries = [e.source for e in events if e.kind == "lock.acquired"]
    fifo = len(entries) == units * rounds and [e.source for e in swaps] == entries
    return all(r[0] == units * rounds for r in res), fifo, all(r[1] for r in res)


def check_mcs():
    t0 = time.perf_counter()
    bad = {"count": 0, "fifo": 0, "quiescence": 0}
    for seed in range(50):
        count, fifo, quiet = mcs_trial(seed)
        bad["count"] += not count
        bad["fifo"] += not fifo
        bad["quiescence"] += not quiet
    elapsed = time.perf_counter() - t0
    ok = not any(bad.values()) and elapsed < 60
    return ok, f"50 seeds x 16 units x 500 CS: violations {bad}, {elapsed:.1f}s (< 60s)"


# -- collectives -----------------------------------------------------------------------


def check_collectives():
    n = 16
    rng = random.Random(31)
    plans = []
    for size in range(1, n + 1):
        members = sorted(rng.sample(range(n), size))
        plans.append((members, rng.randrange(size), rng.choice([1, 100, 4096, 65536])))

    def block(owner, length, salt):
        return random.Random(owner * 7919 + salt).randbytes(length)

    def prog(ctx):
        me = ctx.myid()
        bad = 0
        for k, (members, root, length) in enumerate(plans):
            tid = ctx.team_create(DART_TEAM_ALL, Group(members))
            if tid == TEAM_NULL:
                continue
            rel, size = ctx.team_myid(tid), len(members)
            buf = bytearray(block(root, length, k) if rel == root else length)
            ctx.bcast(buf, root, tid)
            bad += buf != block(root, length, k)
            send = b"".join(block(i, length, k + 100) for i in range(size)) if rel == root else None
            recv = bytearray(length)
            ctx.scatter(send, recv, root, tid)
            bad += recv != block(rel, length, k + 100)
            out = bytearray(size * length) if rel == root else None
            ctx.gather(block(rel, length, k + 200), out, root, tid)
            if rel == root:
                bad += out != b"".join(block(i, length, k + 200) for i in range(size))
            ctx.team_destroy(tid)
        stamps = []
        jitter = random.Random(me)
        for _ in range(100):
            if jitter.random() < 0.3:
                time.sleep(jitter.random() * 1e-4)
            t_in = time.perf_counter_ns()
            ctx.barrier()
            stamps.append((t_in, time.perf_counter_ns()))
        return bad, stamps

    res = launch(RuntimeConfig(units=n, **SMALL), prog)
    bad = sum(r[0] for r in res)
    ordered = sum(max(r[1][t][0] for r in res) <= min(r[1][t][1] for r in res) for t in range(100))
    return bad == 0 and ordered == 100, \
        f"team sizes 1-16, payloads up to 64 KiB: {bad} mismatches; barrier order held {ordered}/100"


# -- overhead fit -----------------------------------------------------------------------


def check_overhead_fit():
    sizes = tuple(bench.power_sizes(1, 1 << 21))
    notes, ok = [], True
    for c in (10, 100, 1000):
        clock = FakeClock()
        spec = bench.BenchSpec(sizes=sizes, reps=30)
        series = bench.run_series(SyntheticChannel(clock, c), spec, "dtct", clock)
        fit, = bench.fit_all(series)
        good = fit.c_ns == c and fit.residual_ns == 0
        ok &= good
        notes.append(f"c={c}->{fit.c_ns:g}")
    spec = bench.BenchSpec(mode="nonblocking", sizes=tuple(bench.power_sizes(1, 1 << 12)), reps=30)
    series = bench.measure(RuntimeConfig(units=2, **SMALL), spec, ["dtct", "dtit", "bw"])
    fits = bench.fit_all(series)
    for fit in fits:
        diffs = [d for _, d in fit.diffs]
        ok &= len(diffs) == len(spec.sizes)
        ok &= math.isclose(fit.c_ns, math.fsum(diffs) / len(diffs), rel_tol=1e-12, abs_tol=1e-9)
        ok &= fit.consistent_with_zero == (abs(fit.c_ns) < 2 * fit.stderr_ns)
        ok &= fit.verdict() in fit.summary() and len(fit.summary().splitlines()) == 1 + len(diffs)
    verdicts = ", ".join(f"{f.label}: {f.c_ns:.0f}+/-{f.stderr_ns:.0f}ns {f.verdict()}" for f in fits)
    return bool(ok), "synthetic " + " ".join(notes) + f"; real run {verdicts}"


# -- end-to-end CLI -----------------------------------------------------------------------


def check_cli():
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "bench.csv"
        t0 = time.perf_counter()
        proc = subprocess.run(
            [sys.executable, "-m", "pgas.cli", "bench", "--units", "2", "--mode", "nonblocking",
             "--metric", "dtct", "--metric", "dtit", "--metric", "bw",
             "--min-size", "1", "--max-size", str(1 << 21), "--out", str(out)],
            capture_output=True, text=True, timeout=300)
        elapsed = time.perf_counter() - t0
        if proc.returncode != 0:
            return False, f"exit {proc.returncode}: {proc.stderr.strip()[-200:]}"
        text = out.read_text()
        rows = list(csv.reader(io.StringIO(text)))
        schema = tuple(rows[0]) == bench.CSV_HEADER and all(len(r) == len(bench.CSV_HEADER) for r in rows)
        parsed = bench.load_csv(out)
        grid = {m.msg_bytes for m in parsed} == set(bench.power_sizes(1, 1 << 21))
        complete = len(parsed) == 3 * 2 * 22
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(bench.CSV_HEADER)
        for m in parsed:
            w.writerow(m.row())
        lossless = buf.getvalue() == text
    ok = schema and grid and complete and lossless and elapsed < 300
    return ok, f"{len(parsed)} rows, schema={schema}, grid={grid}, lossless={lossless}, {elapsed:.1f}s (< 300s)"


CRITERIA = [
    ("gptr codec", check_gptr, 1.0),
    ("group algebra", check_groups, 5.0),
    ("team registry", check_registry, 5.0),
    ("memory", check_memory, None),
    ("put/get semantics", check_put_get, None),
    ("MCS lock", check_mcs, 60.0),
    ("collectives", check_collectives, None),
    ("overhead fit", check_overhead_fit, None),
    ("end-to-end CLI", check_cli, 300.0),
]


def evaluate(name, fn, budget):
    ok, detail, elapsed = timed(fn)
    if budget is not None and elapsed >= budget:
        ok, detail = False, f"{detail}; over the {budget:g}s budget"
    report(name, ok, detail, elapsed)
    return ok, detail


@pytest.mark.slow
@pytest.mark.parametrize("name,fn,budget", CRITERIA, ids=[c[0] for c in CRITERIA])
def test_criterion(name, fn, budget, capsys):
    with capsys.disabled():
        print()
        ok, detail = evaluate(name, fn, budget)
    assert ok, detail


if __name__ == "__main__":
    results = [evaluate(*c)[0] for c in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
