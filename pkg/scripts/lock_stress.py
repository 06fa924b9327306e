"""MCS lock stress: contended non-atomic increments over many seeds.

Reports the final count, the hand-off rate and whether entry order matched
the order of swaps on the lock's tail word.

    python scripts/lock_stress.py --units 16 --rounds 500 --seeds 10
"""

import argparse
import random
import time

from pgas import DART_TEAM_ALL, GlobalPtr, RuntimeConfig, launch


def trial(units, rounds, seed):
    events = []

    def hook(ev):
        if ev.kind in ("fas", "lock.acquired", "lock.queued"):
            events.append(ev)

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
        total = int.from_bytes(ctx.get_bytes(counter, 8), "little")
        t = ctx.dereference(lock.tail)
        ctx.barrier()
        ctx.lock_free(lock)
        if me == 0:
            ctx.memfree(counter)
        return total, (t.region.id, t.disp)

    t0 = time.perf_counter()
    res = launch(RuntimeConfig(units=units, seed=seed), prog, trace=hook)
    elapsed = time.perf_counter() - t0
    where = res[0][1]
    swaps = sorted((e for e in events if e.kind == "fas" and (e.info["region"], e.info["disp"]) == where),
                   key=lambda e: e.info["seq"])
    entries = [e.source for e in events if e.kind == "lock.acquired"]
    queued = sum(e.kind == "lock.queued" for e in events)
    return res[0][0], [e.source for e in swaps] == entries, queued, elapsed


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--units", type=int, default=16)
    ap.add_argument("--rounds", type=int, default=500)
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()

    expected = args.units * args.rounds
    failures = 0
    for seed in range(args.seeds):
        total, fifo, queued, elapsed = trial(args.units, args.rounds, seed)
        ok = total == expected and fifo
        failures += not ok
        print(f"seed {seed:3d}: count {total}/{expected} fifo={fifo} "
              f"queued {queued / expected:.0%} {elapsed:.2f}s {'ok' if ok else 'VIOLATION'}")
    print(f"{args.seeds - failures}/{args.seeds} trials clean")
    raise SystemExit(1 if failures else 0)


if __name__ == "__main__":
    main()
