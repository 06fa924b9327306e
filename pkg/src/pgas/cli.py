"""Command line: ``pgas run`` for built-in SPMD programs, ``pgas bench`` for microbenchmarks."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from . import bench
from .errors import DartError
from .gptr import GPTR_BYTES, GlobalPtr
from .runtime import RuntimeConfig, UnitContext, launch
from .team import DART_TEAM_ALL


def prog_hello(ctx: UnitContext):
    return f"unit {ctx.myid()} of {ctx.size()}"


def prog_ring(ctx: UnitContext):
    """Each unit puts its id into its right neighbour's slot of a collective array."""
    me, n = ctx.myid(), ctx.size()
    p = ctx.team_memalloc_aligned(DART_TEAM_ALL, 8)
    ctx.put_blocking(p.with_unit((me + 1) % n), me.to_bytes(8, "little"))
    ctx.barrier()
    got = int.from_bytes(ctx.getaddr(p, 8), "little")
    ctx.team_memfree(DART_TEAM_ALL, p)
    return f"unit {me} received {got}"


def prog_lock(ctx: UnitContext, rounds: int = 100):
    """Non-atomic increments of a counter on unit 0, guarded by an MCS lock."""
    me = ctx.myid()
    lock = ctx.team_lock_init(DART_TEAM_ALL)
    raw = bytearray(GPTR_BYTES)
    if me == 0:
        c = ctx.memalloc(8)
        ctx.getaddr(c, 8)[:] = bytes(8)
        raw[:] = c.to_bytes()
    ctx.bcast(raw, 0)
    counter = GlobalPtr.from_bytes(bytes(raw))
    for _ in range(rounds):
        ctx.lock_acquire(lock)
        v = int.from_bytes(ctx.get_bytes(counter, 8), "little")
        time.sleep(0)
        ctx.put_blocking(counter, (v + 1).to_bytes(8, "little"))
        ctx.lock_release(lock)
    ctx.barrier()
    total = int.from_bytes(ctx.get_bytes(counter, 8), "little")
    ctx.lock_free(lock)
    if me == 0:
        ctx.memfree(counter)
    return f"unit {me}: counter = {total} (expected {rounds * ctx.size()})"


def prog_collectives(ctx: UnitContext):
    me, n = ctx.myid(), ctx.size()
    buf = bytearray(b"hello from root" if me == 0 else bytes(15))
    ctx.bcast(buf, 0)
    recv = bytearray(4 * n) if me == 0 else None
    ctx.gather(me.to_bytes(4, "little"), recv, 0)
    gathered = [int.from_bytes(recv[4 * i:4 * i + 4], "little") for i in range(n)] if me == 0 else None
    return f"unit {me}: bcast={bytes(buf)!r}" + (f" gather={gathered}" if gathered is not None else "")


PROGRAMS = {
    "hello": prog_hello,
    "ring": prog_ring,
    "lock": prog_lock,
    "collectives": prog_collectives,
}


def _config(args, units: int) -> RuntimeConfig:
    return RuntimeConfig.from_env(
        units=units,
        local_pool_bytes=args.local_pool_bytes,
        team_pool_bytes=args.team_pool_bytes,
        teamlist_cap=args.teamlist_cap,
        trace=getattr(args, "trace", False),
    )


def _add_pool_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--local-pool-bytes", type=int, help="overrides PGAS_LOCAL_POOL_BYTES")
    p.add_argument("--team-pool-bytes", type=int, help="overrides PGAS_TEAM_POOL_BYTES")
    p.add_argument("--teamlist-cap", type=int, help="overrides PGAS_TEAMLIST_CAP")


def cmd_run(args) -> int:
    if args.trace:
        logging.basicConfig(level=logging.INFO, format="%(threadName)s %(message)s")
    results = launch(_config(args, args.units), PROGRAMS[args.program])
    for line in results:
        print(line)
    return 0


def cmd_bench(args) -> int:
    sizes = tuple(bench.power_sizes(args.min_size, args.max_size))
    spec = bench.BenchSpec(op=args.op, mode=args.mode, sizes=sizes, reps=args.reps, warmup=args.warmup,
                           batch=args.batch, window=args.window, pair=tuple(args.pair))
    metrics = args.metric or ["dtct"]
    t0 = time.monotonic()
    series = bench.measure(_config(args, args.units), spec, metrics)
    fits = bench.fit_all(series)
    csv_path, fit_path = bench.emit_report(series, fits, args.out)
    for fit in fits:
        print(fit.summary())
    noisy = sum(m.noisy for m in series)
    print(f"{len(series)} rows -> {csv_path}; fit summary -> {fit_path}; "
          f"{noisy} noisy points (>{bench.NOISE_THRESHOLD:.0%} rel. std); {time.monotonic() - t0:.1f}s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgas")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a built-in SPMD program")
    run.add_argument("--units", type=int, default=4)
    run.add_argument("--trace", action="store_true", help="log every transport operation")
    _add_pool_flags(run)
    run.add_argument("program", choices=sorted(PROGRAMS))
    run.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="latency/bandwidth microbenchmark, runtime vs raw transport")
    b.add_argument("--op", choices=bench.OPS, default="put")
    b.add_argument("--mode", choices=bench.MODES, default="blocking")
    b.add_argument("--metric", choices=bench.METRICS, action="append",
                   help="repeatable; default dtct")
    b.add_argument("--min-size", type=int, default=1)
    b.add_argument("--max-size", type=int, default=bench.DEFAULT_MAX_SIZE)
    b.add_argument("--reps", type=int, default=bench.MIN_REPS)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--batch", type=int, default=4)
    b.add_argument("--window", type=int, default=64, help="overlapping transfers per bandwidth sample")
    b.add_argument("--units", type=int, default=2)
    b.add_argument("--pair", type=int, nargs=2, default=[0, 1], metavar=("A", "B"))
    b.add_argument("--out", default="bench.csv")
    _add_pool_flags(b)
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DartError as exc:
        print(f"pgas: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
