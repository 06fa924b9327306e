"""Runtime-vs-raw overhead across every op/mode combination.

Writes one CSV per (op, mode) plus its fit summary into ``--outdir`` and
prints the fitted constants.

    python scripts/overhead_sweep.py --max-size 65536 --outdir results/
"""

import argparse
from pathlib import Path

from pgas import RuntimeConfig, bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-size", type=int, default=bench.DEFAULT_MAX_SIZE)
    ap.add_argument("--reps", type=int, default=bench.MIN_REPS)
    ap.add_argument("--window", type=int, default=64)
    ap.add_argument("--units", type=int, default=2)
    ap.add_argument("--outdir", type=Path, default=Path("results"))
    args = ap.parse_args()

    args.outdir.mkdir(parents=True, exist_ok=True)
    sizes = tuple(bench.power_sizes(1, args.max_size))
    config = RuntimeConfig(units=args.units)
    for op in bench.OPS:
        for mode in bench.MODES:
            metrics = ["dtct", "bw"] + (["dtit"] if mode == "nonblocking" else [])
            spec = bench.BenchSpec(op=op, mode=mode, sizes=sizes, reps=args.reps, window=args.window)
            series = bench.measure(config, spec, metrics)
            fits = bench.fit_all(series)
            csv_path, _ = bench.emit_report(series, fits, args.outdir / f"{op}_{mode}.csv")
            for fit in fits:
                print(f"{fit.label:28s} c = {fit.c_ns:8.1f} +/- {fit.stderr_ns:6.1f} ns  {fit.verdict()}")
            print(f"  -> {csv_path}")


if __name__ == "__main__":
    main()
