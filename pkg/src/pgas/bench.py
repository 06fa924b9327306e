"""Latency / bandwidth microbenchmarks: the runtime layer against the raw transport.

Both layers move the same bytes between the same two units over the same
region. The runtime layer goes through pointer dereference, unit translation
and handle wrapping; the raw layer issues transport requests directly. The
per-size difference of the means is the runtime's overhead, and
:func:`fit_overhead` fits a constant to it.

Times are integer nanoseconds from a monotonic clock. ``bw`` rows store the
time per message inside a window of overlapping transfers, so bandwidth is
``msg_bytes / mean_ns`` for every metric.
"""

from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import InvalidArgument, InvalidConfig
from .runtime import RuntimeConfig, UnitContext, launch
from .team import DART_TEAM_ALL

CSV_HEADER = ("layer", "op", "mode", "metric", "msg_bytes", "mean_ns", "std_ns", "samples")
LAYERS = ("dart", "raw")
OPS = ("put", "get")
MODES = ("blocking", "nonblocking")
METRICS = ("dtct", "dtit", "bw")

DEFAULT_MAX_SIZE = 1 << 21
MIN_REPS = 30
NOISE_THRESHOLD = 0.10

Clock = Callable[[], int]


def power_sizes(lo: int = 1, hi: int = DEFAULT_MAX_SIZE) -> list[int]:
    if lo < 1 or hi < lo:
        raise InvalidConfig(f"bad size range [{lo}, {hi}]")
    out = []
    m = 1
    while m <= hi:
        if m >= lo:
            out.append(m)
        m <<= 1
    return out


@dataclass(frozen=True)
class BenchSpec:
    op: str = "put"
    mode: str = "blocking"
    sizes: tuple[int, ...] = tuple(power_sizes())
    reps: int = MIN_REPS
    warmup: int = 3
    # operations per timed batch (dtct); the sample is the batch mean
    batch: int = 4
    # overlapping transfers per bandwidth sample
    window: int = 64
    pair: tuple[int, int] = (0, 1)

    def __post_init__(self):
        if self.op not in OPS:
            raise InvalidConfig(f"op must be one of {OPS}")
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}")
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise InvalidConfig("sizes must be positive")
        if list(self.sizes) != sorted(set(self.sizes)):
            raise InvalidConfig("sizes must be strictly ascending")
        if self.reps < MIN_REPS:
            raise InvalidConfig(f"need at least {MIN_REPS} repetitions, got {self.reps}")
        if self.warmup < 0 or self.batch < 1 or self.window < 1:
            raise InvalidConfig("warmup >= 0, batch >= 1 and window >= 1 required")
        a, b = self.pair
        if a == b or a < 0 or b < 0:
            raise InvalidConfig(f"pair must name two distinct units, got {self.pair}")


@dataclass(frozen=True)
class Measurement:
    layer: str
    op: str
    mode: str
    metric: str
    msg_bytes: int
    mean_ns: float
    std_ns: float
    samples: int

    @property
    def stderr_ns(self) -> float:
        return self.std_ns / math.sqrt(self.samples) if self.samples else math.inf

    @property
    def bandwidth(self) -> float:
        """Bytes per second."""
        return self.msg_bytes / (self.mean_ns * 1e-9) if self.mean_ns > 0 else math.inf

    @property
    def noisy(self) -> bool:
        return self.mean_ns > 0 and self.std_ns / self.mean_ns > NOISE_THRESHOLD

    def row(self) -> list[str]:
        return [self.layer, self.op, self.mode, self.metric, str(self.msg_bytes),
                repr(float(self.mean_ns)), repr(float(self.std_ns)), str(self.samples)]


def summarize(samples: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation."""
    if not samples:
        raise InvalidArgument("no samples")
    mean = statistics.fmean(samples)
    std = statistics.stdev(samples, mean) if len(samples) > 1 else 0.0
    return mean, std


@dataclass(frozen=True)
class OverheadFit:
    """Constant-overhead model ``t_dart(m) - t_raw(m) = c``."""

    c_ns: float
    stderr_ns: float
    residual_ns: float
    diffs: tuple[tuple[int, float], ...] = field(default=())
    label: str = ""

    @property
    def consistent_with_zero(self) -> bool:
        return abs(self.c_ns) < 2 * self.stderr_ns

    def verdict(self) -> str:
        if self.consistent_with_zero:
            return "consistent with zero"
        return "significant"

    def summary(self) -> str:
        lines = [f"[{self.label}] c = {self.c_ns:.1f} +/- {self.stderr_ns:.1f} ns "
                 f"(residual {self.residual_ns:.1f} ns, {len(self.diffs)} sizes): {self.verdict()}"]
        lines += [f"    {m:>9d} B  dart-raw = {d:+.1f} ns" for m, d in self.diffs]
        return "\n".join(lines)


def fit_overhead(dart: Sequence[Measurement], raw: Sequence[Measurement], label: str = "") -> OverheadFit:
    """Least-squares constant through the per-size differences (their mean)."""
    if [m.msg_bytes for m in dart] != [m.msg_bytes for m in raw]:
        raise InvalidArgument("dart and raw series are on different size grids")
    if not dart:
        raise InvalidArgument("empty series")
    diffs = [(d.msg_bytes, d.mean_ns - r.mean_ns) for d, r in zip(dart, raw)]
    k = len(diffs)
    c = statistics.fmean(v for _, v in diffs)
    residual = math.sqrt(math.fsum((v - c) ** 2 for _, v in diffs) / k)
    var = math.fsum(d.stderr_ns ** 2 + r.stderr_ns ** 2 for d, r in zip(dart, raw))
    return OverheadFit(c, math.sqrt(var) / k, residual, tuple(diffs), label)


# -- measurement kernels --------------------------------------------------------


class _Channel:
    """The two ways of issuing one transfer from the measuring unit."""

    def __init__(self, ctx: UnitContext, gptr, nbytes_max: int):
        self.ctx = ctx
        self.gptr = gptr
        t = ctx.dereference(gptr)
        self.region, self.rank, self.disp = t.region, t.rank, t.disp
        self.ep = ctx.endpoint
        self.src = bytes(range(256)) * (nbytes_max // 256 + 1)
        self.src = memoryview(self.src)[:nbytes_max]
        self.dst = bytearray(nbytes_max)

    def issue(self, layer: str, op: str, m: int):
        """Start one transfer; returns something ``complete`` accepts."""
        if layer == "dart":
            if op == "put":
                return self.ctx.put(self.gptr, self.src[:m])
            return self.ctx.get(memoryview(self.dst)[:m], self.gptr)
        if op == "put":
            return self.ep.put_nb(self.region, self.rank, self.disp, self.src[:m])
        return self.ep.get_nb(self.region, self.rank, self.disp, m, memoryview(self.dst)[:m])[0]

    def complete(self, layer: str, handles) -> None:
        if layer == "dart":
            self.ctx.waitall(handles)
        else:
            self.ep.request_wait(handles)

    def blocking(self, layer: str, op: str, m: int) -> None:
        if layer == "dart":
            if op == "put":
                self.ctx.put_blocking(self.gptr, self.src[:m])
            else:
                self.ctx.get_blocking(memoryview(self.dst)[:m], self.gptr)
        else:
            self.complete(layer, [self.issue(layer, op, m)])


def _sample_dtct(ch: _Channel, layer, spec: BenchSpec, m, clock) -> float:
    t0 = clock()
    if spec.mode == "blocking":
        for _ in range(spec.batch):
            ch.blocking(layer, spec.op, m)
    else:
        for _ in range(spec.batch):
            ch.complete(layer, [ch.issue(layer, spec.op, m)])
    return (clock() - t0) / spec.batch


def _sample_dtit(ch: _Channel, layer, spec: BenchSpec, m, clock) -> float:
    t0 = clock()
    h = ch.issue(layer, spec.op, m)
    t1 = clock()
    ch.complete(layer, [h])
    return t1 - t0


def _sample_bw(ch: _Channel, layer, spec: BenchSpec, m, clock) -> float:
    t0 = clock()
    if spec.mode == "blocking":
        for _ in range(spec.window):
            ch.blocking(layer, spec.op, m)
    else:
        hs = [ch.issue(layer, spec.op, m) for _ in range(spec.window)]
        ch.complete(layer, hs)
    return (clock() - t0) / spec.window


_KERNELS = {"dtct": _sample_dtct, "dtit": _sample_dtit, "bw": _sample_bw}


def run_series(ch: _Channel, spec: BenchSpec, metric: str, clock: Clock = time.perf_counter_ns,
               layers: Iterable[str] = LAYERS) -> list[Measurement]:
    """Measure every size on every layer; dart and raw samples alternate so drift hits both."""
    if metric == "dtit" and spec.mode == "blocking":
        raise InvalidConfig("DTIT is defined for non-blocking operations only")
    kernel = _KERNELS[metric]
    layers = tuple(layers)
    out: dict[str, list[Measurement]] = {layer: [] for layer in layers}
    for m in spec.sizes:
        samples: dict[str, list[float]] = {layer: [] for layer in layers}
        for i in range(spec.warmup + spec.reps):
            for layer in layers:
                s = kernel(ch, layer, spec, m, clock)
                if i >= spec.warmup:
                    samples[layer].append(s)
        for layer in layers:
            mean, std = summarize(samples[layer])
            out[layer].append(Measurement(layer, spec.op, spec.mode, metric, m, mean, std, spec.reps))
    return [meas for layer in layers for meas in out[layer]]


def _check_units(config: RuntimeConfig, spec: BenchSpec) -> None:
    if config.units < 2:
        raise InvalidConfig("benchmarks need at least 2 units")
    if max(spec.pair) >= config.units:
        raise InvalidConfig(f"pair {spec.pair} outside {config.units} units")


def _run(config: RuntimeConfig, spec: BenchSpec, metrics: Sequence[str], clock: Clock) -> list[Measurement]:
    _check_units(config, spec)
    for metric in metrics:
        if metric not in METRICS:
            raise InvalidConfig(f"metric must be one of {METRICS}")
        if metric == "dtit" and spec.mode == "blocking":
            raise InvalidConfig("DTIT is defined for non-blocking operations only")
    origin, target = spec.pair
    nbytes = max(spec.sizes)

    def program(ctx: UnitContext):
        p = ctx.team_memalloc_aligned(DART_TEAM_ALL, nbytes)
        ctx.barrier()
        result = None
        if ctx.myid() == origin:
            ch = _Channel(ctx, p.with_unit(target), nbytes)
            result = [meas for metric in metrics for meas in run_series(ch, spec, metric, clock)]
        ctx.barrier()
        ctx.team_memfree(DART_TEAM_ALL, p)
        return result

    cfg = replace(config, team_pool_bytes=max(config.team_pool_bytes, nbytes + 8))
    return launch(cfg, program)[origin]


def measure_dtct(config: RuntimeConfig, spec: BenchSpec, clock: Clock = time.perf_counter_ns) -> list[Measurement]:
    return _run(config, spec, ["dtct"], clock)


def measure_dtit(config: RuntimeConfig, spec: BenchSpec, clock: Clock = time.perf_counter_ns) -> list[Measurement]:
    return _run(config, spec, ["dtit"], clock)


def measure_bandwidth(config: RuntimeConfig, spec: BenchSpec,
                      clock: Clock = time.perf_counter_ns) -> list[Measurement]:
    return _run(config, spec, ["bw"], clock)


def measure(config: RuntimeConfig, spec: BenchSpec, metrics: Sequence[str],
            clock: Clock = time.perf_counter_ns) -> list[Measurement]:
    """Several metrics in one launch."""
    return _run(config, spec, list(metrics), clock)


def split_layers(series: Sequence[Measurement]):
    """Group by (op, mode, metric) into matched (dart, raw) pairs."""
    groups: dict[tuple, dict[str, list[Measurement]]] = {}
    for m in series:
        groups.setdefault((m.op, m.mode, m.metric), {}).setdefault(m.layer, []).append(m)
    out = {}
    for key, layers in groups.items():
        if "dart" in layers and "raw" in layers:
            dart = sorted(layers["dart"], key=lambda x: x.msg_bytes)
            raw = sorted(layers["raw"], key=lambda x: x.msg_bytes)
            out[key] = (dart, raw)
    return out


def fit_all(series: Sequence[Measurement]) -> list[OverheadFit]:
    return [fit_overhead(d, r, label="/".join(key)) for key, (d, r) in split_layers(series).items()]


# -- reports -------------------------------------------------------------------


def emit_report(series: Sequence[Measurement], fits: Sequence[OverheadFit], path) -> tuple[Path, Path]:
    """Write the CSV to ``path`` and the fit summary next to it (``.fit.txt``)."""
    path = Path(path)
    summary = path.with_suffix(".fit.txt")
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for m in series:
            w.writerow(m.row())
    summary.write_text("\n".join(fit.summary() for fit in fits) + "\n")
    return path, summary


def load_csv(path) -> list[Measurement]:
    with Path(path).open(newline="") as f:
        r = csv.reader(f)
        header = tuple(next(r))
        if header != CSV_HEADER:
            raise InvalidArgument(f"unexpected CSV header {header}")
        return [Measurement(row[0], row[1], row[2], row[3], int(row[4]), float(row[5]), float(row[6]), int(row[7]))
                for row in r]
