"""Runtime state, init/exit and the SPMD launcher.

Units are threads of one process sharing a :class:`~pgas.transport.Fabric`.
:func:`launch` starts one thread per unit and runs the same program in each.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable

from .comm import CommMixin
from .errors import InvalidConfig, NotInitialized, UnitFailure
from .lock import LockMixin
from .memory import MemoryMixin, NonCollectivePool
from .team import DART_TEAM_ALL, Group, Team, TeamMixin, TeamRegistry
from .transport import Fabric, TraceEvent, TraceHook

log = logging.getLogger(__name__)

MiB = 1 << 20

ENV_KEYS = {
    "local_pool_bytes": "PGAS_LOCAL_POOL_BYTES",
    "team_pool_bytes": "PGAS_TEAM_POOL_BYTES",
    "teamlist_cap": "PGAS_TEAMLIST_CAP",
}


@dataclass(frozen=True)
class RuntimeConfig:
    units: int = 4
    local_pool_bytes: int = 16 * MiB
    team_pool_bytes: int = 16 * MiB
    teamlist_cap: int = 256
    trace: bool = False
    seed: int = 0
    # seconds to wait for stragglers once a unit failed
    drain_timeout: float = 10.0
    # seconds before a launch is declared hung; None waits forever
    timeout: float | None = None
    debug: bool = False

    def __post_init__(self):
        if self.units < 1:
            raise InvalidConfig(f"unit count must be at least 1, got {self.units}")
        if self.local_pool_bytes < 0 or self.team_pool_bytes < 0:
            raise InvalidConfig("pool sizes must be non-negative")
        if self.teamlist_cap < 1:
            raise InvalidConfig("teamlist capacity must be at least 1")

    @classmethod
    def from_env(cls, env=None, **overrides) -> RuntimeConfig:
        """Defaults, then ``PGAS_*`` environment keys, then explicit overrides."""
        env = os.environ if env is None else env
        kw: dict[str, Any] = {}
        for name, key in ENV_KEYS.items():
            if key in env:
                try:
                    kw[name] = int(env[key])
                except ValueError:
                    raise InvalidConfig(f"{key}={env[key]!r} is not an integer") from None
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


_NEW, _ACTIVE, _DONE = "new", "active", "done"


class UnitContext(TeamMixin, MemoryMixin, CommMixin, LockMixin):
    """Everything one unit owns. Confined to the unit's thread."""

    def __init__(self, fabric: Fabric, unit: int, config: RuntimeConfig):
        self._fabric = fabric
        self._ep = fabric.endpoints[unit]
        self._unit = unit
        self._nunits = fabric.nranks
        self.config = config
        self._state = _NEW
        self._registry: TeamRegistry | None = None
        self._local_pool: NonCollectivePool | None = None
        self._global_region = None
        self._sys_region = None

    def __repr__(self) -> str:
        return f"UnitContext(unit={self._unit}/{self._nunits}, {self._state})"

    def _require_active(self) -> None:
        if self._state is not _ACTIVE:
            raise NotInitialized(f"unit {self._unit}: runtime is {self._state}, not initialized")

    @property
    def initialized(self) -> bool:
        return self._state is _ACTIVE

    @property
    def endpoint(self):
        """The raw transport endpoint (used by the benchmarks' baseline layer)."""
        return self._ep

    @property
    def fabric(self) -> Fabric:
        return self._fabric

    # -- init / exit ---------------------------------------------------------

    def init(self) -> None:
        if self._state is not _NEW:
            raise NotInitialized(f"unit {self._unit}: init may only be called once")
        cfg = self.config
        ep = self._ep
        everyone = tuple(range(self._nunits))
        self._registry = TeamRegistry(cfg.teamlist_cap)
        self._local_pool = NonCollectivePool(cfg.local_pool_bytes)
        self._global_region = ep.region_create("global", everyone, cfg.local_pool_bytes)
        ep.region_epoch_open(self._global_region)
        # unit 0 keeps the run-wide team id counter
        self._sys_region = ep.region_create("sys", everyone, 8)
        ep.region_epoch_open(self._sys_region)
        team = Team(DART_TEAM_ALL, Group(everyone), -1)
        self._team_attach(team)
        self._registry.install(0, team)
        self._state = _ACTIVE
        if self._unit == 0:
            ep.fetch_and_store(self._sys_region, 0, 0, DART_TEAM_ALL + 1)
        # nobody may create a team before the counter is seeded
        self.barrier(DART_TEAM_ALL)

    def exit(self) -> None:
        self._require_active()
        ep = self._ep
        ep.flush()
        self.barrier(DART_TEAM_ALL)
        for team in self._registry.live_teams():
            self._team_detach(team)
            self._registry.remove(team.team_id)
        self._local_pool.reset()
        ep.region_destroy(self._global_region)
        ep.region_destroy(self._sys_region)
        self._state = _DONE

    def _next_team_id(self) -> int:
        return self._ep.fetch_and_add(self._sys_region, 0, 0, 1)

    # -- environment -----------------------------------------------------------

    def myid(self) -> int:
        self._require_active()
        return self._unit

    def size(self) -> int:
        self._require_active()
        return self._nunits

    def registry_dump(self) -> str:
        return self._registry.dump()


Program = Callable[[UnitContext], Any]


def launch(config: RuntimeConfig, program: Program, *, trace: TraceHook | None = None,
           auto_init: bool = True) -> list[Any]:
    """Run ``program`` once per unit and return the per-unit results in unit order.

    With ``auto_init`` the launcher calls ``init``/``exit`` around the program.
    Any unit failure aborts the run and raises :class:`UnitFailure` listing
    every failed unit. A run that leaves regions or requests behind also fails.
    """
    if trace is None and config.trace:
        trace = _log_event
    fabric = Fabric(config.units, trace)
    results: list[Any] = [None] * config.units
    failures: dict[int, BaseException] = {}
    lock = threading.Lock()

    def body(unit: int) -> None:
        ctx = UnitContext(fabric, unit, config)
        try:
            if auto_init:
                ctx.init()
            results[unit] = program(ctx)
            if auto_init:
                ctx.exit()
        except BaseException as exc:  # noqa: B902 - reported through UnitFailure
            with lock:
                failures[unit] = exc
            fabric.abort()

    threads = [threading.Thread(target=body, args=(u,), name=f"unit-{u}", daemon=True)
               for u in range(config.units)]
    for t in threads:
        t.start()
    _join(threads, fabric, config, failures)
    if failures:
        raise UnitFailure(failures)
    leaks = fabric.audit()
    if leaks:
        raise UnitFailure({-1: RuntimeError("unclean teardown: " + "; ".join(leaks))})
    return results


def _join(threads, fabric: Fabric, config: RuntimeConfig, failures) -> None:
    deadline = None if config.timeout is None else time.monotonic() + config.timeout
    for t in threads:
        while t.is_alive():
            t.join(0.05)
            if fabric.aborted:
                break
            if deadline is not None and time.monotonic() > deadline:
                failures.setdefault(-1, TimeoutError(f"run exceeded {config.timeout}s"))
                fabric.abort()
                break
        if fabric.aborted:
            break
    if fabric.aborted:
        end = time.monotonic() + config.drain_timeout
        for t in threads:
            t.join(max(0.0, end - time.monotonic()))
        for u, t in enumerate(threads):
            if t.is_alive():
                failures.setdefault(u, TimeoutError(f"unit {u} did not drain"))


def _log_event(ev: TraceEvent) -> None:
    log.info("%s %d->%d %dB %s", ev.kind, ev.source, ev.target, ev.nbytes, ev.info)

