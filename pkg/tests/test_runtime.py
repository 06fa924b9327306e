import time

import pytest

from conftest import SMALL, run_units
from pgas import DART_TEAM_ALL, RuntimeConfig, launch
from pgas.errors import InvalidArgument, InvalidConfig, NotInitialized, RunAborted, UnitFailure


def test_every_unit_runs(run):
    assert run(4, lambda ctx: (ctx.myid(), ctx.size())) == [(u, 4) for u in range(4)]


def test_single_unit_degenerates(run):
    def prog(ctx):
        ctx.barrier()
        buf = bytearray(b"solo")
        ctx.bcast(buf, 0)
        out = bytearray(4)
        ctx.gather(b"only", out, 0)
        p = ctx.team_memalloc_aligned(DART_TEAM_ALL, 8)
        ctx.put_blocking(p, b"12345678")
        lock = ctx.team_lock_init(DART_TEAM_ALL)
        ctx.lock_acquire(lock)
        ctx.lock_release(lock)
        ctx.lock_free(lock)
        got = ctx.get_bytes(p, 8)
        ctx.team_memfree(DART_TEAM_ALL, p)
        return bytes(buf), bytes(out), got

    assert run(1, prog) == [(b"solo", b"only", b"12345678")]


def test_sequential_launches_are_independent(run):
    def prog(ctx):
        tid = ctx.team_create(DART_TEAM_ALL, ctx.team_get_group())
        p = ctx.team_memalloc_aligned(DART_TEAM_ALL, 8)
        ctx.team_memfree(DART_TEAM_ALL, p)
        ctx.team_destroy(tid)
        return tid, p.offset

    assert run(3, prog) == run(3, prog) == [(1, 0)] * 3


def test_lifecycle_errors():
    def prog(ctx):
        assert not ctx.initialized
        with pytest.raises(NotInitialized):
            ctx.barrier()
        with pytest.raises(NotInitialized):
            ctx.team_memalloc_aligned(DART_TEAM_ALL, 8)
        ctx.init()
        with pytest.raises(NotInitialized):
            ctx.init()
        ctx.exit()
        with pytest.raises(NotInitialized):
            ctx.exit()
        with pytest.raises(NotInitialized):
            ctx.size()

    launch(RuntimeConfig(units=2, **SMALL), prog, auto_init=False)


def test_exit_waits_for_everyone():
    def prog(ctx):
        time.sleep(0.02 * ctx.myid())
        t_in = time.perf_counter_ns()
        ctx.exit()
        return t_in, time.perf_counter_ns()

    def wrapped(ctx):
        ctx.init()
        return prog(ctx)

    res = launch(RuntimeConfig(units=4, **SMALL), wrapped, auto_init=False)
    assert max(r[0] for r in res) <= min(r[1] for r in res)


def test_exit_releases_live_teams(run):
    def prog(ctx):
        ctx.team_create(DART_TEAM_ALL, ctx.team_get_group())
        ctx.team_memalloc_aligned(DART_TEAM_ALL, 64)
        return "left dangling"

    assert run(2, prog) == ["left dangling"] * 2


def test_failure_is_aggregated():
    def prog(ctx):
        if ctx.myid() == 2:
            raise ValueError("boom")
        ctx.barrier()

    with pytest.raises(UnitFailure) as info:
        run_units(4, prog, drain_timeout=5)
    err = info.value
    assert list(err.root_causes) == [2]
    assert isinstance(err.failures[2], ValueError)
    assert all(isinstance(err.failures[u], RunAborted) for u in (0, 1, 3))
    assert str(err).splitlines()[1].startswith("unit 2: ValueError")


def test_hung_run_times_out():
    def prog(ctx):
        if ctx.myid() == 0:
            ctx.endpoint.notify_recv(1, "never")

    with pytest.raises(UnitFailure) as info:
        run_units(2, prog, timeout=0.3, drain_timeout=2)
    assert isinstance(info.value.failures[-1], TimeoutError)


def test_config_validation_and_env():
    with pytest.raises(InvalidConfig):
        RuntimeConfig(units=0)
    with pytest.raises(InvalidConfig):
        RuntimeConfig(local_pool_bytes=-1)
    with pytest.raises(InvalidConfig):
        RuntimeConfig(teamlist_cap=0)
    env = {"PGAS_LOCAL_POOL_BYTES": "4096", "PGAS_TEAMLIST_CAP": "8"}
    cfg = RuntimeConfig.from_env(env, units=3, teamlist_cap=None)
    assert (cfg.units, cfg.local_pool_bytes, cfg.teamlist_cap) == (3, 4096, 8)
    assert RuntimeConfig.from_env(env, teamlist_cap=16).teamlist_cap == 16
    with pytest.raises(InvalidConfig):
        RuntimeConfig.from_env({"PGAS_TEAM_POOL_BYTES": "lots"})


def test_team_queries(run):
    def prog(ctx):
        assert ctx.team_myid() == ctx.myid()
        assert ctx.team_size() == ctx.size()
        assert ctx.team_unit_l2g(DART_TEAM_ALL, 1) == 1
        with pytest.raises(InvalidArgument):
            ctx.team_destroy(DART_TEAM_ALL)
        with pytest.raises(InvalidArgument):
            ctx.team_unit_l2g(DART_TEAM_ALL, 3)
        return ctx.registry_dump().splitlines()[0]

    assert run(3, prog)[0].startswith("teamlist capacity=256 live=1")
