import pytest

from pgas import RuntimeConfig, launch

SMALL = dict(local_pool_bytes=1 << 16, team_pool_bytes=1 << 16, timeout=60)


def run_units(n, program, hook=None, **overrides):
    cfg = {**SMALL, **overrides}
    return launch(RuntimeConfig(units=n, **cfg), program, trace=hook)


@pytest.fixture
def run():
    return run_units
