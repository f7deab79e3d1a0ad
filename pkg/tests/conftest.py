import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("leanlivo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("leanlivo")


@functools.lru_cache(maxsize=None)
def simulated(name, noise="default", duration=None, camera=True, seed=0):
    """Session-wide cache of simulated streams (simulation is the slow part)."""
    from leanlivo.sim import SensorNoiseSpec, scenario, simulate
    spec = SensorNoiseSpec.noiseless(seed) if noise == "none" else SensorNoiseSpec(seed=seed)
    return simulate(scenario(name), spec, camera=camera, duration=duration)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng):
    from leanlivo import so3
    return so3.exp(rng.normal(size=3) * 1.5)


def random_state(rng, scale=1.0):
    from leanlivo.state import StateVector
    return StateVector(rotation=random_rotation(rng), position=rng.normal(size=3) * 3 * scale,
                       velocity=rng.normal(size=3) * scale, gyro_bias=rng.normal(size=3) * 0.01,
                       accel_bias=rng.normal(size=3) * 0.05,
                       gravity=np.array([0, 0, -9.81]) + rng.normal(size=3) * 0.01)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, when the acceptance module ran."""
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(lines, key=lambda c: int(c[1:]) if c[1:].isdigit() else 99):
        if isinstance(lines[cid], str):
            terminalreporter.write_line(lines[cid])
