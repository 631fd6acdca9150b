import math
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spikebeam.channel import BeamAction, VehicleState
from spikebeam.config import ScenarioConfig

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def cfg():
    return ScenarioConfig()


@pytest.fixture
def default_states(cfg):
    return [VehicleState.from_position(x, y, 12.0) for x, y in cfg.initial_positions]


def aligned_action(cfg, states, power=None):
    k = len(states)
    p = cfg.max_power / k if power is None else power
    return BeamAction([s.angle for s in states], np.full(k, p))


def random_case(rng, cfg=None, k=None):
    """Random scenario (antenna counts, K, noise) with random states and action."""
    k = k or int(rng.integers(1, 5))
    base = ScenarioConfig() if cfg is None else cfg
    positions = tuple((float(rng.uniform(-40, 40)), float(rng.uniform(3, 30))) for _ in range(k))
    cfg = base.replace(
        num_vehicles=k,
        n_tx=int(rng.integers(1, 40)),
        n_rx=int(rng.integers(1, 40)),
        initial_positions=positions,
        noise_power_sense=10 ** rng.uniform(-14, -9),
        noise_power_comm=10 ** rng.uniform(-14, -9),
        fading_factor=complex(rng.normal(0, 10), rng.normal(0, 10)),
    )
    states = [VehicleState.from_position(x, y, float(rng.uniform(0, 20))) for x, y in positions]
    action = BeamAction(rng.uniform(0.05, math.pi - 0.05, size=k), rng.uniform(0.01, 1.0, size=k) * cfg.max_power / k)
    return cfg, states, action


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
