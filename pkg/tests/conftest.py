"""Shared fixtures: small configurations sized for exact oracles."""
from __future__ import annotations

import numpy as np
import pytest

from wpiot.system import SystemConfig


def make_config(**overrides) -> SystemConfig:
    """A small, energetic network: harvests span a few levels per block."""
    base = dict(
        num_iods=2,
        hap_power=0.1,
        noise_power=1e-9,
        conversion_eff=0.5,
        battery_capacity=2e-4,
        num_levels=4,
        max_wait=3,
        rician_factor=6.0,
        si_gain=1e-7,
        block_duration=1.0,
        rate_req=1.0,
        distances=(8.0, 12.0),
        pathloss_exp=3.0,
    )
    base.update(overrides)
    return SystemConfig(**base)


@pytest.fixture
def cfg_small() -> SystemConfig:
    return make_config()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


def random_distributions(rng: np.random.Generator, L: int, S: int) -> np.ndarray:
    """Random stationary-vector stand-ins (Dirichlet rows)."""
    return rng.dirichlet(np.ones(S), size=L)
