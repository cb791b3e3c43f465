"""Scheduling analysis and simulation for a full-duplex wireless-powered IoT uplink.

Two proposed scheduling policies (throughput-oriented, by weighted
residual energy; fairness-oriented, by normalized accumulated energy with
a wait deadline) are analyzed through coupled finite-state Markov chains
and validated against a block-level Monte Carlo simulator that also
covers round-robin and random-selection baselines.
"""

from .numerics import (
    RicianChannel,
    SolverError,
    ToleranceConfig,
    marcum_q1,
    rician_power_cdf,
    rician_power_sample,
    solve_stationary_direct,
)
from .system import (
    EnergyLevel,
    PolicyKind,
    SystemConfig,
    discretize_energy,
    harvested_energy,
    mean_gain,
    uplink_sinr,
)
from .solver import CoupledSolution, contraction_estimate, solve_coupled
from .metrics import AnalysisReport, analyze, fairness_index
from .simulator import SimReport, SimState, run, run_many, step
from .presets import preset, scaled

__version__ = "0.1.0"

__all__ = [
    "AnalysisReport",
    "CoupledSolution",
    "EnergyLevel",
    "PolicyKind",
    "RicianChannel",
    "SimReport",
    "SimState",
    "SolverError",
    "SystemConfig",
    "ToleranceConfig",
    "analyze",
    "contraction_estimate",
    "discretize_energy",
    "fairness_index",
    "harvested_energy",
    "marcum_q1",
    "mean_gain",
    "preset",
    "rician_power_cdf",
    "rician_power_sample",
    "run",
    "run_many",
    "scaled",
    "solve_coupled",
    "solve_stationary_direct",
    "step",
    "uplink_sinr",
    "__version__",
]
