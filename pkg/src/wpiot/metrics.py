"""Closed-form performance metrics from a coupled stationary solution.

Outage decomposes into the all-empty probability plus, per IoD, the mass
of being scheduled yet falling below the SINR threshold.  Throughput is
R*(1 - P_out)*T.  Access probabilities sum the scheduled mass per IoD and
feed the entropy fairness index.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .fairness_chain import num_joint_states
from .numerics import rician_power_cdf
from .solver import CoupledSolution
from .system import PolicyKind, SystemConfig, outage_gain_threshold


@dataclass(frozen=True)
class OutageBreakdown:
    idle: float                  # all batteries empty
    per_iod: tuple[float, ...]   # scheduled-but-failed, per IoD
    total: float                 # idle + sum(per_iod)


@dataclass(frozen=True)
class AnalysisReport:
    """Flat record of every analytical metric for one (config, policy)."""

    policy: PolicyKind
    outage_idle: float
    outage_per_iod: tuple[float, ...]
    outage_total: float
    throughput: float
    access_probs: tuple[float, ...]
    fairness: float              # entropy index on normalized shares
    fairness_raw: float          # entropy index on raw access probabilities
    charging_rounds: tuple[float, ...]
    converged: bool
    iterations: int
    residual: float

    CSV_COLUMNS = (
        "policy", "outage_idle", "outage_total", "throughput",
        "fairness", "fairness_raw", "converged", "iterations", "residual",
        "outage_per_iod", "access_probs", "charging_rounds",
    )

    def to_csv_row(self) -> list[str]:
        def join(vals):
            return ";".join(f"{v:.12g}" for v in vals)

        return [
            self.policy.value,
            f"{self.outage_idle:.12g}",
            f"{self.outage_total:.12g}",
            f"{self.throughput:.12g}",
            f"{self.fairness:.12g}",
            f"{self.fairness_raw:.12g}",
            str(int(self.converged)),
            str(self.iterations),
            f"{self.residual:.6g}",
            join(self.outage_per_iod),
            join(self.access_probs),
            join(self.charging_rounds),
        ]

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.value,
            "outage_idle": self.outage_idle,
            "outage_per_iod": list(self.outage_per_iod),
            "outage_total": self.outage_total,
            "throughput": self.throughput,
            "access_probs": list(self.access_probs),
            "fairness": self.fairness,
            "fairness_raw": self.fairness_raw,
            "charging_rounds": list(self.charging_rounds),
            "converged": self.converged,
            "iterations": self.iterations,
            "residual": self.residual,
        }


def _require_converged(sol: CoupledSolution):
    if not sol.converged:
        raise ValueError(
            f"refusing to evaluate metrics on an unconverged solution "
            f"(residual {sol.final_residual:.3e} after {sol.iterations_used} iterations)"
        )


def _fail_probs(cfg: SystemConfig, i: int) -> np.ndarray:
    """F_{H_U}(threshold(k)) for k = 1..K: outage odds when sending from k."""
    thr = np.array([outage_gain_threshold(cfg, k) for k in range(1, cfg.num_levels + 1)])
    return np.asarray(rician_power_cdf(cfg.channel(i), thr))


def outage_throughput_oriented(
    cfg: SystemConfig, sol: CoupledSolution, profile: np.ndarray
) -> OutageBreakdown:
    """Outage decomposition under the weighted-residual-energy policy."""
    _require_converged(sol)
    pis = sol.distributions
    idle = float(np.prod(pis[:, 0]))
    per = []
    for i in range(cfg.num_iods):
        per.append(float(np.sum(pis[i, 1:] * profile[i, 1:] * _fail_probs(cfg, i))))
    return OutageBreakdown(idle=idle, per_iod=tuple(per), total=idle + sum(per))


def outage_fairness_oriented(
    cfg: SystemConfig, sol: CoupledSolution, profile: np.ndarray
) -> OutageBreakdown:
    """Outage decomposition under the normalized-accumulated-energy policy."""
    _require_converged(sol)
    K, M = cfg.num_levels, cfg.max_wait
    S = num_joint_states(cfg)
    pis = sol.distributions
    if pis.shape[1] != S:
        raise ValueError("solution does not cover the joint state space")
    idle = float(np.prod(pis[:, :M].sum(axis=1)))  # level-0 block of each IoD
    per = []
    for i in range(cfg.num_iods):
        grid_pi = pis[i].reshape(K + 1, M)
        grid_up = profile[i].reshape(K + 1, M)
        weighted = (grid_pi[1:] * grid_up[1:]).sum(axis=1)  # sum over waits
        per.append(float(np.sum(weighted * _fail_probs(cfg, i))))
    return OutageBreakdown(idle=idle, per_iod=tuple(per), total=idle + sum(per))


def throughput(rate_req: float, outage_total: float, block_duration: float) -> float:
    """System average throughput R*(1 - P_out)*T."""
    if not (0.0 <= outage_total <= 1.0):
        raise ValueError(f"outage probability {outage_total} outside [0, 1]")
    return rate_req * (1.0 - outage_total) * block_duration


def access_probabilities(
    cfg: SystemConfig, policy: PolicyKind, sol: CoupledSolution | None = None,
    profile: np.ndarray | None = None,
) -> np.ndarray:
    """Long-run per-IoD transmit probability rho_i.

    Analyzable policies sum the scheduled stationary mass over non-empty
    states.  Round robin and random selection have no closed-form chain;
    their returned 1/L is the scheduled-slot share (empty-battery slots
    are not folded in; use the simulator for empirical transmit rates).
    """
    L = cfg.num_iods
    if policy in (PolicyKind.ROUND_ROBIN, PolicyKind.RANDOM):
        return np.full(L, 1.0 / L)
    if sol is None or profile is None:
        raise ValueError("analyzable policies need a solution and its profile")
    _require_converged(sol)
    pis = sol.distributions
    if policy is PolicyKind.THROUGHPUT:
        return np.sum(pis[:, 1:] * profile[:, 1:], axis=1)
    M = cfg.max_wait
    return np.sum(pis[:, M:] * profile[:, M:], axis=1)  # skip the level-0 block


def fairness_index(rho: np.ndarray, normalize: bool = True) -> float:
    """Entropy fairness: -sum(r * log r)/log L, with 0*log0 = 0.

    With ``normalize`` the shares are rescaled to sum to one, pinning the
    index to [0, 1] even when idle blocks leave sum(rho) < 1; without it
    the raw access probabilities enter the formula directly.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("access probabilities must be non-negative")
    L = rho.size
    if L == 1:
        return 1.0
    total = rho.sum()
    if total == 0.0:
        warnings.warn("all access probabilities are zero; fairness defined as 0")
        return 0.0
    shares = rho / total if normalize else rho
    if normalize and np.all(shares == shares[0]):
        return 1.0  # exact at the entropy maximum, immune to log roundoff
    nz = shares[shares > 0]
    out = float(-np.sum(nz * np.log(nz)) / math.log(L))
    # normalized shares live on the simplex, so the entropy bound applies;
    # the raw variant may leave [0, 1] by construction and is not clipped
    return min(1.0, out) if normalize else out


def charging_rounds(ups_total: float) -> float:
    """Mean EH blocks between two transmissions: (1 - u)/u, inf at u = 0."""
    if ups_total < 0 or ups_total > 1:
        raise ValueError(f"selection probability {ups_total} outside [0, 1]")
    if ups_total == 0.0:
        return math.inf
    return (1.0 - ups_total) / ups_total


def analyze(
    cfg: SystemConfig, policy: PolicyKind, sol: CoupledSolution, profile: np.ndarray
) -> AnalysisReport:
    """Assemble the full analytical report for one solved policy."""
    if policy is PolicyKind.THROUGHPUT:
        br = outage_throughput_oriented(cfg, sol, profile)
    elif policy is PolicyKind.FAIRNESS:
        br = outage_fairness_oriented(cfg, sol, profile)
    else:
        raise ValueError(f"policy {policy} has no closed-form analysis")
    rho = access_probabilities(cfg, policy, sol, profile)
    return AnalysisReport(
        policy=policy,
        outage_idle=br.idle,
        outage_per_iod=br.per_iod,
        outage_total=br.total,
        throughput=throughput(cfg.rate_req, br.total, cfg.block_duration),
        access_probs=tuple(float(r) for r in rho),
        fairness=fairness_index(rho, normalize=True),
        fairness_raw=fairness_index(rho, normalize=False),
        charging_rounds=tuple(charging_rounds(float(r)) for r in rho),
        converged=sol.converged,
        iterations=sol.iterations_used,
        residual=sol.final_residual,
    )
