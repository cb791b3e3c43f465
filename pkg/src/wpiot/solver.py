"""Coupled stationary solve across all IoDs by fixed-point iteration.

Every IoD's transition matrix depends on every other IoD's stationary
vector through the selection probabilities, so the stationary problem is
a coupled nonlinear fixed point pi = F(pi).  F applies one synchronous
sweep: recompute the selection profiles from the current vectors, rebuild
each transition matrix, and push each vector through its matrix once.
Plain Picard iteration on F is the default; an accelerated variant solves
each chain to stationarity per profile refresh and must land on the same
fixed point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fairness_chain, throughput_chain
from .numerics import ToleranceConfig, solve_stationary_direct
from .system import PolicyKind, SystemConfig


class NumericError(RuntimeError):
    """The iteration produced NaNs or lost probability mass."""


@dataclass(frozen=True)
class CoupledSolution:
    """Stationary vectors of all IoDs plus convergence diagnostics.

    ``distributions`` has one row per IoD: K+1 battery levels for the
    throughput policy, (K+1)*M flattened joint states for the fairness
    policy.  ``mass_drift`` records how far row sums wandered from 1
    before the defensive renormalization (it must be a no-op in practice).
    """

    policy: PolicyKind
    distributions: np.ndarray
    iterations_used: int
    final_residual: float
    converged: bool
    mass_drift: float
    trace: tuple[tuple[int, float], ...] = field(default=(), repr=False)


def _profile(cfg: SystemConfig, policy: PolicyKind, pis: np.ndarray) -> np.ndarray:
    if policy is PolicyKind.THROUGHPUT:
        return throughput_chain.selection_profile_throughput(cfg, pis)
    if policy is PolicyKind.FAIRNESS:
        return fairness_chain.selection_profile_fair(cfg, pis)
    raise ValueError(f"policy {policy} has no Markov-chain analysis")


def _build(cfg: SystemConfig, policy: PolicyKind, i: int, ups_i: np.ndarray) -> np.ndarray:
    if policy is PolicyKind.THROUGHPUT:
        return throughput_chain.build_chain_throughput(cfg, i, ups_i)
    return fairness_chain.build_chain_fair(cfg, i, ups_i)


def state_count(cfg: SystemConfig, policy: PolicyKind) -> int:
    if policy is PolicyKind.THROUGHPUT:
        return cfg.num_levels + 1
    if policy is PolicyKind.FAIRNESS:
        return fairness_chain.num_joint_states(cfg)
    raise ValueError(f"policy {policy} has no Markov-chain analysis")


_DENSE_STATE_LIMIT = 1024  # above this, step the fairness chain matrix-free


def apply_fixed_point_map(
    cfg: SystemConfig, policy: PolicyKind, pis: np.ndarray
) -> np.ndarray:
    """One synchronous sweep of F: profiles -> matrices -> pi Z per IoD."""
    ups = _profile(cfg, policy, pis)
    out = np.empty_like(pis)
    matrix_free = (
        policy is PolicyKind.FAIRNESS and pis.shape[1] > _DENSE_STATE_LIMIT
    )
    for i in range(cfg.num_iods):
        if matrix_free:
            out[i] = fairness_chain.apply_chain_fair(cfg, i, ups[i], pis[i])
        else:
            Z = _build(cfg, policy, i, ups[i])
            out[i] = Z.T @ pis[i]
    return out


def profile_for(cfg: SystemConfig, sol: CoupledSolution) -> np.ndarray:
    """Selection profile induced by a solved set of stationary vectors."""
    return _profile(cfg, sol.policy, sol.distributions)


def solve_coupled(
    cfg: SystemConfig,
    policy: PolicyKind,
    tol: ToleranceConfig | None = None,
    init: np.ndarray | None = None,
    accelerated: bool = False,
    keep_trace: bool = False,
    damping: float = 1.0,
) -> CoupledSolution:
    """Iterate pi <- F(pi) until the stacked l1 change falls below e_pi.

    Starts from the uniform distribution unless ``init`` (shape L x S) is
    given.  Non-convergence within ``max_iterations`` is reported through
    ``converged=False`` rather than raised; NaNs or vanishing mass raise
    NumericError.

    ``damping`` relaxes the update to (1-w)*pi + w*F(pi).  The default 1
    is the plain map; strongly coupled regimes (very high HAP power) can
    drive it into a period-two orbit, and any w < 1 restores convergence
    without moving the fixed point.
    """
    tol = tol or ToleranceConfig()
    if not policy.analyzable:
        raise ValueError(f"policy {policy} has no Markov-chain analysis")
    if not (0.0 < damping <= 1.0):
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    L = cfg.num_iods
    S = state_count(cfg, policy)
    if init is None:
        pis = np.full((L, S), 1.0 / S)
    else:
        pis = np.array(init, dtype=float)
        if pis.shape != (L, S):
            raise ValueError(f"init must have shape ({L}, {S}), got {pis.shape}")
        if np.any(pis < 0) or np.abs(pis.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("init rows must be distributions")

    trace: list[tuple[int, float]] = []
    residual = np.inf
    iterations = 0
    converged = False
    for s in range(1, tol.max_iterations + 1):
        if accelerated:
            ups = _profile(cfg, policy, pis)
            raw = np.empty_like(pis)
            for i in range(L):
                raw[i] = solve_stationary_direct(_build(cfg, policy, i, ups[i]), tol)
        else:
            raw = apply_fixed_point_map(cfg, policy, pis)
        # the residual is the undamped fixed-point defect, so the stop rule
        # certifies the same solution quality for every damping value
        residual = float(np.abs(raw - pis).sum())
        iterations = s
        if not np.all(np.isfinite(raw)):
            raise NumericError(f"iteration {s} produced non-finite mass")
        pis = raw if damping == 1.0 else pis + damping * (raw - pis)
        if keep_trace:
            trace.append((s, residual))
        if residual <= tol.solver_residual_tol:
            converged = True
            break

    sums = pis.sum(axis=1)
    drift = float(np.abs(sums - 1.0).max())
    if drift > 1e-6 or np.any(sums <= 0):
        raise NumericError(f"probability mass drifted by {drift:.3e}")
    pis = pis / sums[:, None]
    return CoupledSolution(
        policy=policy,
        distributions=pis,
        iterations_used=iterations,
        final_residual=residual,
        converged=converged,
        mass_drift=drift,
        trace=tuple(trace),
    )


def contraction_estimate(
    cfg: SystemConfig, policy: PolicyKind, pis_a: np.ndarray, pis_b: np.ndarray
) -> float:
    """Empirical Lipschitz ratio ||F(a) - F(b)||_1 / ||a - b||_1.

    A diagnostic for the contraction property underpinning convergence of
    the Picard iteration; it proves nothing but ratios persistently below
    one explain observed convergence.
    """
    pis_a = np.asarray(pis_a, dtype=float)
    pis_b = np.asarray(pis_b, dtype=float)
    gap = float(np.abs(pis_a - pis_b).sum())
    if gap == 0.0:
        raise ValueError("contraction estimate needs two distinct points")
    num = float(np.abs(apply_fixed_point_map(cfg, policy, pis_a)
                       - apply_fixed_point_map(cfg, policy, pis_b)).sum())
    return num / gap


def write_trace_csv(path, trace) -> None:
    """Persist a convergence trace as (iteration, residual) CSV rows."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "residual"])
        for it, res in trace:
            w.writerow([it, f"{res:.16e}"])
