"""Battery Markov chain for the weighted-residual-energy policy.

Each IoD's battery walks on K+1 levels.  A non-empty IoD discharges fully
when it wins the uplink (probability ``upsilon[i, k]`` from level k) and
otherwise charges by the discretized harvest; an empty IoD always charges.
The winning probabilities couple the chains: IoD i beats competitor p when
p's weighted level ``eps_q * H_bar_p`` falls below i's ``eps_k * H_bar_i``,
with exact ties resolved in favor of the lower index.  In the analysis
this index rule shows up as a strict losing set for competitors ahead of i
and an inclusive one for competitors behind it, which keeps the product
form in exact agreement with the simulator's argmax.
"""
from __future__ import annotations

import math

import numpy as np

from .numerics import rician_power_cdf
from .system import SystemConfig


def harvest_thresholds(cfg: SystemConfig) -> np.ndarray:
    """Downlink-gain thresholds for reaching each battery level in one block.

    Harvesting eta*P_H*H_D*T >= eps_j requires H_D >= j*C/(K*eta*P_H*T);
    the CDF evaluated on this grid yields every increment probability.
    """
    scale = cfg.battery_capacity / (
        cfg.num_levels * cfg.conversion_eff * cfg.hap_power * cfg.block_duration
    )
    return np.arange(cfg.num_levels + 1) * scale


def harvest_cdf_grid(cfg: SystemConfig, i: int) -> np.ndarray:
    """F_{H_D}(threshold_j) for j = 0..K; entry 0 is exactly 0."""
    return np.asarray(rician_power_cdf(cfg.channel(i), harvest_thresholds(cfg)))


def eh_increment_prob(cfg: SystemConfig, i: int, lo_level: int, hi_level: float) -> float:
    """Probability the discretized harvest lands in [lo_level, hi_level).

    ``hi_level`` may be ``math.inf`` for the upper tail.  Level bounds are
    counted in units of C/K.
    """
    if lo_level < 0 or not lo_level < hi_level:
        raise ValueError(f"need 0 <= lo < hi, got lo={lo_level}, hi={hi_level}")
    ch = cfg.channel(i)
    scale = cfg.battery_capacity / (
        cfg.num_levels * cfg.conversion_eff * cfg.hap_power * cfg.block_duration
    )
    lo_cdf = rician_power_cdf(ch, lo_level * scale)
    if math.isinf(hi_level):
        return float(1.0 - lo_cdf)
    return float(rician_power_cdf(ch, hi_level * scale) - lo_cdf)


def harvest_level_probs(cfg: SystemConfig, i: int) -> np.ndarray:
    """p[j] = Pr(discretized harvest == j levels); p[K] absorbs the tail."""
    F = harvest_cdf_grid(cfg, i)
    p = np.empty(cfg.num_levels + 1)
    p[:-1] = np.diff(F)
    p[-1] = 1.0 - F[-1]
    return p


def selection_profile_throughput(cfg: SystemConfig, pis: np.ndarray) -> np.ndarray:
    """upsilon[i, k] for all IoDs and levels, from all stationary vectors.

    ``pis`` has shape (L, K+1).  Row 0 of the result is zero: an empty
    battery never transmits.
    """
    pis = np.asarray(pis, dtype=float)
    L, S = pis.shape
    K = cfg.num_levels
    if L != cfg.num_iods or S != K + 1:
        raise ValueError(f"expected pis of shape ({cfg.num_iods}, {K + 1}), got {pis.shape}")
    eps = cfg.energy_levels
    hbar = cfg.mean_gains
    weighted = eps[None, :] * hbar[:, None]  # weighted[p, q] = eps_q * H_bar_p
    cums = np.cumsum(pis, axis=1)
    ups = np.zeros((L, K + 1))
    for i in range(L):
        thresholds = weighted[i, 1:]  # own weighted levels, k = 1..K
        prod = np.ones(K)
        for p in range(L):
            if p == i:
                continue
            side = "right" if p > i else "left"
            cnt = np.searchsorted(weighted[p], thresholds, side=side)
            mass = np.where(cnt > 0, cums[p][np.maximum(cnt - 1, 0)], 0.0)
            prod = prod * mass
        ups[i, 1:] = prod
    return np.clip(ups, 0.0, 1.0)


def selection_prob_throughput(cfg: SystemConfig, pis: np.ndarray, i: int, k: int) -> float:
    """Probability IoD i wins the block given its battery sits at level k."""
    if k == 0:
        return 0.0
    return float(selection_profile_throughput(cfg, pis)[i, k])


def build_chain_throughput(cfg: SystemConfig, i: int, ups_i: np.ndarray) -> np.ndarray:
    """(K+1) x (K+1) row-stochastic battery transition matrix for IoD i.

    Row k= 0 is a pure charging row.  A row with k > 0 places ``ups_i[k]``
    on the discharge target 0 and spreads the rest over levels l >= k via
    the harvest increment probabilities, aggregating every overshoot into
    the full level K.  Partial discharges (k > l > 0) carry zero mass.
    """
    K = cfg.num_levels
    ups_i = np.asarray(ups_i, dtype=float)
    if ups_i.shape != (K + 1,):
        raise ValueError(f"expected {K + 1} selection entries, got {ups_i.shape}")
    if np.any(ups_i < 0) or np.any(ups_i > 1):
        raise ValueError("selection probabilities must lie in [0, 1]")
    F = harvest_cdf_grid(cfg, i)
    inc = np.diff(F)  # inc[j] = Pr(j levels harvested), j = 0..K-1
    Z = np.zeros((K + 1, K + 1))
    for k in range(K + 1):
        stay = 1.0 if k == 0 else 1.0 - ups_i[k]
        if k > 0:
            Z[k, 0] = ups_i[k]
        if k < K:
            Z[k, k:K] += stay * inc[: K - k]
        Z[k, K] += stay * (1.0 - F[K - k])
    return Z
