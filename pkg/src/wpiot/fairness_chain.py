"""Joint (battery level, waiting time) Markov chain for the fairness policy.

The fairness scheduler ranks IoDs by normalized accumulated energy,
``eps_k / min(m * phi_i, C)`` with ``phi_i`` the mean harvest per block,
and adds a deadline: an IoD that has waited M blocks with a non-empty
battery transmits immediately, with simultaneous deadline holders ranked
by weighted residual energy.  Both comparisons resolve exact ties toward
the lower index, mirrored in the analysis through strict losing sets for
competitors ahead of i and inclusive ones behind it.

States are flattened as ``state = k * M + (m - 1)`` over levels k in
[0, K] and waits m in [1, M].  Competitor mass is classified as follows
when IoD i holds (k >= 1, m):

* m < M: every competitor state with wait below M whose normalized energy
  loses the ratio test, plus the energy-empty deadline state (0, M);
  a deadline competitor holding energy always preempts.
* m = M: every competitor state with wait below M (any level), plus the
  deadline states whose weighted residual energy loses.
"""
from __future__ import annotations

import numpy as np

from .throughput_chain import harvest_cdf_grid
from .system import SystemConfig


def num_joint_states(cfg: SystemConfig) -> int:
    return (cfg.num_levels + 1) * cfg.max_wait


def state_index(cfg: SystemConfig, level: int, wait: int) -> int:
    """Flattened index of the joint state (level k, wait m)."""
    if not (0 <= level <= cfg.num_levels):
        raise ValueError(f"level {level} outside [0, {cfg.num_levels}]")
    if not (1 <= wait <= cfg.max_wait):
        raise ValueError(f"wait {wait} outside [1, {cfg.max_wait}]")
    return level * cfg.max_wait + (wait - 1)


def state_of(cfg: SystemConfig, index: int) -> tuple[int, int]:
    """Inverse of state_index: index -> (level, wait)."""
    level, rem = divmod(index, cfg.max_wait)
    if not (0 <= level <= cfg.num_levels):
        raise ValueError(f"state index {index} out of range")
    return level, rem + 1


def capped_mean_accumulation(cfg: SystemConfig, i: int, wait: int) -> float:
    """min(m * phi_i, C): expected accumulation over the wait, battery-capped."""
    return min(wait * float(cfg.mean_harvest[i]), cfg.battery_capacity)


def normalized_energy(cfg: SystemConfig, i: int, level: int, wait: int) -> float:
    """Selection statistic eps_k / min(m * phi_i, C) of IoD i at (k, m)."""
    if not (0 <= level <= cfg.num_levels and 1 <= wait <= cfg.max_wait):
        raise ValueError(f"joint state ({level}, {wait}) out of range")
    return float(cfg.energy_levels[level]) / capped_mean_accumulation(cfg, i, wait)


def _normalized_grid(cfg: SystemConfig, i: int) -> np.ndarray:
    """nu[k, m-1] = eps_k / min(m*phi_i, C) over the whole joint grid."""
    eps = cfg.energy_levels
    waits = np.arange(1, cfg.max_wait + 1)
    den = np.minimum(waits * float(cfg.mean_harvest[i]), cfg.battery_capacity)
    return eps[:, None] / den[None, :]


def selection_profile_fair(cfg: SystemConfig, pis: np.ndarray) -> np.ndarray:
    """upsilon[i, s] over flattened joint states, for all IoDs at once.

    ``pis`` has shape (L, (K+1)*M).  Entries at level 0 are zero.
    """
    pis = np.asarray(pis, dtype=float)
    L = cfg.num_iods
    K, M = cfg.num_levels, cfg.max_wait
    S = num_joint_states(cfg)
    if pis.shape != (L, S):
        raise ValueError(f"expected pis of shape ({L}, {S}), got {pis.shape}")
    eps = cfg.energy_levels
    hbar = cfg.mean_gains

    # Per-competitor precomputation: sorted normalized energies over the
    # wait<M states, sorted weighted levels over the deadline states, and
    # the always-losing masses.
    sorted_nu, cum_nu = [], []
    sorted_w, cum_w = [], []
    mass_below_deadline = np.empty(L)   # all wait < M states
    mass_empty_deadline = np.empty(L)   # the (0, M) state
    for p in range(L):
        grid = pis[p].reshape(K + 1, M)
        nu = _normalized_grid(cfg, p)[:, : M - 1].ravel()
        w_mass = grid[:, : M - 1].ravel()
        order = np.argsort(nu, kind="stable")
        sorted_nu.append(nu[order])
        cum_nu.append(np.concatenate(([0.0], np.cumsum(w_mass[order]))))
        wlev = eps[1:] * hbar[p]
        dl_mass = grid[1:, M - 1]
        sorted_w.append(wlev)  # already ascending
        cum_w.append(np.concatenate(([0.0], np.cumsum(dl_mass))))
        mass_below_deadline[p] = grid[:, : M - 1].sum()
        mass_empty_deadline[p] = grid[0, M - 1]

    ups = np.zeros((L, S))
    for i in range(L):
        nu_i = _normalized_grid(cfg, i)
        prod_lo = np.ones((K, M - 1)) if M > 1 else None
        prod_dl = np.ones(K)
        for p in range(L):
            if p == i:
                continue
            side = "right" if p > i else "left"
            if M > 1:
                cnt = np.searchsorted(sorted_nu[p], nu_i[1:, : M - 1].ravel(), side=side)
                lose = cum_nu[p][cnt].reshape(K, M - 1) + mass_empty_deadline[p]
                prod_lo = prod_lo * lose
            cnt_w = np.searchsorted(sorted_w[p], eps[1:] * hbar[i], side=side)
            lose_dl = (
                mass_below_deadline[p] + mass_empty_deadline[p] + cum_w[p][cnt_w]
            )
            prod_dl = prod_dl * lose_dl
        grid_ups = np.zeros((K + 1, M))
        if M > 1:
            grid_ups[1:, : M - 1] = prod_lo
        grid_ups[1:, M - 1] = prod_dl
        ups[i] = grid_ups.ravel()
    return np.clip(ups, 0.0, 1.0)


def selection_prob_fair(
    cfg: SystemConfig, pis: np.ndarray, i: int, level: int, wait: int
) -> float:
    """Probability IoD i wins the block from joint state (level, wait)."""
    if level == 0:
        return 0.0
    return float(selection_profile_fair(cfg, pis)[i, state_index(cfg, level, wait)])


def apply_chain_fair(
    cfg: SystemConfig, i: int, ups_i: np.ndarray, pi_i: np.ndarray
) -> np.ndarray:
    """One chain step pi Z without materializing the transition matrix.

    Mathematically identical to ``build_chain_fair(cfg, i, ups_i).T @ pi_i``
    but linear in K per wait column instead of quadratic in the joint state
    count, which is what makes the published K=200, M=50 setup tractable.
    """
    K, M = cfg.num_levels, cfg.max_wait
    S = num_joint_states(cfg)
    ups_i = np.asarray(ups_i, dtype=float)
    pi_i = np.asarray(pi_i, dtype=float)
    if ups_i.shape != (S,) or pi_i.shape != (S,):
        raise ValueError(f"expected vectors of length {S}")
    F = harvest_cdf_grid(cfg, i)
    inc = np.diff(F)                      # j = 0..K-1 level jumps
    tails = 1.0 - F[::-1]                 # tails[k] = 1 - F[K-k]
    grid_pi = pi_i.reshape(K + 1, M)
    grid_up = ups_i.reshape(K + 1, M)
    stay = grid_pi * (1.0 - grid_up)
    out = np.zeros((K + 1, M))
    out[0, 0] += float((grid_pi * grid_up).sum())
    for m in range(1, M + 1):
        u = min(m + 1, M)
        col = stay[:, m - 1]
        if K > 0:
            out[:K, u - 1] += np.convolve(col, inc)[:K]
        out[K, u - 1] += float(col @ tails)
    return out.ravel()


def build_chain_fair(cfg: SystemConfig, i: int, ups_i: np.ndarray) -> np.ndarray:
    """Row-stochastic transition matrix over the (K+1)*M joint states.

    From (k, m): transmitting mass ``ups_i`` lands on (0, 1); the
    remainder charges along levels l >= k with the wait advancing to
    min(m+1, M).  Level-0 rows never transmit, and the (0, M) row keeps
    its wait while charging.
    """
    K, M = cfg.num_levels, cfg.max_wait
    S = num_joint_states(cfg)
    ups_i = np.asarray(ups_i, dtype=float)
    if ups_i.shape != (S,):
        raise ValueError(f"expected {S} selection entries, got {ups_i.shape}")
    if np.any(ups_i < 0) or np.any(ups_i > 1):
        raise ValueError("selection probabilities must lie in [0, 1]")
    if np.any(ups_i.reshape(K + 1, M)[0] != 0):
        raise ValueError("level-0 states cannot carry transmit probability")
    F = harvest_cdf_grid(cfg, i)
    inc = np.diff(F)
    Z = np.zeros((S, S))
    for k in range(K + 1):
        for m in range(1, M + 1):
            s = k * M + (m - 1)
            v = ups_i[s]
            if k > 0 and v > 0:
                Z[s, 0 * M + 0] = v  # discharge to (0, 1)
            stay = 1.0 - v if k > 0 else 1.0
            u = min(m + 1, M)
            col = (u - 1)
            if k < K:
                for l in range(k, K):
                    Z[s, l * M + col] += stay * inc[l - k]
            Z[s, K * M + col] += stay * (1.0 - F[K - k])
    return Z
