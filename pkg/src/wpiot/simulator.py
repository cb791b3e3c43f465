"""Block-by-block Monte Carlo simulation of the full uplink system.

A single replication walks the network one transmission block at a time:
draw fresh uplink/downlink gains for every IoD, apply the policy's
selection rule, let the winner spend its whole charge (success when the
SINR meets the rate requirement), and let everyone else harvest.  The
battery is continuous by default ("continuous" mode) or floored onto the
K-level grid ("discretized" mode, the analysis' model).  Both modes and a
pure-Python replay consume the same pre-drawn normal stream, so paired
comparisons share channel realizations exactly.

``step`` is the readable reference implementation of one block;
``run`` executes the same semantics through a compiled kernel and is the
only sane choice beyond ~10^5 blocks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .numerics import rician_gaussian_params
from .system import PolicyKind, SystemConfig

_POLICY_CODE = {
    PolicyKind.THROUGHPUT: _kernels.POLICY_THROUGHPUT,
    PolicyKind.FAIRNESS: _kernels.POLICY_FAIRNESS,
    PolicyKind.ROUND_ROBIN: _kernels.POLICY_ROUND_ROBIN,
    PolicyKind.RANDOM: _kernels.POLICY_RANDOM,
}

MODES = ("continuous", "discretized")


@dataclass
class SimState:
    """Mutable per-replication state; one instance per random stream."""

    levels: np.ndarray          # int64 (L,), discretized-mode batteries
    residual: np.ndarray        # float64 (L,), continuous-mode batteries, joules
    waits: np.ndarray           # int64 (L,), blocks since last transmission
    rr_cursor: int
    block_index: int
    rng: np.random.Generator

    @classmethod
    def fresh(cls, cfg: SystemConfig, seed) -> "SimState":
        L = cfg.num_iods
        return cls(
            levels=np.zeros(L, dtype=np.int64),
            residual=np.zeros(L, dtype=np.float64),
            waits=np.ones(L, dtype=np.int64),
            rr_cursor=0,
            block_index=0,
            rng=np.random.default_rng(seed),
        )


@dataclass(frozen=True)
class BlockOutcome:
    selected: int | None
    success: bool

    @property
    def idle(self) -> bool:
        return self.selected is None

    @property
    def outage(self) -> bool:
        return self.selected is None or not self.success


def _draw_block(rng: np.random.Generator, L: int) -> np.ndarray:
    """One block's canonical draw: 4L+1 standard normals."""
    return rng.standard_normal(4 * L + 1)


def step(
    cfg: SystemConfig,
    state: SimState,
    policy: PolicyKind,
    mode: str = "discretized",
    rr_skip_empty: bool = False,
    random_ties: bool = False,
    draws: np.ndarray | None = None,
) -> tuple[SimState, BlockOutcome]:
    """Advance one block, mutating ``state`` in place.

    ``draws`` overrides the random stream with a pre-drawn 4L+1 normal
    vector (used by the kernel-equivalence tests and paired runs).
    ``random_ties`` spreads exact selection ties uniformly instead of the
    default lowest-index rule; see the module notes on saturation.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    discretized = mode == "discretized"
    L = cfg.num_iods
    K, M = cfg.num_levels, cfg.max_wait
    C, T = cfg.battery_capacity, cfg.block_duration
    eps = cfg.energy_levels
    hbar = cfg.mean_gains
    phi = cfg.mean_harvest
    z = _draw_block(state.rng, L) if draws is None else np.asarray(draws, dtype=float)
    if z.shape != (4 * L + 1,):
        raise ValueError(f"draws must hold {4 * L + 1} normals")
    mu = np.empty(L)
    sig = np.empty(L)
    for i in range(L):
        mu[i], sig[i] = rician_gaussian_params(cfg.channel(i))

    def energy(i: int) -> float:
        return float(eps[state.levels[i]]) if discretized else float(state.residual[i])

    def nonempty(i: int) -> bool:
        return state.levels[i] > 0 if discretized else state.residual[i] > 0.0

    # selection
    sel = -1
    if policy in (PolicyKind.THROUGHPUT, PolicyKind.FAIRNESS):
        deadline_pool = policy is PolicyKind.FAIRNESS and any(
            nonempty(i) and state.waits[i] == M for i in range(L)
        )
        score = np.full(L, -1.0)
        for i in range(L):
            if not nonempty(i):
                continue
            if policy is PolicyKind.THROUGHPUT or deadline_pool:
                if policy is PolicyKind.FAIRNESS and state.waits[i] != M:
                    continue
                score[i] = energy(i) * hbar[i]
            else:
                score[i] = energy(i) / min(state.waits[i] * phi[i], C)
        best = -1.0
        nties = 0
        for i in range(L):
            if score[i] >= 0.0:
                if sel == -1 or score[i] > best:
                    best, sel, nties = score[i], i, 1
                elif score[i] == best:
                    nties += 1
        if random_ties and nties > 1:
            u = 0.5 * math.erfc(-z[4 * L] / math.sqrt(2.0))
            pick = min(int(u * nties), nties - 1)
            seen = 0
            for i in range(L):
                if score[i] == best:
                    if seen == pick:
                        sel = i
                        break
                    seen += 1
    elif policy is PolicyKind.ROUND_ROBIN:
        if rr_skip_empty:
            for j in range(L):
                cand = (state.rr_cursor + j) % L
                if nonempty(cand):
                    sel = cand
                    state.rr_cursor = (cand + 1) % L
                    break
            if sel == -1:
                state.rr_cursor = (state.rr_cursor + 1) % L
        else:
            cand = state.rr_cursor
            state.rr_cursor = (cand + 1) % L
            if nonempty(cand):
                sel = cand
    else:
        u = 0.5 * math.erfc(-z[4 * L] / math.sqrt(2.0))
        cand = min(int(u * L), L - 1)
        if nonempty(cand):
            sel = cand

    # transmission
    success = False
    if sel >= 0:
        hu = (mu[sel] + sig[sel] * z[2 * L + 2 * sel]) ** 2 \
            + (mu[sel] + sig[sel] * z[2 * L + 2 * sel + 1]) ** 2
        gamma = (energy(sel) / T) * hu / (cfg.noise_power + cfg.si_gain * cfg.hap_power)
        success = gamma >= 2.0 ** cfg.rate_req - 1.0

    # harvesting and state evolution
    for i in range(L):
        if i == sel:
            state.levels[i] = 0
            state.residual[i] = 0.0
            state.waits[i] = 1
        else:
            hd = (mu[i] + sig[i] * z[2 * i]) ** 2 + (mu[i] + sig[i] * z[2 * i + 1]) ** 2
            e = cfg.conversion_eff * cfg.hap_power * hd * T
            if discretized:
                stepj = C / K
                j = int(e / stepj)
                if j < K and (j + 1) * stepj <= e:
                    j += 1
                state.levels[i] = min(K, state.levels[i] + min(j, K))
            else:
                state.residual[i] = min(state.residual[i] + e, C)
            state.waits[i] = min(state.waits[i] + 1, M)
    state.block_index += 1
    return state, BlockOutcome(selected=None if sel < 0 else sel, success=success)


@dataclass(frozen=True)
class SimReport:
    """Aggregates of one or more replications.

    Rate standard errors follow sqrt(p*(1-p)/n); the ``*_se_batch``
    variants come from batch means and additionally absorb the block-to-
    block autocorrelation, which makes them the right yardstick when
    comparing against analytical values.
    """

    policy: PolicyKind
    mode: str
    blocks: int
    seed: object
    outage_rate: float
    idle_rate: float
    throughput_est: float
    outage_se: float
    outage_se_batch: float
    throughput_se_batch: float
    tx_counts: tuple[int, ...]
    success_counts: tuple[int, ...]
    access_rates: tuple[float, ...]
    access_se: tuple[float, ...]
    mean_gap: tuple[float, ...]
    gap_se: tuple[float, ...]
    fairness: float
    fairness_raw: float
    occupancy: np.ndarray = field(repr=False)
    occupancy_se_batch: np.ndarray = field(repr=False)
    n_batches: int = 0

    CSV_COLUMNS = (
        "policy", "mode", "blocks", "seed", "outage_rate", "outage_se",
        "outage_se_batch", "idle_rate", "throughput_est", "throughput_se_batch",
        "fairness", "fairness_raw", "tx_counts", "access_rates", "access_se",
        "mean_gap",
    )

    def to_csv_row(self) -> list[str]:
        def join(vals, fmt="{:.12g}"):
            return ";".join(fmt.format(v) for v in vals)

        return [
            self.policy.value, self.mode, str(self.blocks), str(self.seed),
            f"{self.outage_rate:.12g}", f"{self.outage_se:.6g}",
            f"{self.outage_se_batch:.6g}", f"{self.idle_rate:.12g}",
            f"{self.throughput_est:.12g}", f"{self.throughput_se_batch:.6g}",
            f"{self.fairness:.12g}",
            f"{self.fairness_raw:.12g}", join(self.tx_counts, "{:d}"),
            join(self.access_rates), join(self.access_se, "{:.6g}"),
            join(self.mean_gap, "{:.8g}"),
        ]

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.value, "mode": self.mode,
            "blocks": self.blocks, "seed": self.seed,
            "outage_rate": self.outage_rate, "idle_rate": self.idle_rate,
            "throughput_est": self.throughput_est,
            "outage_se": self.outage_se, "outage_se_batch": self.outage_se_batch,
            "throughput_se_batch": self.throughput_se_batch,
            "tx_counts": list(self.tx_counts),
            "success_counts": list(self.success_counts),
            "access_rates": list(self.access_rates),
            "access_se": list(self.access_se),
            "mean_gap": list(self.mean_gap), "gap_se": list(self.gap_se),
            "fairness": self.fairness, "fairness_raw": self.fairness_raw,
            "occupancy": self.occupancy.tolist(),
            "n_batches": self.n_batches,
        }


def _entropy_fairness(rho: np.ndarray, normalize: bool) -> float:
    from .metrics import fairness_index

    rho = np.asarray(rho, dtype=float)
    if rho.sum() == 0.0:  # nothing ever transmitted; skip the library warning
        return 0.0
    return fairness_index(rho, normalize=normalize)


def run(
    cfg: SystemConfig,
    policy: PolicyKind,
    blocks: int,
    mode: str = "discretized",
    seed=0,
    rr_skip_empty: bool = False,
    random_ties: bool = False,
    n_batches: int = 100,
) -> SimReport:
    """Run one replication of ``blocks`` transmission blocks.

    Deterministic in (cfg, policy, blocks, mode, seed): the normal stream
    is consumed in block order regardless of internal chunking.
    """
    if blocks < 1:
        raise ValueError("blocks must be >= 1")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    L = cfg.num_iods
    K, M = cfg.num_levels, cfg.max_wait
    n_batches = max(1, min(n_batches, blocks))
    S = (K + 1) * M if policy is PolicyKind.FAIRNESS else K + 1

    mu = np.empty(L)
    sig = np.empty(L)
    for i in range(L):
        mu[i], sig[i] = rician_gaussian_params(cfg.channel(i))
    eps = cfg.energy_levels
    hbar = cfg.mean_gains
    phi = cfg.mean_harvest

    lev = np.zeros(L, dtype=np.int64)
    rc = np.zeros(L, dtype=np.float64)
    wait = np.ones(L, dtype=np.int64)
    cursor = np.zeros(1, dtype=np.int64)
    occ = np.zeros((L, S), dtype=np.int64)
    tx = np.zeros(L, dtype=np.int64)
    ok = np.zeros(L, dtype=np.int64)
    gap_sum = np.zeros(L)
    gap_sq = np.zeros(L)
    gap_cnt = np.zeros(L, dtype=np.int64)
    last_tx = np.full(L, -1, dtype=np.int64)
    ctr = np.zeros(2, dtype=np.int64)
    score = np.empty(L, dtype=np.float64)

    rng = np.random.default_rng(seed)
    batch_edges = np.linspace(0, blocks, n_batches + 1).astype(np.int64)
    batch_outage = np.empty(n_batches)
    batch_occ = np.empty((n_batches, L, S))
    max_chunk = max(1, int(2_000_000 // (4 * L + 1)))

    done = 0
    for b in range(n_batches):
        ctr_before = ctr[0]
        occ_before = occ.copy()
        target = batch_edges[b + 1]
        while done < target:
            mblk = min(max_chunk, target - done)
            z = rng.standard_normal((mblk, 4 * L + 1))
            _kernels.run_blocks(
                z, mu, sig, lev, rc, wait, cursor, done, eps, hbar, phi,
                cfg.conversion_eff, cfg.hap_power, cfg.noise_power, cfg.si_gain,
                cfg.block_duration, cfg.battery_capacity, cfg.rate_req,
                K, M, _POLICY_CODE[policy], 1 if mode == "discretized" else 0,
                1 if rr_skip_empty else 0, 1 if random_ties else 0,
                score, occ, tx, ok, gap_sum, gap_sq, gap_cnt, last_tx, ctr,
            )
            done += mblk
        blen = batch_edges[b + 1] - batch_edges[b]
        batch_outage[b] = (ctr[0] - ctr_before) / blen
        batch_occ[b] = (occ - occ_before) / blen

    n = float(blocks)
    outage = ctr[0] / n
    idle = ctr[1] / n
    access = tx / n
    occ_frac = occ / n
    weights = np.diff(batch_edges) / n
    out_se_batch = _weighted_batch_se(batch_outage, weights, outage)
    if n_batches > 1:
        var = np.sum(
            weights[:, None, None] * (batch_occ - occ_frac[None, :, :]) ** 2, axis=0
        ) * n_batches / (n_batches - 1)
        occ_se_batch = np.sqrt(var / n_batches)
    else:
        occ_se_batch = np.full((L, S), math.inf)

    gap_mean = np.where(gap_cnt > 0, gap_sum / np.maximum(gap_cnt, 1), math.inf)
    gap_var = np.where(
        gap_cnt > 1,
        np.maximum(gap_sq / np.maximum(gap_cnt, 1) - gap_mean**2, 0.0),
        np.inf,
    )
    gap_se = np.where(gap_cnt > 1, np.sqrt(gap_var / np.maximum(gap_cnt, 1)), math.inf)

    return SimReport(
        policy=policy,
        mode=mode,
        blocks=blocks,
        seed=seed,
        outage_rate=float(outage),
        idle_rate=float(idle),
        throughput_est=cfg.rate_req * (1.0 - float(outage)) * cfg.block_duration,
        outage_se=float(math.sqrt(outage * (1.0 - outage) / n)),
        outage_se_batch=float(out_se_batch),
        throughput_se_batch=float(cfg.rate_req * cfg.block_duration * out_se_batch),
        tx_counts=tuple(int(v) for v in tx),
        success_counts=tuple(int(v) for v in ok),
        access_rates=tuple(float(v) for v in access),
        access_se=tuple(float(math.sqrt(p * (1.0 - p) / n)) for p in access),
        mean_gap=tuple(float(v) for v in gap_mean),
        gap_se=tuple(float(v) for v in gap_se),
        fairness=_entropy_fairness(access, normalize=True),
        fairness_raw=_entropy_fairness(access, normalize=False),
        occupancy=occ_frac,
        occupancy_se_batch=occ_se_batch,
        n_batches=n_batches,
    )


def _weighted_batch_se(batch_vals: np.ndarray, weights: np.ndarray, mean: float) -> float:
    """Standard error of the weighted mean from batch means.

    Batches are (near) equal length, so this reduces to the classic
    std(batch means, ddof=1)/sqrt(B).
    """
    B = batch_vals.size
    if B < 2:
        return math.inf
    var = float(np.sum(weights * (batch_vals - mean) ** 2) * B / (B - 1))
    return math.sqrt(var / B)


def spawn_seeds(master_seed, n: int) -> list[np.random.SeedSequence]:
    """Independent child seeds by the documented rule: SeedSequence.spawn."""
    return np.random.SeedSequence(master_seed).spawn(n)


def run_many(
    cfg: SystemConfig,
    policy: PolicyKind,
    blocks: int,
    replications: int,
    mode: str = "discretized",
    master_seed=0,
    rr_skip_empty: bool = False,
) -> SimReport:
    """Sequential replications with spawned seeds, merged by block count."""
    seeds = spawn_seeds(master_seed, replications)
    reports = [
        run(cfg, policy, blocks, mode=mode, seed=s, rr_skip_empty=rr_skip_empty)
        for s in seeds
    ]
    return merge_reports(reports, master_seed=master_seed)


def merge_reports(reports: list[SimReport], master_seed=None) -> SimReport:
    """Count-weighted aggregation of independent replications."""
    if not reports:
        raise ValueError("nothing to merge")
    if len({(r.policy, r.mode) for r in reports}) != 1:
        raise ValueError("cannot merge reports of different policies or modes")
    n = sum(r.blocks for r in reports)
    w = np.array([r.blocks / n for r in reports])
    L = len(reports[0].tx_counts)
    outage = float(sum(r.outage_rate * wi for r, wi in zip(reports, w)))
    idle = float(sum(r.idle_rate * wi for r, wi in zip(reports, w)))
    tx = np.sum([r.tx_counts for r in reports], axis=0)
    ok = np.sum([r.success_counts for r in reports], axis=0)
    access = tx / n
    occ = np.sum([np.asarray(r.occupancy) * r.blocks for r in reports], axis=0) / n
    out_se_batch = math.sqrt(sum((wi * r.outage_se_batch) ** 2 for r, wi in zip(reports, w)))
    occ_se = np.sqrt(sum((wi * np.asarray(r.occupancy_se_batch)) ** 2 for r, wi in zip(reports, w)))
    gcnt = np.array([[1.0 / s**2 if math.isfinite(s) and s > 0 else 0.0 for s in r.gap_se]
                     for r in reports])
    gap_mean = []
    gap_se = []
    for i in range(L):
        ws = gcnt[:, i]
        if ws.sum() > 0:
            vals = np.array([r.mean_gap[i] for r in reports])
            gap_mean.append(float(np.sum(ws * vals) / ws.sum()))
            gap_se.append(float(1.0 / math.sqrt(ws.sum())))
        else:
            gap_mean.append(math.inf)
            gap_se.append(math.inf)
    r0 = reports[0]
    thr = float(sum(r.throughput_est * wi for r, wi in zip(reports, w)))
    return SimReport(
        policy=r0.policy,
        mode=r0.mode,
        blocks=n,
        seed=master_seed if master_seed is not None else [r.seed for r in reports],
        outage_rate=outage,
        idle_rate=idle,
        throughput_est=thr,
        outage_se=float(math.sqrt(outage * (1.0 - outage) / n)),
        outage_se_batch=out_se_batch,
        throughput_se_batch=math.sqrt(
            sum((wi * r.throughput_se_batch) ** 2 for r, wi in zip(reports, w))
        ),
        tx_counts=tuple(int(v) for v in tx),
        success_counts=tuple(int(v) for v in ok),
        access_rates=tuple(float(v) for v in access),
        access_se=tuple(float(math.sqrt(p * (1 - p) / n)) for p in access),
        mean_gap=tuple(gap_mean),
        gap_se=tuple(gap_se),
        fairness=_entropy_fairness(access, normalize=True),
        fairness_raw=_entropy_fairness(access, normalize=False),
        occupancy=occ,
        occupancy_se_batch=occ_se,
        n_batches=sum(r.n_batches for r in reports),
    )
