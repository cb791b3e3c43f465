"""Compiled hot loops for the block simulator and chain-occupancy oracles.

The block kernel consumes pre-drawn standard normals laid out per block as
``4L+1`` slots: two per downlink gain, two per uplink gain, and one spare
that the random-selection policy maps to a uniform via the normal CDF.
Drawing happens outside with a numpy Generator in block-major order, so
results depend only on the seed, never on chunking, and a pure-Python
replay of the same draws reproduces the kernel's trajectory bit for bit.

Selection semantics (ties always resolve to the lowest index):

* throughput policy: argmax of eps[level]*hbar over non-empty IoDs;
* fairness policy: IoDs at the wait deadline with energy preempt and are
  ranked by eps[level]*hbar; otherwise argmax of the normalized energy
  eps[level]/min(wait*phi, C) over non-empty IoDs;
* round robin: the cursor's IoD, empty or not (optionally skipping to the
  next non-empty one); random selection: uniform over all L.

The selected IoD spends its whole charge; everyone else harvests with the
battery capped at C, flooring onto the level grid in discretized mode.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

POLICY_THROUGHPUT = 0
POLICY_FAIRNESS = 1
POLICY_ROUND_ROBIN = 2
POLICY_RANDOM = 3


@njit(cache=True, nogil=True)
def run_blocks(
    z,                # (m, 4L+1) standard normals
    mu, sig,          # (L,) Rician component parameters
    lev, rc, wait,    # (L,) int64 levels, float64 joules, int64 waits
    cursor,           # (1,) int64 round-robin cursor
    t0,               # int64, global index of the first block in this chunk
    eps,              # (K+1,) level energies
    hbar, phi,        # (L,)
    eta, P_H, N0, alpha, T, C, R,
    K, M,
    policy, discretized, rr_skip_empty, random_ties,
    score,            # (L,) float64 scratch for the selection scores
    occ,              # (L, S) int64 occupancy counts
    tx_count, ok_count,          # (L,) int64
    gap_sum, gap_sqsum, gap_cnt, # (L,) float64, float64, int64
    last_tx,          # (L,) int64, -1 while untransmitted
    ctr,              # (2,) int64: [outage, idle]
):
    m = z.shape[0]
    L = mu.shape[0]
    gamma_min = 2.0 ** R - 1.0
    denom = N0 + alpha * P_H
    for t in range(m):
        # occupancy of the state at the start of the block
        for i in range(L):
            if discretized == 1:
                li = lev[i]
            else:
                li = int(rc[i] * K / C)
                if li > K:
                    li = K
            if policy == POLICY_FAIRNESS:
                occ[i, li * M + (wait[i] - 1)] += 1
            else:
                occ[i, li] += 1

        # selection
        sel = -1
        if policy == POLICY_THROUGHPUT or policy == POLICY_FAIRNESS:
            # score every eligible IoD (negative = ineligible), then take the
            # argmax; exact ties go to the lowest index unless random_ties
            # spreads them uniformly via the block's spare uniform draw
            deadline_pool = False
            if policy == POLICY_FAIRNESS:
                for i in range(L):
                    nonempty = (discretized == 1 and lev[i] > 0) or (
                        discretized == 0 and rc[i] > 0.0
                    )
                    if nonempty and wait[i] == M:
                        deadline_pool = True
            for i in range(L):
                score[i] = -1.0
                nonempty = (discretized == 1 and lev[i] > 0) or (
                    discretized == 0 and rc[i] > 0.0
                )
                if not nonempty:
                    continue
                r_i = eps[lev[i]] if discretized == 1 else rc[i]
                if policy == POLICY_THROUGHPUT or deadline_pool:
                    if policy == POLICY_FAIRNESS and wait[i] != M:
                        continue
                    score[i] = r_i * hbar[i]
                else:
                    cap = wait[i] * phi[i]
                    if cap > C:
                        cap = C
                    score[i] = r_i / cap
            best = -1.0
            nties = 0
            for i in range(L):
                if score[i] >= 0.0:
                    if sel == -1 or score[i] > best:
                        best = score[i]
                        sel = i
                        nties = 1
                    elif score[i] == best:
                        nties += 1
            if random_ties == 1 and nties > 1:
                u = 0.5 * math.erfc(-z[t, 4 * L] / math.sqrt(2.0))
                pick = int(u * nties)
                if pick >= nties:
                    pick = nties - 1
                seen = 0
                for i in range(L):
                    if score[i] == best:
                        if seen == pick:
                            sel = i
                            break
                        seen += 1
        elif policy == POLICY_ROUND_ROBIN:
            if rr_skip_empty == 1:
                for j in range(L):
                    cand = (cursor[0] + j) % L
                    if (discretized == 1 and lev[cand] > 0) or (discretized == 0 and rc[cand] > 0.0):
                        sel = cand
                        cursor[0] = (cand + 1) % L
                        break
                if sel == -1:
                    cursor[0] = (cursor[0] + 1) % L
            else:
                cand = cursor[0]
                cursor[0] = (cand + 1) % L
                if (discretized == 1 and lev[cand] > 0) or (discretized == 0 and rc[cand] > 0.0):
                    sel = cand
        else:  # POLICY_RANDOM
            u = 0.5 * math.erfc(-z[t, 4 * L] / math.sqrt(2.0))
            cand = int(u * L)
            if cand >= L:
                cand = L - 1
            if (discretized == 1 and lev[cand] > 0) or (discretized == 0 and rc[cand] > 0.0):
                sel = cand

        # transmission outcome
        if sel < 0:
            ctr[0] += 1
            ctr[1] += 1
        else:
            zu0 = z[t, 2 * L + 2 * sel]
            zu1 = z[t, 2 * L + 2 * sel + 1]
            hu = (mu[sel] + sig[sel] * zu0) ** 2 + (mu[sel] + sig[sel] * zu1) ** 2
            p_tx = (eps[lev[sel]] if discretized == 1 else rc[sel]) / T
            gamma = p_tx * hu / denom
            tx_count[sel] += 1
            if gamma >= gamma_min:
                ok_count[sel] += 1
            else:
                ctr[0] += 1
            if last_tx[sel] >= 0:
                gap = float(t0 + t - last_tx[sel] - 1)
                gap_sum[sel] += gap
                gap_sqsum[sel] += gap * gap
                gap_cnt[sel] += 1
            last_tx[sel] = t0 + t

        # harvesting and state evolution
        for i in range(L):
            if i == sel:
                lev[i] = 0
                rc[i] = 0.0
                wait[i] = 1
            else:
                zd0 = z[t, 2 * i]
                zd1 = z[t, 2 * i + 1]
                hd = (mu[i] + sig[i] * zd0) ** 2 + (mu[i] + sig[i] * zd1) ** 2
                e = eta * P_H * hd * T
                if discretized == 1:
                    step = C / K
                    j = int(e / step)
                    if j < K and (j + 1) * step <= e:
                        j += 1
                    if j > K:
                        j = K
                    li = lev[i] + j
                    if li > K:
                        li = K
                    lev[i] = li
                else:
                    r = rc[i] + e
                    if r > C:
                        r = C
                    rc[i] = r
                if wait[i] < M:
                    wait[i] = wait[i] + 1


@njit(cache=True, nogil=True)
def chain_occupancy(cum_rows, u, state0, occ):
    """Walk a chain given cumulative rows and uniforms; count occupancy.

    Records the state at each step *before* moving, matching the
    stationary distribution of the transition matrix.  Returns the final
    state so chunks can continue the walk.
    """
    state = state0
    n = cum_rows.shape[1]
    for t in range(u.shape[0]):
        occ[state] += 1
        row = cum_rows[state]
        nxt = np.searchsorted(row, u[t], side="right")
        if nxt >= n:
            nxt = n - 1
        state = nxt
    return state
