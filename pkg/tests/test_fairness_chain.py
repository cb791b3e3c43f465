"""Joint (level, wait) chain of the fairness policy vs oracles."""
import math

import numpy as np
import pytest

from wpiot.fairness_chain import (
    build_chain_fair,
    normalized_energy,
    num_joint_states,
    selection_prob_fair,
    selection_profile_fair,
    state_index,
    state_of,
)
from wpiot.numerics import check_row_stochastic, rician_power_cdf, solve_stationary_direct
from wpiot.throughput_chain import build_chain_throughput, selection_profile_throughput

from .conftest import make_config, random_distributions
from .oracles import enum_selection_fair


class TestStateIndexing:
    def test_bijection(self, cfg_small):
        cfg = cfg_small
        seen = set()
        for k in range(cfg.num_levels + 1):
            for m in range(1, cfg.max_wait + 1):
                s = state_index(cfg, k, m)
                assert state_of(cfg, s) == (k, m)
                seen.add(s)
        assert seen == set(range(num_joint_states(cfg)))

    def test_bounds(self, cfg_small):
        with pytest.raises(ValueError):
            state_index(cfg_small, -1, 1)
        with pytest.raises(ValueError):
            state_index(cfg_small, 0, 0)
        with pytest.raises(ValueError):
            state_index(cfg_small, 0, cfg_small.max_wait + 1)


class TestNormalizedEnergy:
    def test_full_battery_long_wait_is_one(self):
        cfg = make_config(max_wait=1000)
        m = int(math.ceil(cfg.battery_capacity / cfg.mean_harvest[0])) + 1
        assert normalized_energy(cfg, 0, cfg.num_levels, m) == pytest.approx(1.0, rel=1e-12)

    def test_single_block_average(self):
        # battery capacity tuned so level 1 equals one mean harvest
        cfg = make_config(num_iods=1, distances=(8.0,))
        phi = float(cfg.mean_harvest[0])
        cfg = cfg.with_overrides(battery_capacity=phi * cfg.num_levels)
        assert normalized_energy(cfg, 0, 1, 1) == pytest.approx(1.0, rel=1e-12)

    def test_hand_value(self):
        cfg = make_config(num_iods=2, distances=(8.0, 12.0))
        k, m, i = 3, 2, 1
        eps_k = k * cfg.battery_capacity / cfg.num_levels
        phi = cfg.conversion_eff * cfg.hap_power * (1 / (1 + 12.0**3)) * cfg.block_duration
        want = eps_k / min(m * phi, cfg.battery_capacity)
        assert normalized_energy(cfg, i, k, m) == pytest.approx(want, rel=1e-12)


class TestSelectionProbFair:
    def test_sole_iod(self):
        cfg = make_config(num_iods=1, distances=(9.0,), num_levels=2, max_wait=2)
        pis = random_distributions(np.random.default_rng(0), 1, num_joint_states(cfg))
        for k in (1, 2):
            for m in (1, 2):
                assert selection_prob_fair(cfg, pis, 0, k, m) == 1.0
        assert selection_prob_fair(cfg, pis, 0, 0, 1) == 0.0

    def test_deadline_wins_when_others_below(self):
        # competitor certainly sits below the deadline: any k >= 1 at m = M wins
        cfg = make_config(num_iods=2, distances=(8.0, 12.0), num_levels=2, max_wait=3)
        S = num_joint_states(cfg)
        pis = np.zeros((2, S))
        pis[0, state_index(cfg, 2, 1)] = 1.0  # competitor of IoD 1: wait 1
        pis[1, state_index(cfg, 1, 1)] = 1.0
        for k in (1, 2):
            assert selection_prob_fair(cfg, pis, 1, k, cfg.max_wait) == 1.0

    def test_matches_brute_force_l2(self, rng):
        cfg = make_config(num_iods=2, distances=(8.0, 12.0), num_levels=2, max_wait=2)
        pis = random_distributions(rng, 2, num_joint_states(cfg))
        prof = selection_profile_fair(cfg, pis)
        for i in range(2):
            for k in range(cfg.num_levels + 1):
                for m in range(1, cfg.max_wait + 1):
                    want = enum_selection_fair(cfg, pis, i, k, m)
                    got = prof[i, state_index(cfg, k, m)]
                    assert got == pytest.approx(want, abs=1e-13), (i, k, m)

    def test_matches_brute_force_l3_with_ties(self, rng):
        # equal distances put real mass on normalized-energy ties
        cfg = make_config(num_iods=3, distances=(10.0, 10.0, 10.0), num_levels=2, max_wait=2)
        pis = random_distributions(rng, 3, num_joint_states(cfg))
        prof = selection_profile_fair(cfg, pis)
        for i in range(3):
            for k in range(1, cfg.num_levels + 1):
                for m in (1, 2):
                    want = enum_selection_fair(cfg, pis, i, k, m)
                    got = prof[i, state_index(cfg, k, m)]
                    assert got == pytest.approx(want, abs=1e-13), (i, k, m)

    def test_win_probabilities_partition(self, rng):
        cfg = make_config(num_iods=3, distances=(8.0, 10.0, 12.0), num_levels=2, max_wait=3)
        pis = random_distributions(rng, 3, num_joint_states(cfg))
        prof = selection_profile_fair(cfg, pis)
        total = float(np.sum(pis * prof))
        all_empty = float(np.prod(pis[:, : cfg.max_wait].sum(axis=1)))
        assert total == pytest.approx(1.0 - all_empty, abs=1e-12)

    def test_deadline_dominance(self, rng):
        """A deadline holder's win probability is at least the win
        probability it would have from the same level at any shorter wait."""
        cfg = make_config(num_iods=2, distances=(8.0, 12.0), num_levels=3, max_wait=3)
        pis = random_distributions(rng, 2, num_joint_states(cfg))
        prof = selection_profile_fair(cfg, pis)
        for i in range(2):
            for k in range(1, cfg.num_levels + 1):
                at_deadline = prof[i, state_index(cfg, k, cfg.max_wait)]
                for m in range(1, cfg.max_wait):
                    assert at_deadline >= prof[i, state_index(cfg, k, m)] - 1e-12

    def test_m1_reduces_to_throughput_policy(self, rng):
        cfg = make_config(num_iods=3, distances=(8.0, 10.0, 12.0), max_wait=1)
        pis = random_distributions(rng, 3, cfg.num_levels + 1)
        fair = selection_profile_fair(cfg, pis)
        thr = selection_profile_throughput(cfg, pis)
        assert fair == pytest.approx(thr, abs=1e-14)


class TestBuildChainFair:
    def test_row_stochastic(self, cfg_small, rng):
        S = num_joint_states(cfg_small)
        ups = rng.random(S)
        ups.reshape(cfg_small.num_levels + 1, cfg_small.max_wait)[0] = 0.0
        Z = build_chain_fair(cfg_small, 0, ups)
        assert Z.shape == (S, S)
        check_row_stochastic(Z, tol=1e-12)

    def test_forbidden_transitions(self, cfg_small, rng):
        cfg = cfg_small
        K, M = cfg.num_levels, cfg.max_wait
        S = num_joint_states(cfg)
        ups = rng.random(S)
        ups.reshape(K + 1, M)[0] = 0.0
        Z = build_chain_fair(cfg, 1, ups)
        for s in range(S):
            k, m = state_of(cfg, s)
            for s2 in range(S):
                l, u = state_of(cfg, s2)
                legal_wait = (
                    (u == m + 1 and m < M)
                    or (u == m and m == M)
                    or u == 1
                )
                if not legal_wait:
                    assert Z[s, s2] == 0.0, ((k, m), (l, u))
                if 0 < l < k:
                    assert Z[s, s2] == 0.0, ((k, m), (l, u))
                if l == 0 and u == 1 and not (m < M and u == m + 1):
                    # reaching (0, 1) other than by charging from (0, 0)...
                    # only a transmission lands here, so l=0 requires k>0
                    if k == 0:
                        assert Z[s, s2] == 0.0

    def test_wait_never_exceeds_cap(self, cfg_small, rng):
        cfg = cfg_small
        S = num_joint_states(cfg)
        ups = rng.random(S)
        ups.reshape(cfg.num_levels + 1, cfg.max_wait)[0] = 0.0
        Z = build_chain_fair(cfg, 0, ups)
        # every reachable column has a valid wait by construction of state_of;
        # check the deadline row keeps its wait while charging
        k = 1
        s = state_index(cfg, k, cfg.max_wait)
        mass_same_wait = sum(
            Z[s, state_index(cfg, l, cfg.max_wait)] for l in range(k, cfg.num_levels + 1)
        )
        assert mass_same_wait == pytest.approx(1.0 - ups[s], abs=1e-12)

    def test_no_transmit_limit_absorbs_at_full_deadline(self, cfg_small):
        cfg = cfg_small
        S = num_joint_states(cfg)
        Z = build_chain_fair(cfg, 0, np.zeros(S))
        pi = solve_stationary_direct(Z)
        assert pi[state_index(cfg, cfg.num_levels, cfg.max_wait)] == pytest.approx(1.0, abs=1e-9)

    def test_always_transmit_limit(self, cfg_small):
        cfg = cfg_small
        K, M = cfg.num_levels, cfg.max_wait
        S = num_joint_states(cfg)
        ups = np.ones(S)
        ups.reshape(K + 1, M)[0] = 0.0
        Z = build_chain_fair(cfg, 0, ups)
        for s in range(S):
            k, _ = state_of(cfg, s)
            if k > 0:
                assert Z[s, state_index(cfg, 0, 1)] == 1.0

    def test_hand_assembled_6x6(self):
        """K=2, M=2: assemble the whole matrix from CDF differences."""
        cfg = make_config(num_iods=2, distances=(8.0, 12.0), num_levels=2, max_wait=2)
        i = 0
        ch = cfg.channel(i)
        scale = cfg.battery_capacity / (
            cfg.num_levels * cfg.conversion_eff * cfg.hap_power * cfg.block_duration
        )
        F = [float(rician_power_cdf(ch, j * scale)) for j in range(3)]
        p0, p1 = F[1] - F[0], F[2] - F[1]
        t0, t1, t2 = 1 - F[0], 1 - F[1], 1 - F[2]  # tails from j levels up
        S = num_joint_states(cfg)
        ups = np.array([0.0, 0.0, 0.3, 0.6, 0.8, 0.5])  # indexed (k*2 + m-1)
        # states: 0:(0,1) 1:(0,2) 2:(1,1) 3:(1,2) 4:(2,1) 5:(2,2)
        want = np.zeros((6, 6))
        want[0, 1] = p0; want[0, 3] = p1; want[0, 5] = t2        # (0,1) charge, wait->2
        want[1, 1] = p0; want[1, 3] = p1; want[1, 5] = t2        # (0,2) deadline, wait stays
        want[2, 0] = 0.3; want[2, 3] = 0.7 * p0; want[2, 5] = 0.7 * t1
        want[3, 0] = 0.6; want[3, 3] = 0.4 * p0; want[3, 5] = 0.4 * t1
        want[4, 0] = 0.8; want[4, 5] = 0.2 * t0
        want[5, 0] = 0.5; want[5, 5] = 0.5 * t0
        Z = build_chain_fair(cfg, i, ups)
        assert Z == pytest.approx(want, abs=1e-13)

    def test_random_configs_row_stochastic(self, rng):
        for _ in range(25):
            K = int(rng.integers(1, 6))
            M = int(rng.integers(1, 5))
            L = int(rng.integers(1, 4))
            cfg = make_config(
                num_iods=L,
                distances=tuple(5.0 + 10 * rng.random() for _ in range(L)),
                num_levels=K,
                max_wait=M,
                hap_power=float(10 ** rng.uniform(-3, 0.5)),
                battery_capacity=float(10 ** rng.uniform(-5, -3)),
            )
            S = num_joint_states(cfg)
            ups = rng.random(S)
            ups.reshape(K + 1, M)[0] = 0.0
            Z = build_chain_fair(cfg, int(rng.integers(0, L)), ups)
            check_row_stochastic(Z, tol=1e-12)

    def test_matrix_free_application_matches_dense(self, rng):
        from wpiot.fairness_chain import apply_chain_fair

        for _ in range(8):
            K = int(rng.integers(1, 7))
            M = int(rng.integers(1, 5))
            cfg = make_config(num_levels=K, max_wait=M)
            S = num_joint_states(cfg)
            ups = rng.random(S)
            ups.reshape(K + 1, M)[0] = 0.0
            pi = rng.dirichlet(np.ones(S))
            dense = build_chain_fair(cfg, 0, ups).T @ pi
            free = apply_chain_fair(cfg, 0, ups, pi)
            assert free == pytest.approx(dense, abs=1e-14)

    def test_frozen_profile_simulation_agreement(self, rng):
        from wpiot._kernels import chain_occupancy

        cfg = make_config(num_iods=2, distances=(8.0, 12.0), num_levels=2, max_wait=2)
        S = num_joint_states(cfg)
        ups = np.array([0.0, 0.0, 0.5, 0.9, 0.7, 1.0])
        Z = build_chain_fair(cfg, 0, ups)
        pi = solve_stationary_direct(Z)
        cum = np.cumsum(Z, axis=1)
        steps, batches = 10_000_000, 50
        occ_b = np.zeros((batches, S))
        state = 0
        for b in range(batches):
            occ = np.zeros(S, dtype=np.int64)
            state = chain_occupancy(cum, rng.random(steps // batches), state, occ)
            occ_b[b] = occ / (steps // batches)
        est = occ_b.mean(axis=0)
        se = occ_b.std(axis=0, ddof=1) / math.sqrt(batches)
        assert np.all(np.abs(est - pi) <= 3 * se + 1e-9)
