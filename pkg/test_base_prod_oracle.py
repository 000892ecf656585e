"""
Tests for base AdaProd+ and the materialized sleeping-experts reduction.
"""

import math

import numpy as np
import pytest

from adaprod_learner import new_learner
from base_prod_oracle import (
    ReductionConfig,
    SleepingReduction,
    base_distribution,
    base_step,
    new_base_state,
    potential_bound,
    potential_sum,
    rate_lemma_holds,
    reduction_distribution,
)
from core_model import AwakeMask, ContractError, StructuralError


class TestBaseState:

    def test_initial_rate_k4(self):
        state = new_base_state(4)
        np.testing.assert_allclose(state.eta, math.sqrt(math.log(4) / 2))
        assert state.eta[0] == pytest.approx(0.83255, abs=1e-5)

    def test_fresh_potential(self):
        assert potential_sum(new_base_state(5)) == pytest.approx(5.0)

    def test_no_experts(self):
        with pytest.raises(StructuralError):
            new_base_state(0)

    def test_constant_losses_stay_uniform(self):
        state = new_base_state(3)
        for _ in range(20):
            p = base_step(state, np.full(3, 0.7))
            np.testing.assert_allclose(p.values, np.full(3, 1 / 3), atol=1e-12)
        np.testing.assert_allclose(base_distribution(state).values, np.full(3, 1 / 3), atol=1e-12)

    def test_one_round_tilts_toward_better_expert(self):
        state = new_base_state(2)
        p1 = base_step(state, [0.0, 1.0])
        np.testing.assert_allclose(p1.values, [0.5, 0.5])
        p2 = base_distribution(state).values
        assert p2[0] > 0.5 > p2[1]
        np.testing.assert_allclose(state.c_accum, [0.25, 0.25])

    def test_wrong_loss_length(self):
        with pytest.raises(StructuralError):
            base_step(new_base_state(3), [0.1, 0.2])


class TestLemmas:

    def test_rate_lemma_on_typical_values(self):
        checks = rate_lemma_holds(0.5, 0.4, 0.3, 0.1)
        assert checks == {'prod': True, 'log_ratio': True}

    def test_prod_fails_below_domain(self):
        assert not rate_lemma_holds(1.0, 1.0, -1.0, 0.0)['prod']

    def test_first_round_is_audited(self):
        state = new_base_state(32)
        loss = np.zeros(32)
        loss[0] = 1.0
        base_step(state, loss)
        # sqrt(log 32 / 2) * (1/32 - 1) is about -1.275
        assert state.lemma_violations['prod_initial'] == 1
        assert state.lemma_violations['prod'] == 0
        base_step(state, loss)
        assert state.lemma_violations['prod'] == 0
        assert state.lemma_violations['prod_initial'] == 1

    def test_first_round_clean_for_two_experts(self):
        state = new_base_state(2)
        base_step(state, [1.0, 0.0])
        assert state.lemma_violations['prod_initial'] == 0

    def test_random_runs_keep_lemmas_and_potential(self):
        rng = np.random.default_rng(21)
        for _ in range(5):
            K = int(rng.integers(2, 6))
            T = 40
            state = new_base_state(K)
            for _ in range(T):
                rhat_next = rng.uniform(-0.5, 0.5, size=K)
                base_step(state, rng.random(K), rhat_next)
            assert state.lemma_violations['rate_increase'] == 0
            assert state.lemma_violations['log_ratio'] == 0
            assert potential_sum(state) <= potential_bound(K, T)


class TestReduction:

    def test_layout(self):
        config = ReductionConfig(2, 3)
        assert config.K == 6
        np.testing.assert_array_equal(config.point_of(), [0, 1, 0, 1, 0, 1])
        np.testing.assert_array_equal(config.birth_of(), [1, 1, 2, 2, 3, 3])
        awake = AwakeMask.all_awake(2).without([1])
        np.testing.assert_array_equal(config.expert_awake(2, awake),
                                      [True, False, True, False, False, False])

    def test_first_round_is_uniform(self):
        reduction = SleepingReduction(4, 3)
        np.testing.assert_allclose(reduction.distribution().values, np.full(4, 0.25))

    def test_all_but_one_labeled(self):
        reduction = SleepingReduction(3, 2)
        reduction.observe([0.2, 0.5, 0.9], np.zeros(3), np.zeros(3),
                          next_awake=AwakeMask.all_awake(3).without([0, 2]))
        np.testing.assert_allclose(reduction.distribution().values, [0.0, 1.0, 0.0])

    def test_distribution_function_matches_method(self):
        reduction = SleepingReduction(3, 2)
        rhat = np.array([0.2, -0.1, 0.0])
        direct = reduction_distribution(reduction.config, reduction.base, reduction.awake, rhat)
        np.testing.assert_allclose(direct.values, reduction.distribution(rhat).values)

    def test_past_horizon(self):
        reduction = SleepingReduction(2, 1)
        reduction.observe([0.1, 0.3], np.zeros(2), np.zeros(2))
        with pytest.raises(ContractError):
            reduction.observe([0.1, 0.3], np.zeros(2), np.zeros(2))

    @pytest.mark.parametrize('n,T,label_at', [(2, 2, None), (3, 6, 3), (4, 8, 2)])
    def test_lazy_learner_matches_reduction(self, n, T, label_at):
        rng = np.random.default_rng(100 + n)
        reduction = SleepingReduction(n, T)
        learner = new_learner(n, numerator=reduction.base.numerator,
                              initial_rate=float(reduction.base.eta[0]))
        rhat = np.zeros(n)
        for t in range(1, T + 1):
            p_lazy = learner.distribution(rhat)
            p_oracle = reduction.distribution(rhat)
            np.testing.assert_allclose(p_lazy.values, p_oracle.values, atol=1e-9)

            loss = rng.random(n)
            rhat_next = np.where(learner.awake.bits, rng.uniform(-0.4, 0.4, size=n), 0.0)
            next_awake = learner.awake
            if t == label_at:
                victim = int(np.flatnonzero(learner.awake.bits)[0])
                next_awake = learner.awake.without([victim])
                rhat_next[victim] = 0.0
            reduction.observe(loss, rhat, rhat_next, next_awake=next_awake)
            learner.observe(loss, p_lazy.values, rhat, rhat_next)
            if t == label_at:
                learner.mark_labeled([victim])
            rhat = rhat_next
