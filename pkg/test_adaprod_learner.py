"""
Tests for the AdaProd+ sleeping-experts learner.
"""

import math

import numpy as np
import pytest

from adaprod_learner import (
    AdaProdLearner,
    adaprod_rate_bound,
    distribution,
    mark_labeled,
    new_learner,
    observe,
    predict_optimistic,
    prediction_rate_bound,
    solve_fixed_point,
)
from core_model import ContractError, NumericalError, StructuralError

ETA_2 = math.sqrt(math.log(2))


def _random_run(learner: AdaProdLearner, rng: np.random.Generator, rounds: int, optimistic: bool = True):
    """Drive a learner with random losses and last-loss predictions."""
    for _ in range(rounds):
        p = learner.distribution()
        loss = rng.random(learner.n)
        rhat_next = None
        if optimistic:
            _, rhat_next = learner.predict_next(loss, p.values, loss)
        learner.observe(loss, p.values, learner.rhat, rhat_next)


class TestInitialization:
    """Fresh learners."""

    def test_initial_rate_n2(self):
        learner = new_learner(2)
        for record in learner.records():
            assert record.eta == pytest.approx(0.83255, abs=1e-5)
            assert record.birth_round == 1
            assert record.log_weight == 0.0

    def test_single_point_pool(self):
        learner = new_learner(1)
        np.testing.assert_array_equal(learner.distribution().values, [1.0])
        learner.step([0.4])
        np.testing.assert_array_equal(learner.distribution().values, [1.0])

    def test_uniform_start(self):
        np.testing.assert_allclose(new_learner(3).distribution().values, np.full(3, 1 / 3))

    def test_empty_pool(self):
        with pytest.raises(StructuralError):
            new_learner(0)


class TestDistribution:
    """Optimistic play distribution."""

    def test_prediction_tilts_distribution(self):
        p = distribution(new_learner(2), [0.1, -0.1]).values
        assert p[0] / p[1] == pytest.approx(math.exp(0.2 * ETA_2), rel=1e-12)
        np.testing.assert_allclose(p, [0.5416, 0.4584], atol=1e-4)

    def test_asleep_points_get_no_mass(self):
        learner = new_learner(3)
        mark_labeled(learner, [1])
        p = learner.distribution().values
        assert p[1] == 0.0
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_all_asleep(self):
        learner = new_learner(2)
        learner.mark_labeled([0, 1])
        with pytest.raises(ContractError):
            learner.distribution()

    def test_prediction_out_of_range(self):
        with pytest.raises(ContractError):
            new_learner(2).distribution([1.5, 0.0])


class TestOptimisticFixedPoint:
    """alpha = <p(rhat(alpha)), lhat>."""

    def test_constant_prediction(self):
        alpha, rhat = predict_optimistic(new_learner(4), np.full(4, 0.35))
        assert alpha == pytest.approx(0.35, abs=1e-12)
        np.testing.assert_allclose(rhat, 0.0, atol=1e-12)

    def test_two_point_closed_form(self):
        alpha, _ = predict_optimistic(new_learner(2), [0.0, 1.0])
        assert alpha == pytest.approx(1.0 / (1.0 + math.exp(ETA_2)), abs=1e-8)

    def test_single_awake_point(self):
        learner = new_learner(3)
        learner.mark_labeled([0, 2])
        alpha, rhat = learner.predict_optimistic([0.1, 0.7, 0.4])
        assert alpha == 0.7
        np.testing.assert_allclose(rhat, 0.0)

    def test_residual_on_trained_learners(self):
        rng = np.random.default_rng(11)
        for trial in range(25):
            learner = new_learner(int(rng.integers(2, 7)))
            _random_run(learner, rng, int(rng.integers(1, 8)))
            lhat = rng.random(learner.n)
            alpha, rhat = learner.predict_optimistic(lhat)
            p = learner.distribution(rhat).values
            assert abs(alpha - p @ lhat) <= 1e-8

    def test_predict_next_matches_committed_state(self):
        rng = np.random.default_rng(5)
        learner = new_learner(4)
        _random_run(learner, rng, 3)
        p = learner.distribution()
        loss = rng.random(4)
        alpha, rhat_next = learner.predict_next(loss, p.values, loss)
        learner.observe(loss, p.values, learner.rhat, rhat_next)
        assert abs(alpha - learner.distribution(rhat_next).values @ loss) <= 1e-8

    def test_predict_next_with_labeling(self):
        rng = np.random.default_rng(8)
        learner = new_learner(5)
        p = learner.distribution()
        loss = rng.random(5)
        next_awake = learner.awake.without([2])
        alpha, rhat_next = learner.predict_next(loss, p.values, loss, next_awake=next_awake)
        learner.observe(loss, p.values, learner.rhat, rhat_next)
        learner.mark_labeled([2])
        p_next = learner.distribution(learner.rhat).values
        assert p_next[2] == 0.0
        assert abs(alpha - p_next @ loss) <= 1e-8

    def test_non_convergence_raises(self):
        with pytest.raises(NumericalError) as info:
            solve_fixed_point(lambda a: 1.0 if a < 0.5 else 0.0)
        assert info.value.residual > 1e-10

    def test_unbracketed_map_raises(self):
        with pytest.raises(NumericalError):
            solve_fixed_point(lambda a: 0.0, lo=0.2, hi=0.8)

    def test_smooth_map_meets_tolerance(self):
        alpha = solve_fixed_point(lambda a: 0.5 + 0.4 * math.sin(3.0 * a))
        assert abs(alpha - (0.5 + 0.4 * math.sin(3.0 * alpha))) <= 1e-10

    def test_predict_next_matches_table_rebuild(self):
        rng = np.random.default_rng(21)
        for trial in range(20):
            n = int(rng.integers(2, 8))
            learner = new_learner(n)
            _random_run(learner, rng, int(rng.integers(1, 12)))
            p = learner.distribution()
            loss = rng.random(n)
            lhat = rng.random(n)
            alpha, rhat_next = learner.predict_next(loss, p.values, lhat)
            learner.observe(loss, p.values, learner.rhat, rhat_next)
            assert abs(alpha - learner.distribution(rhat_next).values @ lhat) <= 1e-8

    def test_predict_next_long_run(self):
        # thousands of records, most of them past the prediction cap
        rng = np.random.default_rng(4)
        learner = new_learner(3)
        _random_run(learner, rng, 400)
        assert len(learner) == 3 * 401
        p = learner.distribution()
        loss = np.array([0.5, 0.0, 1.0])
        alpha, rhat_next = learner.predict_next(loss, p.values, loss)
        learner.observe(loss, p.values, learner.rhat, rhat_next)
        assert abs(alpha - learner.distribution(rhat_next).values @ loss) <= 1e-8


class TestObserve:
    """Round-end updates."""

    def test_first_update_by_hand(self):
        learner = new_learner(2)
        report = observe(learner, [0.0, 1.0], [0.5, 0.5], np.zeros(2), np.zeros(2))
        np.testing.assert_allclose(report.regret, [0.5, -0.5])
        originals = [r for r in learner.records() if r.birth_round == 1]
        assert [r.c_accum for r in originals] == [pytest.approx(0.25), pytest.approx(0.25)]
        births = [r for r in learner.records() if r.birth_round == 2]
        assert len(births) == 2

    def test_rate_cap_at_full_prediction(self):
        assert prediction_rate_bound(np.array([1.0]))[0] == pytest.approx(1 / 3)
        assert adaprod_rate_bound(np.array([0.0]), np.array([1.0]), 10.0)[0] == pytest.approx(1 / 3)

    def test_constant_losses_leave_weights(self):
        learner = new_learner(3)
        for _ in range(5):
            learner.step(np.full(3, 0.6))
        for record in learner.records():
            assert record.log_weight == pytest.approx(0.0, abs=1e-12)
            assert record.c_accum == pytest.approx(0.0, abs=1e-24)
        np.testing.assert_allclose(learner.distribution().values, np.full(3, 1 / 3))

    def test_rates_never_increase(self):
        rng = np.random.default_rng(2)
        learner = new_learner(4)
        before = {}
        for _ in range(15):
            _random_run(learner, rng, 1)
            for r in learner.records():
                key = (r.birth_round, r.point)
                if key in before:
                    assert r.eta <= before[key]
                before[key] = r.eta
        assert learner.violations == {'rate_increase': 0, 'prod_domain': 0, 'zero_sum': 0}

    def test_loss_out_of_range(self):
        learner = new_learner(2)
        with pytest.raises(ContractError):
            learner.observe([0.0, 1.5], [0.5, 0.5])

    def test_mass_on_labeled_point_rejected(self):
        learner = new_learner(2)
        learner.mark_labeled([1])
        with pytest.raises(ContractError):
            learner.observe([0.0, 1.0], [0.5, 0.5])


class TestMarkLabeled:
    """Sleeping points."""

    def test_support_after_labeling(self):
        learner = new_learner(3)
        learner.mark_labeled([1])
        p = learner.distribution().values
        assert p[1] == 0.0 and p[0] > 0.0 and p[2] > 0.0
        assert all(r.point != 1 for r in learner.records())

    def test_all_but_one(self):
        learner = new_learner(4)
        learner.mark_labeled([0, 1, 3])
        np.testing.assert_array_equal(learner.distribution().values, [0.0, 0.0, 1.0, 0.0])

    def test_queries_do_not_change_state(self):
        learner = new_learner(3)
        learner.step([0.1, 0.5, 0.9])
        learner.mark_labeled([2])
        np.testing.assert_array_equal(learner.distribution().values, learner.distribution().values)

    def test_labeling_twice(self):
        learner = new_learner(3)
        learner.mark_labeled([0])
        with pytest.raises(ContractError):
            learner.mark_labeled([0])
