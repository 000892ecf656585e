"""
Comprehensive acceptance suite.
End-to-end checks of the learner, sampler, reduction oracle and experiment harness
on the counterexample and synthetic environments. The long-horizon runs carry the
``slow`` marker; deselect them with ``pytest -m "not slow"``.
"""

import math
import os

import numpy as np
import pytest

from adaprod_learner import adaprod_rate_bound, new_learner
from base_prod_oracle import SleepingReduction, base_step, new_base_state, potential_bound, potential_sum
from baselines import OptimisticAMLProd, oamlprod_rate_bound
from batch_sampler import cap_probabilities, dep_round, marginal_audit, sample_batch
from core_model import AwakeMask, RegretLedger, batch_instantaneous_regret
from experiment_cli import RunConfig, run_expert_comparison
from simenv import sinusoidal_schedule, spawn_streams, stationary_noisy


WORKERS = os.cpu_count() or 1


def _total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@pytest.mark.slow
class TestGreedyTrapSeparation:
    """Greedy pays linear regret on the trap; AdaProd+ does not."""

    def test_separation(self):
        T, epsilon = 5000, 0.25
        config = RunConfig.from_dict({
            'learners': ['greedy', 'adaprod'],
            'env': {'kind': 'greedy_trap', 'params': {'epsilon': epsilon}},
            'b': 1,
            'T': T,
            'seeds': list(range(20)),
            'label_points': False,
        })
        report = run_expert_comparison(config, threads=WORKERS)
        means = report.mean_regrets()['cum_regret_dynamic']
        assert means['greedy'] >= 0.8 * T * (0.5 - epsilon)
        assert means['adaprod'] <= 400.0
        assert report.header['streams_identical']
        assert report.violation_total() == 0


class TestDepRound:
    """Cardinality, support and marginals of dependent rounding."""

    def test_cardinality_and_support(self):
        rng = np.random.default_rng(2024)
        for _ in range(10000):
            n = int(rng.integers(1, 65))
            support = int(rng.integers(1, n + 1))
            weights = np.zeros(n)
            weights[rng.choice(n, size=support, replace=False)] = rng.random(support) + 1e-3
            p = weights / weights.sum()
            b = int(rng.integers(1, support + 1))
            capped, _ = cap_probabilities(p, b)
            scaled = np.minimum(b * capped, 1.0)
            chosen = dep_round(scaled, rng)
            assert len(chosen) == b
            assert set(chosen) <= set(np.flatnonzero(scaled > 0.0).tolist())

    @pytest.mark.slow
    def test_marginals(self):
        rho = np.array([0.9, 0.6, 0.3, 0.2])
        frame = marginal_audit(rho, 200000, np.random.default_rng(7))
        np.testing.assert_allclose(frame['empirical'], rho, atol=0.01)


class TestCapping:
    """Capped-simplex projection on random inputs."""

    def test_random_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n = int(rng.integers(1, 40))
            p = rng.dirichlet(np.full(n, rng.uniform(0.2, 2.0)))
            p = p / p.sum()
            b = int(rng.integers(1, n + 1))
            if np.count_nonzero(p) < b:
                continue
            capped, _ = cap_probabilities(p, b)
            assert abs(capped.sum() - 1.0) <= 1e-12
            assert capped.max() <= 1.0 / b + 1e-12
            order = np.argsort(-p, kind='stable')
            assert np.all(np.diff(capped[order]) <= 1e-12)
            again, active = cap_probabilities(capped, b)
            assert not active
            np.testing.assert_array_equal(np.round(again, 15), np.round(capped, 15))


class TestOptimisticFixedPoint:
    """alpha = <p(rhat(alpha)), lhat> on random learner states."""

    def test_random_states(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            n = int(rng.integers(2, 7))
            learner = new_learner(n)
            for _ in range(int(rng.integers(0, 5))):
                p = learner.distribution()
                loss = rng.random(n)
                _, rhat_next = learner.predict_next(loss, p.values, loss)
                learner.observe(loss, p.values, learner.rhat, rhat_next)
            lhat = rng.random(n)
            alpha, rhat = learner.predict_optimistic(lhat)
            assert abs(alpha - learner.distribution(rhat).values @ lhat) <= 1e-8
            assert sum(learner.violations.values()) == 0

    def test_two_point_closed_form(self):
        alpha, _ = new_learner(2).predict_optimistic([0.0, 1.0])
        assert alpha == pytest.approx(1.0 / (1.0 + math.exp(math.sqrt(math.log(2)))), abs=1e-6)


@pytest.mark.slow
class TestReductionEquivalence:
    """The lazy learner reproduces the materialized K = nT reduction."""

    @pytest.mark.parametrize('n', [2, 3, 4])
    def test_streams(self, n):
        rng = np.random.default_rng(40 + n)
        worst = 0.0
        for T in range(2, 7):
            for _ in range(50):
                reduction = SleepingReduction(n, T)
                learner = new_learner(n, numerator=reduction.base.numerator,
                                      initial_rate=float(reduction.base.eta[0]))
                rhat = np.zeros(n)
                for t in range(1, T + 1):
                    p_lazy = learner.distribution(rhat)
                    worst = max(worst, _total_variation(p_lazy.values, reduction.distribution(rhat).values))
                    loss = rng.random(n)
                    next_awake = learner.awake
                    if learner.awake.count > 1 and rng.random() < 0.3:
                        victim = int(rng.choice(learner.awake.indices()))
                        next_awake = learner.awake.without([victim])
                    rhat_next = np.where(next_awake.bits, rng.uniform(-0.5, 0.5, size=n), 0.0)
                    reduction.observe(loss, rhat, rhat_next, next_awake=next_awake)
                    learner.observe(loss, p_lazy.values, rhat, rhat_next)
                    newly = np.flatnonzero(learner.awake.bits & ~next_awake.bits)
                    if newly.size:
                        learner.mark_labeled(newly)
                    rhat = rhat_next
                assert sum(learner.violations.values()) == 0
        assert worst <= 1e-9


class TestPotentialBound:
    """W_T <= K (e^{1/4} + log(4T) / 2) for the base algorithm."""

    @pytest.mark.parametrize('K', [2, 8, 32])
    def test_random_streams(self, K):
        T = 200
        rng = np.random.default_rng(K)
        for trial in range(5):
            state = new_base_state(K)
            for _ in range(T):
                # alternate between uniform noise and a stream that rewards one expert
                if trial % 2:
                    loss = rng.random(K)
                else:
                    loss = np.ones(K)
                    loss[rng.integers(0, max(1, K // 4))] = 0.0
                base_step(state, loss, rng.uniform(-1.0, 1.0, size=K))
            assert potential_sum(state) <= potential_bound(K, T)
            counts = state.lemma_violations
            assert counts['prod'] == counts['log_ratio'] == counts['rate_increase'] == 0


class TestLearningRateAudit:
    """No monotonicity, rate-cap or zero-sum violations across labeling runs."""

    def test_all_learners_with_labeling(self):
        config = RunConfig.from_dict({
            'learners': ['adaprod', 'oamlprod', 'adanormalhedge', 'squint'],
            'env': {'kind': 'stationary_noisy', 'n': 40, 'params': {'mu': 0.5, 'sigma': 0.2}},
            'n_start': 4,
            'b': 3,
            'n_end': 34,
            'seeds': [0, 1, 2],
        })
        report = run_expert_comparison(config)
        assert report.violation_total() == 0
        assert report.header['T'] == 10


@pytest.mark.slow
class TestScheduleComparison:
    """AdaProd+ tracks a drifting stream at least as well as Optimistic AMLProd."""

    def test_paired_seeds(self):
        config = RunConfig.from_dict({
            'learners': ['adaprod', 'oamlprod'],
            'env': {'kind': 'drifting', 'n': 10,
                    'params': {'schedule': 'sinusoidal', 'period': 500, 'amplitude': 0.4, 'sigma': 0.1}},
            'b': 1,
            'T': 2000,
            'seeds': list(range(20)),
            'label_points': False,
        })
        report = run_expert_comparison(config, threads=WORKERS)
        means = report.mean_regrets()['cum_regret_dynamic']
        assert means['adaprod'] <= means['oamlprod']
        assert report.violation_total() == 0

    def test_rates_dominate(self):
        schedule = sinusoidal_schedule(10, 500)
        rng = spawn_streams(0).env
        ada, oaml = new_learner(10), OptimisticAMLProd(10)
        for t in range(1, 301):
            loss = np.clip(schedule(t) + 0.1 * rng.standard_normal(10), 0.0, 1.0)
            for learner in (ada, oaml):
                p = learner.distribution()
                _, rhat_next = learner.predict_next(loss, p.values, loss)
                learner.observe(loss, p.values, learner.rhat, rhat_next)
        records = ada.records()
        c = np.array([r.c_accum for r in records])
        rhat = ada.rhat[[r.point for r in records]]
        live = (c > 0.0) & (2.0 / (3.0 * (1.0 + rhat)) > 0.25)
        assert live.any()
        assert np.all(adaprod_rate_bound(c, rhat, ada.numerator)[live]
                      >= oamlprod_rate_bound(c, oaml.numerator)[live])


class TestBatchRegretContract:
    """Ledger batch regret agrees with a slot-by-slot recomputation from raw logs."""

    def test_stationary_batches(self):
        n, b, T = 50, 5, 500
        env = stationary_noisy(np.full(n, 0.5), 0.05)
        streams = spawn_streams(3)
        learner = new_learner(n)
        awake = AwakeMask.all_awake(n)
        ledger = RegretLedger(n)
        logs = []
        for t in range(1, T + 1):
            p = learner.distribution()
            plan = sample_batch(p, b, streams.sampler, awake)
            assert not plan.cap_was_active
            loss = env.next_losses(t, ~awake.bits, streams.env)
            regret = batch_instantaneous_regret(plan.scaled, loss.values, b, awake)
            ledger.record(float(plan.scaled @ loss.values) / b, regret, awake, n_labeled=0,
                          batch_size=b, cap_active=plan.cap_was_active)
            logs.append((plan.scaled.copy(), loss.values.copy()))
            _, rhat_next = learner.predict_next(loss, p.values, loss.values)
            learner.observe(loss, p.values, learner.rhat, rhat_next)

        recomputed = np.zeros((T, n))
        for t, (rho, loss) in enumerate(logs):
            # b slots, each playing rho / b
            slot_mean = sum(float((rho / b) @ loss) for _ in range(b)) / b
            recomputed[t] = slot_mean - loss
        np.testing.assert_allclose(ledger.regret_matrix(), recomputed, atol=1e-10)
        assert not ledger.to_frame()['cap_active'].any()
        assert sum(learner.violations.values()) == 0
