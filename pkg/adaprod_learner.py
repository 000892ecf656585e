"""
AdaProd+ sleeping-experts learner.
Keeps one expert record per (birth round, point) pair for every unlabeled point,
computes the optimistic play distribution, solves the optimistic fixed point
and applies the post-observation rate and weight updates in log space.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from core_model import (
    AwakeMask,
    ContractError,
    LossVector,
    NumericalError,
    ProbabilityVector,
    StructuralError,
    as_values,
)

logger = logging.getLogger(__name__)

FIXED_POINT_TOL = 1e-10
FIXED_POINT_XTOL = 1e-12
FIXED_POINT_MAX_ITER = 100
RATE_CAP = 2.0 / 3.0
RATE_CHECK_SLACK = 1e-12
ZERO_SUM_TOL = 1e-12
NEGLIGIBLE_LOG_MASS = 80.0


def default_numerator(n: int) -> float:
    return math.sqrt(2.0 * math.log(n)) if n > 1 else 0.0


def default_initial_rate(n: int) -> float:
    return math.sqrt(math.log(n)) if n > 1 else 0.0


def prediction_rate_bound(rhat_next: np.ndarray) -> np.ndarray:
    """2 / (3 (1 + rhat)); unbounded when rhat = -1."""
    denom = 3.0 * (1.0 + np.asarray(rhat_next, dtype=float))
    with np.errstate(divide='ignore'):
        return np.where(denom > 0.0, 2.0 / np.where(denom > 0.0, denom, 1.0), np.inf)


def accumulated_rate_bound(c_accum: np.ndarray, numerator: float) -> np.ndarray:
    """numerator / sqrt(C); C = 0 is treated as an infinite bound."""
    c = np.asarray(c_accum, dtype=float)
    with np.errstate(divide='ignore'):
        return np.where(c > 0.0, numerator / np.sqrt(np.where(c > 0.0, c, 1.0)), np.inf)


def adaprod_rate_bound(c_accum, rhat_next, numerator: float) -> np.ndarray:
    """
    AdaProd+ rate bound before the monotonicity cap.

    Args:
        c_accum: Accumulated squared prediction errors C
        rhat_next: Optimistic regret prediction for the next round
        numerator: Rate numerator (sqrt(2 log n) by default)

    Returns:
        np.ndarray: min(2 / (3 (1 + rhat_next)), numerator / sqrt(C))
    """
    return np.minimum(prediction_rate_bound(rhat_next), accumulated_rate_bound(c_accum, numerator))


def solve_fixed_point(mixture: Callable[[float], float],
                      lo: float = 0.0,
                      hi: float = 1.0,
                      tol: float = FIXED_POINT_TOL,
                      max_iter: int = FIXED_POINT_MAX_ITER) -> float:
    """
    Brent's method for alpha with alpha = mixture(alpha).

    ``mixture`` maps into [lo, hi], so g(alpha) = alpha - mixture(alpha) is
    non-positive at lo and non-negative at hi.

    Args:
        mixture: Continuous map alpha -> <p(alpha), lhat>
        lo: Lower end of the bracket
        hi: Upper end of the bracket
        tol: Residual tolerance on |g(alpha)|
        max_iter: Iteration cap

    Returns:
        float: alpha with |alpha - mixture(alpha)| <= tol

    Raises:
        NumericalError: If the bracket is broken or the residual is still above tol
    """
    def g(alpha: float) -> float:
        return alpha - mixture(alpha)

    g_lo = g(lo)
    if abs(g_lo) <= tol:
        return lo
    g_hi = g(hi)
    if abs(g_hi) <= tol:
        return hi
    if g_lo > 0.0 or g_hi < 0.0:
        raise NumericalError("optimistic fixed point is not bracketed", min(abs(g_lo), abs(g_hi)))
    alpha, result = brentq(g, lo, hi, xtol=FIXED_POINT_XTOL, maxiter=max_iter,
                           full_output=True, disp=False)
    residual = abs(g(alpha))
    if residual > tol:
        raise NumericalError(
            f"optimistic fixed point did not converge ({result.iterations} iterations)", residual)
    return float(alpha)


@dataclass(frozen=True)
class ExpertRecord:
    """Snapshot of one sleeping expert (s, i)"""
    birth_round: int
    point: int
    log_weight: float
    eta: float
    c_accum: float


@dataclass
class RoundReport:
    """What ``observe`` did in one round"""
    round: int
    mixture_loss: float
    regret: np.ndarray
    n_records: int
    violations: Dict[str, int] = field(default_factory=dict)


@dataclass
class _Table:
    """Structure-of-arrays expert table"""
    birth: np.ndarray
    point: np.ndarray
    log_w: np.ndarray
    eta: np.ndarray
    c_accum: np.ndarray

    def __len__(self) -> int:
        return int(self.point.size)

    def select(self, keep: np.ndarray) -> '_Table':
        return _Table(self.birth[keep], self.point[keep], self.log_w[keep], self.eta[keep], self.c_accum[keep])

    def extend(self, other: '_Table') -> '_Table':
        return _Table(*(np.concatenate([getattr(self, name), getattr(other, name)])
                        for name in ('birth', 'point', 'log_w', 'eta', 'c_accum')))


def _point_weights(table: _Table, rhat: np.ndarray, n: int) -> np.ndarray:
    """Per-point sum of eta * w * exp(eta * rhat_i), scaled by a common max-shift."""
    if len(table) == 0:
        return np.zeros(n)
    with np.errstate(divide='ignore'):
        log_terms = np.log(table.eta) + table.log_w + table.eta * rhat[table.point]
    top = np.max(log_terms)
    if not np.isfinite(top):
        # every rate is zero (single-point pool); fall back to equal record mass
        return np.bincount(table.point, minlength=n).astype(float)
    return np.bincount(table.point, weights=np.exp(log_terms - top), minlength=n)


class _UpdatePlan:
    """
    The parts of the round-end update that do not depend on the next prediction.

    ``apply`` finishes the update for a given rhat_next and ``observe`` commits
    it. ``mixture_fn`` evaluates the post-update mixture for candidate
    predictions without building the table.
    """

    def __init__(self, learner: 'AdaProdLearner', loss: np.ndarray, p_played: np.ndarray,
                 rhat_used: np.ndarray):
        table = learner._table
        self.learner = learner
        self.mixture = float(p_played @ loss)
        self.regret = np.where(learner.awake.bits, self.mixture - loss, 0.0)
        r = self.regret[table.point]
        err = r - rhat_used[table.point]
        self.table = table
        self.c_new = table.c_accum + err ** 2
        self.eta_static = np.minimum(table.eta, learner._accumulated_bound(self.c_new))
        self.pre_power = table.log_w + table.eta * r - table.eta ** 2 * err ** 2
        self.spawn = np.flatnonzero(learner.awake.bits)

    def mixture_fn(self, lhat: np.ndarray, bits: np.ndarray) -> Callable[[float], float]:
        """
        alpha -> <p_next(rhat(alpha)), lhat> over the points in ``bits``.

        The new log-weight of a record is eta_new * pre_power / eta_prev, so its
        play term is log eta_new + eta_new * (scale + alpha - lhat_i). Records whose
        static rate already sits under the prediction cap over the whole bracket
        keep eta_new = eta_static and reduce to an affine exponent in alpha; only
        the rest are re-capped per evaluation.
        """
        learner = self.learner
        table = self.table
        lo, hi = AdaProdLearner._bracket(lhat, bits)
        live = bits[table.point] & (self.eta_static > 0.0) & (table.eta > 0.0)
        point = table.point[live]
        eta_static = self.eta_static[live]
        scale = self.pre_power[live] / table.eta[live]

        cap_lo = learner._prediction_bound(np.where(bits, lo - lhat, 0.0))[point]
        cap_hi = learner._prediction_bound(np.where(bits, hi - lhat, 0.0))[point]
        fixed = eta_static <= np.minimum(cap_lo, cap_hi)
        f_eta = eta_static[fixed]
        f_base = np.log(f_eta) + f_eta * (scale[fixed] - lhat[point[fixed]])
        f_lhat = lhat[point[fixed]]
        if f_eta.size:
            # drop records that stay below exp(-NEGLIGIBLE_LOG_MASS) of the leader on the whole bracket
            floor = float(np.max(f_base + f_eta * lo))
            keep = f_base + f_eta * hi >= floor - NEGLIGIBLE_LOG_MASS
            f_eta, f_base, f_lhat = f_eta[keep], f_base[keep], f_lhat[keep]
        m_point = point[~fixed]
        m_eta = eta_static[~fixed]
        m_scale = scale[~fixed]
        m_lhat = lhat[m_point]
        b_point = self.spawn[bits[self.spawn]]
        b_lhat = lhat[b_point]

        counts = np.bincount(table.point[bits[table.point]], minlength=learner.n).astype(float)
        counts[b_point] += 1.0
        fallback = float(counts @ lhat / counts.sum())

        def mixture(alpha: float) -> float:
            rhat = np.where(bits, alpha - lhat, 0.0)
            eta_m = np.minimum(m_eta, learner._prediction_bound(rhat)[m_point])
            eta_b = learner._birth_rate(rhat)[b_point]
            with np.errstate(divide='ignore'):
                parts = (
                    (f_base + f_eta * alpha, f_lhat),
                    (np.log(eta_m) + eta_m * (m_scale + alpha - m_lhat), m_lhat),
                    (np.log(eta_b) + eta_b * (alpha - b_lhat), b_lhat),
                )
            top = max((float(terms.max()) for terms, _ in parts if terms.size), default=-np.inf)
            if not np.isfinite(top):
                return fallback
            num = den = 0.0
            for terms, values in parts:
                mass = np.exp(terms - top)
                num += float(mass @ values)
                den += float(mass.sum())
            return num / den

        return mixture

    def apply(self, rhat_next: np.ndarray) -> _Table:
        learner = self.learner
        table = self.table
        eta_new = np.minimum(self.eta_static, learner._prediction_bound(rhat_next)[table.point])
        eta_prev = table.eta
        with np.errstate(divide='ignore', invalid='ignore'):
            ratio = np.where(eta_prev > 0.0, eta_new / np.where(eta_prev > 0.0, eta_prev, 1.0), 1.0)
        updated = _Table(table.birth, table.point, ratio * self.pre_power, eta_new, self.c_new)
        births = _Table(
            birth=np.full(self.spawn.size, learner.t + 1, dtype=int),
            point=self.spawn,
            log_w=np.zeros(self.spawn.size),
            eta=learner._birth_rate(rhat_next)[self.spawn],
            c_accum=np.zeros(self.spawn.size),
        )
        return updated.extend(births)


class AdaProdLearner:
    """
    AdaProd+ over a pool of n points with a lazily grown (birth round, point) table.

    Attributes:
        n: Pool size
        t: Current round (1-based)
        awake: Unlabeled points
        rhat: Optimistic regret prediction for the current round
        numerator: Numerator of the accumulated-error rate bound
        initial_rate: Rate of a freshly created record before any capping
        violations: Counters of learning-rate lemma and zero-sum violations
    """

    name = 'adaprod'

    def __init__(self, n: int, numerator: Optional[float] = None, initial_rate: Optional[float] = None):
        if n < 1:
            raise StructuralError(f"pool size must be >= 1, got {n}")
        self.n = n
        self.t = 1
        self.awake = AwakeMask.all_awake(n)
        self.numerator = default_numerator(n) if numerator is None else float(numerator)
        self.initial_rate = default_initial_rate(n) if initial_rate is None else float(initial_rate)
        self.rhat = np.zeros(n)
        self.violations: Dict[str, int] = {'rate_increase': 0, 'prod_domain': 0, 'zero_sum': 0}
        start_rate = min(self.initial_rate, float(self._accumulated_bound(np.zeros(1))[0]))
        self._table = _Table(
            birth=np.ones(n, dtype=int),
            point=np.arange(n),
            log_w=np.zeros(n),
            eta=np.full(n, start_rate),
            c_accum=np.zeros(n),
        )

    # schedule hooks

    def _accumulated_bound(self, c_accum: np.ndarray) -> np.ndarray:
        return accumulated_rate_bound(c_accum, self.numerator)

    def _prediction_bound(self, rhat_next: np.ndarray) -> np.ndarray:
        return prediction_rate_bound(rhat_next)

    def _birth_rate(self, rhat_next: np.ndarray) -> np.ndarray:
        # Rate a record would hold had it sat asleep with zero regret through rounds 1..t.
        rate = np.minimum(self.initial_rate, self._accumulated_bound(np.zeros(self.n)))
        rate = np.minimum(rate, self._prediction_bound(rhat_next))
        if self.t >= 2:
            rate = np.minimum(rate, self._prediction_bound(np.zeros(self.n)))
        return rate

    # queries

    def __len__(self) -> int:
        return len(self._table)

    def records(self) -> List[ExpertRecord]:
        tab = self._table
        return [ExpertRecord(int(s), int(i), float(lw), float(e), float(c))
                for s, i, lw, e, c in zip(tab.birth, tab.point, tab.log_w, tab.eta, tab.c_accum)]

    def _check_rhat(self, rhat) -> np.ndarray:
        rhat = self.rhat if rhat is None else as_values(rhat)
        if rhat.size != self.n:
            raise StructuralError(f"prediction has length {rhat.size}, expected {self.n}")
        if np.any(np.abs(rhat) > 1.0 + RATE_CHECK_SLACK):
            raise ContractError("regret predictions must lie in [-1, 1]")
        return rhat

    def distribution(self, rhat=None) -> ProbabilityVector:
        """
        Play distribution p_i proportional to sum_s eta * w * exp(eta * rhat_i) over awake i.

        Args:
            rhat: Optimistic regret prediction (defaults to the stored one)

        Returns:
            ProbabilityVector: Distribution with zero mass on labeled points
        """
        self.awake.require_some()
        rhat = self._check_rhat(rhat)
        if self.awake.count == 1:
            return ProbabilityVector(self.awake.bits.astype(float))
        return ProbabilityVector.normalized(_point_weights(self._table, rhat, self.n), self.awake)

    def _mixture_fn(self, table: _Table, lhat: np.ndarray, awake_bits: np.ndarray) -> Callable[[float], float]:
        n = self.n

        def mixture(alpha: float) -> float:
            rhat = np.where(awake_bits, alpha - lhat, 0.0)
            weights = _point_weights(table, rhat, n) * awake_bits
            return float(weights @ lhat / weights.sum())

        return mixture

    @staticmethod
    def _bracket(lhat: np.ndarray, awake_bits: np.ndarray) -> Tuple[float, float]:
        live = lhat[awake_bits]
        return float(live.min()), float(live.max())

    def _check_lhat(self, lhat) -> np.ndarray:
        lhat = as_values(lhat)
        if lhat.size != self.n:
            raise StructuralError(f"loss prediction has length {lhat.size}, expected {self.n}")
        if lhat.min() < 0.0 or lhat.max() > 1.0:
            raise ContractError("loss predictions must lie in [0, 1]")
        return lhat

    def predict_optimistic(self, lhat) -> Tuple[float, np.ndarray]:
        """
        Solve alpha = <p(rhat(alpha)), lhat> with rhat(alpha)_i = (alpha - lhat_i) I_i.

        Args:
            lhat: Predicted losses for the current round

        Returns:
            Tuple[float, np.ndarray]: alpha and the matching regret prediction
        """
        self.awake.require_some()
        lhat = self._check_lhat(lhat)
        bits = self.awake.bits
        if self.awake.count == 1:
            alpha = float(lhat[bits][0])
        else:
            lo, hi = self._bracket(lhat, bits)
            alpha = solve_fixed_point(self._mixture_fn(self._table, lhat, bits), lo, hi)
        return alpha, np.where(bits, alpha - lhat, 0.0)

    def predict_next(self, loss, p_played, lhat_next, rhat_used=None,
                     next_awake: Optional[AwakeMask] = None) -> Tuple[float, np.ndarray]:
        """
        Round-end optimistic prediction for the next round.

        The rate cap of this round's update depends on the prediction itself, so
        the fixed point is solved against the state the update would produce.
        Calling ``observe`` with the returned prediction (and then labeling the
        points missing from ``next_awake``) reproduces that state exactly.

        Args:
            loss: Losses revealed this round
            p_played: Distribution played this round
            lhat_next: Predicted losses for the next round
            rhat_used: Prediction used this round (defaults to the stored one)
            next_awake: Points that will be awake next round (defaults to the current mask)

        Returns:
            Tuple[float, np.ndarray]: alpha and rhat for the next round
        """
        loss_arr, p_arr = self._check_observation(loss, p_played)
        rhat_used = self._check_rhat(rhat_used)
        lhat = self._check_lhat(lhat_next)
        next_awake = self.awake if next_awake is None else next_awake
        if next_awake.n != self.n:
            raise StructuralError(f"mask size {next_awake.n} does not match pool size {self.n}")
        next_awake.require_some()
        bits = next_awake.bits
        if next_awake.count == 1:
            alpha = float(lhat[bits][0])
            return alpha, np.where(bits, alpha - lhat, 0.0)

        plan = _UpdatePlan(self, loss_arr, p_arr, rhat_used)
        lo, hi = self._bracket(lhat, bits)
        alpha = solve_fixed_point(plan.mixture_fn(lhat, bits), lo, hi)
        return alpha, np.where(bits, alpha - lhat, 0.0)

    # updates

    def _check_observation(self, loss, p_played) -> Tuple[np.ndarray, np.ndarray]:
        loss_arr = loss.values if isinstance(loss, LossVector) else LossVector(as_values(loss), self.t).values
        p_arr = as_values(p_played)
        if loss_arr.size != self.n or p_arr.size != self.n:
            raise StructuralError(f"expected vectors of length {self.n}")
        if np.any(p_arr[~self.awake.bits] != 0.0):
            raise ContractError("played distribution puts mass on labeled points")
        return loss_arr, p_arr

    def observe(self, loss, p_played, rhat_used=None, rhat_next=None) -> RoundReport:
        """
        Apply the round-end update after the losses are revealed.

        Args:
            loss: Losses of this round
            p_played: Distribution actually played this round
            rhat_used: Prediction used to form p_played (defaults to the stored one)
            rhat_next: Prediction for the next round (zero when omitted)

        Returns:
            RoundReport: Regret vector and audit counters of the round
        """
        loss_arr, p_arr = self._check_observation(loss, p_played)
        rhat_used = self._check_rhat(rhat_used)
        rhat_next = np.zeros(self.n) if rhat_next is None else self._check_rhat(rhat_next)

        plan = _UpdatePlan(self, loss_arr, p_arr, rhat_used)
        new_table = plan.apply(rhat_next)

        round_violations = {'rate_increase': 0, 'prod_domain': 0, 'zero_sum': 0}
        n_old = len(self._table)
        old_eta = new_table.eta[:n_old]
        round_violations['rate_increase'] = int(np.sum(old_eta > self._table.eta))
        product = new_table.eta * (1.0 + rhat_next[new_table.point])
        round_violations['prod_domain'] = int(np.sum(product > RATE_CAP + RATE_CHECK_SLACK))
        if abs(float(p_arr @ plan.regret)) > ZERO_SUM_TOL:
            round_violations['zero_sum'] = 1
        for key, count in round_violations.items():
            self.violations[key] += count
        if any(round_violations.values()):
            logger.warning("round %d: learning-rate audit violations %s", self.t, round_violations)

        report = RoundReport(self.t, plan.mixture, plan.regret, len(new_table), round_violations)
        self._table = new_table
        self.rhat = rhat_next
        self.t += 1
        logger.debug("round %d observed: mixture loss %.6f, %d records", report.round, report.mixture_loss, len(new_table))
        return report

    def mark_labeled(self, indices: Iterable[int]) -> None:
        """
        Put points to sleep and drop every record they own.

        Args:
            indices: Points that were just labeled; each must be awake
        """
        idx = np.fromiter(indices, dtype=int)
        self.awake = self.awake.without(idx)
        if idx.size:
            self._table = self._table.select(~np.isin(self._table.point, idx))
            self.rhat = np.where(self.awake.bits, self.rhat, 0.0)

    def step(self, loss, rhat_next=None) -> ProbabilityVector:
        """Play the current distribution, observe ``loss`` and return the next distribution."""
        p = self.distribution()
        self.observe(loss, p, self.rhat, rhat_next)
        return self.distribution()


def new_learner(n: int, numerator: Optional[float] = None, initial_rate: Optional[float] = None) -> AdaProdLearner:
    return AdaProdLearner(n, numerator=numerator, initial_rate=initial_rate)


def distribution(learner: AdaProdLearner, rhat=None) -> ProbabilityVector:
    return learner.distribution(rhat)


def predict_optimistic(learner: AdaProdLearner, lhat) -> Tuple[float, np.ndarray]:
    return learner.predict_optimistic(lhat)


def observe(learner: AdaProdLearner, loss, p_played, rhat_used, rhat_next) -> RoundReport:
    return learner.observe(loss, p_played, rhat_used, rhat_next)


def mark_labeled(learner: AdaProdLearner, indices: Iterable[int]) -> None:
    learner.mark_labeled(indices)
