"""
Baseline acquisition policies and comparison learners.
Greedy and uniform selection, Optimistic AMLProd, AdaNormalHedge.TV and Squint.TV,
all speaking the same distribution / observe / mark_labeled interface as AdaProdLearner.
"""

import logging
import math
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from scipy.special import erf, erfcx

from adaprod_learner import AdaProdLearner, RoundReport, ZERO_SUM_TOL
from core_model import (
    AwakeMask,
    ConfigValidationError,
    ContractError,
    LossVector,
    ProbabilityVector,
    StructuralError,
    as_values,
)

logger = logging.getLogger(__name__)

OAMLPROD_RATE_CAP = 0.25
PRIORS = ('inverse_square', 'uniform')
_SMALL_VARIATION = 1e-12


# ---- selection rules ----

def greedy_select(informativeness, awake: AwakeMask, b: int) -> Tuple[int, ...]:
    """
    Top-b awake points by informativeness; ties go to the lowest index.

    Args:
        informativeness: Score per point (higher is more informative)
        awake: Unlabeled points
        b: Batch size

    Returns:
        Tuple[int, ...]: Sorted chosen indices
    """
    g = as_values(informativeness)
    if g.size != awake.n:
        raise StructuralError(f"scores have length {g.size}, expected {awake.n}")
    if b < 1 or b > awake.count:
        raise ContractError(f"cannot choose {b} of {awake.count} awake points")
    idx = awake.indices()
    order = np.lexsort((idx, -g[idx]))
    return tuple(sorted(int(i) for i in idx[order[:b]]))


def uniform_select(awake: AwakeMask, b: int, rng: np.random.Generator) -> Tuple[int, ...]:
    """b distinct awake points uniformly at random."""
    if b < 1 or b > awake.count:
        raise ContractError(f"cannot choose {b} of {awake.count} awake points")
    picked = rng.choice(awake.indices(), size=b, replace=False)
    return tuple(sorted(int(i) for i in picked))


class GreedyPolicy:
    """Picks the awake points whose last observed loss was smallest (most informative)."""

    name = 'greedy'

    def __init__(self, n: int):
        self.n = n
        self.awake = AwakeMask.all_awake(n)
        self.informativeness = np.zeros(n)

    def select(self, b: int, rng: Optional[np.random.Generator] = None) -> Tuple[int, ...]:
        return greedy_select(self.informativeness, self.awake, b)

    def observe(self, loss) -> None:
        self.informativeness = 1.0 - as_values(loss)

    def mark_labeled(self, indices: Iterable[int]) -> None:
        self.awake = self.awake.without(indices)


class UniformPolicy:
    """Uniform random acquisition"""

    name = 'uniform'

    def __init__(self, n: int):
        self.n = n
        self.awake = AwakeMask.all_awake(n)

    def select(self, b: int, rng: np.random.Generator) -> Tuple[int, ...]:
        return uniform_select(self.awake, b, rng)

    def inclusion(self, b: int) -> np.ndarray:
        return np.where(self.awake.bits, b / self.awake.count, 0.0)

    def observe(self, loss) -> None:
        pass

    def mark_labeled(self, indices: Iterable[int]) -> None:
        self.awake = self.awake.without(indices)


# ---- Optimistic AMLProd ----

def oamlprod_rate_bound(c_accum, numerator: float) -> np.ndarray:
    """min(1/4, numerator / sqrt(1 + C)) with numerator sqrt(2 log n) by default."""
    c = np.asarray(c_accum, dtype=float)
    return np.minimum(OAMLPROD_RATE_CAP, numerator / np.sqrt(1.0 + c))


class OptimisticAMLProd(AdaProdLearner):
    """
    Optimistic Adapt-ML-Prod: the same record table and optimistic play rule,
    with the rate held under 1/4 and no prediction-dependent cap.
    """

    name = 'oamlprod'

    def _accumulated_bound(self, c_accum: np.ndarray) -> np.ndarray:
        return oamlprod_rate_bound(c_accum, self.numerator)

    def _prediction_bound(self, rhat_next: np.ndarray) -> np.ndarray:
        return np.full(np.shape(rhat_next), np.inf)


def oamlprod_step(learner: OptimisticAMLProd, loss, rhat_next=None) -> ProbabilityVector:
    return learner.step(loss, rhat_next)


# ---- interval-prior learners ----

def adanormalhedge_log_weight(R, C) -> np.ndarray:
    """
    ln w(R, C) with w = (Phi(R + 1, C + 1) - Phi(R - 1, C + 1)) / 2 and
    Phi(R, C) = exp(max(R, 0)^2 / (3C)). Zero weight maps to -inf.
    """
    R = np.asarray(R, dtype=float)
    denom = 3.0 * (np.asarray(C, dtype=float) + 1.0)
    hi = np.maximum(R + 1.0, 0.0) ** 2 / denom
    lo = np.maximum(R - 1.0, 0.0) ** 2 / denom
    gap = lo - hi
    with np.errstate(divide='ignore'):
        return np.where(gap < 0.0, math.log(0.5) + hi + np.log(-np.expm1(np.minimum(gap, -1e-300))), -np.inf)


def squint_log_evidence(R, V) -> np.ndarray:
    """
    ln of the integral of exp(eta R - eta^2 V) over eta in [0, 1/2].

    Uses the scaled complementary error function so that large |R| and tiny V
    stay finite; V = 0 (which forces R = 0) gives ln(1/2).
    """
    R = np.atleast_1d(np.asarray(R, dtype=float))
    V = np.atleast_1d(np.asarray(V, dtype=float))
    R, V = np.broadcast_arrays(R, V)
    out = np.empty(R.shape)

    flat = V <= _SMALL_VARIATION
    # integral of exp(eta R) on [0, 1/2]
    rf = R[flat]
    with np.errstate(divide='ignore', invalid='ignore'):
        flat_val = np.where(
            rf > 0.0, rf / 2.0 + np.log(-np.expm1(-rf / 2.0)) - np.log(np.abs(rf)),
            np.where(rf < 0.0, np.log(-np.expm1(rf / 2.0)) - np.log(np.abs(rf)), math.log(0.5)))
    out[flat] = flat_val

    live = ~flat
    r, v = R[live], V[live]
    sv = np.sqrt(v)
    u_lo = -r / (2.0 * sv)
    u_hi = (v - r) / (2.0 * sv)
    base = 0.5 * math.log(math.pi) - np.log(2.0 * sv)
    shift = (2.0 * r - v) / 4.0
    with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
        neg = base + np.log(erfcx(u_lo) - np.exp(np.minimum(shift, 0.0)) * erfcx(u_hi))
        mid = base + u_lo ** 2 + np.log(erf(u_hi) - erf(u_lo))
        pos = base + shift + np.log(erfcx(-u_hi) - np.exp(-np.maximum(shift, 0.0)) * erfcx(-u_lo))
    out[live] = np.where(r <= 0.0, neg, np.where(r <= v, mid, pos))
    return out


class _IntervalPriorLearner:
    """
    Sleeping experts with one record per (start round, point) and a prior over starts.

    Subclasses define the per-record weight from the cumulative regret R and a
    variation statistic C.
    """

    name = 'interval'

    def __init__(self, n: int, prior: str = 'inverse_square'):
        if n < 1:
            raise StructuralError(f"pool size must be >= 1, got {n}")
        if prior not in PRIORS:
            raise ContractError(f"unknown prior '{prior}', expected one of {PRIORS}")
        self.n = n
        self.t = 1
        self.prior = prior
        self.awake = AwakeMask.all_awake(n)
        self.violations: Dict[str, int] = {'zero_sum': 0}
        self._start = np.ones(n, dtype=int)
        self._point = np.arange(n)
        self._R = np.zeros(n)
        self._C = np.zeros(n)

    def __len__(self) -> int:
        return int(self._point.size)

    def _log_weight(self, R: np.ndarray, C: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _variation(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _log_prior(self) -> np.ndarray:
        if self.prior == 'uniform':
            return np.zeros(self._start.size)
        return -2.0 * np.log(self._start.astype(float))

    def distribution(self, rhat=None) -> ProbabilityVector:
        """Play distribution; regret predictions are ignored by these learners."""
        self.awake.require_some()
        log_terms = self._log_prior() + self._log_weight(self._R, self._C)
        top = np.max(log_terms) if log_terms.size else -np.inf
        if np.isfinite(top):
            mass = np.bincount(self._point, weights=np.exp(log_terms - top), minlength=self.n)
            if mass[self.awake.bits].sum() > 0.0:
                return ProbabilityVector.normalized(mass, self.awake)
        logger.debug("%s: all weights vanished at round %d, playing uniformly", self.name, self.t)
        return ProbabilityVector.normalized(self.awake.bits.astype(float), self.awake)

    def observe(self, loss, p_played, rhat_used=None, rhat_next=None) -> RoundReport:
        """
        Accumulate this round's regret into every live record and open new intervals.

        Args:
            loss: Losses of this round
            p_played: Distribution played this round
            rhat_used, rhat_next: Accepted for interface compatibility and ignored

        Returns:
            RoundReport: Regret vector of the round
        """
        loss_arr = loss.values if isinstance(loss, LossVector) else LossVector(as_values(loss), self.t).values
        p_arr = as_values(p_played)
        if loss_arr.size != self.n or p_arr.size != self.n:
            raise StructuralError(f"expected vectors of length {self.n}")
        if np.any(p_arr[~self.awake.bits] != 0.0):
            raise ContractError("played distribution puts mass on labeled points")
        mixture = float(p_arr @ loss_arr)
        regret = np.where(self.awake.bits, mixture - loss_arr, 0.0)
        zero_sum = int(abs(float(p_arr @ regret)) > ZERO_SUM_TOL)
        self.violations['zero_sum'] += zero_sum

        r = regret[self._point]
        self._R = self._R + r
        self._C = self._C + self._variation(r)
        fresh = self.awake.indices()
        self._start = np.concatenate([self._start, np.full(fresh.size, self.t + 1, dtype=int)])
        self._point = np.concatenate([self._point, fresh])
        self._R = np.concatenate([self._R, np.zeros(fresh.size)])
        self._C = np.concatenate([self._C, np.zeros(fresh.size)])

        report = RoundReport(self.t, mixture, regret, len(self), {'zero_sum': zero_sum})
        self.t += 1
        return report

    def mark_labeled(self, indices: Iterable[int]) -> None:
        idx = np.fromiter(indices, dtype=int)
        self.awake = self.awake.without(idx)
        if idx.size:
            keep = ~np.isin(self._point, idx)
            self._start, self._point = self._start[keep], self._point[keep]
            self._R, self._C = self._R[keep], self._C[keep]

    def step(self, loss) -> ProbabilityVector:
        p = self.distribution()
        self.observe(loss, p)
        return self.distribution()


class AdaNormalHedgeTV(_IntervalPriorLearner):
    """AdaNormalHedge over intervals, with C the cumulative absolute regret."""

    name = 'adanormalhedge'

    def _log_weight(self, R, C):
        return adanormalhedge_log_weight(R, C)

    def _variation(self, r):
        return np.abs(r)


class SquintTV(_IntervalPriorLearner):
    """Squint over intervals, with V the cumulative squared regret."""

    name = 'squint'

    def _log_weight(self, R, C):
        return squint_log_evidence(R, C)

    def _variation(self, r):
        return r ** 2


def _sync_awake(learner: _IntervalPriorLearner, awake: Optional[AwakeMask]) -> None:
    if awake is None:
        return
    newly_labeled = np.flatnonzero(learner.awake.bits & ~awake.bits)
    if newly_labeled.size:
        learner.mark_labeled(newly_labeled)


def adanormalhedge_step(learner: AdaNormalHedgeTV, loss, awake: Optional[AwakeMask] = None) -> ProbabilityVector:
    _sync_awake(learner, awake)
    return learner.step(loss)


def squint_step(learner: SquintTV, loss, awake: Optional[AwakeMask] = None) -> ProbabilityVector:
    _sync_awake(learner, awake)
    return learner.step(loss)


LEARNERS = {
    'adaprod': AdaProdLearner,
    'oamlprod': OptimisticAMLProd,
    'adanormalhedge': AdaNormalHedgeTV,
    'squint': SquintTV,
    'greedy': GreedyPolicy,
    'uniform': UniformPolicy,
}

OPTIMISTIC = ('adaprod', 'oamlprod')


def make_learner(tag: str, n: int, **params):
    """
    Build a learner or policy from its tag.

    Args:
        tag: One of adaprod, oamlprod, adanormalhedge, squint, greedy, uniform
        n: Pool size
        **params: Constructor parameters (numerator / initial_rate or prior)

    Returns:
        The learner instance
    """
    if tag not in LEARNERS:
        raise ConfigValidationError([f"unknown learner tag '{tag}', expected one of {sorted(LEARNERS)}"])
    try:
        return LEARNERS[tag](n, **params)
    except (TypeError, ValueError) as e:
        raise ConfigValidationError([f"bad parameters for learner '{tag}': {e}"]) from e
