"""
Fixed-K base AdaProd+ and the K = nT sleeping-experts reduction.
The base algorithm runs over a known set of K experts; the reduction drives it
with one expert per (birth round, point) pair and synthetic losses for asleep
experts. Both serve as a brute-force oracle for the lazy learner.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from adaprod_learner import RATE_CAP, adaprod_rate_bound
from core_model import (
    AwakeMask,
    ContractError,
    LossVector,
    ProbabilityVector,
    StructuralError,
    as_values,
)

logger = logging.getLogger(__name__)

LEMMA_SLACK = 1e-12


def default_base_numerator(K: int) -> float:
    return math.sqrt(math.log(K)) if K > 1 else 0.0


def default_base_initial_rate(K: int) -> float:
    return math.sqrt(math.log(K) / 2.0) if K > 1 else 0.0


def potential_bound(K: int, T: int) -> float:
    """Upper bound K (e^{1/4} + log(4T) / 2) on the potential after T rounds."""
    return K * (math.exp(0.25) + math.log(4 * T) / 2.0)


def rate_lemma_holds(eta_prev: float, eta_next: float, r: float, rhat: float) -> Dict[str, bool]:
    """
    Check the learning-rate lemma claims for one expert and one round.

    Args:
        eta_prev: Rate before the update
        eta_next: Rate after the update
        r: Realized regret of the round that eta_prev was applied to
        rhat: Prediction used for that round

    Returns:
        Dict[str, bool]: ``prod`` (x - x^2 <= log(1 + x) with x = eta_prev (r - rhat)
        and x >= -2/3) and ``log_ratio`` ((eta_prev - eta_next) / eta_prev <= log(eta_prev / eta_next))
    """
    x = eta_prev * (r - rhat)
    prod = x >= -RATE_CAP - LEMMA_SLACK and x - x * x <= math.log1p(x) + LEMMA_SLACK
    if eta_prev <= 0.0 or eta_next <= 0.0:
        log_ratio = eta_next <= eta_prev
    else:
        log_ratio = (eta_prev - eta_next) / eta_prev <= math.log(eta_prev / eta_next) + LEMMA_SLACK
    return {'prod': bool(prod), 'log_ratio': bool(log_ratio)}


@dataclass
class BaseProdState:
    """
    State of base AdaProd+ over K experts.

    Attributes:
        K: Number of experts
        log_weight: ln w per expert
        eta: Learning rate per expert
        c_accum: Accumulated squared prediction error per expert
        rhat: Prediction for the current round
        t: Current round (1-based)
        numerator: Numerator of the accumulated-error rate bound
        lemma_violations: Audit counters; prod_initial holds round-1 Prod-domain failures of the uncapped initial rate
    """
    K: int
    log_weight: np.ndarray
    eta: np.ndarray
    c_accum: np.ndarray
    rhat: np.ndarray
    numerator: float
    t: int = 1
    lemma_violations: Dict[str, int] = field(
        default_factory=lambda: {'prod': 0, 'prod_initial': 0, 'log_ratio': 0, 'rate_increase': 0})


def new_base_state(K: int, initial_rate: Optional[float] = None, numerator: Optional[float] = None) -> BaseProdState:
    """
    Fresh base state: w = 1, C = 0, rhat = 0 and a common initial rate.

    Args:
        K: Number of experts
        initial_rate: Initial rate (sqrt(log K / 2) by default)
        numerator: Rate numerator (sqrt(log K) by default)

    Returns:
        BaseProdState: Initialized state
    """
    if K < 1:
        raise StructuralError(f"number of experts must be >= 1, got {K}")
    eta0 = default_base_initial_rate(K) if initial_rate is None else float(initial_rate)
    return BaseProdState(
        K=K,
        log_weight=np.zeros(K),
        eta=np.full(K, eta0),
        c_accum=np.zeros(K),
        rhat=np.zeros(K),
        numerator=default_base_numerator(K) if numerator is None else float(numerator),
    )


def _log_masses(state: BaseProdState, rhat: np.ndarray) -> np.ndarray:
    with np.errstate(divide='ignore'):
        return np.log(state.eta) + state.log_weight + state.eta * rhat


def base_distribution(state: BaseProdState, rhat=None) -> ProbabilityVector:
    """
    Play p_i proportional to eta_i w_i exp(eta_i rhat_i) over all K experts.

    Args:
        state: Base state
        rhat: Prediction to use (defaults to the stored one)

    Returns:
        ProbabilityVector: Distribution over the K experts
    """
    rhat = state.rhat if rhat is None else as_values(rhat)
    if rhat.size != state.K:
        raise StructuralError(f"prediction has length {rhat.size}, expected {state.K}")
    log_m = _log_masses(state, rhat)
    top = np.max(log_m)
    if not np.isfinite(top):
        return ProbabilityVector(np.full(state.K, 1.0 / state.K))
    return ProbabilityVector.normalized(np.exp(log_m - top))


def base_step(state: BaseProdState, loss, rhat_next=None) -> ProbabilityVector:
    """
    Play one round of base AdaProd+, observe ``loss`` and update in place.

    Args:
        state: Base state (mutated)
        loss: Losses of the K experts, in [0, 1]
        rhat_next: Prediction for the next round (zero when omitted)

    Returns:
        ProbabilityVector: The distribution that was played this round
    """
    loss_arr = LossVector(as_values(loss), state.t).values
    if loss_arr.size != state.K:
        raise StructuralError(f"loss has length {loss_arr.size}, expected {state.K}")
    rhat_next = np.zeros(state.K) if rhat_next is None else as_values(rhat_next)
    if rhat_next.size != state.K:
        raise StructuralError(f"prediction has length {rhat_next.size}, expected {state.K}")
    if np.any(np.abs(rhat_next) > 1.0 + LEMMA_SLACK):
        raise ContractError("regret predictions must lie in [-1, 1]")

    p = base_distribution(state)
    r = float(p.values @ loss_arr) - loss_arr
    err = r - state.rhat
    c_new = state.c_accum + err ** 2
    eta_prev = state.eta
    eta_new = np.minimum(eta_prev, adaprod_rate_bound(c_new, rhat_next, state.numerator))

    x = eta_prev * err
    bad_prod = (x < -RATE_CAP - LEMMA_SLACK) | (x - x * x > np.log1p(np.maximum(x, -1.0 + 1e-300)) + LEMMA_SLACK)
    # the initial rate is not capped by a prediction, so round 1 is reported on its own
    state.lemma_violations['prod' if state.t >= 2 else 'prod_initial'] += int(np.sum(bad_prod))
    positive = (eta_prev > 0.0) & (eta_new > 0.0)
    with np.errstate(divide='ignore', invalid='ignore'):
        lhs = np.where(positive, (eta_prev - eta_new) / np.where(positive, eta_prev, 1.0), 0.0)
        rhs = np.where(positive, np.log(np.where(positive, eta_prev / np.where(positive, eta_new, 1.0), 1.0)), 0.0)
    state.lemma_violations['log_ratio'] += int(np.sum(lhs > rhs + LEMMA_SLACK))
    state.lemma_violations['rate_increase'] += int(np.sum(eta_new > eta_prev))

    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where(eta_prev > 0.0, eta_new / np.where(eta_prev > 0.0, eta_prev, 1.0), 1.0)
    state.log_weight = ratio * (state.log_weight + eta_prev * r - eta_prev ** 2 * err ** 2)
    state.eta = eta_new
    state.c_accum = c_new
    state.rhat = rhat_next
    state.t += 1
    return p


def potential_sum(state: BaseProdState) -> float:
    """Sum of expert weights W_t, computed from the log weights with a max-shift."""
    top = float(np.max(state.log_weight))
    return float(math.exp(top) * np.sum(np.exp(state.log_weight - top)))


@dataclass(frozen=True)
class ReductionConfig:
    """
    K = nT sleeping-experts reduction: expert (s, i) is awake at round t iff s <= t and point i is unlabeled.
    Expert (s, i) (both 1-based s, 0-based i) sits at flat index (s - 1) * n + i.
    """
    n: int
    T: int

    def __post_init__(self):
        if self.n < 1 or self.T < 1:
            raise StructuralError(f"reduction needs n >= 1 and T >= 1, got n={self.n}, T={self.T}")

    @property
    def K(self) -> int:
        return self.n * self.T

    def point_of(self) -> np.ndarray:
        return np.tile(np.arange(self.n), self.T)

    def birth_of(self) -> np.ndarray:
        return np.repeat(np.arange(1, self.T + 1), self.n)

    def expert_awake(self, t: int, awake: AwakeMask) -> np.ndarray:
        """Flat boolean mask of awake experts at round t."""
        if awake.n != self.n:
            raise StructuralError(f"mask size {awake.n} does not match n={self.n}")
        return (self.birth_of() <= t) & np.tile(awake.bits, self.T)

    def lift(self, values: np.ndarray, expert_awake: np.ndarray, fill: np.ndarray) -> np.ndarray:
        """Per-expert vector: the point's value where awake, ``fill`` elsewhere."""
        return np.where(expert_awake, np.asarray(values, dtype=float)[self.point_of()], fill)


def reduction_distribution(config: ReductionConfig, base: BaseProdState, awake: AwakeMask, rhat) -> ProbabilityVector:
    """
    Point distribution of the reduction at the base state's current round.

    Args:
        config: Reduction layout
        base: Base state over K = nT experts
        awake: Unlabeled points this round
        rhat: Point-level prediction for this round

    Returns:
        ProbabilityVector: Awake expert masses summed per point and renormalized
    """
    awake.require_some()
    experts = config.expert_awake(base.t, awake)
    rbar = config.lift(as_values(rhat), experts, np.zeros(config.K))
    p_bar = base_distribution(base, rbar).values
    mass = np.bincount(config.point_of(), weights=np.where(experts, p_bar, 0.0), minlength=config.n)
    return ProbabilityVector.normalized(mass, awake)


class SleepingReduction:
    """
    Materialized K = nT reduction driving a base state.

    ``observe`` feeds the base modified losses (the point's loss when awake,
    the mixture loss otherwise) and lifted predictions (zero for asleep experts).
    """

    def __init__(self, n: int, T: int, initial_rate: Optional[float] = None, numerator: Optional[float] = None):
        self.config = ReductionConfig(n, T)
        self.base = new_base_state(self.config.K, initial_rate=initial_rate, numerator=numerator)
        self.awake = AwakeMask.all_awake(n)

    @property
    def t(self) -> int:
        return self.base.t

    def distribution(self, rhat=None) -> ProbabilityVector:
        rhat = np.zeros(self.config.n) if rhat is None else rhat
        return reduction_distribution(self.config, self.base, self.awake, rhat)

    def observe(self, loss, rhat_used, rhat_next, next_awake: Optional[AwakeMask] = None) -> ProbabilityVector:
        """
        Drive the base algorithm through one round.

        Args:
            loss: Point losses of this round
            rhat_used: Point prediction used this round
            rhat_next: Point prediction for the next round
            next_awake: Unlabeled points next round (unchanged when omitted)

        Returns:
            ProbabilityVector: Point distribution played this round
        """
        if self.t > self.config.T:
            raise ContractError(f"reduction was sized for T={self.config.T} rounds")
        cfg = self.config
        loss_arr = as_values(loss)
        p = self.distribution(rhat_used)
        experts_now = cfg.expert_awake(self.t, self.awake)
        mixture = float(p.values @ loss_arr)
        lbar = cfg.lift(loss_arr, experts_now, np.full(cfg.K, mixture))

        self.base.rhat = cfg.lift(as_values(rhat_used), experts_now, np.zeros(cfg.K))
        next_awake = self.awake if next_awake is None else next_awake
        experts_next = cfg.expert_awake(self.t + 1, next_awake)
        rbar_next = cfg.lift(as_values(rhat_next), experts_next, np.zeros(cfg.K))
        base_step(self.base, lbar, rbar_next)
        self.awake = next_awake
        return p
