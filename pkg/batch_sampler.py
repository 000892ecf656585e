"""
Batch sampling utilities: capped-simplex projection and dependent rounding.
A distribution over points is capped at 1/b, scaled by b and rounded to a set
of exactly b distinct points whose inclusion probabilities equal the scaled values.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from core_model import (
    BATCH_SUM_TOL,
    PROB_TOL,
    AwakeMask,
    ContractError,
    ProbabilityVector,
    StructuralError,
    as_values,
)

logger = logging.getLogger(__name__)

CAP_TOL = 1e-12
SNAP_TOL = 1e-12


@dataclass(frozen=True)
class BatchPlan:
    """
    One round's batch draw.

    Attributes:
        capped: Capped distribution (entries <= 1/b, sum 1)
        scaled: b * capped, the inclusion probabilities
        chosen: Sorted indices of the b selected points
        cap_was_active: Whether capping changed the input distribution
    """
    capped: np.ndarray
    scaled: np.ndarray
    chosen: Tuple[int, ...]
    cap_was_active: bool

    @property
    def b(self) -> int:
        return len(self.chosen)

    def __post_init__(self):
        if len(set(self.chosen)) != len(self.chosen):
            raise ContractError(f"batch contains duplicates: {self.chosen}")
        if abs(float(self.scaled.sum()) - self.b) > BATCH_SUM_TOL:
            raise ContractError(f"scaled probabilities sum to {self.scaled.sum():.12f}, batch has {self.b} points")


def _feasible(p: np.ndarray, b: int) -> bool:
    return float(p.max()) <= 1.0 / b + CAP_TOL


def cap_probabilities(p, b: int, awake: Optional[AwakeMask] = None) -> Tuple[np.ndarray, bool]:
    """
    Project a distribution onto the capped simplex {q : sum q = 1, 0 <= q_i <= 1/b}.

    The largest entries are clamped to 1/b and the remaining mass is spread over
    the tail proportionally to the original values, so order is preserved and
    an already feasible input comes back unchanged.

    Args:
        p: Probability vector
        b: Batch size
        awake: Points eligible for selection; b may not exceed their count

    Returns:
        Tuple[np.ndarray, bool]: Capped distribution and whether capping was active
    """
    p = p.values if isinstance(p, ProbabilityVector) else as_values(p)
    if b < 1:
        raise ContractError(f"batch size must be >= 1, got {b}")
    if abs(float(p.sum()) - 1.0) > PROB_TOL * max(1, p.size):
        raise ContractError(f"distribution sums to {p.sum():.15f}")
    eligible = awake.count if awake is not None else p.size
    if b > eligible:
        raise ContractError(f"batch size {b} exceeds the {eligible} awake points")
    if _feasible(p, b):
        return p, False

    support = int(np.count_nonzero(p > 0.0))
    if support < b:
        raise ContractError(f"distribution has {support} positive entries, cannot spread over a batch of {b}")

    order = np.argsort(-p, kind='stable')
    sorted_p = p[order]
    tail_sums = np.cumsum(sorted_p[::-1])[::-1]
    cap = 1.0 / b
    for k in range(1, b):
        # after clamping the top k entries, the next one must fit under the cap
        tail = tail_sums[k]
        if tail > 0.0 and sorted_p[k] * (1.0 - k * cap) / tail <= cap + CAP_TOL:
            break
    else:
        k = b
    tail = tail_sums[k] if k < p.size else 0.0
    capped_sorted = np.empty_like(sorted_p)
    capped_sorted[:k] = cap
    if k < p.size:
        capped_sorted[k:] = sorted_p[k:] * ((1.0 - k * cap) / tail if tail > 0.0 else 0.0)
    capped = np.empty_like(p)
    capped[order] = capped_sorted
    logger.debug("capped %d entries at 1/%d", k, b)
    return capped, True


def _snap(values: np.ndarray) -> np.ndarray:
    values = np.where(np.abs(values) <= SNAP_TOL, 0.0, values)
    return np.where(np.abs(values - 1.0) <= SNAP_TOL, 1.0, values)


def dep_round(scaled, rng: np.random.Generator, shuffle: bool = True) -> Tuple[int, ...]:
    """
    Dependent rounding of inclusion probabilities to a set of exactly sum(scaled) points.

    Fractional entries are scanned once (in a random order unless ``shuffle`` is
    off); each step pairs the two leading fractional entries i, j, sets
    alpha = min(1 - p_i, p_j) and beta = min(p_i, 1 - p_j), and with probability
    beta / (alpha + beta) moves alpha from j to i (otherwise beta from i to j).
    At least one of the pair becomes integral, so the loop runs in linear time.
    The random scan order makes the joint law of a symmetric input symmetric.

    Args:
        scaled: Values in [0, 1] with an integral sum
        rng: Generator for the scan order and the pairing coins
        shuffle: Scan fractional entries in random rather than index order

    Returns:
        Tuple[int, ...]: Sorted indices of the chosen points

    Raises:
        ContractError: If the sum is not integral or a value lies outside [0, 1]
    """
    q = _snap(as_values(scaled).copy())
    if q.min() < 0.0 or q.max() > 1.0:
        raise ContractError("inclusion probabilities must lie in [0, 1]")
    total = float(q.sum())
    b = int(round(total))
    if abs(total - b) > BATCH_SUM_TOL:
        raise ContractError(f"inclusion probabilities sum to {total:.12f}, which is not an integer")

    frac = np.flatnonzero((q > 0.0) & (q < 1.0))
    if shuffle:
        frac = rng.permutation(frac)
    carry = None
    for j in frac:
        if carry is None:
            carry = j
            continue
        i = carry
        alpha = min(1.0 - q[i], q[j])
        beta = min(q[i], 1.0 - q[j])
        if rng.random() < beta / (alpha + beta):
            q[i] += alpha
            q[j] -= alpha
        else:
            q[i] -= beta
            q[j] += beta
        q[i], q[j] = _snap(np.array([q[i], q[j]]))
        if 0.0 < q[i] < 1.0:
            carry = i
        elif 0.0 < q[j] < 1.0:
            carry = j
        else:
            carry = None

    if carry is not None:
        # only float drift can leave a lone fractional entry
        if min(q[carry], 1.0 - q[carry]) > BATCH_SUM_TOL:
            raise ContractError(f"dependent rounding left entry {carry} at {q[carry]:.12f}")
        q[carry] = float(round(q[carry]))

    chosen = tuple(int(i) for i in np.flatnonzero(q == 1.0))
    if len(chosen) != b:
        raise ContractError(f"dependent rounding chose {len(chosen)} points, expected {b}")
    return chosen


def sample_batch(p, b: int, rng: np.random.Generator, awake: Optional[AwakeMask] = None) -> BatchPlan:
    """
    Cap, scale and round a play distribution into a batch of b points.

    Args:
        p: Play distribution over the pool
        b: Batch size
        rng: Generator for the rounding coins
        awake: Unlabeled points; b may not exceed their count

    Returns:
        BatchPlan: The capped distribution, inclusion probabilities and chosen points
    """
    p_arr = p.values if isinstance(p, ProbabilityVector) else as_values(p)
    if awake is not None:
        if awake.n != p_arr.size:
            raise StructuralError(f"mask size {awake.n} does not match distribution length {p_arr.size}")
        if np.any(p_arr[~awake.bits] != 0.0):
            raise ContractError("distribution puts mass on labeled points")
    capped, active = cap_probabilities(p_arr, b, awake)
    scaled = np.minimum(b * capped, 1.0)
    chosen = dep_round(scaled, rng)
    return BatchPlan(capped=capped, scaled=scaled, chosen=chosen, cap_was_active=active)


def marginal_audit(scaled, draws: int, rng: np.random.Generator) -> pd.DataFrame:
    """
    Monte-Carlo check of dependent rounding marginals.

    Args:
        scaled: Inclusion probabilities with an integral sum
        draws: Number of independent rounding draws
        rng: Generator

    Returns:
        pd.DataFrame: One row per index with expected and empirical inclusion frequency,
        the binomial standard error and the z-score of the gap
    """
    if draws < 1:
        raise ContractError(f"draws must be >= 1, got {draws}")
    scaled = as_values(scaled)
    counts = np.zeros(scaled.size)
    for _ in range(draws):
        counts[list(dep_round(scaled, rng))] += 1.0
    empirical = counts / draws
    sigma = np.sqrt(scaled * (1.0 - scaled) / draws)
    with np.errstate(divide='ignore', invalid='ignore'):
        z = np.where(sigma > 0.0, (empirical - scaled) / np.where(sigma > 0.0, sigma, 1.0), 0.0)
    logger.info("marginal audit over %d draws: max |z| = %.3f", draws, float(np.max(np.abs(z))))
    return pd.DataFrame({
        'index': np.arange(scaled.size),
        'expected': scaled,
        'empirical': empirical,
        'sigma': sigma,
        'z': z,
    })
