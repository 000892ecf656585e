"""
Informativeness to loss transforms.
Every transform maps model outputs over the pool to losses in [0, 1] where a
lower loss means a more informative point.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import entr

from core_model import ContractError, LossVector, StructuralError, as_values

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-9
NORMALIZATIONS = ('log_k', 'per_round')

_warned_per_round = False


def _warn_per_round() -> None:
    global _warned_per_round
    if not _warned_per_round:
        logger.warning("losses are normalized per round; values are not comparable across rounds")
        _warned_per_round = True


@dataclass(frozen=True)
class SoftmaxMatrix:
    """n x k matrix of class probabilities, one row per pool point"""
    rows: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] < 1:
            raise StructuralError(f"softmax matrix must be 2-D and non-empty, got shape {rows.shape}")
        if np.any(rows < 0.0) or np.any(~np.isfinite(rows)):
            raise ContractError("softmax entries must be finite and non-negative")
        sums = rows.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise ContractError(f"row {int(bad[0])} sums to {sums[bad[0]]:.12f}")
        rows.setflags(write=False)
        object.__setattr__(self, 'rows', rows)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> 'SoftmaxMatrix':
        return cls(np.asarray(rows, dtype=float))

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    @property
    def k(self) -> int:
        return int(self.rows.shape[1])


@dataclass(frozen=True)
class InformativenessScores:
    """Non-negative scores s_i with an optional declared upper bound"""
    values: np.ndarray
    declared_max: Optional[float] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise StructuralError("scores must be a non-empty vector")
        if np.any(values < 0.0) or np.any(~np.isfinite(values)):
            raise ContractError("scores must be finite and non-negative")
        if self.declared_max is not None:
            if self.declared_max <= 0.0:
                raise ContractError(f"declared maximum must be positive, got {self.declared_max}")
            if values.max() > self.declared_max:
                raise ContractError(f"score {values.max()} exceeds the declared maximum {self.declared_max}")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)


@dataclass(frozen=True)
class NormalizedLoss:
    """
    Loss vector plus how it was normalized.

    ``per_round_normalized`` is set when the scale came from this round's data,
    which makes losses incomparable across rounds.
    """
    loss: LossVector
    scale: float
    per_round_normalized: bool


def uncertainty_loss(softmax: SoftmaxMatrix) -> LossVector:
    """l_i = max_j softmax_ij: confident points are uninformative."""
    return LossVector(np.clip(softmax.rows.max(axis=1), 0.0, 1.0))


def entropy_with_metadata(softmax: SoftmaxMatrix, normalization: str = 'log_k') -> NormalizedLoss:
    """
    Entropy loss l_i = 1 - H(softmax_i) / scale with 0 log 0 = 0.

    Args:
        softmax: Class probabilities
        normalization: ``log_k`` divides by log k; ``per_round`` divides by the
            largest entropy of this round

    Returns:
        NormalizedLoss: Losses and the scale that was used
    """
    if normalization not in NORMALIZATIONS:
        raise ContractError(f"unknown normalization '{normalization}', expected one of {NORMALIZATIONS}")
    if softmax.k < 2:
        raise ContractError("entropy loss needs at least two classes")
    h = entr(softmax.rows).sum(axis=1)
    if normalization == 'log_k':
        scale = float(np.log(softmax.k))
    else:
        _warn_per_round()
        scale = float(h.max())
        if scale <= 0.0:
            return NormalizedLoss(LossVector(np.ones(softmax.n)), 0.0, True)
    loss = np.clip(1.0 - h / scale, 0.0, 1.0)
    return NormalizedLoss(LossVector(loss), scale, normalization == 'per_round')


def entropy_loss(softmax: SoftmaxMatrix, normalization: str = 'log_k') -> LossVector:
    return entropy_with_metadata(softmax, normalization).loss


def normalize_scores(scores: InformativenessScores) -> NormalizedLoss:
    """
    l_i = 1 - s_i / s_max, with s_max the declared bound or this round's largest score.

    Args:
        scores: Informativeness scores (higher is more informative)

    Returns:
        NormalizedLoss: Losses and the scale that was used
    """
    values = scores.values
    if scores.declared_max is not None:
        return NormalizedLoss(LossVector(1.0 - values / scores.declared_max), float(scores.declared_max), False)
    _warn_per_round()
    scale = float(values.max())
    if scale <= 0.0:
        return NormalizedLoss(LossVector(np.ones(values.size)), 0.0, True)
    logger.debug("scores normalized by this round's maximum %.6g", scale)
    return NormalizedLoss(LossVector(np.clip(1.0 - values / scale, 0.0, 1.0)), scale, True)


def normalized_score_loss(scores: InformativenessScores) -> LossVector:
    return normalize_scores(scores).loss


def bald_loss(mutual_information, declared_max: Optional[float] = None) -> LossVector:
    """BALD-style mutual-information scores turned into losses."""
    return normalized_score_loss(InformativenessScores(as_values(mutual_information), declared_max))


TRANSFORMS = ('uncertainty', 'entropy', 'entropy_per_round')


def make_transform(name: str) -> Callable[[SoftmaxMatrix], LossVector]:
    """Look up a softmax-to-loss transform by name."""
    if name == 'uncertainty':
        return uncertainty_loss
    if name == 'entropy':
        return lambda softmax: entropy_loss(softmax, 'log_k')
    if name == 'entropy_per_round':
        return lambda softmax: entropy_loss(softmax, 'per_round')
    raise ContractError(f"unknown loss transform '{name}', expected one of {TRANSFORMS}")
