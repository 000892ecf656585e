"""
Shared domain types and regret arithmetic for the active-learning experts library.
Holds the loss/probability/awake value types, instantaneous regret formulas,
the per-run regret ledger and the error hierarchy used by every other module.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12
BATCH_SUM_TOL = 1e-9

ArrayLike = Union[Sequence[float], np.ndarray]


class AdaProdError(Exception):
    """Base class for every error raised by this library"""


class StructuralError(AdaProdError, ValueError):
    """Shapes or sizes that do not fit together"""


class ContractError(AdaProdError, ValueError):
    """A precondition of an operation was violated"""


class NumericalError(AdaProdError, ArithmeticError):
    """An iterative procedure failed to reach its tolerance"""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual
        self._message = message

    def __reduce__(self):
        return type(self), (self._message, self.residual)


class IngestionError(AdaProdError, ValueError):
    """A replay file could not be parsed"""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number
        self._message = message

    def __reduce__(self):
        return type(self), (self._message, self.line_number)


class ConfigValidationError(AdaProdError, ValueError):
    """A run configuration failed validation"""

    def __init__(self, problems: List[str]):
        super().__init__("invalid configuration: " + "; ".join(problems))
        self.problems = list(problems)

    def __reduce__(self):
        return type(self), (self.problems,)


def _frozen(values: ArrayLike, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


def as_values(x) -> np.ndarray:
    """Return the underlying float array of a value type or array-like."""
    if isinstance(x, (LossVector, ProbabilityVector)):
        return x.values
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class LossVector:
    """Per-point losses of one round, every entry in [0, 1]"""
    values: np.ndarray
    round: int = 1

    def __post_init__(self):
        arr = _frozen(self.values)
        if arr.ndim != 1 or arr.size == 0:
            raise StructuralError(f"loss vector must be a non-empty 1-d array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ContractError(f"losses must lie in [0, 1] (round {self.round})")
        if self.round < 1:
            raise ContractError(f"round must be >= 1, got {self.round}")
        object.__setattr__(self, 'values', arr)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def gains(self) -> np.ndarray:
        """Informativeness g = 1 - l."""
        return 1.0 - self.values


@dataclass(frozen=True)
class AwakeMask:
    """Which points are still unlabeled. Labeling is one-way within a run."""
    bits: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.bits, dtype=bool)
        if arr.ndim != 1 or arr.size == 0:
            raise StructuralError(f"awake mask must be a non-empty 1-d array, got shape {arr.shape}")
        object.__setattr__(self, 'bits', arr)

    @classmethod
    def all_awake(cls, n: int) -> 'AwakeMask':
        if n < 1:
            raise StructuralError(f"pool size must be >= 1, got {n}")
        return cls(np.ones(n, dtype=bool))

    @property
    def n(self) -> int:
        return int(self.bits.size)

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def require_some(self) -> None:
        if not self.bits.any():
            raise ContractError("no awake points left")

    def without(self, indices: Iterable[int]) -> 'AwakeMask':
        """
        Return a new mask with the given points labeled (asleep).

        Args:
            indices: Points to put to sleep; each must currently be awake

        Returns:
            AwakeMask: Updated mask
        """
        idx = np.fromiter(indices, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise StructuralError(f"index out of range for pool of size {self.n}")
        if idx.size and not self.bits[idx].all():
            asleep = sorted(int(i) for i in idx[~self.bits[idx]])
            raise ContractError(f"points already labeled: {asleep}")
        bits = self.bits.copy()
        bits[idx] = False
        return AwakeMask(bits)


@dataclass(frozen=True)
class ProbabilityVector:
    """A distribution over the pool with zero mass on asleep points"""
    values: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.values)
        if arr.ndim != 1 or arr.size == 0:
            raise StructuralError(f"probability vector must be a non-empty 1-d array, got shape {arr.shape}")
        if arr.min() < 0.0 or abs(arr.sum() - 1.0) > PROB_TOL:
            raise ContractError(f"not a distribution: min={arr.min():.3e}, sum={arr.sum():.17g}")
        object.__setattr__(self, 'values', arr)

    @property
    def n(self) -> int:
        return int(self.values.size)

    @classmethod
    def normalized(cls, weights: ArrayLike, awake: Optional[AwakeMask] = None) -> 'ProbabilityVector':
        """
        Normalize non-negative weights into a distribution.

        Asleep entries are zeroed first. A second pass is made when the first
        sum drifts from one by more than the probability tolerance.

        Args:
            weights: Non-negative unnormalized weights
            awake: Optional awake mask; asleep entries receive zero mass

        Returns:
            ProbabilityVector: Normalized distribution
        """
        w = np.array(weights, dtype=float)
        if awake is not None:
            if awake.n != w.size:
                raise StructuralError(f"mask size {awake.n} does not match weights size {w.size}")
            awake.require_some()
            w[~awake.bits] = 0.0
        total = w.sum()
        if not np.isfinite(total) or total <= 0.0:
            raise ContractError(f"cannot normalize weights with total {total}")
        p = w / total
        drift = abs(p.sum() - 1.0)
        if drift > PROB_TOL:
            logger.debug("renormalizing distribution, first-pass drift %.3e", drift)
            p = p / p.sum()
        return cls(p)

    def check_against(self, awake: AwakeMask) -> None:
        """Raise unless the distribution puts zero mass on asleep points."""
        if awake.n != self.n:
            raise StructuralError(f"mask size {awake.n} does not match distribution size {self.n}")
        if np.any(self.values[~awake.bits] != 0.0):
            raise ContractError("distribution puts mass on labeled points")


def validate_loss(values: ArrayLike, n: Optional[int] = None, round: int = 1) -> LossVector:
    """Build a LossVector, checking its length against ``n`` when given."""
    loss = LossVector(values, round)
    if n is not None and loss.n != n:
        raise StructuralError(f"loss vector has length {loss.n}, expected {n}")
    return loss


def validate_distribution(values: ArrayLike, awake: AwakeMask) -> ProbabilityVector:
    """Build a ProbabilityVector and check it puts no mass on asleep points."""
    p = ProbabilityVector(values)
    p.check_against(awake)
    return p


def _check_sizes(**arrays: np.ndarray) -> int:
    sizes = {name: arr.size for name, arr in arrays.items()}
    if len(set(sizes.values())) != 1:
        raise StructuralError(f"dimension mismatch: {sizes}")
    return next(iter(sizes.values()))


def instantaneous_regret(p, loss, awake: Optional[AwakeMask] = None) -> np.ndarray:
    """
    Regret of the mixture against each point: r_i = (<p, l> - l_i) * I_i.

    Args:
        p: Played distribution
        loss: Revealed losses
        awake: Awake mask (all awake when omitted)

    Returns:
        np.ndarray: Instantaneous regret per point, zero for asleep points
    """
    p_arr, l_arr = as_values(p), as_values(loss)
    bits = np.ones(p_arr.size, dtype=bool) if awake is None else awake.bits
    _check_sizes(p=p_arr, loss=l_arr, awake=bits)
    mixture = float(p_arr @ l_arr)
    return np.where(bits, mixture - l_arr, 0.0)


def batch_instantaneous_regret(rho, loss, b: int, awake: Optional[AwakeMask] = None) -> np.ndarray:
    """
    Batch regret r_i = (<rho, l> / b - l_i) * I_i for inclusion probabilities rho.

    Args:
        rho: Inclusion probabilities in [0, 1] summing to b
        loss: Revealed losses
        b: Batch size
        awake: Awake mask (all awake when omitted)

    Returns:
        np.ndarray: Per-point batch regret
    """
    rho_arr, l_arr = as_values(rho), as_values(loss)
    bits = np.ones(rho_arr.size, dtype=bool) if awake is None else awake.bits
    _check_sizes(rho=rho_arr, loss=l_arr, awake=bits)
    if b < 1:
        raise ContractError(f"batch size must be >= 1, got {b}")
    if rho_arr.min() < -BATCH_SUM_TOL or rho_arr.max() > 1.0 + BATCH_SUM_TOL:
        raise ContractError("inclusion probabilities must lie in [0, 1]")
    if abs(rho_arr.sum() - b) > BATCH_SUM_TOL:
        raise ContractError(f"inclusion probabilities sum to {rho_arr.sum():.12g}, expected {b}")
    mixture = float(rho_arr @ l_arr) / b
    return np.where(bits, mixture - l_arr, 0.0)


@dataclass(frozen=True)
class RoundRecord:
    """One ledger row. Vectors are stored only on the indices awake that round."""
    round: int
    mixture_loss: float
    awake_idx: np.ndarray
    regret: np.ndarray
    n_labeled: int
    batch_size: int = 1
    cap_active: bool = False
    rhat: Optional[np.ndarray] = None
    loss: Optional[np.ndarray] = None
    lhat: Optional[np.ndarray] = None
    expected_regret: Optional[np.ndarray] = None

    def value_at(self, values: Optional[np.ndarray], i: int) -> float:
        if values is None:
            return 0.0
        pos = np.searchsorted(self.awake_idx, i)
        if pos < self.awake_idx.size and self.awake_idx[pos] == i:
            return float(values[pos])
        return 0.0

    def dense(self, values: Optional[np.ndarray], n: int) -> np.ndarray:
        out = np.zeros(n)
        if values is not None:
            out[self.awake_idx] = values
        return out


@dataclass
class RegretLedger:
    """
    Per-round regret records of one run.

    Cumulative quantities are always recomputed as exact prefix sums of the
    stored instantaneous values, so they are reproducible from the log.
    """
    n: int
    records: List[RoundRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.n < 1:
            raise StructuralError(f"pool size must be >= 1, got {self.n}")

    def __len__(self) -> int:
        return len(self.records)

    def record(self,
               mixture_loss: float,
               regret: np.ndarray,
               awake: AwakeMask,
               n_labeled: int,
               batch_size: int = 1,
               cap_active: bool = False,
               rhat: Optional[np.ndarray] = None,
               loss: Optional[np.ndarray] = None,
               lhat: Optional[np.ndarray] = None,
               expected_regret: Optional[np.ndarray] = None) -> RoundRecord:
        """
        Append the outcome of the next round.

        Args:
            mixture_loss: <p, l> (or <rho, l> / b in the batch setting)
            regret: Dense instantaneous regret vector of length n
            awake: Points awake during the round
            n_labeled: Labeled points after the round
            batch_size: Points acquired this round
            cap_active: Whether capping changed the distribution
            rhat, loss, lhat, expected_regret: Optional dense vectors kept for reports

        Returns:
            RoundRecord: The stored record
        """
        regret = np.asarray(regret, dtype=float)
        if regret.size != self.n or awake.n != self.n:
            raise StructuralError(f"expected vectors of length {self.n}")
        idx = awake.indices()

        def sparse(vec):
            if vec is None:
                return None
            vec = np.asarray(vec, dtype=float)
            if vec.size != self.n:
                raise StructuralError(f"expected vectors of length {self.n}, got {vec.size}")
            return vec[idx].copy()

        rec = RoundRecord(
            round=len(self.records) + 1,
            mixture_loss=float(mixture_loss),
            awake_idx=idx,
            regret=regret[idx].copy(),
            n_labeled=int(n_labeled),
            batch_size=int(batch_size),
            cap_active=bool(cap_active),
            rhat=sparse(rhat),
            loss=sparse(loss),
            lhat=sparse(lhat),
            expected_regret=sparse(expected_regret),
        )
        self.records.append(rec)
        return rec

    def regret_matrix(self) -> np.ndarray:
        """Dense T x n matrix of instantaneous regrets (zeros where asleep)."""
        out = np.zeros((len(self.records), self.n))
        for t, rec in enumerate(self.records):
            out[t, rec.awake_idx] = rec.regret
        return out

    def cumulative_regret(self, i: int) -> float:
        """Total regret against point i over the whole run."""
        return float(sum(rec.value_at(rec.regret, i) for rec in self.records))

    def best_fixed_curve(self, b: int = 1) -> np.ndarray:
        """
        Running regret against the best fixed b-set in hindsight.

        Args:
            b: Number of comparator slots per round

        Returns:
            np.ndarray: Value after each round (sum of the b largest cumulative regrets)
        """
        b = max(1, min(b, self.n))
        running = np.zeros(self.n)
        curve = np.empty(len(self.records))
        for t, rec in enumerate(self.records):
            running[rec.awake_idx] += rec.regret
            curve[t] = np.sort(running)[-b:].sum()
        return curve

    def best_fixed_regret(self, b: int = 1) -> float:
        curve = self.best_fixed_curve(b)
        return float(curve[-1]) if curve.size else 0.0

    def comparator_curve(self, comparators: Sequence) -> np.ndarray:
        """Running regret against a per-round comparator (index or tuple of slot indices)."""
        if len(comparators) != len(self.records):
            raise StructuralError(f"{len(comparators)} comparators for {len(self.records)} rounds")
        per_round = np.empty(len(self.records))
        for t, (rec, comp) in enumerate(zip(self.records, comparators)):
            slots = np.atleast_1d(np.asarray(comp, dtype=int))
            if slots.size and (slots.min() < 0 or slots.max() >= self.n):
                raise StructuralError(f"comparator index out of range at round {rec.round}")
            per_round[t] = sum(rec.value_at(rec.regret, int(i)) for i in slots)
        return np.cumsum(per_round)

    def to_frame(self) -> pd.DataFrame:
        """Per-round summary rows as a DataFrame."""
        return pd.DataFrame({
            'round': [rec.round for rec in self.records],
            'mixture_loss': [rec.mixture_loss for rec in self.records],
            'n_labeled': [rec.n_labeled for rec in self.records],
            'batch_size': [rec.batch_size for rec in self.records],
            'cap_active': [rec.cap_active for rec in self.records],
        })


def cumulative_regret_against(ledger: RegretLedger, comparators: Sequence) -> float:
    """
    Cumulative regret against a competing sequence of points.

    Each entry of ``comparators`` is the comparator for that round: a single
    index, or a tuple of b indices in the batch setting (the b slot regrets are
    summed). Comparators asleep at their round contribute zero.

    Args:
        ledger: Ledger of the run
        comparators: One comparator per recorded round

    Returns:
        float: Sum over rounds of the comparator's instantaneous regret
    """
    curve = ledger.comparator_curve(comparators)
    return float(curve[-1]) if curve.size else 0.0


def interval_regret(ledger: RegretLedger, i: int, t1: int, t2: int) -> float:
    """
    Regret against point i over the contiguous rounds [t1, t2] (1-based, inclusive).

    Args:
        ledger: Ledger of the run
        i: Point index
        t1: First round of the interval
        t2: Last round of the interval

    Returns:
        float: Adaptive regret over the interval
    """
    if not 1 <= t1 <= t2 <= len(ledger):
        raise StructuralError(f"interval [{t1}, {t2}] outside 1..{len(ledger)}")
    return float(sum(rec.value_at(rec.regret, i) for rec in ledger.records[t1 - 1:t2]))


def variation_report(ledger: RegretLedger) -> Dict[str, Optional[float]]:
    """
    Prediction-error and drift quantities of a run.

    Returns:
        Dict with ``V_T`` (sum of squared sup-norm regret prediction errors),
        ``V_T_loss_bound`` (4 * sum of squared sup-norm loss prediction errors),
        ``D_T`` (sup-norm drift of expected regret, or of realized regret when
        expectations were not recorded) and ``D_T_source``.
    """
    v_t = 0.0
    v_bound = 0.0
    have_rhat = have_lhat = False
    for rec in ledger.records:
        if rec.rhat is not None and rec.regret.size:
            v_t += float(np.max(np.abs(rec.regret - rec.rhat))) ** 2
            have_rhat = True
        if rec.loss is not None and rec.lhat is not None and rec.loss.size:
            v_bound += 4.0 * float(np.max(np.abs(rec.loss - rec.lhat))) ** 2
            have_lhat = True

    use_expected = bool(ledger.records) and all(rec.expected_regret is not None for rec in ledger.records)
    d_t = 0.0
    previous = None
    for rec in ledger.records:
        current = rec.dense(rec.expected_regret if use_expected else rec.regret, ledger.n)
        if previous is not None:
            d_t += float(np.max(np.abs(current - previous)))
        previous = current

    return {
        'V_T': v_t if have_rhat else None,
        'V_T_loss_bound': v_bound if have_lhat else None,
        'D_T': d_t,
        'D_T_source': 'expected' if use_expected else 'realized',
    }
