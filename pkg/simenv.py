"""
Synthetic loss-stream environments and softmax replay ingestion.
Every environment answers next_losses(round, labeled, rng) with a LossVector in
[0, 1]^n; synthetic ones also expose their per-round expected losses.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional

import numpy as np
from scipy.stats import norm

from core_model import ConfigValidationError, ContractError, IngestionError, LossVector, StructuralError, as_values
from loss_metrics import SoftmaxMatrix, make_transform

logger = logging.getLogger(__name__)

KINDS = ('stationary_noisy', 'drifting', 'greedy_trap', 'adversarial_swap', 'softmax_replay')


class Streams(NamedTuple):
    """Independent generators of one seeded run"""
    env: np.random.Generator
    learner: np.random.Generator
    sampler: np.random.Generator
    seeding: np.random.Generator


def spawn_streams(seed: int) -> Streams:
    """Expand one master seed into the env, learner, sampler and initial-label streams."""
    return Streams(*(np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(4)))


def clamped_normal_mean(mu, sigma: float) -> np.ndarray:
    """
    E[clip(mu + sigma Z, 0, 1)] for standard normal Z.

    Args:
        mu: Means (scalar or vector)
        sigma: Noise scale, >= 0

    Returns:
        np.ndarray: Expected clamped value per entry
    """
    mu = np.asarray(mu, dtype=float)
    if sigma <= 0.0:
        return np.clip(mu, 0.0, 1.0)
    a = (0.0 - mu) / sigma
    b = (1.0 - mu) / sigma
    return norm.sf(b) + mu * (norm.cdf(b) - norm.cdf(a)) + sigma * (norm.pdf(a) - norm.pdf(b))


class Environment:
    """Loss oracle over a pool of n points"""

    kind = 'environment'

    def __init__(self, n: int):
        if n < 1:
            raise StructuralError(f"pool size must be >= 1, got {n}")
        self.n = n

    def next_losses(self, round: int, labeled: np.ndarray, rng: np.random.Generator) -> LossVector:
        raise NotImplementedError

    def expected_losses(self, round: int) -> Optional[np.ndarray]:
        return None


class StationaryNoisy(Environment):
    """clamp(mu_i + sigma Z, 0, 1) with a fixed mean vector"""

    kind = 'stationary_noisy'

    def __init__(self, mu, sigma: float):
        mu = as_values(mu)
        super().__init__(mu.size)
        if mu.min() < 0.0 or mu.max() > 1.0:
            raise ContractError("stationary means must lie in [0, 1]")
        if sigma < 0.0:
            raise ContractError(f"noise scale must be >= 0, got {sigma}")
        self.mu = mu
        self.sigma = float(sigma)
        self._expected = clamped_normal_mean(mu, self.sigma)

    def next_losses(self, round, labeled, rng):
        noise = rng.standard_normal(self.n) * self.sigma
        return LossVector(np.clip(self.mu + noise, 0.0, 1.0), round)

    def expected_losses(self, round):
        return self._expected


class GreedyTrap(Environment):
    """
    Copies of the three-point pattern (epsilon, 0, 1) / (epsilon, 1, 0), each with
    probability 1/2. The first point of each copy has the smallest expected loss
    but never the smallest realized one after a zero has been seen elsewhere.
    """

    kind = 'greedy_trap'

    def __init__(self, epsilon: float, n_copies: int = 1):
        if not 0.0 < epsilon < 0.5:
            raise ContractError(f"epsilon must lie in (0, 1/2), got {epsilon}")
        if n_copies < 1:
            raise ContractError(f"n_copies must be >= 1, got {n_copies}")
        super().__init__(3 * n_copies)
        self.epsilon = float(epsilon)
        self.n_copies = n_copies

    def next_losses(self, round, labeled, rng):
        coins = rng.random(self.n_copies) < 0.5
        block = np.empty((self.n_copies, 3))
        block[:, 0] = self.epsilon
        block[:, 1] = np.where(coins, 0.0, 1.0)
        block[:, 2] = np.where(coins, 1.0, 0.0)
        return LossVector(block.ravel(), round)

    def expected_losses(self, round):
        return np.tile([self.epsilon, 0.5, 0.5], self.n_copies)


class Drifting(Environment):
    """clamp(mu(t) + sigma Z, 0, 1) with a round-dependent mean schedule"""

    kind = 'drifting'

    def __init__(self, mu_schedule: Callable[[int], np.ndarray], sigma: float, n: Optional[int] = None):
        first = as_values(mu_schedule(1))
        super().__init__(first.size if n is None else n)
        if sigma < 0.0:
            raise ContractError(f"noise scale must be >= 0, got {sigma}")
        self.mu_schedule = mu_schedule
        self.sigma = float(sigma)
        self._warned = False

    def means(self, round: int) -> np.ndarray:
        mu = as_values(self.mu_schedule(round))
        if mu.size != self.n:
            raise StructuralError(f"schedule returned {mu.size} means at round {round}, expected {self.n}")
        if mu.min() < 0.0 or mu.max() > 1.0:
            if not self._warned:
                logger.warning("drift schedule left [0, 1] at round %d; clamping means", round)
                self._warned = True
            mu = np.clip(mu, 0.0, 1.0)
        return mu

    def next_losses(self, round, labeled, rng):
        noise = rng.standard_normal(self.n) * self.sigma
        return LossVector(np.clip(self.means(round) + noise, 0.0, 1.0), round)

    def expected_losses(self, round):
        return clamped_normal_mean(self.means(round), self.sigma)


class AdversarialSwap(Environment):
    """Deterministic stream whose single good point rotates every ``period`` rounds"""

    kind = 'adversarial_swap'

    def __init__(self, n: int, period: int, low: float = 0.2, high: float = 0.8):
        super().__init__(n)
        if period < 1:
            raise ContractError(f"period must be >= 1, got {period}")
        if not 0.0 <= low <= high <= 1.0:
            raise ContractError(f"need 0 <= low <= high <= 1, got low={low}, high={high}")
        self.period = period
        self.low = float(low)
        self.high = float(high)

    def best_point(self, round: int) -> int:
        return ((round - 1) // self.period) % self.n

    def expected_losses(self, round):
        values = np.full(self.n, self.high)
        values[self.best_point(round)] = self.low
        return values

    def next_losses(self, round, labeled, rng):
        return LossVector(self.expected_losses(round), round)


class SoftmaxReplay(Environment):
    """
    Replays per-round softmax outputs from a JSON Lines file through a loss transform.

    Each line is {"round": t, "softmax": [[...], ...]} with rounds contiguous from 1
    and the same n x k shape throughout.
    """

    kind = 'softmax_replay'

    def __init__(self, path, transform: str = 'uncertainty'):
        self.path = Path(path)
        self.transform_name = transform
        self.transform = make_transform(transform)
        self.frames: List[SoftmaxMatrix] = load_softmax_stream(self.path)
        super().__init__(self.frames[0].n)

    @property
    def T(self) -> int:
        return len(self.frames)

    def next_losses(self, round, labeled, rng):
        if not 1 <= round <= self.T:
            raise ContractError(f"replay stream has {self.T} rounds, round {round} requested")
        values = self.transform(self.frames[round - 1]).values
        return LossVector(values, round)


def load_softmax_stream(path) -> List[SoftmaxMatrix]:
    """
    Read and validate a softmax JSON Lines file.

    Args:
        path: File path

    Returns:
        List[SoftmaxMatrix]: One matrix per round, in round order

    Raises:
        IngestionError: On unreadable JSON, missing keys, shape changes,
            non-stochastic rows or non-contiguous rounds
    """
    frames: List[SoftmaxMatrix] = []
    shape = None
    with open(path, 'r', encoding='utf-8') as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise IngestionError(f"invalid JSON: {e.msg}", line_number) from e
            if not isinstance(record, dict) or set(record) != {'round', 'softmax'}:
                raise IngestionError("expected an object with exactly the keys 'round' and 'softmax'", line_number)
            round_no = record['round']
            if not isinstance(round_no, int) or isinstance(round_no, bool):
                raise IngestionError(f"round must be an integer, got {round_no!r}", line_number)
            if round_no != len(frames) + 1:
                raise IngestionError(f"expected round {len(frames) + 1}, found {round_no}", line_number)
            try:
                matrix = SoftmaxMatrix.from_rows(record['softmax'])
            except (ValueError, TypeError) as e:
                raise IngestionError(f"malformed softmax: {e}", line_number) from e
            if shape is not None and matrix.rows.shape != shape:
                raise IngestionError(f"softmax shape {matrix.rows.shape} differs from {shape}", line_number)
            shape = matrix.rows.shape
            frames.append(matrix)
    if not frames:
        raise IngestionError("replay file contains no records", 1)
    logger.info("loaded %d softmax rounds of shape %s from %s", len(frames), shape, path)
    return frames


# ---- schedules ----

def sinusoidal_schedule(n: int, period: float, amplitude: float = 0.4,
                        center: float = 0.5) -> Callable[[int], np.ndarray]:
    """mu_i(t) = center + amplitude sin(2 pi t / period + 2 pi i / n)"""
    phases = 2.0 * math.pi * np.arange(n) / n

    def schedule(t: int) -> np.ndarray:
        return center + amplitude * np.sin(2.0 * math.pi * t / period + phases)

    return schedule


def linear_swap_schedule(T: int, low: float = 0.3, high: float = 0.7) -> Callable[[int], np.ndarray]:
    """Two points whose means cross linearly over T rounds; the best point changes once."""
    span = max(T - 1, 1)

    def schedule(t: int) -> np.ndarray:
        frac = min(max((t - 1) / span, 0.0), 1.0)
        return np.array([low + (high - low) * frac, high - (high - low) * frac])

    return schedule


def constant_schedule(mu) -> Callable[[int], np.ndarray]:
    mu = as_values(mu)
    return lambda t: mu


# ---- constructors ----

def stationary_noisy(mu, sigma: float) -> StationaryNoisy:
    return StationaryNoisy(mu, sigma)


def greedy_trap(epsilon: float, n_copies: int = 1) -> GreedyTrap:
    return GreedyTrap(epsilon, n_copies)


def drifting(mu_schedule: Callable[[int], np.ndarray], sigma: float) -> Drifting:
    return Drifting(mu_schedule, sigma)


def adversarial_swap(n: int, period: int) -> AdversarialSwap:
    return AdversarialSwap(n, period)


def softmax_replay(path, transform: str = 'uncertainty') -> SoftmaxReplay:
    return SoftmaxReplay(path, transform)


@dataclass(frozen=True)
class EnvSpec:
    """
    Environment description as it appears in a run configuration.

    Attributes:
        kind: One of KINDS
        n: Pool size (inferred for greedy_trap and softmax_replay when omitted)
        params: Kind-specific parameters
        seed: Optional fixed environment seed overriding the per-run stream
    """
    kind: str
    n: Optional[int] = None
    params: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EnvSpec':
        if not isinstance(data, dict):
            raise ConfigValidationError(["env must be an object"])
        unknown = set(data) - {'kind', 'n', 'params', 'seed'}
        if unknown:
            raise ConfigValidationError([f"env: unknown keys {sorted(unknown)}"])
        if 'kind' not in data:
            raise ConfigValidationError(["env: missing 'kind'"])
        problems = []
        if not isinstance(data['kind'], str):
            problems.append(f"env.kind must be a string, got {data['kind']!r}")
        for key in ('n', 'seed'):
            value = data.get(key)
            if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                problems.append(f"env.{key} must be an integer, got {value!r}")
        if not isinstance(data.get('params', {}), dict):
            problems.append(f"env.params must be an object, got {data['params']!r}")
        if problems:
            raise ConfigValidationError(problems)
        return cls(kind=data['kind'], n=data.get('n'), params=dict(data.get('params', {})), seed=data.get('seed'))


_ALLOWED_PARAMS = {
    'stationary_noisy': {'mu', 'sigma'},
    'greedy_trap': {'epsilon', 'n_copies'},
    'drifting': {'schedule', 'sigma', 'period', 'amplitude', 'center', 'T', 'low', 'high', 'mu'},
    'adversarial_swap': {'period', 'low', 'high'},
    'softmax_replay': {'path', 'transform'},
}


def _broadcast_mu(mu, n: Optional[int]) -> np.ndarray:
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if mu.size == 1 and n is not None:
        return np.full(n, float(mu[0]))
    return mu


def make_environment(spec: EnvSpec) -> Environment:
    """
    Build the environment an EnvSpec describes.

    Raises:
        ConfigValidationError: On unknown kinds, unknown parameters or size mismatches
    """
    if spec.kind not in KINDS:
        raise ConfigValidationError([f"env: unknown kind '{spec.kind}', expected one of {KINDS}"])
    unknown = set(spec.params) - _ALLOWED_PARAMS[spec.kind]
    if unknown:
        raise ConfigValidationError([f"env.params: unknown keys {sorted(unknown)} for kind '{spec.kind}'"])
    p = spec.params
    try:
        if spec.kind == 'stationary_noisy':
            env = StationaryNoisy(_broadcast_mu(p.get('mu', 0.5), spec.n), p.get('sigma', 0.1))
        elif spec.kind == 'greedy_trap':
            n_copies = p.get('n_copies', (spec.n // 3) if spec.n else 1)
            env = GreedyTrap(p.get('epsilon', 0.25), n_copies)
        elif spec.kind == 'drifting':
            env = Drifting(_make_schedule(spec), p.get('sigma', 0.1))
        elif spec.kind == 'adversarial_swap':
            if spec.n is None:
                raise ConfigValidationError(["env: adversarial_swap needs 'n'"])
            env = AdversarialSwap(spec.n, p.get('period', 10), p.get('low', 0.2), p.get('high', 0.8))
        else:
            if 'path' not in p:
                raise ConfigValidationError(["env.params: softmax_replay needs 'path'"])
            env = SoftmaxReplay(p['path'], p.get('transform', 'uncertainty'))
    except (ConfigValidationError, IngestionError):
        raise
    except (ContractError, StructuralError, TypeError, ValueError) as e:
        # wrong-typed parameters surface as TypeError/ValueError from numpy
        raise ConfigValidationError([f"env: {e}"]) from e
    if spec.n is not None and env.n != spec.n:
        raise ConfigValidationError([f"env: kind '{spec.kind}' yields n={env.n}, config says n={spec.n}"])
    return env


def _make_schedule(spec: EnvSpec) -> Callable[[int], np.ndarray]:
    p = spec.params
    name = p.get('schedule', 'sinusoidal')
    if name == 'sinusoidal':
        if spec.n is None:
            raise ConfigValidationError(["env: sinusoidal drift needs 'n'"])
        return sinusoidal_schedule(spec.n, p.get('period', 500), p.get('amplitude', 0.4), p.get('center', 0.5))
    if name == 'linear_swap':
        if 'T' not in p:
            raise ConfigValidationError(["env.params: linear_swap needs 'T'"])
        return linear_swap_schedule(p['T'], p.get('low', 0.3), p.get('high', 0.7))
    if name == 'constant':
        return constant_schedule(_broadcast_mu(p.get('mu', 0.5), spec.n))
    raise ConfigValidationError([f"env.params: unknown schedule '{name}'"])


class LossDigest:
    """Running SHA-256 over emitted loss vectors"""

    def __init__(self):
        self._hash = hashlib.sha256()

    def update(self, loss: LossVector) -> None:
        self._hash.update(np.ascontiguousarray(loss.values, dtype='<f8').tobytes())

    def hexdigest(self) -> str:
        return self._hash.hexdigest()


def stream_digest(env: Environment, T: int, seed: int) -> str:
    """SHA-256 of the first T loss vectors the environment emits for ``seed``."""
    rng = spawn_streams(seed).env
    digest = LossDigest()
    labeled = np.zeros(env.n, dtype=bool)
    for t in range(1, T + 1):
        digest.update(env.next_losses(t, labeled, rng))
    return digest.hexdigest()
