"""
Experiment runner and command-line entry point.
Drives the active-learning loop (seed labels, reveal losses, update the learner,
sample a batch, label it) over any learner and environment, repeats it over
seeds in a process pool and emits per-round regret rows as CSV.
"""

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from baselines import LEARNERS, OPTIMISTIC, make_learner
from batch_sampler import marginal_audit, sample_batch
from core_model import (
    AdaProdError,
    AwakeMask,
    ConfigValidationError,
    ContractError,
    IngestionError,
    RegretLedger,
    batch_instantaneous_regret,
    variation_report,
)
from simenv import EnvSpec, Environment, LossDigest, SoftmaxReplay, make_environment, spawn_streams

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    'run_id', 'algo', 'seed', 'round', 'mixture_loss',
    'cum_regret_best_fixed', 'cum_regret_dynamic', 'n_labeled', 'cap_active',
]
PREDICTIONS = ('last_loss', 'none')
DISTRIBUTION_LEARNERS = ('adaprod', 'oamlprod', 'adanormalhedge', 'squint')


@dataclass(frozen=True)
class LearnerSpec:
    """A learner tag with constructor parameters and an optional report label"""
    tag: str
    params: Dict[str, Any] = field(default_factory=dict)
    label: Optional[str] = None

    @property
    def algo(self) -> str:
        return self.label or self.tag

    @classmethod
    def from_dict(cls, data) -> 'LearnerSpec':
        if isinstance(data, str):
            return cls(tag=data)
        if not isinstance(data, dict):
            raise ConfigValidationError([f"learner entry must be a tag or an object, got {data!r}"])
        unknown = set(data) - {'tag', 'params', 'label'}
        if unknown:
            raise ConfigValidationError([f"learner: unknown keys {sorted(unknown)}"])
        if 'tag' not in data:
            raise ConfigValidationError(["learner: missing 'tag'"])
        problems = []
        if not isinstance(data['tag'], str):
            problems.append(f"learner: 'tag' must be a string, got {data['tag']!r}")
        if not isinstance(data.get('params', {}), dict):
            problems.append(f"learner: 'params' must be an object, got {data['params']!r}")
        if data.get('label') is not None and not isinstance(data['label'], str):
            problems.append(f"learner: 'label' must be a string, got {data['label']!r}")
        if problems:
            raise ConfigValidationError(problems)
        return cls(tag=data['tag'], params=dict(data.get('params', {})), label=data.get('label'))


@dataclass
class RunConfig:
    """
    One experiment configuration.

    Attributes:
        learners: Learners to run (exactly one for a plain run)
        env: Environment description
        n_start: Points labeled uniformly at random before round 1
        b: Batch size, or an explicit per-round batch schedule
        n_end: Labeled-set size at which the run stops (derives T from b)
        T: Number of rounds (derived from n_end or the schedule when omitted)
        seeds: Master seeds, one independent run each
        label_points: False runs the non-sleeping variant where nothing is ever labeled
        prediction: Optimistic loss prediction for AdaProd-type learners
        option: Free-form acquisition option, recorded as metadata only
        output: Default CSV path
    """
    learners: List[LearnerSpec]
    env: EnvSpec
    n_start: int = 0
    b: Union[int, List[int]] = 1
    n_end: Optional[int] = None
    T: Optional[int] = None
    seeds: List[int] = field(default_factory=lambda: [0])
    label_points: bool = True
    prediction: str = 'last_loss'
    option: Optional[str] = None
    output: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        """
        Parse a configuration document, rejecting unknown keys.

        Raises:
            ConfigValidationError: On unknown or missing keys
        """
        if not isinstance(data, dict):
            raise ConfigValidationError(["configuration must be a JSON object"])
        allowed = {'learners', 'env', 'n_start', 'b', 'n_end', 'T', 'seeds', 'label_points', 'prediction', 'option', 'output'}
        problems = [f"unknown key '{key}'" for key in sorted(set(data) - allowed)]
        for key in ('learners', 'env'):
            if key not in data:
                problems.append(f"missing '{key}'")
        if problems:
            raise ConfigValidationError(problems)
        if not isinstance(data['learners'], list):
            raise ConfigValidationError(["'learners' must be a list"])
        if not isinstance(data['env'], dict):
            raise ConfigValidationError(["'env' must be an object"])
        kwargs = {key: data[key] for key in allowed - {'learners', 'env'} if key in data}
        problems = _type_problems(kwargs)
        if problems:
            raise ConfigValidationError(problems)
        return cls(
            learners=[LearnerSpec.from_dict(entry) for entry in data['learners']],
            env=EnvSpec.from_dict(data['env']),
            **kwargs,
        )

    @classmethod
    def from_json(cls, path: str) -> 'RunConfig':
        with open(path, 'r', encoding='utf-8') as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigValidationError([f"{path}: invalid JSON ({e.msg} at line {e.lineno})"]) from e
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        """Stable identifier of everything that affects the results."""
        payload = self.to_dict()
        payload.pop('output', None)
        text = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(text.encode('utf-8')).hexdigest()[:12]


@dataclass(frozen=True)
class RunPlan:
    """Resolved budget of a configuration against its environment"""
    n: int
    schedule: Tuple[int, ...]
    n_end: int

    @property
    def T(self) -> int:
        return len(self.schedule)

    @property
    def comparator_b(self) -> int:
        return min(self.schedule)


def _is_int(value) -> bool:
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool)


def _type_problems(values: Dict[str, Any]) -> List[str]:
    """Type errors among the scalar fields of a configuration document."""
    problems = []
    if 'seeds' in values and not isinstance(values['seeds'], list):
        problems.append(f"seeds must be a list of integers, got {values['seeds']!r}")
    if 'n_start' in values and not _is_int(values['n_start']):
        problems.append(f"n_start must be an integer, got {values['n_start']!r}")
    for key in ('n_end', 'T'):
        if values.get(key) is not None and not _is_int(values[key]):
            problems.append(f"{key} must be an integer, got {values[key]!r}")
    if 'b' in values and not (_is_int(values['b']) or isinstance(values['b'], list)):
        problems.append(f"b must be an integer or a list of integers, got {values['b']!r}")
    if 'label_points' in values and not isinstance(values['label_points'], bool):
        problems.append(f"label_points must be true or false, got {values['label_points']!r}")
    for key in ('prediction', 'option', 'output'):
        if values.get(key) is not None and not isinstance(values[key], str):
            problems.append(f"{key} must be a string, got {values[key]!r}")
    return problems


def resolve_plan(config: RunConfig, env: Environment) -> RunPlan:
    """
    Check a configuration against its environment and derive the batch schedule.

    Args:
        config: Parsed configuration
        env: The environment it will run on

    Returns:
        RunPlan: Pool size, per-round batch sizes and the final labeled count

    Raises:
        ConfigValidationError: Listing every problem found
    """
    problems = _type_problems({
        'seeds': config.seeds, 'n_start': config.n_start, 'n_end': config.n_end, 'T': config.T,
        'b': config.b, 'label_points': config.label_points, 'prediction': config.prediction,
        'option': config.option, 'output': config.output,
    })
    problems += [f"learner '{spec.tag}': params must be an object, got {spec.params!r}"
                 for spec in config.learners if not isinstance(spec.params, dict)]
    if problems:
        raise ConfigValidationError(problems)
    n = env.n
    if not config.learners:
        problems.append("at least one learner is required")
    for spec in config.learners:
        if spec.tag not in LEARNERS:
            problems.append(f"unknown learner tag '{spec.tag}', expected one of {sorted(LEARNERS)}")
            continue
        try:
            make_learner(spec.tag, n, **spec.params)
        except ConfigValidationError as e:
            problems.extend(e.problems)
    labels = [spec.algo for spec in config.learners]
    if len(set(labels)) != len(labels):
        problems.append(f"learner labels must be unique, got {labels}")
    if not config.seeds or not all(_is_int(s) and s >= 0 for s in config.seeds):
        problems.append("seeds must be a non-empty list of non-negative integers")
    if config.prediction not in PREDICTIONS:
        problems.append(f"prediction must be one of {PREDICTIONS}")
    if not _is_int(config.n_start) or not 0 <= config.n_start < n:
        problems.append(f"n_start must be an integer in [0, {n}), got {config.n_start!r}")
    if config.T is not None and (not _is_int(config.T) or config.T < 1):
        problems.append(f"T must be a positive integer, got {config.T!r}")
    if problems:
        raise ConfigValidationError(problems)

    schedule: List[int] = []
    if isinstance(config.b, list):
        if not config.b or not all(_is_int(bt) and bt >= 1 for bt in config.b):
            problems.append("b schedule must be a non-empty list of integers >= 1")
        else:
            schedule = list(config.b)
            if config.T is not None and config.T != len(schedule):
                problems.append(f"T={config.T} does not match the {len(schedule)}-round b schedule")
    elif _is_int(config.b) and config.b >= 1:
        if config.label_points and config.n_end is not None:
            budget = config.n_end - config.n_start
            if budget < 1:
                problems.append(f"n_end={config.n_end} leaves no budget after n_start={config.n_start}")
            else:
                rounds = math.ceil(budget / config.b)
                if config.T is not None and config.T != rounds:
                    problems.append(f"T={config.T} does not match n_end={config.n_end} with b={config.b}")
                schedule = [config.b] * (rounds - 1) + [budget - config.b * (rounds - 1)]
        elif config.T is not None:
            schedule = [config.b] * config.T
        else:
            problems.append("either T or n_end must be given")
    else:
        problems.append(f"b must be an integer >= 1 or a list of them, got {config.b!r}")

    if schedule:
        awake_start = n - config.n_start
        if config.label_points:
            total = config.n_start + sum(schedule)
            if total > n:
                problems.append(f"n_start + sum(b_t) = {total} exceeds the pool size {n}")
            if config.n_end is not None and isinstance(config.b, list) and config.n_end != total:
                problems.append(f"n_end={config.n_end} but the schedule labels {total} points")
        elif max(schedule) > awake_start:
            problems.append(f"batch size {max(schedule)} exceeds the {awake_start} unlabeled points")
        if isinstance(env, SoftmaxReplay) and len(schedule) > env.T:
            problems.append(f"replay stream has {env.T} rounds, schedule needs {len(schedule)}")
    if problems:
        raise ConfigValidationError(problems)
    n_end = config.n_start + sum(schedule) if config.label_points else config.n_start
    return RunPlan(n=n, schedule=tuple(schedule), n_end=n_end)


def validate_config(config: RunConfig) -> RunPlan:
    """Build the environment and resolve the plan without running anything."""
    return resolve_plan(config, make_environment(config.env))


@dataclass
class RunReport:
    """
    Result of a run or comparison.

    Attributes:
        run_id: Configuration digest
        rows: Per-round CSV rows (CSV_COLUMNS), ordered by algo (configuration order),
            then seed, then round
        summary: One row per (algo, seed), in the same order
        header: Run-level metadata (comparator mode, option, schedule, stream check)
    """
    run_id: str
    rows: pd.DataFrame
    summary: pd.DataFrame
    header: Dict[str, Any]

    def write_csv(self, path: str) -> None:
        self.rows.to_csv(path, index=False)

    def violation_total(self) -> int:
        return int(self.summary['violation_total'].sum()) if len(self.summary) else 0

    def mean_regrets(self) -> pd.DataFrame:
        return (self.summary.groupby('algo', sort=False)[['cum_regret_best_fixed', 'cum_regret_dynamic']]
                .mean())


def dynamic_comparator(reference: np.ndarray, awake: AwakeMask, b: int) -> Tuple[int, ...]:
    """The b awake points with the smallest reference loss, ties to the lowest index."""
    idx = awake.indices()
    order = np.lexsort((idx, reference[idx]))
    return tuple(int(i) for i in idx[order[:min(b, idx.size)]])


@dataclass
class _SeedResult:
    rows: pd.DataFrame
    summary: Dict[str, Any]
    digest: str


def _run_seed(config: RunConfig, plan: RunPlan, env: Environment, spec: LearnerSpec,
              seed: int, run_id: str) -> _SeedResult:
    """One isolated run of one learner on one seed."""
    started = time.perf_counter()
    streams = spawn_streams(seed)
    env_rng = streams.env if config.env.seed is None else spawn_streams(config.env.seed).env
    n = plan.n
    learner = make_learner(spec.tag, n, **spec.params)
    is_distribution = spec.tag in DISTRIBUTION_LEARNERS
    optimistic = spec.tag in OPTIMISTIC and config.prediction == 'last_loss'

    awake = AwakeMask.all_awake(n)
    if config.n_start:
        initial = streams.seeding.choice(n, size=config.n_start, replace=False)
        awake = awake.without(initial)
        learner.mark_labeled(initial)

    ledger = RegretLedger(n)
    digest = LossDigest()
    comparators: List[Tuple[int, ...]] = []
    lhat = None
    for t, b_t in enumerate(plan.schedule, start=1):
        cap_active = False
        rhat_used = learner.rhat.copy() if optimistic else None
        if is_distribution:
            p = learner.distribution()
            batch = sample_batch(p, b_t, streams.sampler, awake)
            rho, chosen, cap_active = batch.scaled, batch.chosen, batch.cap_was_active
        elif spec.tag == 'greedy':
            chosen = learner.select(b_t)
            rho = np.zeros(n)
            rho[list(chosen)] = 1.0
        else:
            chosen = learner.select(b_t, streams.sampler)
            rho = learner.inclusion(b_t)

        loss = env.next_losses(t, ~awake.bits, env_rng)
        digest.update(loss)
        regret = batch_instantaneous_regret(rho, loss.values, b_t, awake)
        mixture = float(rho @ loss.values) / b_t
        mu = env.expected_losses(t)
        expected_regret = None if mu is None else batch_instantaneous_regret(rho, mu, b_t, awake)
        comparators.append(dynamic_comparator(loss.values if mu is None else mu, awake, b_t))
        next_awake = awake.without(chosen) if config.label_points else awake

        if optimistic:
            rhat_next = np.zeros(n)
            if next_awake.count:
                _, rhat_next = learner.predict_next(loss, p.values, loss.values, rhat_used, next_awake)
            learner.observe(loss, p.values, rhat_used, rhat_next)
        elif is_distribution:
            learner.observe(loss, p.values)
        else:
            learner.observe(loss.values)
        if config.label_points:
            learner.mark_labeled(chosen)

        ledger.record(
            mixture, regret, awake,
            n_labeled=n - next_awake.count,
            batch_size=b_t,
            cap_active=cap_active,
            rhat=rhat_used,
            loss=loss.values,
            lhat=lhat,
            expected_regret=expected_regret,
        )
        lhat = loss.values if optimistic else None
        awake = next_awake

    best_fixed = ledger.best_fixed_curve(plan.comparator_b)
    dynamic = ledger.comparator_curve(comparators)
    frame = ledger.to_frame()
    rows = pd.DataFrame({
        'run_id': run_id,
        'algo': spec.algo,
        'seed': seed,
        'round': frame['round'],
        'mixture_loss': frame['mixture_loss'],
        'cum_regret_best_fixed': best_fixed,
        'cum_regret_dynamic': dynamic,
        'n_labeled': frame['n_labeled'],
        'cap_active': frame['cap_active'],
    }, columns=CSV_COLUMNS)

    violations = dict(getattr(learner, 'violations', {}))
    variation = variation_report(ledger)
    summary = {
        'algo': spec.algo,
        'seed': seed,
        'rounds': plan.T,
        'cum_regret_best_fixed': float(best_fixed[-1]),
        'cum_regret_dynamic': float(dynamic[-1]),
        'cap_active_rounds': int(frame['cap_active'].sum()),
        'V_T': variation['V_T'],
        'V_T_loss_bound': variation['V_T_loss_bound'],
        'D_T': variation['D_T'],
        'D_T_source': variation['D_T_source'],
        'violations': violations,
        'violation_total': int(sum(violations.values())),
        'stream_digest': digest.hexdigest(),
        'wall_time': time.perf_counter() - started,
    }
    logger.info("%s seed %d finished: dynamic regret %.3f in %.2fs",
                spec.algo, seed, summary['cum_regret_dynamic'], summary['wall_time'])
    return _SeedResult(rows=rows, summary=summary, digest=summary['stream_digest'])


def _default_workers() -> int:
    try:
        return max(1, int(os.getenv('ADAPROD_THREADS', '1')))
    except ValueError:
        logger.warning("ignoring non-integer ADAPROD_THREADS=%r", os.getenv('ADAPROD_THREADS'))
        return 1


def _seed_job(config: RunConfig, plan: RunPlan, spec: LearnerSpec, seed: int, run_id: str) -> _SeedResult:
    # environments may hold closures, so each worker builds its own
    return _run_seed(config, plan, make_environment(config.env), spec, seed, run_id)


def _run(config: RunConfig, threads: Optional[int]) -> RunReport:
    env = make_environment(config.env)
    plan = resolve_plan(config, env)
    run_id = config.digest()
    workers = threads or _default_workers()
    jobs = [(spec, seed) for spec in config.learners for seed in config.seeds]
    workers = min(workers, len(jobs))
    logger.info("run %s: %d learners x %d seeds, T=%d, %d workers",
                run_id, len(config.learners), len(config.seeds), plan.T, workers)

    if workers <= 1:
        results = [_run_seed(config, plan, env, spec, seed, run_id) for spec, seed in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_seed_job, config, plan, spec, seed, run_id) for spec, seed in jobs]
            results = [future.result() for future in futures]

    by_seed: Dict[int, set] = {}
    for (_, seed), result in zip(jobs, results):
        by_seed.setdefault(seed, set()).add(result.digest)
    streams_identical = all(len(digests) == 1 for digests in by_seed.values())
    if not streams_identical:
        raise ContractError("learners observed different loss streams for the same seed")

    header = {
        'run_id': run_id,
        'comparator': 'realized_loss' if env.expected_losses(1) is None else 'expected_mean',
        'best_fixed_b': plan.comparator_b,
        'option': config.option,
        'env_kind': config.env.kind,
        'n': plan.n,
        'T': plan.T,
        'n_end': plan.n_end,
        'label_points': config.label_points,
        'streams_identical': streams_identical,
    }
    rank = {spec.algo: k for k, spec in enumerate(config.learners)}
    rows = pd.concat([r.rows for r in results], ignore_index=True)
    rows = (rows.assign(_rank=rows['algo'].map(rank))
            .sort_values(['_rank', 'seed', 'round'], kind='stable')
            .drop(columns='_rank')
            .reset_index(drop=True))
    summary = pd.DataFrame([r.summary for r in results])
    summary = (summary.assign(_rank=summary['algo'].map(rank))
               .sort_values(['_rank', 'seed'], kind='stable')
               .drop(columns='_rank')
               .reset_index(drop=True))
    return RunReport(run_id=run_id, rows=rows, summary=summary, header=header)


def run_active_learning(config: RunConfig, threads: Optional[int] = None) -> RunReport:
    """
    Run the active-learning loop for a single learner over every seed.

    Args:
        config: Configuration with exactly one learner
        threads: Worker processes (ADAPROD_THREADS or 1 by default; 1 runs inline)

    Returns:
        RunReport: Rows, per-seed summary and header
    """
    if len(config.learners) != 1:
        raise ConfigValidationError([f"a run needs exactly one learner, got {len(config.learners)}"])
    return _run(config, threads)


def run_expert_comparison(config: RunConfig, threads: Optional[int] = None) -> RunReport:
    """
    Run every configured learner on the same per-seed loss realizations.

    Args:
        config: Configuration with one or more learners
        threads: Worker processes (ADAPROD_THREADS or 1 by default; 1 runs inline)

    Returns:
        RunReport: Aligned rows for all learners
    """
    if not config.learners:
        raise ConfigValidationError(["comparison needs at least one learner"])
    return _run(config, threads)


# ---- command line ----

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='experiment_cli',
        description='Sleeping-experts active-learning experiments',
    )
    parser.add_argument('--log-level', default=None,
                        help='Logging level (default: ADAPROD_LOG_LEVEL or WARNING)')
    sub = parser.add_subparsers(dest='command', required=True)

    for name, help_text in (('run', 'Run a single-learner configuration'),
                            ('compare', 'Run several learners on common random numbers'),
                            ('validate', 'Check a configuration without running it')):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument('--config', required=True, help='Path to a JSON run configuration')
        if name != 'validate':
            cmd.add_argument('--out', default=None, help='CSV output path (overrides the config)')
            cmd.add_argument('--seeds', type=int, default=None, help='Use seeds 0..K-1 instead of the configured list')
            cmd.add_argument('--threads', type=int, default=None, help='Worker processes')
            cmd.add_argument('--db', nargs='?', const='', default=None,
                             help='Also store the report in SQLite (default path: ADAPROD_DB_PATH)')

    marg = sub.add_parser('marginals', help='Monte-Carlo audit of dependent rounding marginals')
    marg.add_argument('--rho', required=True, help='Comma-separated inclusion probabilities')
    marg.add_argument('--b', type=int, default=None, help='Expected batch size (checked against sum(rho))')
    marg.add_argument('--draws', type=int, default=200000)
    marg.add_argument('--seed', type=int, default=0)
    marg.add_argument('--out', default=None, help='CSV output path')
    return parser


def _load_env_file() -> None:
    try:
        from dotenv import load_dotenv
        load_dotenv()
    except ImportError:
        logger.debug("python-dotenv not installed; skipping .env")


def _configure_logging(level: Optional[str]) -> None:
    level = (level or os.getenv('ADAPROD_LOG_LEVEL') or 'WARNING').upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def _print_report(report: RunReport, out: Optional[str]) -> None:
    print(f"✅ Run {report.run_id} complete ({report.header['T']} rounds, comparator: {report.header['comparator']})")
    for algo, row in report.mean_regrets().iterrows():
        print(f"   • {algo}: best-fixed regret {row['cum_regret_best_fixed']:.3f}, "
              f"dynamic regret {row['cum_regret_dynamic']:.3f}")
    print(f"   • cap active in {int(report.summary['cap_active_rounds'].sum())} rounds")
    print(f"   • learning-rate lemma violations: {report.violation_total()}")
    if out:
        print(f"📄 Rows written to {out}")


def _cmd_run(args, compare: bool) -> int:
    config = RunConfig.from_json(args.config)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigValidationError([f"--seeds must be >= 1, got {args.seeds}"])
        config.seeds = list(range(args.seeds))
    report = run_expert_comparison(config, args.threads) if compare else run_active_learning(config, args.threads)
    out = args.out or config.output
    if out:
        report.write_csv(out)
    if args.db is not None:
        import db_utils
        path = args.db or db_utils.default_db_path()
        db_utils.save_report(report, config, path)
        print(f"🗄️ Report stored in {path}")
    _print_report(report, out)
    return 0


def _cmd_validate(args) -> int:
    config = RunConfig.from_json(args.config)
    plan = validate_config(config)
    print(f"✅ Configuration is valid: n={plan.n}, T={plan.T}, n_end={plan.n_end}, "
          f"{len(config.learners)} learner(s), {len(config.seeds)} seed(s)")
    return 0


def _cmd_marginals(args) -> int:
    try:
        rho = np.array([float(x) for x in args.rho.split(',')])
    except ValueError as e:
        raise ConfigValidationError([f"--rho: {e}"]) from e
    if args.b is not None and abs(rho.sum() - args.b) > 1e-9:
        raise ConfigValidationError([f"--rho sums to {rho.sum():.12g}, expected b={args.b}"])
    frame = marginal_audit(rho, args.draws, np.random.default_rng(args.seed))
    if args.out:
        frame.to_csv(args.out, index=False)
    print(f"🎲 {args.draws} draws, max |z| = {frame['z'].abs().max():.3f}")
    print(frame.to_string(index=False))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    CLI entry point.

    Returns:
        int: 0 on success, 2 on configuration or ingestion errors, 3 on numerical or contract violations
    """
    _load_env_file()
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)
    try:
        if args.command == 'validate':
            return _cmd_validate(args)
        if args.command == 'marginals':
            return _cmd_marginals(args)
        return _cmd_run(args, compare=args.command == 'compare')
    except (ConfigValidationError, IngestionError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return 2
    except AdaProdError as e:
        print(f"💥 {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == '__main__':
    sys.exit(main())
