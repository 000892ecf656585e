"""
Tests for SQLite persistence of run reports.
"""

import pandas as pd
import pytest

import db_utils
from experiment_cli import RunConfig, run_expert_comparison


@pytest.fixture
def stored(tmp_path):
    config = RunConfig.from_dict({
        'learners': ['adaprod', 'uniform'],
        'env': {'kind': 'greedy_trap', 'params': {'epsilon': 0.25}},
        'b': 1,
        'T': 3,
        'seeds': [0, 1],
        'label_points': False,
    })
    report = run_expert_comparison(config)
    path = str(tmp_path / 'runs.db')
    db_utils.save_report(report, config, path)
    return report, config, path


def test_init_is_idempotent(tmp_path):
    path = str(tmp_path / 'runs.db')
    db_utils.init_db(path)
    db_utils.init_db(path)
    assert db_utils.get_run_stats(path)['total_runs'] == 0


def test_rows_round_trip(stored):
    report, _, path = stored
    rows = db_utils.load_rows(report.run_id, path)
    pd.testing.assert_frame_equal(rows, report.rows, check_dtype=False)


def test_summary_round_trip(stored):
    report, _, path = stored
    summary = db_utils.load_summary(report.run_id, path)
    assert list(summary['algo']) == list(report.summary['algo'])
    assert list(summary['stream_digest']) == list(report.summary['stream_digest'])


def test_saving_twice_replaces(stored):
    report, config, path = stored
    db_utils.save_report(report, config, path)
    stats = db_utils.get_run_stats(path)
    assert stats['total_runs'] == 1
    assert stats['total_rows'] == len(report.rows)
    assert stats['by_env_kind'] == {'greedy_trap': 1}
    assert stats['by_algo'] == {'adaprod': 1, 'uniform': 1}


def test_list_runs(stored):
    report, _, path = stored
    runs = db_utils.list_runs(path, limit=5)
    assert list(runs['run_id']) == [report.run_id]
    assert runs.loc[0, 'algos'] == 'adaprod,uniform'
    assert runs.loc[0, 'n_rounds'] == 3


def test_delete_run(stored):
    report, _, path = stored
    assert db_utils.delete_run(report.run_id, path)
    assert not db_utils.delete_run(report.run_id, path)
    assert db_utils.load_summary(report.run_id, path).empty


def test_default_path_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv('ADAPROD_DB_PATH', str(tmp_path / 'env.db'))
    assert db_utils.default_db_path() == str(tmp_path / 'env.db')
