"""
Database utilities for SQLite persistence of experiment reports.
Handles database initialization, storing run reports and reading them back as DataFrames.
"""

import json
import logging
import os
import sqlite3
from datetime import datetime
from typing import Any, Dict, Optional

import pandas as pd

logger = logging.getLogger(__name__)

DATABASE_PATH = 'runs.db'

ROW_COLUMNS = ('run_id', 'algo', 'seed', 'round', 'mixture_loss',
               'cum_regret_best_fixed', 'cum_regret_dynamic', 'n_labeled', 'cap_active')


def default_db_path() -> str:
    return os.getenv('ADAPROD_DB_PATH', DATABASE_PATH)


def get_db_connection(path: Optional[str] = None) -> sqlite3.Connection:
    """
    Get SQLite database connection with row factory for dict-like access.

    Args:
        path: Database file (ADAPROD_DB_PATH or runs.db by default)

    Returns:
        sqlite3.Connection: Database connection
    """
    conn = sqlite3.connect(path or default_db_path())
    conn.row_factory = sqlite3.Row
    return conn


def init_db(path: Optional[str] = None) -> None:
    """
    Initialize the database with required tables.
    Creates the runs and round_rows tables if they don't exist.
    """
    conn = get_db_connection(path)

    try:
        cursor = conn.cursor()

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                run_id TEXT PRIMARY KEY,  -- configuration digest
                algos TEXT,  -- comma-separated learner labels
                env_kind TEXT,
                n_rounds INTEGER,
                n_seeds INTEGER,
                config TEXT,  -- JSON
                header TEXT,  -- JSON
                summary TEXT,  -- JSON records, one per (algo, seed)
                created_at TEXT DEFAULT CURRENT_TIMESTAMP
            )
        ''')

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS round_rows (
                run_id TEXT,
                algo TEXT,
                seed INTEGER,
                round INTEGER,
                mixture_loss REAL,
                cum_regret_best_fixed REAL,
                cum_regret_dynamic REAL,
                n_labeled INTEGER,
                cap_active INTEGER,
                FOREIGN KEY (run_id) REFERENCES runs(run_id)
            )
        ''')

        cursor.execute('CREATE INDEX IF NOT EXISTS idx_rows_run ON round_rows(run_id)')
        cursor.execute('CREATE INDEX IF NOT EXISTS idx_runs_env ON runs(env_kind)')

        conn.commit()
        logger.info("Database initialized at %s", path or default_db_path())

    except sqlite3.Error as e:
        logger.error("Error initializing database: %s", e)
        conn.rollback()
        raise
    finally:
        conn.close()


def save_report(report, config, path: Optional[str] = None) -> str:
    """
    Store a run report, replacing any earlier report of the same configuration.

    Args:
        report: RunReport from experiment_cli
        config: The RunConfig that produced it
        path: Database file

    Returns:
        str: The stored run_id
    """
    init_db(path)
    conn = get_db_connection(path)

    try:
        cursor = conn.cursor()
        cursor.execute('DELETE FROM round_rows WHERE run_id = ?', (report.run_id,))
        cursor.execute('''
            INSERT OR REPLACE INTO runs
                (run_id, algos, env_kind, n_rounds, n_seeds, config, header, summary, created_at)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
        ''', (
            report.run_id,
            ','.join(spec.algo for spec in config.learners),
            config.env.kind,
            int(report.header['T']),
            len(config.seeds),
            json.dumps(config.to_dict(), sort_keys=True, default=str),
            json.dumps(report.header, sort_keys=True, default=str),
            report.summary.to_json(orient='records'),
            datetime.now().isoformat(),
        ))
        rows = report.rows[list(ROW_COLUMNS)].copy()
        rows['cap_active'] = rows['cap_active'].astype(int)
        rows.to_sql('round_rows', conn, if_exists='append', index=False)
        conn.commit()
        logger.info("Stored run %s (%d rows)", report.run_id, len(rows))
        return report.run_id

    except sqlite3.Error as e:
        logger.error("Error saving report %s: %s", report.run_id, e)
        conn.rollback()
        raise
    finally:
        conn.close()


def list_runs(path: Optional[str] = None, limit: Optional[int] = None) -> pd.DataFrame:
    """
    Retrieve stored runs as a pandas DataFrame, newest first.

    Args:
        path: Database file
        limit: Maximum number of runs to return

    Returns:
        pd.DataFrame: One row per run
    """
    conn = get_db_connection(path)

    try:
        query = '''
            SELECT run_id, algos, env_kind, n_rounds, n_seeds, created_at
            FROM runs
            ORDER BY created_at DESC
        '''
        params = ()
        if limit:
            query += ' LIMIT ?'
            params = (int(limit),)

        df = pd.read_sql_query(query, conn, params=params)
        if not df.empty:
            df['created_at'] = pd.to_datetime(df['created_at'], errors='coerce')
        return df

    except sqlite3.Error as e:
        logger.error("Error listing runs: %s", e)
        raise
    finally:
        conn.close()


def load_rows(run_id: str, path: Optional[str] = None) -> pd.DataFrame:
    """Per-round rows of one run in their original order."""
    conn = get_db_connection(path)

    try:
        df = pd.read_sql_query(
            f"SELECT {', '.join(ROW_COLUMNS)} FROM round_rows WHERE run_id = ? ORDER BY rowid",
            conn, params=(run_id,))
        df['cap_active'] = df['cap_active'].astype(bool)
        return df

    except sqlite3.Error as e:
        logger.error("Error loading rows for run %s: %s", run_id, e)
        raise
    finally:
        conn.close()


def load_summary(run_id: str, path: Optional[str] = None) -> pd.DataFrame:
    """Per-(algo, seed) summary of one run; empty when the run is unknown."""
    conn = get_db_connection(path)

    try:
        cursor = conn.cursor()
        cursor.execute('SELECT summary FROM runs WHERE run_id = ?', (run_id,))
        row = cursor.fetchone()
        return pd.DataFrame(json.loads(row['summary'])) if row else pd.DataFrame()

    except sqlite3.Error as e:
        logger.error("Error loading summary for run %s: %s", run_id, e)
        raise
    finally:
        conn.close()


def delete_run(run_id: str, path: Optional[str] = None) -> bool:
    """
    Delete a run and its rows.

    Args:
        run_id: Run to delete
        path: Database file

    Returns:
        bool: Success status
    """
    conn = get_db_connection(path)

    try:
        cursor = conn.cursor()
        cursor.execute('DELETE FROM round_rows WHERE run_id = ?', (run_id,))
        cursor.execute('DELETE FROM runs WHERE run_id = ?', (run_id,))

        if cursor.rowcount > 0:
            conn.commit()
            logger.info("Deleted run %s", run_id)
            return True
        else:
            conn.rollback()
            logger.info("No run found with ID %s", run_id)
            return False

    except sqlite3.Error as e:
        logger.error("Error deleting run: %s", e)
        conn.rollback()
        raise
    finally:
        conn.close()


def get_run_stats(path: Optional[str] = None) -> Dict[str, Any]:
    """
    Get summary statistics about stored runs.

    Returns:
        Dict: Statistics summary
    """
    conn = get_db_connection(path)

    try:
        cursor = conn.cursor()

        stats = {}

        cursor.execute('SELECT COUNT(*) FROM runs')
        stats['total_runs'] = cursor.fetchone()[0]

        cursor.execute('SELECT COUNT(*) FROM round_rows')
        stats['total_rows'] = cursor.fetchone()[0]

        cursor.execute('''
            SELECT env_kind, COUNT(*) as count
            FROM runs
            GROUP BY env_kind
        ''')
        stats['by_env_kind'] = dict(cursor.fetchall())

        cursor.execute('''
            SELECT algo, COUNT(DISTINCT run_id) as count
            FROM round_rows
            GROUP BY algo
        ''')
        stats['by_algo'] = dict(cursor.fetchall())

        return stats

    except sqlite3.Error as e:
        logger.error("Error getting run stats: %s", e)
        raise
    finally:
        conn.close()
