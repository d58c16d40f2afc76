"""Optional run ledger: one row per CLI command, in sqlite or Postgres."""

import json
import os
import sqlite3
import time
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional, Tuple

from dotenv import load_dotenv

load_dotenv()

DB_PATH = os.getenv("TNG_RUN_DB", "").strip()
DATABASE_URL = os.getenv("DATABASE_URL", "").strip()

RUN_COLUMNS = ["run_id", "ts", "command", "seed", "config_hash", "out_dir", "exit_code", "manifest"]


def ledger_enabled() -> bool:
    """Opt-in: a sqlite path or a Postgres URL must be configured."""
    return bool(DB_PATH or DATABASE_URL)


def _manifest_json(manifest: Dict[str, Any]) -> str:
    try:
        return json.dumps(manifest, ensure_ascii=False, sort_keys=True)
    except (TypeError, ValueError):
        return json.dumps({"_repr": repr(manifest)}, ensure_ascii=False)


@contextmanager
def _cursor() -> Iterator[Tuple[Any, str]]:
    """Yield (cursor, placeholder) and commit on success."""
    if DATABASE_URL:
        import psycopg2  # from psycopg2-binary

        conn = psycopg2.connect(DATABASE_URL)
        mark = "%s"
    else:
        conn = sqlite3.connect(DB_PATH)
        mark = "?"
    try:
        cur = conn.cursor()
        yield cur, mark
        conn.commit()
    finally:
        conn.close()


def init_db() -> None:
    with _cursor() as (cur, _):
        cur.execute("""
        CREATE TABLE IF NOT EXISTS runs (
            run_id TEXT PRIMARY KEY,
            ts DOUBLE PRECISION,
            command TEXT,
            seed INTEGER,
            config_hash TEXT,
            out_dir TEXT,
            exit_code INTEGER,
            manifest TEXT
        )
        """)


def save_run(*, run_id: str, command: str, seed: int, config_hash: str, out_dir: str,
             exit_code: int, manifest: Dict[str, Any]) -> None:
    row = (run_id, time.time(), command, int(seed), config_hash, out_dir, int(exit_code), _manifest_json(manifest))
    with _cursor() as (cur, mark):
        marks = ", ".join([mark] * len(RUN_COLUMNS))
        cur.execute(f"INSERT INTO runs ({', '.join(RUN_COLUMNS)}) VALUES ({marks})", row)


def fetch_runs(limit: int = 10, config_hash: Optional[str] = None) -> List[Tuple[Any, ...]]:
    """Most recent runs first, optionally only those sharing a config hash."""
    with _cursor() as (cur, mark):
        where, params = "", [int(limit)]
        if config_hash is not None:
            where, params = f"WHERE config_hash = {mark} ", [config_hash, int(limit)]
        cur.execute(
            f"SELECT {', '.join(RUN_COLUMNS[:-1])} FROM runs {where}ORDER BY ts DESC LIMIT {mark}",
            tuple(params),
        )
        return cur.fetchall()
