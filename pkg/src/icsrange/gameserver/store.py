"""Single-file sqlite ledger in WAL mode.

Submissions, lockouts, hint requests, sessions, declarations and score
records are append-only: triggers abort any UPDATE or DELETE on them.
"""
from __future__ import annotations

import sqlite3
import threading
from contextlib import contextmanager
from pathlib import Path

LEDGER_TABLES = ("submissions", "locks", "hint_log", "sessions", "declarations", "scores")

SCHEMA = """
CREATE TABLE IF NOT EXISTS teams (
    id TEXT PRIMARY KEY, name TEXT NOT NULL, token_hash TEXT NOT NULL UNIQUE);
CREATE TABLE IF NOT EXISTS challenges (
    id TEXT PRIMARY KEY, category TEXT, points INTEGER, title TEXT, description TEXT,
    hints TEXT, released INTEGER, capture TEXT, flag TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS submissions (
    seq INTEGER PRIMARY KEY AUTOINCREMENT, team TEXT NOT NULL, challenge TEXT NOT NULL,
    submitted TEXT NOT NULL, ts REAL NOT NULL, verdict TEXT NOT NULL, points INTEGER NOT NULL);
CREATE INDEX IF NOT EXISTS submissions_pair ON submissions(team, challenge, ts);
CREATE TABLE IF NOT EXISTS locks (
    seq INTEGER PRIMARY KEY AUTOINCREMENT, team TEXT NOT NULL, challenge TEXT NOT NULL,
    start REAL NOT NULL, until REAL NOT NULL);
CREATE TABLE IF NOT EXISTS hint_log (
    seq INTEGER PRIMARY KEY AUTOINCREMENT, team TEXT NOT NULL, challenge TEXT NOT NULL,
    hint INTEGER NOT NULL, ts REAL NOT NULL);
CREATE TABLE IF NOT EXISTS sessions (
    id TEXT PRIMARY KEY, team TEXT NOT NULL, start REAL NOT NULL, end REAL NOT NULL);
CREATE TABLE IF NOT EXISTS declarations (
    id TEXT PRIMARY KEY, session TEXT NOT NULL, team TEXT NOT NULL, profile TEXT NOT NULL,
    goal TEXT NOT NULL, scenario TEXT, ts REAL NOT NULL);
CREATE TABLE IF NOT EXISTS scores (
    seq INTEGER PRIMARY KEY AUTOINCREMENT, declaration TEXT NOT NULL UNIQUE, team TEXT NOT NULL,
    goal TEXT NOT NULL, c TEXT NOT NULL, x INTEGER NOT NULL, rules TEXT NOT NULL,
    s TEXT NOT NULL, points INTEGER NOT NULL, valid INTEGER NOT NULL, computed_at REAL NOT NULL);
"""


def _guards() -> str:
    out = []
    for t in LEDGER_TABLES:
        for op in ("UPDATE", "DELETE"):
            out.append(f"CREATE TRIGGER IF NOT EXISTS {t}_no_{op.lower()} BEFORE {op} ON {t} "
                       f"BEGIN SELECT RAISE(ABORT, 'ledger is append-only'); END;")
    return "\n".join(out)


class Store:
    """sqlite connection shared by all request threads; writes go through one lock."""

    def __init__(self, path: str | Path = ":memory:"):
        self.path = str(path)
        self.db = sqlite3.connect(self.path, check_same_thread=False, isolation_level=None)
        self.db.row_factory = sqlite3.Row
        if self.path != ":memory:":
            self.db.execute("PRAGMA journal_mode=WAL")
        self.db.execute("PRAGMA synchronous=NORMAL")
        self.db.executescript(SCHEMA + _guards())
        self._lock = threading.RLock()

    @contextmanager
    def write(self):
        """Serialized write transaction."""
        with self._lock:
            self.db.execute("BEGIN IMMEDIATE")
            try:
                yield self.db
            except BaseException:
                self.db.execute("ROLLBACK")
                raise
            self.db.execute("COMMIT")

    @contextmanager
    def read(self):
        """Snapshot-consistent read."""
        with self._lock:
            self.db.execute("BEGIN")
            try:
                yield self.db
            finally:
                self.db.execute("COMMIT")

    def close(self) -> None:
        self.db.close()
