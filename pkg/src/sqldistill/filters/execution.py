"""Execution-based filtering: run candidate SQL against a provisioned engine.

SQLite-dialect schemas execute for real on embedded in-memory databases;
OracleSQL-dialect schemas fall back to a lint-level executor unless a
real Oracle engine is plugged in. Empty tables are acceptable here:
this stage separates executable from broken SQL, semantic correctness
belongs to the juries.
"""

from __future__ import annotations

import sqlite3
import threading
import time
from typing import Protocol, Sequence

from .. import sqltext
from ..corpus import TableRows
from ..errors import ExecutorUnavailable, LexError, QueryError, QueryTimeout
from ..types import Dialect, SchemaContext, SqlCandidate
from .rules import FilterResult

DEFAULT_QUERY_TIMEOUT_S = 5.0


class QueryExecutor(Protocol):
    """Minimal engine interface shared by filtering and evaluation."""

    returns_rows: bool

    def provision(self, schema: SchemaContext, table_rows: Sequence[TableRows] = ()) -> None:
        ...

    def execute(self, schema_id: str, sql: str) -> list[tuple]:
        ...


def _require_query_statement(sql: str) -> None:
    """Reject anything that is not a single read-only query."""
    try:
        verb = sqltext.statement_verb(sql)
    except LexError as exc:
        raise QueryError(f"lex error: {exc}") from exc
    if verb != "SELECT":
        raise QueryError(f"side-effect statement rejected: {verb or 'empty statement'}")
    if not sqltext.is_single_statement(sql):
        raise QueryError("multiple statements rejected")


class SqliteExecutor:
    """Embedded SQLite engine, provisioned from DDL.

    Every execute() call runs on a fresh in-memory database built from
    the provisioned DDL and fixture rows, so calls are fully isolated and
    safe to issue from parallel workers. A progress handler enforces the
    per-query timeout.
    """

    returns_rows = True

    def __init__(self, timeout_s: float = DEFAULT_QUERY_TIMEOUT_S):
        self.timeout_s = timeout_s
        self._provisioned: dict[str, tuple[SchemaContext, tuple[TableRows, ...]]] = {}
        self._lock = threading.Lock()

    def provision(self, schema: SchemaContext, table_rows: Sequence[TableRows] = ()) -> None:
        if schema.dialect is not Dialect.SQLITE:
            raise ExecutorUnavailable(
                f"SqliteExecutor cannot execute {schema.dialect.value} schemas"
            )
        with self._lock:
            self._provisioned[schema.schema_id] = (schema, tuple(table_rows))

    def is_provisioned(self, schema_id: str) -> bool:
        with self._lock:
            return schema_id in self._provisioned

    def _build(self, schema: SchemaContext, table_rows: tuple[TableRows, ...]) -> sqlite3.Connection:
        conn = sqlite3.connect(":memory:")
        try:
            for statement in schema.ddl_statements:
                conn.execute(statement)
            for table in table_rows:
                if not table.rows:
                    continue
                columns = list(table.rows[0].keys())
                placeholders = ", ".join("?" for _ in columns)
                conn.executemany(
                    f"INSERT INTO {table.table} ({', '.join(columns)}) VALUES ({placeholders})",
                    [tuple(row.get(c) for c in columns) for row in table.rows],
                )
            conn.commit()
        except sqlite3.Error as exc:
            conn.close()
            raise ExecutorUnavailable(
                f"failed to provision schema {schema.schema_id!r}: {exc}"
            ) from exc
        return conn

    def execute(self, schema_id: str, sql: str) -> list[tuple]:
        with self._lock:
            if schema_id not in self._provisioned:
                raise ExecutorUnavailable(f"schema {schema_id!r} is not provisioned")
            schema, table_rows = self._provisioned[schema_id]
        _require_query_statement(sql)
        conn = self._build(schema, table_rows)
        deadline = time.monotonic() + self.timeout_s
        conn.set_progress_handler(lambda: 1 if time.monotonic() > deadline else 0, 1000)
        try:
            cursor = conn.execute(sql)
            return cursor.fetchall()
        except sqlite3.OperationalError as exc:
            if "interrupted" in str(exc) and time.monotonic() >= deadline:
                raise QueryTimeout(f"query exceeded {self.timeout_s:.1f}s timeout") from exc
            raise QueryError(str(exc)) from exc
        except sqlite3.Error as exc:
            raise QueryError(str(exc)) from exc
        finally:
            conn.close()


class OracleLintExecutor:
    """Lex and structure level validation standing in for an Oracle engine.

    Checks that a candidate is a single SELECT, lexes cleanly, has
    balanced parentheses, and references only tables present in the
    provisioned DDL. Returns no rows; result comparison needs a real
    engine behind the same interface.
    """

    returns_rows = False

    def __init__(self, timeout_s: float = DEFAULT_QUERY_TIMEOUT_S):
        self.timeout_s = timeout_s
        self._tables: dict[str, set[str]] = {}
        self._lock = threading.Lock()

    def provision(self, schema: SchemaContext, table_rows: Sequence[TableRows] = ()) -> None:
        with self._lock:
            self._tables[schema.schema_id] = {t.lower() for t in schema.table_names()}

    def is_provisioned(self, schema_id: str) -> bool:
        with self._lock:
            return schema_id in self._tables

    def execute(self, schema_id: str, sql: str) -> list[tuple]:
        with self._lock:
            if schema_id not in self._tables:
                raise ExecutorUnavailable(f"schema {schema_id!r} is not provisioned")
            known = self._tables[schema_id]
        _require_query_statement(sql)
        try:
            if not sqltext.parens_balanced(sql):
                raise QueryError("unbalanced parentheses")
            unknown = sqltext.unknown_tables(sql, known)
        except LexError as exc:
            raise QueryError(f"lex error: {exc}") from exc
        if unknown:
            raise QueryError(f"no such table: {', '.join(sorted(unknown))}")
        return []


def make_executor(dialect: Dialect, timeout_s: float = DEFAULT_QUERY_TIMEOUT_S) -> QueryExecutor:
    """Default executor for a dialect when none is configured."""
    if dialect is Dialect.SQLITE:
        return SqliteExecutor(timeout_s=timeout_s)
    return OracleLintExecutor(timeout_s=timeout_s)


def execution_filter(
    candidate: SqlCandidate | str,
    schema: SchemaContext,
    executor: QueryExecutor,
    fixture_rows: Sequence[TableRows] = (),
) -> FilterResult:
    """Pass iff the candidate executes (or lints) without an engine error.

    Side-effect statements are rejected before any engine call; timeouts
    fail the candidate with a reason. ExecutorUnavailable propagates as a
    pipeline error rather than failing the candidate.
    """
    sql = candidate if isinstance(candidate, str) else candidate.sql_text
    if hasattr(executor, "is_provisioned") and not executor.is_provisioned(schema.schema_id):
        executor.provision(schema, fixture_rows)
    try:
        _require_query_statement(sql)
        executor.execute(schema.schema_id, sql)
    except QueryTimeout as exc:
        return FilterResult(passed=False, reasons=(str(exc),))
    except QueryError as exc:
        return FilterResult(passed=False, reasons=(str(exc),))
    return FilterResult(passed=True)
