"""Execution-accuracy evaluation: compare predicted SQL against gold on live data.

A pair scores 1 iff both queries execute and their result sets compare
equal under the configured semantics: multiset of rows by default,
ordered comparison only when the gold query carries a top-level ORDER BY,
column order positional, integer-valued floats equal to integers, and
NULL equal to NULL.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from . import sqltext
from .corpus import Corpus, dump_record
from .errors import (
    ExecutorUnavailable,
    GoldExecutionError,
    InvariantError,
    ParseError,
    QueryError,
)
from .filters.execution import QueryExecutor


@dataclass(frozen=True)
class ComparisonConfig:
    numeric_normalization: bool = True
    null_equals_null: bool = True
    order_sensitive_on_gold_order_by: bool = True
    float_decimals: int = 9


@dataclass(frozen=True)
class EvalPair:
    gold: str
    predicted: str
    schema_id: str
    task_tag: str = ""


@dataclass
class PairOutcome:
    index: int
    schema_id: str
    task_tag: str
    score: int
    detail: str = ""


@dataclass
class EvalReport:
    accuracy: float
    outcomes: list[PairOutcome] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n": len(self.outcomes),
            "outcomes": [
                {
                    "index": o.index,
                    "schema_id": o.schema_id,
                    "task_tag": o.task_tag,
                    "score": o.score,
                    "detail": o.detail,
                }
                for o in self.outcomes
            ],
        }


_NULL = object()


def _normalize_cell(value, config: ComparisonConfig):
    if value is None:
        return _NULL if config.null_equals_null else None
    if config.numeric_normalization:
        if isinstance(value, bool):
            return int(value)
        if isinstance(value, float):
            if value.is_integer():
                return int(value)
            return round(value, config.float_decimals)
    return value


def _normalize_rows(rows: list[tuple], config: ComparisonConfig) -> list[tuple]:
    return [tuple(_normalize_cell(cell, config) for cell in row) for row in rows]


def results_match(
    gold_rows: list[tuple],
    predicted_rows: list[tuple],
    ordered: bool,
    config: ComparisonConfig = ComparisonConfig(),
) -> bool:
    gold = _normalize_rows(gold_rows, config)
    predicted = _normalize_rows(predicted_rows, config)
    if ordered:
        return gold == predicted
    try:
        return Counter(gold) == Counter(predicted)
    except TypeError:
        # unhashable cells (rare blob types): fall back to sorted-by-repr
        key = lambda row: repr(row)  # noqa: E731
        return sorted(gold, key=key) == sorted(predicted, key=key)


def provision_for_eval(executor: QueryExecutor, corpus: Corpus, schema_ids: set[str]) -> None:
    for schema_id in sorted(schema_ids):
        try:
            schema = corpus.get_schema(schema_id)
        except KeyError:
            raise InvariantError(
                f"evaluation pairs reference unknown schema_id {schema_id!r}"
            ) from None
        executor.provision(schema, corpus.rows_for(schema_id))


def execution_accuracy(
    pairs: list[EvalPair],
    executor: QueryExecutor,
    comparison: ComparisonConfig = ComparisonConfig(),
    workers: int = 4,
) -> EvalReport:
    """Score every (gold, predicted) pair and return mean accuracy.

    A non-executable prediction scores 0 and is counted; a non-executable
    gold query is a broken fixture and raises GoldExecutionError naming
    the pair.
    """
    if not executor.returns_rows:
        raise ExecutorUnavailable(
            "result comparison requires a row-returning executor; "
            "the lint-level executor cannot score pairs"
        )

    def _score(index: int, pair: EvalPair) -> PairOutcome:
        try:
            gold_rows = executor.execute(pair.schema_id, pair.gold)
        except QueryError as exc:
            raise GoldExecutionError(
                f"gold query for pair {index} (schema {pair.schema_id!r}) failed: {exc}"
            ) from exc
        try:
            predicted_rows = executor.execute(pair.schema_id, pair.predicted)
        except QueryError as exc:
            return PairOutcome(index, pair.schema_id, pair.task_tag, 0, f"predicted failed: {exc}")
        ordered = comparison.order_sensitive_on_gold_order_by and sqltext.has_top_level_order_by(
            pair.gold
        )
        matched = results_match(gold_rows, predicted_rows, ordered, comparison)
        return PairOutcome(
            index,
            pair.schema_id,
            pair.task_tag,
            1 if matched else 0,
            "" if matched else "result sets differ",
        )

    outcomes: list[PairOutcome] = []
    if pairs:
        with ThreadPoolExecutor(max_workers=max(1, min(workers, len(pairs)))) as pool:
            futures = [pool.submit(_score, i, pair) for i, pair in enumerate(pairs)]
            outcomes = [f.result() for f in futures]
    accuracy = sum(o.score for o in outcomes) / len(outcomes) if outcomes else 0.0
    return EvalReport(accuracy=accuracy, outcomes=outcomes)


@dataclass(frozen=True)
class GroupRow:
    group: str
    n: int
    accuracy: float


def grouped_report(outcomes: list[PairOutcome]) -> list[GroupRow]:
    """Per-task_tag accuracy and counts, in stable (sorted) group order."""
    groups: dict[str, list[int]] = {}
    for outcome in outcomes:
        groups.setdefault(outcome.task_tag, []).append(outcome.score)
    return [
        GroupRow(group=tag, n=len(scores), accuracy=sum(scores) / len(scores))
        for tag, scores in sorted(groups.items())
    ]


def render_group_table(rows: list[GroupRow]) -> str:
    if not rows:
        return "(no outcomes)"
    width = max(len("group"), *(len(r.group) for r in rows))
    lines = [f"{'group'.ljust(width)}  {'n':>6}  accuracy"]
    for row in rows:
        lines.append(f"{row.group.ljust(width)}  {row.n:>6}  {row.accuracy:8.4f}")
    return "\n".join(lines)


def read_eval_pairs(path: str | Path) -> list[EvalPair]:
    """Line records of (gold, predicted, schema_id, task_tag)."""
    pairs = []
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=lineno) from exc
            for key in ("gold", "predicted", "schema_id"):
                if key not in record:
                    raise ParseError(f"missing key {key!r}", path=str(path), line=lineno)
            pairs.append(
                EvalPair(
                    gold=record["gold"],
                    predicted=record["predicted"],
                    schema_id=record["schema_id"],
                    task_tag=record.get("task_tag", ""),
                )
            )
    return pairs


def write_eval_report(report: EvalReport, rows: list[GroupRow], path: str | Path) -> None:
    payload = report.as_dict()
    payload["groups"] = [
        {"group": r.group, "n": r.n, "accuracy": r.accuracy} for r in rows
    ]
    Path(path).write_text(dump_record(payload), encoding="utf-8")
