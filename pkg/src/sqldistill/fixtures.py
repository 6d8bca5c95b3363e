"""Packaged fixture data: small populated schemas for offline evaluation."""

from __future__ import annotations

import json
from importlib import resources

from .corpus import Corpus, TableRows
from .types import Dialect, SchemaContext, Split


def _read_packaged_jsonl(relative: str) -> list[dict]:
    text = resources.files("sqldistill").joinpath(relative).read_text(encoding="utf-8")
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def eval_fixture_corpus() -> Corpus:
    """The shipped evaluation corpus: populated Spider-style test schemas."""
    corpus = Corpus()
    for record in _read_packaged_jsonl("data/fixtures/eval/schemas.jsonl"):
        corpus.schemas.append(
            SchemaContext(
                schema_id=record["schema_id"],
                dialect=Dialect(record["dialect"]),
                ddl_statements=tuple(record["ddl"]),
                split=Split(record["split"]),
            )
        )
    for record in _read_packaged_jsonl("data/fixtures/eval/rows.jsonl"):
        corpus.fixture_rows.append(
            TableRows(
                schema_id=record["schema_id"],
                table=record["table"],
                rows=tuple(record["rows"]),
            )
        )
    return corpus


def eval_fixture_queries() -> list[tuple[str, str]]:
    """(schema_id, gold sql) pairs known to execute on the fixture corpus."""
    return [
        (record["schema_id"], record["sql"])
        for record in _read_packaged_jsonl("data/fixtures/eval/queries.jsonl")
    ]
