"""Corpus persistence: line-delimited JSON records plus a scenario config.

Layout of a corpus directory::

    schemas/*.jsonl      {"schema_id", "dialect", "ddl": [...], "split"}
    references/*.jsonl   {"nl", "sql"?}           one reference set per file
    errors/*.jsonl       {"nl_query", "wrong_sql", "schema_id", "error_tag"?}
    data/*.jsonl         {"schema_id", "table", "rows": [{...}]}   optional fixtures
    bootstrap/*.jsonl    {"prompt", "completion", "task_tag"?}     optional
    scenario.toml        setting / instruction_file / seed / mix_ratio / ...

One record per line, UTF-8. Reference set labels come from the file stem.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InvariantError, LeakageError, ParseError
from .types import (
    Dialect,
    ErrorCase,
    ReferenceExample,
    ReferenceSet,
    ScenarioConfig,
    SchemaContext,
    Setting,
    SftRecord,
    SftSource,
    Split,
)

SCENARIO_FILE = "scenario.toml"

# Split shape used by the original full-scale experiments; reported for
# documentation in disjointness reports, never enforced.
REFERENCE_SPLIT_SHAPE = {"train": 199, "dev": 10, "test": 31}


@dataclass(frozen=True)
class TableRows:
    """Fixture rows for one table of one schema."""

    schema_id: str
    table: str
    rows: tuple[dict[str, Any], ...]


@dataclass(frozen=True)
class ScenarioSettings:
    """Raw keys read from scenario.toml, before references/errors are bound."""

    setting: Setting
    instruction_file: str | None = None
    seed: int = 0
    mix_ratio: float = 0.1
    rounds: int = 2
    per_schema_target: int = 50
    bootstrap_file: str | None = None


@dataclass
class Corpus:
    schemas: list[SchemaContext] = field(default_factory=list)
    references: list[ReferenceSet] = field(default_factory=list)
    errors: list[ErrorCase] = field(default_factory=list)
    fixture_rows: list[TableRows] = field(default_factory=list)
    scenario_settings: ScenarioSettings | None = None
    custom_instructions: str | None = None
    bootstrap: list[SftRecord] = field(default_factory=list)

    def schema_ids(self) -> set[str]:
        return {s.schema_id for s in self.schemas}

    def get_schema(self, schema_id: str) -> SchemaContext:
        for schema in self.schemas:
            if schema.schema_id == schema_id:
                return schema
        raise KeyError(schema_id)

    def schemas_in_split(self, split: Split) -> list[SchemaContext]:
        return [s for s in self.schemas if s.split is split]

    def rows_for(self, schema_id: str) -> list[TableRows]:
        return [t for t in self.fixture_rows if t.schema_id == schema_id]

    def scenario(self) -> ScenarioConfig:
        """Bind scenario.toml settings to the corpus reference set and errors."""
        if self.scenario_settings is None:
            raise InvariantError("corpus has no scenario.toml")
        if len(self.references) != 1:
            raise InvariantError(
                f"a scenario needs exactly one reference set, corpus has {len(self.references)}"
            )
        return ScenarioConfig(
            setting=self.scenario_settings.setting,
            reference_set=self.references[0],
            custom_instructions=self.custom_instructions,
            error_feedback=tuple(self.errors),
        )


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=lineno) from exc
            if not isinstance(record, dict):
                raise ParseError("record is not an object", path=str(path), line=lineno)
            yield lineno, record


def _require(record: dict, key: str, path: Path, lineno: int) -> Any:
    if key not in record:
        raise ParseError(f"missing key {key!r}", path=str(path), line=lineno)
    return record[key]


def _load_schemas(directory: Path) -> list[SchemaContext]:
    schemas: list[SchemaContext] = []
    seen: set[str] = set()
    for path in sorted(directory.glob("*.jsonl")):
        for lineno, record in _iter_jsonl(path):
            schema_id = _require(record, "schema_id", path, lineno)
            if schema_id in seen:
                raise InvariantError(f"duplicate schema_id {schema_id!r} in corpus")
            seen.add(schema_id)
            try:
                schema = SchemaContext(
                    schema_id=schema_id,
                    dialect=Dialect(_require(record, "dialect", path, lineno)),
                    ddl_statements=tuple(_require(record, "ddl", path, lineno)),
                    split=Split(_require(record, "split", path, lineno)),
                )
            except ValueError as exc:
                raise ParseError(str(exc), path=str(path), line=lineno) from exc
            schemas.append(schema)
    return schemas


def _load_references(directory: Path) -> list[ReferenceSet]:
    sets: list[ReferenceSet] = []
    for path in sorted(directory.glob("*.jsonl")):
        examples = []
        for lineno, record in _iter_jsonl(path):
            examples.append(
                ReferenceExample(nl=_require(record, "nl", path, lineno), sql=record.get("sql"))
            )
        sets.append(ReferenceSet(examples=tuple(examples), use_case_label=path.stem))
    return sets


def _load_errors(directory: Path) -> list[ErrorCase]:
    cases = []
    for path in sorted(directory.glob("*.jsonl")):
        for lineno, record in _iter_jsonl(path):
            cases.append(
                ErrorCase(
                    nl_query=_require(record, "nl_query", path, lineno),
                    wrong_sql=_require(record, "wrong_sql", path, lineno),
                    schema_id=_require(record, "schema_id", path, lineno),
                    error_tag=record.get("error_tag", ""),
                )
            )
    return cases


def _load_fixture_rows(directory: Path) -> list[TableRows]:
    out = []
    for path in sorted(directory.glob("*.jsonl")):
        for lineno, record in _iter_jsonl(path):
            out.append(
                TableRows(
                    schema_id=_require(record, "schema_id", path, lineno),
                    table=_require(record, "table", path, lineno),
                    rows=tuple(_require(record, "rows", path, lineno)),
                )
            )
    return out


def _load_bootstrap(directory: Path) -> list[SftRecord]:
    records = []
    for path in sorted(directory.glob("*.jsonl")):
        records.extend(read_sft_records(path))
    return records


def _load_scenario_settings(path: Path) -> ScenarioSettings:
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"invalid TOML: {exc}", path=str(path)) from exc
    try:
        setting = Setting(data["setting"])
    except KeyError:
        raise ParseError("missing key 'setting'", path=str(path)) from None
    except ValueError as exc:
        raise ParseError(str(exc), path=str(path)) from None
    mix_ratio = float(data.get("mix_ratio", 0.1))
    if not 0 < mix_ratio <= 1:
        raise InvariantError(f"mix_ratio must be in (0, 1], got {mix_ratio}")
    return ScenarioSettings(
        setting=setting,
        instruction_file=data.get("instruction_file"),
        seed=int(data.get("seed", 0)),
        mix_ratio=mix_ratio,
        rounds=int(data.get("rounds", 2)),
        per_schema_target=int(data.get("per_schema_target", 50)),
        bootstrap_file=data.get("bootstrap_file"),
    )


def load_corpus(path: str | Path) -> Corpus:
    """Load a corpus directory, enforcing all domain invariants.

    Raises ParseError for malformed records (with file and line number)
    and InvariantError for violated invariants such as duplicate schema
    ids or oversized reference sets.
    """
    root = Path(path)
    if not root.is_dir():
        raise ParseError(f"corpus path does not exist or is not a directory: {root}")

    corpus = Corpus()
    if (root / "schemas").is_dir():
        corpus.schemas = _load_schemas(root / "schemas")
    if (root / "references").is_dir():
        corpus.references = _load_references(root / "references")
    if (root / "errors").is_dir():
        corpus.errors = _load_errors(root / "errors")
    if (root / "data").is_dir():
        corpus.fixture_rows = _load_fixture_rows(root / "data")
    if (root / "bootstrap").is_dir():
        corpus.bootstrap = _load_bootstrap(root / "bootstrap")

    scenario_path = root / SCENARIO_FILE
    if scenario_path.is_file():
        corpus.scenario_settings = _load_scenario_settings(scenario_path)
        instruction_file = corpus.scenario_settings.instruction_file
        if instruction_file:
            instruction_path = root / instruction_file
            if not instruction_path.is_file():
                raise ParseError(f"instruction_file not found: {instruction_path}")
            corpus.custom_instructions = instruction_path.read_text(encoding="utf-8")
        if corpus.scenario_settings.bootstrap_file:
            bootstrap_path = root / corpus.scenario_settings.bootstrap_file
            if not bootstrap_path.is_file():
                raise ParseError(f"bootstrap_file not found: {bootstrap_path}")
            corpus.bootstrap = read_sft_records(bootstrap_path)

    known_ids = corpus.schema_ids()
    for case in corpus.errors:
        if case.schema_id not in known_ids:
            raise InvariantError(
                f"error case references unknown schema_id {case.schema_id!r}"
            )
    for table_rows in corpus.fixture_rows:
        if table_rows.schema_id not in known_ids:
            raise InvariantError(
                f"fixture rows reference unknown schema_id {table_rows.schema_id!r}"
            )
    return corpus


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Persist a corpus so that load_corpus round-trips it structurally."""
    root = Path(path)
    (root / "schemas").mkdir(parents=True, exist_ok=True)
    with (root / "schemas" / "schemas.jsonl").open("w", encoding="utf-8") as fh:
        for schema in sorted(corpus.schemas, key=lambda s: s.schema_id):
            fh.write(
                dump_record(
                    {
                        "schema_id": schema.schema_id,
                        "dialect": schema.dialect.value,
                        "ddl": list(schema.ddl_statements),
                        "split": schema.split.value,
                    }
                )
            )
    if corpus.references:
        (root / "references").mkdir(exist_ok=True)
        for ref_set in corpus.references:
            with (root / "references" / f"{ref_set.use_case_label}.jsonl").open(
                "w", encoding="utf-8"
            ) as fh:
                for example in ref_set.examples:
                    record: dict[str, Any] = {"nl": example.nl}
                    if example.sql is not None:
                        record["sql"] = example.sql
                    fh.write(dump_record(record))
    if corpus.errors:
        (root / "errors").mkdir(exist_ok=True)
        with (root / "errors" / "errors.jsonl").open("w", encoding="utf-8") as fh:
            for case in corpus.errors:
                fh.write(
                    dump_record(
                        {
                            "nl_query": case.nl_query,
                            "wrong_sql": case.wrong_sql,
                            "schema_id": case.schema_id,
                            "error_tag": case.error_tag,
                        }
                    )
                )
    if corpus.fixture_rows:
        (root / "data").mkdir(exist_ok=True)
        with (root / "data" / "rows.jsonl").open("w", encoding="utf-8") as fh:
            for table_rows in corpus.fixture_rows:
                fh.write(
                    dump_record(
                        {
                            "schema_id": table_rows.schema_id,
                            "table": table_rows.table,
                            "rows": list(table_rows.rows),
                        }
                    )
                )


@dataclass(frozen=True)
class DisjointnessReport:
    counts: dict[str, int]
    passed: bool
    offending: tuple[str, ...] = ()
    # Documented target shape for full-scale corpora.
    reference_shape: dict[str, int] = field(default_factory=lambda: dict(REFERENCE_SPLIT_SHAPE))


def validate_split_disjointness(
    corpus: "Corpus | list[SchemaContext]", strict: bool = True
) -> DisjointnessReport:
    """Check that no schema_id appears in more than one split.

    load_corpus rejects duplicate ids outright; this gate exists for
    merged or hand-assembled corpora, where a leak silently invalidates
    every downstream evaluation. With strict=True a violation raises
    LeakageError naming the offending ids.
    """
    contexts = corpus.schemas if isinstance(corpus, Corpus) else corpus
    seen: dict[str, Split] = {}
    offending: set[str] = set()
    counts = {split.value: 0 for split in Split}
    for schema in contexts:
        counts[schema.split.value] += 1
        previous = seen.get(schema.schema_id)
        if previous is not None and previous is not schema.split:
            offending.add(schema.schema_id)
        seen[schema.schema_id] = schema.split
    report = DisjointnessReport(
        counts=counts, passed=not offending, offending=tuple(sorted(offending))
    )
    if strict and offending:
        raise LeakageError(sorted(offending))
    return report


def dump_record(record: dict) -> str:
    """Canonical one-line JSON encoding; byte-stable under a fixed seed."""
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"


def read_sft_records(path: str | Path) -> list[SftRecord]:
    records = []
    for lineno, record in _iter_jsonl(Path(path)):
        records.append(
            SftRecord(
                prompt=_require(record, "prompt", Path(path), lineno),
                completion=_require(record, "completion", Path(path), lineno),
                source=SftSource(record.get("source", "bootstrap")),
                task_tag=record.get("task_tag", ""),
            )
        )
    return records


def write_sft_records(records: list[SftRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(
                dump_record(
                    {
                        "prompt": record.prompt,
                        "completion": record.completion,
                        "source": record.source.value,
                        "task_tag": record.task_tag,
                    }
                )
            )
