"""Domain types shared by every pipeline stage.

Corpus-level objects (schemas, reference sets, scenario configs) are
immutable after load and safe to share across workers. Mutable lifecycle
state (example status, candidate traces) only changes through the
orchestrator's single-writer store.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from . import sqltext
from .errors import InvariantError

MAX_REFERENCE_EXAMPLES = 100

# Delimits teacher-only guidance in generation prompts; stripped before
# the prompt enters the training set.
INSTRUCTION_BEGIN = "-- [instructions:begin]"
INSTRUCTION_END = "-- [instructions:end]"


class Dialect(str, enum.Enum):
    ORACLE = "OracleSQL"
    SQLITE = "SQLite"


class Split(str, enum.Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


class Setting(str, enum.Enum):
    """Customization settings, from reference-examples-only to everything."""

    B = "B"            # NL reference examples only
    C = "C"            # B + custom instructions
    D = "D"            # reference examples carrying gold SQL
    E = "E"            # C + error feedback
    A_FULL = "A_Full"  # D + C + E combined


class ExampleOrigin(str, enum.Enum):
    GENERATED = "generated"
    REFERENCE = "reference"


class ExampleStatus(str, enum.Enum):
    CANDIDATE = "candidate"
    DISCARDED = "discarded"
    ACCEPTED = "accepted"
    IRRELEVANT = "irrelevant"


TERMINAL_STATUSES = (ExampleStatus.DISCARDED, ExampleStatus.ACCEPTED, ExampleStatus.IRRELEVANT)

# Filter stages in mandatory pipeline order (cheap first).
FILTER_STAGES = ("pattern", "execution", "quality", "relevance")


@dataclass(frozen=True)
class SchemaContext:
    """A database schema: named CREATE TABLE DDL plus its split assignment."""

    schema_id: str
    dialect: Dialect
    ddl_statements: tuple[str, ...]
    split: Split

    def __post_init__(self):
        if not self.schema_id:
            raise InvariantError("schema_id must be non-empty")
        if not self.ddl_statements:
            raise InvariantError(f"schema {self.schema_id!r}: ddl_statements must be non-empty")
        object.__setattr__(self, "ddl_statements", tuple(self.ddl_statements))
        for stmt in self.ddl_statements:
            if not sqltext.is_create_table(stmt):
                raise InvariantError(
                    f"schema {self.schema_id!r}: statement does not lex as CREATE TABLE: "
                    f"{stmt[:60]!r}"
                )

    def ddl_text(self) -> str:
        """DDL statements joined with single-space separator lines, as rendered in prompts."""
        return "\n \n".join(s.rstrip("\n") for s in self.ddl_statements)

    def table_names(self) -> set[str]:
        names = {_create_table_name(stmt) for stmt in self.ddl_statements}
        return {n for n in names if n}


_TABLE_NAME_RE = re.compile(
    r'\bTABLE\b\s+(?:IF\s+NOT\s+EXISTS\s+)?([A-Za-z_][\w$#]*|"(?:[^"]|"")+")',
    re.IGNORECASE,
)


def _create_table_name(ddl: str) -> str:
    masked = sqltext.mask_sql(ddl, keep_quoted_idents=True)
    m = _TABLE_NAME_RE.search(masked)
    if not m:
        return ""
    name = m.group(1)
    if name.startswith('"'):
        return name[1:-1].replace('""', '"').lower()
    return name.lower()


@dataclass(frozen=True)
class ReferenceExample:
    nl: str
    sql: str | None = None

    def __post_init__(self):
        if not self.nl.strip():
            raise InvariantError("reference NL string must be non-empty after trimming")


@dataclass(frozen=True)
class ReferenceSet:
    """Customer-provided NL queries (optionally paired with gold SQL)."""

    examples: tuple[ReferenceExample, ...]
    use_case_label: str

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if not 1 <= len(self.examples) <= MAX_REFERENCE_EXAMPLES:
            raise InvariantError(
                f"reference set {self.use_case_label!r} must hold between 1 and "
                f"{MAX_REFERENCE_EXAMPLES} examples, got {len(self.examples)}"
            )

    def nl_strings(self) -> list[str]:
        return [ex.nl for ex in self.examples]

    def gold_pairs(self) -> list[tuple[str, str]]:
        return [(ex.nl, ex.sql) for ex in self.examples if ex.sql]

    def has_gold_sql(self) -> bool:
        return all(ex.sql for ex in self.examples)


@dataclass(frozen=True)
class ErrorCase:
    """An unacceptable model error used to steer targeted generation."""

    nl_query: str
    wrong_sql: str
    schema_id: str
    error_tag: str = ""

    def __post_init__(self):
        if not self.wrong_sql.strip():
            raise InvariantError("error case wrong_sql must be non-empty")


@dataclass(frozen=True)
class ScenarioConfig:
    setting: Setting
    reference_set: ReferenceSet
    custom_instructions: str | None = None
    error_feedback: tuple[ErrorCase, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "error_feedback", tuple(self.error_feedback))
        s = self.setting
        if s in (Setting.C, Setting.E, Setting.A_FULL) and not self.custom_instructions:
            raise InvariantError(f"setting {s.value} requires custom_instructions")
        if s in (Setting.E, Setting.A_FULL) and not self.error_feedback:
            raise InvariantError(f"setting {s.value} requires error_feedback")
        if s in (Setting.D, Setting.A_FULL) and not self.reference_set.has_gold_sql():
            raise InvariantError(
                f"setting {s.value} requires every reference example to carry gold SQL"
            )

    @property
    def uses_instructions(self) -> bool:
        return self.setting in (Setting.C, Setting.E, Setting.A_FULL)

    @property
    def uses_gold_demonstrations(self) -> bool:
        return self.setting in (Setting.D, Setting.A_FULL)

    @property
    def uses_error_feedback(self) -> bool:
        return self.setting in (Setting.E, Setting.A_FULL)


@dataclass
class SynthesisExample:
    """One NL query bound to a schema, with its lifecycle status."""

    example_id: str
    nl_query: str
    schema_id: str
    origin: ExampleOrigin
    generator_model: str
    round: int = 0
    status: ExampleStatus = ExampleStatus.CANDIDATE

    def __post_init__(self):
        if self.round < 0:
            raise InvariantError("round must be >= 0")
        if self.origin is ExampleOrigin.GENERATED and not self.generator_model:
            raise InvariantError(f"example {self.example_id!r}: generated examples record their generator model")


class JuryKind(str, enum.Enum):
    QUALITY = "quality"
    RELEVANCE = "relevance"


class RelevanceVote(str, enum.Enum):
    RELEVANT = "Relevant"
    IRRELEVANT = "Irrelevant"


# Criteria rated by quality jurors, in prompt order.
STAR_CRITERIA = ("sql_correctness", "compliance", "nl_quality")


@dataclass(frozen=True)
class JuryVerdict:
    """One juror's parsed star scores or relevance vote for one candidate."""

    juror_model: str
    kind: JuryKind
    stars: dict[str, int] | None = None
    relevance: RelevanceVote | None = None
    raw_response: str = ""
    valid: bool = True

    def __post_init__(self):
        if not self.valid:
            return
        if self.kind is JuryKind.QUALITY:
            if self.stars is None or set(self.stars) != set(STAR_CRITERIA):
                raise InvariantError("valid quality verdicts carry all three star criteria")
            for name, value in self.stars.items():
                if not 1 <= value <= 5:
                    raise InvariantError(f"star value for {name} out of [1,5]: {value}")
        else:
            if self.relevance is None:
                raise InvariantError("valid relevance verdicts carry a vote")


@dataclass
class FilterTraceEntry:
    stage: str
    passed: bool
    reason: str = ""


@dataclass
class SqlCandidate:
    """A generated SQL completion for one example, with its filter history."""

    example_id: str
    sql_text: str
    generator_model: str
    description: str | None = None
    verdicts: list[JuryVerdict] = field(default_factory=list)
    filter_trace: list[FilterTraceEntry] = field(default_factory=list)

    def record_stage(self, stage: str, passed: bool, reason: str = "") -> None:
        """Append a trace entry, enforcing pipeline stage order."""
        if stage not in FILTER_STAGES:
            raise InvariantError(f"unknown filter stage {stage!r}")
        if self.filter_trace:
            last = self.filter_trace[-1]
            if not last.passed:
                raise InvariantError(
                    f"candidate already failed at stage {last.stage!r}; no later stages may run"
                )
            if FILTER_STAGES.index(stage) <= FILTER_STAGES.index(last.stage):
                raise InvariantError(
                    f"stage {stage!r} recorded out of order after {last.stage!r}"
                )
        self.filter_trace.append(FilterTraceEntry(stage, passed, reason))

    def failed_stage(self) -> str | None:
        for entry in self.filter_trace:
            if not entry.passed:
                return entry.stage
        return None

    def passed_all(self) -> bool:
        return (
            len(self.filter_trace) == len(FILTER_STAGES)
            and all(entry.passed for entry in self.filter_trace)
        )


class SftSource(str, enum.Enum):
    SYNTHETIC = "synthetic"
    BOOTSTRAP = "bootstrap"


@dataclass(frozen=True)
class SftRecord:
    """Final training pair: post-processed prompt and SQL completion."""

    prompt: str
    completion: str
    source: SftSource
    task_tag: str

    def __post_init__(self):
        if INSTRUCTION_BEGIN in self.prompt or INSTRUCTION_END in self.prompt:
            raise InvariantError("SFT prompt still contains an instruction marker")
        # Completion must at least lex as SQL; a full parse is the filter
        # pipeline's job, not the record type's.
        sqltext.mask_sql(self.completion)
        if not self.completion.strip():
            raise InvariantError("SFT completion must be non-empty")
