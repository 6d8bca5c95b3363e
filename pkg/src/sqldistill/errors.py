"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class SqldistillError(Exception):
    """Base class for every error raised by this package."""


# --- corpus / config --------------------------------------------------------

class ParseError(SqldistillError):
    """A persisted record could not be parsed."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = f" ({path}" + (f":{line}" if line is not None else "") + ")"
        super().__init__(message + loc)
        self.path = path
        self.line = line


class InvariantError(SqldistillError):
    """A domain invariant was violated."""


class LeakageError(SqldistillError):
    """One or more schema ids appear in more than one split."""

    def __init__(self, schema_ids: list[str]):
        super().__init__(f"schema ids present in multiple splits: {sorted(schema_ids)}")
        self.schema_ids = sorted(schema_ids)


class EmptyInputError(SqldistillError):
    """An operation received an empty input it cannot work with."""


# --- gateway ----------------------------------------------------------------

class BackendUnavailable(SqldistillError):
    """A backend kept failing after all retry attempts."""


class AllBackendsFailed(SqldistillError):
    """No backend in an ensemble produced a completion."""


class PromptTooLong(SqldistillError):
    """Prompt exceeds the backend's character budget."""


class MalformedResponse(SqldistillError):
    """A backend returned a response the client cannot interpret."""


# --- synthesis --------------------------------------------------------------

class KTooLarge(SqldistillError):
    """Requested sample size exceeds the reference set size."""


class BudgetExceeded(SqldistillError):
    """A rendered prompt would exceed the character budget."""


class NoParsableExamples(SqldistillError):
    """A completion contained no extractable generated examples."""


class NoSqlFound(SqldistillError):
    """A completion contained no extractable SQL statement."""


class DoubleTransition(SqldistillError):
    """A terminal example status was assigned twice."""


class MarkerMismatch(SqldistillError):
    """Instruction block markers in a prompt are unbalanced."""


# --- filtering / execution --------------------------------------------------

class LexError(SqldistillError):
    """SQL text could not be tokenized (e.g. unterminated literal)."""


class QueryError(SqldistillError):
    """The engine rejected a query (candidate-level failure, not fatal)."""


class QueryTimeout(QueryError):
    """Query execution exceeded the configured timeout."""


class ExecutorUnavailable(SqldistillError):
    """The execution backend itself is unusable (pipeline-level failure)."""


class NoVerdicts(SqldistillError):
    """Consensus was requested over an empty verdict list."""


# --- evaluation / orchestration ---------------------------------------------

class GoldExecutionError(SqldistillError):
    """A gold query failed to execute; the evaluation fixture is broken."""


class MissingArtifacts(SqldistillError):
    """A run directory lacks the artifacts required for the operation."""
