"""SQL synthesis: instruction-conditioned prompts, extraction, prompt stripping.

Teacher-only guidance (custom instruction blocks, gold NL/SQL
demonstrations) is wrapped in visible comment-style marker lines inside
the generation prompt; postprocess_prompt removes everything between the
markers so the training prompt keeps only schema context and question.
"""

from __future__ import annotations

import re

from . import sqltext
from .errors import BudgetExceeded, InvariantError, LexError, MarkerMismatch, NoSqlFound
from .gateway import DEFAULT_CHAR_BUDGET, BackendSpec, LlmGateway, SamplingParams
from .templates import SQL_GENERATE, load_template, render
from .types import (
    INSTRUCTION_BEGIN,
    INSTRUCTION_END,
    Dialect,
    SchemaContext,
    SqlCandidate,
    SynthesisExample,
)

_DIALECT_DIRECTIVES = {
    Dialect.ORACLE: "Oracle SQL dialect, compatible with the latest version of Oracle Database",
    Dialect.SQLITE: "SQLite dialect, compatible with the latest version of SQLite",
}

_FENCE_RE = re.compile(r"```(?:sql)?[ \t]*\n(.*?)```", re.DOTALL | re.IGNORECASE)
_SQL_START_RE = re.compile(r"\b(SELECT|WITH)\b", re.IGNORECASE)
_DIRECTIVE_TEXT = "Write a SQL query in"


def dialect_directive(dialect: Dialect) -> str:
    return _DIALECT_DIRECTIVES[dialect]


def demonstration_block(pairs: list[tuple[str, str]], dialect: Dialect) -> str:
    """Gold NL/SQL pairs rendered as in-prompt demonstrations."""
    label = "Oracle SQL" if dialect is Dialect.ORACLE else "SQLite"
    chunks = [
        f"Question: {nl}\n{label}: {' '.join(sql.split())}" for nl, sql in pairs
    ]
    header = f"Reference examples of question to {label} translations for this use-case:"
    return header + "\n" + "\n \n".join(chunks)


def build_sql_prompt(
    example: SynthesisExample,
    schema: SchemaContext,
    instructions: str | None = None,
    demonstrations: list[tuple[str, str]] | None = None,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    template_dir=None,
) -> str:
    """Render the SQL-generation prompt for one example. Pure function.

    The instruction block and any demonstrations are wrapped together in
    one marker-delimited region so postprocess_prompt can strip them.
    """
    if example.schema_id != schema.schema_id:
        raise InvariantError(
            f"example {example.example_id!r} belongs to schema {example.schema_id!r}, "
            f"not {schema.schema_id!r}"
        )
    if instructions and (INSTRUCTION_BEGIN in instructions or INSTRUCTION_END in instructions):
        raise InvariantError("instruction block must not contain the marker lines themselves")
    parts: list[str] = []
    if demonstrations:
        parts.append(demonstration_block(demonstrations, schema.dialect))
    if instructions:
        parts.append(instructions.rstrip("\n"))
    guidance = ""
    if parts:
        inner = "\n \n".join(parts)
        guidance = f"{INSTRUCTION_BEGIN}\n{inner}\n{INSTRUCTION_END}\n "
    prompt = render(
        load_template(SQL_GENERATE, template_dir),
        {
            "schema_ddl": schema.ddl_text(),
            "guidance_block": guidance,
            "question": example.nl_query,
            "dialect_directive": dialect_directive(schema.dialect),
        },
    )
    if len(prompt) > char_budget:
        raise BudgetExceeded(f"SQL prompt is {len(prompt)} chars, budget {char_budget}")
    return prompt


def postprocess_prompt(prompt: str) -> str:
    """Strip marker-delimited guidance, collapsing the blank lines left behind.

    Idempotent: a prompt without markers comes back unchanged, and the
    stripped result equals the prompt as it would render with no
    guidance at all.
    """
    lines = prompt.split("\n")
    begins = [i for i, line in enumerate(lines) if line.strip() == INSTRUCTION_BEGIN]
    ends = [i for i, line in enumerate(lines) if line.strip() == INSTRUCTION_END]
    if not begins and not ends:
        return prompt
    if len(begins) != len(ends):
        raise MarkerMismatch(
            f"{len(begins)} begin marker(s) vs {len(ends)} end marker(s)"
        )
    removed: set[int] = set()
    previous_end = -1
    for begin, end in zip(begins, ends):
        if begin >= end or begin <= previous_end:
            raise MarkerMismatch("instruction markers out of order")
        previous_end = end
        removed.update(range(begin, end + 1))

    kept = [line for i, line in enumerate(lines) if i not in removed]
    out: list[str] = []
    previous_blank = False
    for line in kept:
        blank = not line.strip()
        if blank and previous_blank:
            continue
        out.append(line)
        previous_blank = blank
    return "\n".join(out)


def extract_sql(completion: str) -> tuple[str, str | None]:
    """Pull (sql, description) out of one completion.

    Preference order: first fenced code block, then the longest
    SELECT/WITH statement terminated by a semicolon or end of text.
    Anything echoing the prompt's own closing directive is never SQL.
    """
    match = _FENCE_RE.search(completion)
    if match:
        sql = match.group(1).strip().rstrip(";").strip()
        if sql and _DIRECTIVE_TEXT not in sql:
            description = (completion[: match.start()] + completion[match.end() :]).strip()
            return sql, description or None

    best: tuple[str, int, int] | None = None  # (sql, start, end)
    for candidate in _SQL_START_RE.finditer(completion):
        start = candidate.start()
        semi = completion.find(";", start)
        end = semi if semi >= 0 else len(completion)
        sql = completion[start:end].strip()
        if not sql or _DIRECTIVE_TEXT in sql:
            continue
        # prose like "compatible with the latest version" matches the WITH
        # regex; only keep candidates whose main verb really is SELECT
        try:
            if sqltext.statement_verb(sql) != "SELECT":
                continue
        except LexError:
            continue
        if best is None or len(sql) > len(best[0]):
            best = (sql, start, end)
    if best is None:
        raise NoSqlFound("completion contains no extractable SQL statement")
    sql, start, end = best
    description = (completion[:start] + completion[end + 1 :]).strip()
    return sql, description or None


def generate_sql(
    gateway: LlmGateway,
    backends: list[BackendSpec | str],
    prompt: str,
    params_list: list[SamplingParams],
    example_id: str,
) -> list[SqlCandidate]:
    """Translate one example via every backend; one candidate per completion.

    Completions with no extractable SQL are skipped; if none yields SQL,
    NoSqlFound propagates.
    """
    result = gateway.complete_ensemble(backends, prompt, params_list)
    candidates: list[SqlCandidate] = []
    for completion in result.completions:
        try:
            sql, description = extract_sql(completion.text)
        except NoSqlFound:
            continue
        candidates.append(
            SqlCandidate(
                example_id=example_id,
                sql_text=sql,
                description=description,
                generator_model=completion.backend,
            )
        )
    if not candidates:
        raise NoSqlFound("no completion contained extractable SQL")
    return candidates
