"""Pattern-based dialect filtering driven by data-defined rule packs.

Rules match against masked SQL (see sqltext.mask_sql), so forbidden
keywords inside string literals or quoted identifiers can never trigger.
Packs are TOML files and fully overridable per deployment.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .. import sqltext
from ..errors import InvariantError, LexError, ParseError
from ..templates import packaged_rules_path
from ..types import Dialect, SqlCandidate

_PACK_FILES = {Dialect.ORACLE: "oracle.toml", Dialect.SQLITE: "sqlite.toml"}


@dataclass(frozen=True)
class ForbiddenToken:
    pattern: str
    reason: str
    compiled: re.Pattern = field(repr=False, compare=False, default=None)  # type: ignore[assignment]

    def __post_init__(self):
        try:
            compiled = re.compile(self.pattern, re.IGNORECASE)
        except re.error as exc:
            raise InvariantError(f"rule pattern does not compile: {self.pattern!r}: {exc}") from exc
        if compiled.search(""):
            raise InvariantError(f"rule pattern matches the empty string: {self.pattern!r}")
        object.__setattr__(self, "compiled", compiled)


@dataclass(frozen=True)
class RequiredIdiom:
    construct: str
    reason: str


@dataclass(frozen=True)
class DialectRulePack:
    target_dialect: Dialect
    forbidden_tokens: tuple[ForbiddenToken, ...]
    required_idioms: tuple[RequiredIdiom, ...] = ()


def load_rule_pack(path: str | Path) -> DialectRulePack:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"invalid rule pack TOML: {exc}", path=str(path)) from exc
    try:
        dialect = Dialect(data["target_dialect"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad or missing target_dialect: {exc}", path=str(path)) from exc
    forbidden = tuple(
        ForbiddenToken(pattern=item["pattern"], reason=item.get("reason", ""))
        for item in data.get("forbidden", [])
    )
    required = tuple(
        RequiredIdiom(construct=item["construct"], reason=item.get("reason", ""))
        for item in data.get("required", [])
    )
    return DialectRulePack(
        target_dialect=dialect, forbidden_tokens=forbidden, required_idioms=required
    )


def rules_for_dialect(dialect: Dialect) -> DialectRulePack:
    """The packaged default rule pack for a dialect."""
    return load_rule_pack(packaged_rules_path(_PACK_FILES[dialect]))


@dataclass(frozen=True)
class FilterResult:
    passed: bool
    reasons: tuple[str, ...] = ()

    @property
    def reason_text(self) -> str:
        return "; ".join(self.reasons)


def pattern_filter(candidate: SqlCandidate | str, rules: DialectRulePack) -> FilterResult:
    """Match every forbidden-token rule against the masked SQL. Pure.

    A lexing failure (unterminated literal or comment) is itself a fail
    with reason, not an exception: such SQL can never execute either.
    All violated rules are reported, not just the first.
    """
    sql = candidate if isinstance(candidate, str) else candidate.sql_text
    if not sql.strip():
        raise InvariantError("candidate SQL must be non-empty")
    try:
        masked = sqltext.mask_sql(sql)
    except LexError as exc:
        return FilterResult(passed=False, reasons=(f"lex error: {exc}",))
    reasons = tuple(
        f"{rule.compiled.pattern}: {rule.reason}" if rule.reason else rule.compiled.pattern
        for rule in rules.forbidden_tokens
        if rule.compiled.search(masked)
    )
    return FilterResult(passed=not reasons, reasons=reasons)
