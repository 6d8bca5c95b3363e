"""LLM-as-jury evaluation: star-rated quality and binary relevance votes.

Multiple juror models rate each candidate; consensus is conservative by
default (every valid verdict must clear the thresholds and an unparsable
verdict counts against consensus). Thresholds are configuration, with
defaults requiring 5-star correctness and compliance and at least 4-star
NL quality, and unanimous relevance.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from ..errors import NoVerdicts
from ..gateway import BackendSpec, LlmGateway, SamplingParams
from ..templates import JUDGE_QUALITY, JUDGE_RELEVANCE, bullet_list, load_template, render
from ..types import (
    STAR_CRITERIA,
    Dialect,
    JuryKind,
    JuryVerdict,
    ReferenceSet,
    RelevanceVote,
    SchemaContext,
    SqlCandidate,
)

JUROR_PARAMS = SamplingParams(temperature=0.0, top_k=1, top_p=0.9, max_tokens=1024, seed=0)


@dataclass(frozen=True)
class ConsensusThresholds:
    """Minimum star per criterion for a verdict to support consensus."""

    sql_correctness: int = 5
    compliance: int = 5
    nl_quality: int = 4

    def satisfied_by(self, stars: dict[str, int]) -> bool:
        return (
            stars["sql_correctness"] >= self.sql_correctness
            and stars["compliance"] >= self.compliance
            and stars["nl_quality"] >= self.nl_quality
        )


def _dialect_name(dialect: Dialect) -> str:
    return "Oracle SQL" if dialect is Dialect.ORACLE else "SQLite"


def render_quality_prompt(
    question: str, sql: str, schema: SchemaContext, template_dir=None
) -> str:
    return render(
        load_template(JUDGE_QUALITY, template_dir),
        {
            "dialect_name": _dialect_name(schema.dialect),
            "schema_ddl": schema.ddl_text(),
            "question": question,
            "sql": " ".join(sql.split()),
        },
    )


def render_relevance_prompt(
    question: str, sql: str, refs: ReferenceSet, template_dir=None
) -> str:
    return render(
        load_template(JUDGE_RELEVANCE, template_dir),
        {
            "reference_bullets": bullet_list(refs.nl_strings()),
            "question": question,
            "sql": " ".join(sql.split()),
        },
    )


def _json_objects(text: str):
    depth = 0
    start = None
    for i, ch in enumerate(text):
        if ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0 and start is not None:
                yield text[start : i + 1]
                start = None


def _normalize_key(key: str) -> str | None:
    flat = re.sub(r"[^a-z]+", "_", key.lower()).strip("_")
    if "correct" in flat:
        return "sql_correctness"
    if "compliance" in flat:
        return "compliance"
    if "quality" in flat or "natural" in flat:
        return "nl_quality"
    return None


def _stars_from_json(text: str) -> dict[str, int] | None:
    for blob in _json_objects(text):
        try:
            data = json.loads(blob)
        except json.JSONDecodeError:
            continue
        if not isinstance(data, dict):
            continue
        stars: dict[str, int] = {}
        for key, value in data.items():
            criterion = _normalize_key(str(key))
            if criterion is None:
                continue
            if isinstance(value, str) and value.strip().isdigit():
                value = int(value.strip())
            if isinstance(value, bool) or not isinstance(value, int):
                continue
            stars[criterion] = value
        if set(stars) == set(STAR_CRITERIA):
            return stars
    return None


_LISTWISE_PATTERNS = {
    "sql_correctness": re.compile(r"SQL\s+Correctness[^0-9]{0,60}([0-9])", re.IGNORECASE),
    "compliance": re.compile(r"Compliance[^0-9]{0,60}([0-9])", re.IGNORECASE),
    "nl_quality": re.compile(
        r"(?:NL\s+Quality|Natural\s+Language\s+Quality|"
        r"Quality\s+of\s+the\s+Natural\s+Language(?:\s+Query)?)[^0-9]{0,60}([0-9])",
        re.IGNORECASE,
    ),
}


def _stars_from_listwise(text: str) -> dict[str, int] | None:
    stars: dict[str, int] = {}
    for criterion, pattern in _LISTWISE_PATTERNS.items():
        match = pattern.search(text)
        if not match:
            return None
        stars[criterion] = int(match.group(1))
    return stars


def parse_star_block(response: str) -> dict[str, int] | None:
    """Parse juror star ratings, preferring the structured JSON block.

    Returns None when no complete, in-range rating triple is present.
    """
    stars = _stars_from_json(response) or _stars_from_listwise(response)
    if stars is None:
        return None
    if any(not 1 <= v <= 5 for v in stars.values()):
        return None
    return stars


_RELEVANCE_RE = re.compile(r"\*{0,2}(Irrelevant|Relevant)\*{0,2}", re.IGNORECASE)


def parse_relevance_vote(response: str) -> RelevanceVote | None:
    """Final Relevant/Irrelevant token wins; bold markers tolerated."""
    matches = list(_RELEVANCE_RE.finditer(response))
    if not matches:
        return None
    token = matches[-1].group(1).lower()
    return RelevanceVote.IRRELEVANT if token == "irrelevant" else RelevanceVote.RELEVANT


def _jury_responses(
    gateway: LlmGateway,
    jurors: list[BackendSpec | str],
    prompt: str,
    params: SamplingParams,
) -> list[tuple[str, str | None, str]]:
    """Collect (juror, response_or_None, note) per juror; backend failures
    become unparsable verdicts rather than aborting the jury."""
    result = gateway.complete_ensemble(jurors, prompt, [params])
    out = [(c.backend, c.text, "") for c in result.completions]
    out.extend((e.backend, None, e.message) for e in result.errors)
    out.sort(key=lambda item: item[0])
    return out


def quality_jury(
    candidate: SqlCandidate,
    question: str,
    schema: SchemaContext,
    jurors: list[BackendSpec | str],
    gateway: LlmGateway,
    params: SamplingParams = JUROR_PARAMS,
    template_dir=None,
) -> list[JuryVerdict]:
    """Collect one star-rating verdict per juror for one candidate."""
    prompt = render_quality_prompt(question, candidate.sql_text, schema, template_dir)
    verdicts = []
    for juror, response, note in _jury_responses(gateway, jurors, prompt, params):
        stars = parse_star_block(response) if response is not None else None
        verdicts.append(
            JuryVerdict(
                juror_model=juror,
                kind=JuryKind.QUALITY,
                stars=stars,
                raw_response=response if response is not None else f"<backend error: {note}>",
                valid=stars is not None,
            )
        )
    return verdicts


def relevance_jury(
    candidate: SqlCandidate,
    question: str,
    refs: ReferenceSet,
    jurors: list[BackendSpec | str],
    gateway: LlmGateway,
    params: SamplingParams = JUROR_PARAMS,
    template_dir=None,
) -> list[JuryVerdict]:
    """Collect one relevance vote per juror for one candidate."""
    if not refs.examples:
        raise NoVerdicts("relevance jury needs a non-empty reference set")
    prompt = render_relevance_prompt(question, candidate.sql_text, refs, template_dir)
    verdicts = []
    for juror, response, note in _jury_responses(gateway, jurors, prompt, params):
        vote = parse_relevance_vote(response) if response is not None else None
        verdicts.append(
            JuryVerdict(
                juror_model=juror,
                kind=JuryKind.RELEVANCE,
                relevance=vote,
                raw_response=response if response is not None else f"<backend error: {note}>",
                valid=vote is not None,
            )
        )
    return verdicts


def quality_consensus(
    verdicts: list[JuryVerdict], thresholds: ConsensusThresholds = ConsensusThresholds()
) -> bool:
    """Pass iff every verdict is valid and clears every threshold."""
    if not verdicts:
        raise NoVerdicts("quality consensus needs at least one verdict")
    for verdict in verdicts:
        if not verdict.valid or verdict.stars is None:
            return False
        if not thresholds.satisfied_by(verdict.stars):
            return False
    return True


def relevance_consensus(verdicts: list[JuryVerdict]) -> bool:
    """Unanimity: every verdict valid and voting Relevant."""
    if not verdicts:
        raise NoVerdicts("relevance consensus needs at least one verdict")
    return all(
        v.valid and v.relevance is RelevanceVote.RELEVANT for v in verdicts
    )
