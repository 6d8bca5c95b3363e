"""NL query synthesis: reference sampling, prompt construction, parsing, feedback.

New NL queries are generated per schema from sampled reference examples;
queries judged irrelevant (or otherwise discarded) in earlier rounds feed
back into later prompts as negative examples, steering generation toward
the target use case.
"""

from __future__ import annotations

import random
import re
from collections import deque

from .errors import (
    BudgetExceeded,
    DoubleTransition,
    InvariantError,
    KTooLarge,
    NoParsableExamples,
)
from .gateway import DEFAULT_CHAR_BUDGET, BackendSpec, LlmGateway, SamplingParams
from .templates import NL_ADDREF, bullet_list, load_template, render
from .types import (
    TERMINAL_STATUSES,
    ErrorCase,
    ExampleOrigin,
    ExampleStatus,
    ReferenceSet,
    SchemaContext,
    SynthesisExample,
)

DEFAULT_N_REQUESTED = 5
DEFAULT_K_CAP = 20
DEFAULT_NEGATIVES_CAP = 10

_BULLET_RE = re.compile(r"^\s*(?:[-*+]|\d+[.)])\s+(.*\S)\s*$")
_GENERATED_HEADER = "## Generated Examples"


def default_k(refs: ReferenceSet) -> int:
    return min(len(refs.examples), DEFAULT_K_CAP)


def sample_references(refs: ReferenceSet | list[str], k: int, seed: int) -> list[str]:
    """Uniformly sample k distinct reference NL strings, deterministic per seed.

    The selection preserves the original ordering of the reference set,
    so k == len(refs) returns every example in stable order.
    """
    pool = refs.nl_strings() if isinstance(refs, ReferenceSet) else list(refs)
    if k < 1:
        raise InvariantError(f"k must be >= 1, got {k}")
    if k > len(pool):
        raise KTooLarge(f"k={k} exceeds reference set size {len(pool)}")
    indices = sorted(random.Random(seed).sample(range(len(pool)), k))
    return [pool[i] for i in indices]


def error_guidance_line(case: ErrorCase) -> str:
    """One reference-style bullet describing a known bad answer to avoid."""
    flat_sql = " ".join(case.wrong_sql.split())
    tag = f" [{case.error_tag}]" if case.error_tag else ""
    return (
        f"(error feedback{tag}) the query '{case.nl_query}' was previously answered "
        f"with the unacceptable SQL: {flat_sql}; generate new queries that exercise this case"
    )


def build_nl_prompt(
    sampled_refs: list[str],
    schema: SchemaContext,
    negatives: list[str] | None = None,
    error_cases: list[ErrorCase] | None = None,
    n_requested: int = DEFAULT_N_REQUESTED,
    char_budget: int = DEFAULT_CHAR_BUDGET,
    template_dir=None,
) -> str:
    """Render the NL-generation prompt. Pure: same inputs, same bytes.

    Error cases appear as additional reference-style guidance bullets;
    an empty negatives list keeps the Irrelevant Examples header with no
    bullets so prompt bytes stay stable.
    """
    if n_requested < 1:
        raise InvariantError("n_requested must be >= 1")
    if not sampled_refs:
        raise InvariantError("at least one reference example is required")
    reference_lines = list(sampled_refs)
    reference_lines.extend(error_guidance_line(c) for c in (error_cases or []))
    prompt = render(
        load_template(NL_ADDREF, template_dir),
        {
            "n_requested": str(n_requested),
            "reference_bullets": bullet_list(reference_lines),
            "irrelevant_bullets": bullet_list(list(negatives or [])),
            "schema_ddl": schema.ddl_text(),
        },
    )
    if len(prompt) > char_budget:
        raise BudgetExceeded(
            f"NL prompt is {len(prompt)} chars, budget {char_budget}; reduce k or negatives"
        )
    return prompt


def parse_generated_examples(completion: str) -> list[str]:
    """Extract bulleted/numbered NL strings from one completion.

    Only bullet or numbered lines count; free prose never parses, so a
    model that ignored the format raises NoParsableExamples instead of
    polluting the pool. Exact duplicates are dropped case-insensitively.
    """
    text = completion
    if _GENERATED_HEADER in text:
        text = text.split(_GENERATED_HEADER, 1)[1]
    found: list[str] = []
    for line in text.splitlines():
        match = _BULLET_RE.match(line)
        if match:
            found.append(match.group(1).strip())
    if not found:
        raise NoParsableExamples("completion contains no extractable example lines")
    seen: set[str] = set()
    unique = []
    for item in found:
        key = item.lower()
        if key not in seen:
            seen.add(key)
            unique.append(item)
    return unique


def generate_nl(
    gateway: LlmGateway,
    backends: list[BackendSpec | str],
    prompt: str,
    params_list: list[SamplingParams],
    schema_id: str,
    round_no: int = 0,
    id_prefix: str = "ex",
) -> list[SynthesisExample]:
    """Fan the prompt out and parse completions into candidate examples.

    Unparsable completions are skipped unless every completion is
    unparsable, in which case NoParsableExamples propagates. Duplicate NL
    strings across backends collapse to the first occurrence (completions
    arrive in deterministic order).
    """
    result = gateway.complete_ensemble(backends, prompt, params_list)
    collected: list[tuple[str, str]] = []
    parsable = 0
    for completion in result.completions:
        try:
            strings = parse_generated_examples(completion.text)
        except NoParsableExamples:
            continue
        parsable += 1
        collected.extend((nl, completion.backend) for nl in strings)
    if parsable == 0:
        raise NoParsableExamples("no completion contained extractable example lines")

    seen: set[str] = set()
    examples: list[SynthesisExample] = []
    for nl, model in collected:
        key = nl.lower()
        if key in seen:
            continue
        seen.add(key)
        examples.append(
            SynthesisExample(
                example_id=f"{id_prefix}-{len(examples):04d}",
                nl_query=nl,
                schema_id=schema_id,
                origin=ExampleOrigin.GENERATED,
                generator_model=model,
                round=round_no,
            )
        )
    return examples


class ExampleStore:
    """Single-writer store for example lifecycle state and negatives pools.

    All status transitions go through record_feedback; discarded and
    irrelevant NL strings enter a per-schema FIFO pool (capped) that
    later rounds consume as negative examples.
    """

    def __init__(self, negatives_cap: int = DEFAULT_NEGATIVES_CAP):
        if negatives_cap < 1:
            raise InvariantError("negatives_cap must be >= 1")
        self.negatives_cap = negatives_cap
        self._examples: dict[str, SynthesisExample] = {}
        self._negatives: dict[str, deque[str]] = {}

    def add(self, example: SynthesisExample) -> None:
        if example.example_id in self._examples:
            raise InvariantError(f"duplicate example_id {example.example_id!r}")
        self._examples[example.example_id] = example

    def add_all(self, examples: list[SynthesisExample]) -> None:
        for example in examples:
            self.add(example)

    def get(self, example_id: str) -> SynthesisExample:
        return self._examples[example_id]

    def examples(self) -> list[SynthesisExample]:
        return list(self._examples.values())

    def record_feedback(self, example: SynthesisExample, verdict: ExampleStatus) -> SynthesisExample:
        """Apply a terminal status; feeds the negatives pool when rejecting."""
        if verdict not in TERMINAL_STATUSES:
            raise InvariantError(f"{verdict} is not a terminal status")
        stored = self._examples.get(example.example_id)
        if stored is None:
            self.add(example)
            stored = example
        if stored.status is not ExampleStatus.CANDIDATE:
            raise DoubleTransition(
                f"example {stored.example_id!r} already {stored.status.value}"
            )
        stored.status = verdict
        if verdict in (ExampleStatus.DISCARDED, ExampleStatus.IRRELEVANT):
            pool = self._negatives.setdefault(
                stored.schema_id, deque(maxlen=self.negatives_cap)
            )
            if stored.nl_query not in pool:
                pool.append(stored.nl_query)
        return stored

    def negatives(self, schema_id: str) -> list[str]:
        return list(self._negatives.get(schema_id, ()))
