"""The multi-step filtering pipeline: pattern, execution, quality, relevance.

Stages run cheapest-first and each candidate stops at its first failing
stage, so jury backends never see SQL that a regex or the engine already
rejected. Aggregation is pure bookkeeping; feedback routing (irrelevant
NL back into later prompts) is the orchestrator's job.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from ..corpus import TableRows
from ..gateway import LlmGateway, SamplingParams
from ..types import ReferenceSet, SchemaContext, SqlCandidate, SynthesisExample
from .execution import QueryExecutor, execution_filter
from .jury import (
    JUROR_PARAMS,
    ConsensusThresholds,
    quality_consensus,
    quality_jury,
    relevance_consensus,
    relevance_jury,
)
from .rules import DialectRulePack, pattern_filter


@dataclass
class FilterConfig:
    rules: DialectRulePack
    executor: QueryExecutor
    gateway: LlmGateway
    quality_jurors: list[str]
    relevance_jurors: list[str]
    refs: ReferenceSet
    thresholds: ConsensusThresholds = ConsensusThresholds()
    juror_params: SamplingParams = JUROR_PARAMS
    fixture_rows: Sequence[TableRows] = ()
    template_dir: str | None = None


@dataclass
class RejectionStats:
    total: int = 0
    accepted: int = 0
    rejected: dict[str, int] = field(default_factory=dict)
    reasons: dict[str, dict[str, int]] = field(default_factory=dict)

    def record_rejection(self, stage: str, reason: str) -> None:
        self.rejected[stage] = self.rejected.get(stage, 0) + 1
        bucket = self.reasons.setdefault(stage, {})
        key = reason.split("\n")[0][:120] or "unspecified"
        bucket[key] = bucket.get(key, 0) + 1

    def conservation_holds(self) -> bool:
        return self.total == self.accepted + sum(self.rejected.values())

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "accepted": self.accepted,
            "rejected": dict(sorted(self.rejected.items())),
            "reasons": {k: dict(sorted(v.items())) for k, v in sorted(self.reasons.items())},
        }


@dataclass
class CandidateOutcome:
    example: SynthesisExample
    candidate: SqlCandidate
    accepted: bool
    failed_stage: str | None = None


@dataclass
class PipelineResult:
    accepted: list[SqlCandidate]
    stats: RejectionStats
    outcomes: list[CandidateOutcome]


def _quality_fail_reason(verdicts) -> str:
    parts = []
    for verdict in verdicts:
        if not verdict.valid:
            parts.append(f"{verdict.juror_model}: unparsable verdict")
        elif verdict.stars is not None:
            parts.append(f"{verdict.juror_model}: {verdict.stars}")
    return "below consensus thresholds: " + "; ".join(parts)


def _relevance_fail_reason(verdicts) -> str:
    parts = []
    for verdict in verdicts:
        vote = verdict.relevance.value if verdict.valid and verdict.relevance else "unparsable"
        parts.append(f"{verdict.juror_model}: {vote}")
    return "not unanimously relevant: " + "; ".join(parts)


def run_filter_pipeline(
    items: list[tuple[SynthesisExample, SqlCandidate]],
    schema: SchemaContext,
    config: FilterConfig,
) -> PipelineResult:
    """Filter candidates for one schema through all four stages in order.

    Returns the accepted candidates, per-stage rejection statistics
    (conserving total = accepted + rejections) and per-candidate
    outcomes. ExecutorUnavailable and AllBackendsFailed propagate as
    pipeline errors.
    """
    stats = RejectionStats(total=len(items))
    accepted: list[SqlCandidate] = []
    outcomes: list[CandidateOutcome] = []

    for example, candidate in items:
        result = pattern_filter(candidate, config.rules)
        candidate.record_stage("pattern", result.passed, result.reason_text)
        if not result.passed:
            stats.record_rejection("pattern", result.reason_text)
            outcomes.append(CandidateOutcome(example, candidate, False, "pattern"))
            continue

        result = execution_filter(candidate, schema, config.executor, config.fixture_rows)
        candidate.record_stage("execution", result.passed, result.reason_text)
        if not result.passed:
            stats.record_rejection("execution", result.reason_text)
            outcomes.append(CandidateOutcome(example, candidate, False, "execution"))
            continue

        verdicts = quality_jury(
            candidate, example.nl_query, schema, config.quality_jurors,
            config.gateway, config.juror_params, config.template_dir,
        )
        candidate.verdicts.extend(verdicts)
        passed = quality_consensus(verdicts, config.thresholds)
        reason = "" if passed else _quality_fail_reason(verdicts)
        candidate.record_stage("quality", passed, reason)
        if not passed:
            stats.record_rejection("quality", reason)
            outcomes.append(CandidateOutcome(example, candidate, False, "quality"))
            continue

        verdicts = relevance_jury(
            candidate, example.nl_query, config.refs, config.relevance_jurors,
            config.gateway, config.juror_params, config.template_dir,
        )
        candidate.verdicts.extend(verdicts)
        passed = relevance_consensus(verdicts)
        reason = "" if passed else _relevance_fail_reason(verdicts)
        candidate.record_stage("relevance", passed, reason)
        if not passed:
            stats.record_rejection("relevance", reason)
            outcomes.append(CandidateOutcome(example, candidate, False, "relevance"))
            continue

        stats.accepted += 1
        accepted.append(candidate)
        outcomes.append(CandidateOutcome(example, candidate, True))

    return PipelineResult(accepted=accepted, stats=stats, outcomes=outcomes)
