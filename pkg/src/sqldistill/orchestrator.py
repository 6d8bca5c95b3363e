"""End-to-end pipeline driver: rounds of synthesis, filtering and feedback.

The orchestrator is the sole writer of run state. Every stage persists
its artifact under the run directory and is marked complete in
state.json, so an interrupted run resumes from the last completed stage
and reproduces the uninterrupted output byte for byte (all randomness
derives from one root seed expanded per stage/round/schema).

Run directory layout::

    round_<r>/nl/examples.jsonl
    round_<r>/sql/candidates.jsonl
    round_<r>/filters/outcomes.jsonl
    sft.jsonl
    stats.json
    state.json
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus, dump_record, validate_split_disjointness, write_sft_records
from .dataset import assemble_sft_dataset
from .errors import InvariantError, MissingArtifacts, NoSqlFound, ParseError
from .filters import FilterConfig, run_filter_pipeline, rules_for_dialect
from .filters.execution import QueryExecutor, make_executor
from .gateway import BackendSpec, LlmGateway, Role, SamplingParams
from .nl_synth import ExampleStore, build_nl_prompt, default_k, generate_nl, sample_references
from .sql_synth import build_sql_prompt, generate_sql, postprocess_prompt
from .types import (
    Dialect,
    ExampleOrigin,
    ExampleStatus,
    ScenarioConfig,
    SchemaContext,
    SftRecord,
    SftSource,
    Split,
    SqlCandidate,
    SynthesisExample,
)

STAGE_NL = "nl"
STAGE_SQL = "sql"
STAGE_FILTERS = "filters"
STAGE_SFT = "sft"


@dataclass
class RunOptions:
    rounds: int = 2
    seed: int = 0
    per_schema_target: int = 50
    n_requested: int = 5
    k_refs: int | None = None
    negatives_cap: int = 10
    demo_pairs: int = 5
    mix_ratio: float = 0.1
    query_timeout_s: float = 5.0
    stop_after: str | None = None  # stage label, e.g. "round_1/filters"

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "RunOptions":
        options = cls()
        settings = corpus.scenario_settings
        if settings is not None:
            options.rounds = settings.rounds
            options.seed = settings.seed
            options.mix_ratio = settings.mix_ratio
            options.per_schema_target = settings.per_schema_target
        return options


def derive_seed(root: int, *parts) -> int:
    """Expand the root seed deterministically per (stage, round, schema, ...)."""
    text = ":".join([str(root)] + [str(p) for p in parts])
    return int(hashlib.sha256(text.encode("utf-8")).hexdigest()[:12], 16)


@dataclass
class RunResult:
    run_dir: Path
    completed: list[str]
    sft_path: Path | None
    stats: dict


class _RunState:
    """Stage-completion bookkeeping persisted as state.json."""

    def __init__(self, run_dir: Path, fingerprint: dict):
        self.run_dir = run_dir
        self.path = run_dir / "state.json"
        self.fingerprint = fingerprint
        self.completed: list[str] = []
        if self.path.is_file():
            data = json.loads(self.path.read_text(encoding="utf-8"))
            if data.get("fingerprint") != fingerprint:
                raise InvariantError(
                    "run directory was produced with a different configuration; "
                    "use a fresh directory or matching settings"
                )
            self.completed = list(data.get("completed", []))

    def is_complete(self, stage: str) -> bool:
        return stage in self.completed

    def mark_complete(self, stage: str) -> None:
        if stage not in self.completed:
            self.completed.append(stage)
        payload = {"fingerprint": self.fingerprint, "completed": self.completed}
        tmp = self.path.with_suffix(".json.tmp")
        tmp.write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        tmp.replace(self.path)


def _write_jsonl(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(dump_record(record))
    tmp.replace(path)


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ParseError(
                        f"corrupt artifact: {exc.msg}", path=str(path), line=lineno
                    ) from exc
    return records


def _example_to_record(example: SynthesisExample) -> dict:
    return {
        "example_id": example.example_id,
        "nl_query": example.nl_query,
        "schema_id": example.schema_id,
        "origin": example.origin.value,
        "generator_model": example.generator_model,
        "round": example.round,
        "status": example.status.value,
    }


def _example_from_record(record: dict) -> SynthesisExample:
    return SynthesisExample(
        example_id=record["example_id"],
        nl_query=record["nl_query"],
        schema_id=record["schema_id"],
        origin=ExampleOrigin(record["origin"]),
        generator_model=record["generator_model"],
        round=record["round"],
        status=ExampleStatus(record["status"]),
    )


@dataclass
class _CandidateRecord:
    """SQL candidate plus the context needed downstream of generation."""

    candidate_id: str
    example_id: str
    schema_id: str
    question: str
    prompt: str
    candidate: SqlCandidate

    def to_record(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "example_id": self.example_id,
            "schema_id": self.schema_id,
            "question": self.question,
            "prompt": self.prompt,
            "sql_text": self.candidate.sql_text,
            "description": self.candidate.description,
            "generator_model": self.candidate.generator_model,
        }

    @classmethod
    def from_record(cls, record: dict) -> "_CandidateRecord":
        return cls(
            candidate_id=record["candidate_id"],
            example_id=record["example_id"],
            schema_id=record["schema_id"],
            question=record["question"],
            prompt=record["prompt"],
            candidate=SqlCandidate(
                example_id=record["example_id"],
                sql_text=record["sql_text"],
                description=record.get("description"),
                generator_model=record["generator_model"],
            ),
        )


class PipelineRunner:
    """Holds shared clients and state for one run invocation."""

    def __init__(
        self,
        scenario: ScenarioConfig,
        corpus: Corpus,
        backends: list[BackendSpec],
        out_dir: str | Path,
        options: RunOptions | None = None,
        executor: QueryExecutor | None = None,
        allow_proprietary: bool = False,
        transport=None,
    ):
        self.scenario = scenario
        self.corpus = corpus
        self.options = options or RunOptions.from_corpus(corpus)
        self.run_dir = Path(out_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

        validate_split_disjointness(corpus)
        self.train_schemas = sorted(
            corpus.schemas_in_split(Split.TRAIN), key=lambda s: s.schema_id
        )
        if not self.train_schemas:
            raise InvariantError("corpus has no train-split schemas to synthesize from")

        self.gateway = LlmGateway(backends, allow_proprietary=allow_proprietary, transport=transport)
        self.nl_backends = [s.name for s in self.gateway.specs_for_role(Role.NL_GENERATOR)]
        self.sql_backends = [s.name for s in self.gateway.specs_for_role(Role.SQL_GENERATOR)]
        self.jurors = [s.name for s in self.gateway.specs_for_role(Role.JUROR)]
        for role_name, names in (
            ("nl_generator", self.nl_backends),
            ("sql_generator", self.sql_backends),
            ("juror", self.jurors),
        ):
            if not names:
                raise InvariantError(f"no backend with role {role_name!r} configured")

        self._executors: dict[Dialect, QueryExecutor] = {}
        self._explicit_executor = executor
        self.store = ExampleStore(negatives_cap=self.options.negatives_cap)
        options = self.options
        self.state = _RunState(
            self.run_dir,
            fingerprint={
                "setting": scenario.setting.value,
                "seed": options.seed,
                "rounds": options.rounds,
                "per_schema_target": options.per_schema_target,
                "n_requested": options.n_requested,
                "k_refs": options.k_refs,
                "negatives_cap": options.negatives_cap,
                "demo_pairs": options.demo_pairs,
                "mix_ratio": options.mix_ratio,
                "schemas": sorted(s.schema_id for s in corpus.schemas),
            },
        )
        # per-round accumulation, in round order
        self._candidates: dict[int, list[_CandidateRecord]] = {}
        self._outcome_records: dict[int, list[dict]] = {}

    def executor_for(self, schema: SchemaContext) -> QueryExecutor:
        if self._explicit_executor is not None:
            return self._explicit_executor
        if schema.dialect not in self._executors:
            self._executors[schema.dialect] = make_executor(
                schema.dialect, timeout_s=self.options.query_timeout_s
            )
        return self._executors[schema.dialect]

    # --- stages --------------------------------------------------------

    def _nl_stage(self, round_no: int) -> list[SynthesisExample]:
        path = self.run_dir / f"round_{round_no}" / STAGE_NL / "examples.jsonl"
        stage = f"round_{round_no}/{STAGE_NL}"
        if self.state.is_complete(stage) and path.is_file():
            examples = [_example_from_record(r) for r in _read_jsonl(path)]
            self.store.add_all(examples)
            return examples

        options = self.options
        refs = self.scenario.reference_set
        k = options.k_refs or default_k(refs)
        examples: list[SynthesisExample] = []
        per_backend_calls = max(
            1, math.ceil(options.per_schema_target / (options.n_requested * len(self.nl_backends)))
        )
        for schema in self.train_schemas:
            sampled = sample_references(
                refs, k, derive_seed(options.seed, "nl-sample", round_no, schema.schema_id)
            )
            error_cases = (
                [c for c in self.scenario.error_feedback if c.schema_id == schema.schema_id]
                if self.scenario.uses_error_feedback
                else []
            )
            prompt = build_nl_prompt(
                sampled,
                schema,
                negatives=self.store.negatives(schema.schema_id),
                error_cases=error_cases,
                n_requested=options.n_requested,
                char_budget=min(self.gateway.spec(n).char_budget for n in self.nl_backends),
            )
            params_list = [
                SamplingParams(seed=derive_seed(options.seed, "nl", round_no, schema.schema_id, i))
                for i in range(per_backend_calls)
            ]
            generated = generate_nl(
                self.gateway,
                self.nl_backends,
                prompt,
                params_list,
                schema_id=schema.schema_id,
                round_no=round_no,
                id_prefix=f"{schema.schema_id}-r{round_no}",
            )
            examples.extend(generated[: options.per_schema_target])

        self.store.add_all(examples)
        _write_jsonl(path, [_example_to_record(e) for e in examples])
        self.state.mark_complete(stage)
        return examples

    def _sql_stage(self, round_no: int, examples: list[SynthesisExample]) -> list[_CandidateRecord]:
        path = self.run_dir / f"round_{round_no}" / STAGE_SQL / "candidates.jsonl"
        stage = f"round_{round_no}/{STAGE_SQL}"
        if self.state.is_complete(stage) and path.is_file():
            records = [_CandidateRecord.from_record(r) for r in _read_jsonl(path)]
            self._candidates[round_no] = records
            return records

        options = self.options
        instructions = (
            self.scenario.custom_instructions if self.scenario.uses_instructions else None
        )
        records: list[_CandidateRecord] = []
        schema_by_id = {s.schema_id: s for s in self.train_schemas}
        for example in examples:
            schema = schema_by_id[example.schema_id]
            demonstrations = None
            if self.scenario.uses_gold_demonstrations:
                pairs = self.scenario.reference_set.gold_pairs()
                take = min(options.demo_pairs, len(pairs))
                demo_seed = derive_seed(options.seed, "demos", round_no, schema.schema_id)
                sampled_nl = sample_references([nl for nl, _ in pairs], take, demo_seed)
                by_nl = dict(pairs)
                demonstrations = [(nl, by_nl[nl]) for nl in sampled_nl]
            prompt = build_sql_prompt(
                example,
                schema,
                instructions=instructions,
                demonstrations=demonstrations,
                char_budget=min(self.gateway.spec(n).char_budget for n in self.sql_backends),
            )
            params = SamplingParams(
                seed=derive_seed(options.seed, "sql", round_no, example.example_id)
            )
            try:
                candidates = generate_sql(
                    self.gateway, self.sql_backends, prompt, [params], example.example_id
                )
            except NoSqlFound:
                continue  # example ends up discarded at feedback time
            for i, candidate in enumerate(candidates):
                records.append(
                    _CandidateRecord(
                        candidate_id=f"{example.example_id}-c{i}",
                        example_id=example.example_id,
                        schema_id=example.schema_id,
                        question=example.nl_query,
                        prompt=prompt,
                        candidate=candidate,
                    )
                )

        self._candidates[round_no] = records
        _write_jsonl(path, [r.to_record() for r in records])
        self.state.mark_complete(stage)
        return records

    def _filters_stage(self, round_no: int, records: list[_CandidateRecord]) -> list[dict]:
        path = self.run_dir / f"round_{round_no}" / STAGE_FILTERS / "outcomes.jsonl"
        stage = f"round_{round_no}/{STAGE_FILTERS}"
        if self.state.is_complete(stage) and path.is_file():
            outcome_records = _read_jsonl(path)
            self._outcome_records[round_no] = outcome_records
            self._apply_feedback(round_no, outcome_records)
            return outcome_records

        by_schema: dict[str, list[_CandidateRecord]] = {}
        for record in records:
            by_schema.setdefault(record.schema_id, []).append(record)

        outcome_records: list[dict] = []
        per_schema_stats: dict[str, dict] = {}
        schema_by_id = {s.schema_id: s for s in self.train_schemas}
        for schema_id in sorted(by_schema):
            schema = schema_by_id[schema_id]
            items = [
                (self.store.get(r.example_id), r.candidate) for r in by_schema[schema_id]
            ]
            config = FilterConfig(
                rules=rules_for_dialect(schema.dialect),
                executor=self.executor_for(schema),
                gateway=self.gateway,
                quality_jurors=self.jurors,
                relevance_jurors=self.jurors,
                refs=self.scenario.reference_set,
                fixture_rows=self.corpus.rows_for(schema_id),
            )
            result = run_filter_pipeline(items, schema, config)
            per_schema_stats[schema_id] = result.stats.as_dict()
            for record, outcome in zip(by_schema[schema_id], result.outcomes):
                outcome_records.append(
                    {
                        "candidate_id": record.candidate_id,
                        "example_id": record.example_id,
                        "schema_id": record.schema_id,
                        "accepted": outcome.accepted,
                        "failed_stage": outcome.failed_stage,
                        "trace": [
                            {"stage": t.stage, "passed": t.passed, "reason": t.reason}
                            for t in outcome.candidate.filter_trace
                        ],
                        "verdicts": [
                            {
                                "juror_model": v.juror_model,
                                "kind": v.kind.value,
                                "stars": v.stars,
                                "relevance": v.relevance.value if v.relevance else None,
                                "valid": v.valid,
                                "raw_response": v.raw_response,
                            }
                            for v in outcome.candidate.verdicts
                        ],
                    }
                )

        self._outcome_records[round_no] = outcome_records
        self._apply_feedback(round_no, outcome_records)
        _write_jsonl(path, outcome_records)
        stats_path = path.parent / "stats.json"
        stats_path.write_text(
            json.dumps(per_schema_stats, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        self.state.mark_complete(stage)
        return outcome_records

    def _apply_feedback(self, round_no: int, outcome_records: list[dict]) -> None:
        """Resolve per-example terminal statuses and feed the negatives pool."""
        by_example: dict[str, list[dict]] = {}
        for record in outcome_records:
            by_example.setdefault(record["example_id"], []).append(record)
        for example in [e for e in self.store.examples() if e.round == round_no]:
            if example.status is not ExampleStatus.CANDIDATE:
                continue
            outcomes = by_example.get(example.example_id, [])
            if any(o["accepted"] for o in outcomes):
                status = ExampleStatus.ACCEPTED
            elif any(o["failed_stage"] == "relevance" for o in outcomes):
                status = ExampleStatus.IRRELEVANT
            else:
                status = ExampleStatus.DISCARDED
            self.store.record_feedback(example, status)

    def _sft_stage(self) -> tuple[Path, dict]:
        sft_path = self.run_dir / "sft.jsonl"
        stats_path = self.run_dir / "stats.json"
        if self.state.is_complete(STAGE_SFT) and sft_path.is_file() and stats_path.is_file():
            return sft_path, json.loads(stats_path.read_text(encoding="utf-8"))

        candidate_index: dict[str, _CandidateRecord] = {}
        for records in self._candidates.values():
            for record in records:
                candidate_index[record.candidate_id] = record

        synthetic: list[SftRecord] = []
        synthetic_meta: list[dict] = []
        rejected_totals: dict[str, int] = {}
        total_candidates = 0
        task_tag = self.scenario.reference_set.use_case_label
        schema_by_id = {s.schema_id: s for s in self.corpus.schemas}
        for round_no in sorted(self._outcome_records):
            for outcome in self._outcome_records[round_no]:
                total_candidates += 1
                if outcome["accepted"]:
                    record = candidate_index[outcome["candidate_id"]]
                    schema = schema_by_id[record.schema_id]
                    synthetic.append(
                        SftRecord(
                            prompt=postprocess_prompt(record.prompt),
                            completion=record.candidate.sql_text,
                            source=SftSource.SYNTHETIC,
                            task_tag=task_tag,
                        )
                    )
                    synthetic_meta.append(
                        {
                            "task_tag": task_tag,
                            "dialect": schema.dialect.value,
                            "split": schema.split.value,
                        }
                    )
                elif outcome["failed_stage"]:
                    stage_name = outcome["failed_stage"]
                    rejected_totals[stage_name] = rejected_totals.get(stage_name, 0) + 1

        if synthetic:
            final = assemble_sft_dataset(
                synthetic,
                self.corpus.bootstrap,
                mix_ratio=self.options.mix_ratio,
                seed=derive_seed(self.options.seed, "assemble"),
            )
        else:
            final = []  # nothing survived filtering; emit an empty training file
        write_sft_records(final, sft_path)

        counts: dict[str, dict] = {}
        for meta in synthetic_meta:
            key = f"{meta['task_tag']}|{meta['dialect']}|{meta['split']}"
            entry = counts.setdefault(
                key,
                {"task": meta["task_tag"], "dialect": meta["dialect"],
                 "split": meta["split"], "n": 0},
            )
            entry["n"] += 1

        rejection_rates = {
            stage: count / total_candidates
            for stage, count in sorted(rejected_totals.items())
        } if total_candidates else {}
        stats = {
            "setting": self.scenario.setting.value,
            "seed": self.options.seed,
            "rounds": self.options.rounds,
            "conservation": {
                "candidates_in": total_candidates,
                "accepted": len(synthetic),
                "rejected": dict(sorted(rejected_totals.items())),
            },
            "rejection_rates": rejection_rates,
            "sft": {
                "total": len(final),
                "synthetic": sum(1 for r in final if r.source is SftSource.SYNTHETIC),
                "bootstrap": sum(1 for r in final if r.source is SftSource.BOOTSTRAP),
            },
            "counts": sorted(counts.values(), key=lambda c: (c["task"], c["dialect"], c["split"])),
            "backend_calls": dict(sorted(self.gateway.call_log.counts_by_backend().items())),
            "examples": {
                status.value: sum(1 for e in self.store.examples() if e.status is status)
                for status in ExampleStatus
            },
        }
        tmp = stats_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(stats, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        tmp.replace(stats_path)
        self.state.mark_complete(STAGE_SFT)
        return sft_path, stats

    # --- driver ---------------------------------------------------------

    def run(self) -> RunResult:
        stop_after = self.options.stop_after
        for round_no in range(1, self.options.rounds + 1):
            examples = self._nl_stage(round_no)
            if stop_after == f"round_{round_no}/{STAGE_NL}":
                return RunResult(self.run_dir, list(self.state.completed), None, {})
            records = self._sql_stage(round_no, examples)
            if stop_after == f"round_{round_no}/{STAGE_SQL}":
                return RunResult(self.run_dir, list(self.state.completed), None, {})
            self._filters_stage(round_no, records)
            if stop_after == f"round_{round_no}/{STAGE_FILTERS}":
                return RunResult(self.run_dir, list(self.state.completed), None, {})
        sft_path, stats = self._sft_stage()
        return RunResult(self.run_dir, list(self.state.completed), sft_path, stats)


def run_pipeline(
    scenario: ScenarioConfig,
    corpus: Corpus,
    backends: list[BackendSpec],
    out_dir: str | Path,
    rounds: int | None = None,
    seed: int | None = None,
    options: RunOptions | None = None,
    executor: QueryExecutor | None = None,
    allow_proprietary: bool = False,
    transport=None,
) -> RunResult:
    """Execute (or resume) a full pipeline run into out_dir."""
    options = options or RunOptions.from_corpus(corpus)
    if rounds is not None:
        options.rounds = rounds
    if seed is not None:
        options.seed = seed
    runner = PipelineRunner(
        scenario,
        corpus,
        backends,
        out_dir,
        options=options,
        executor=executor,
        allow_proprietary=allow_proprietary,
        transport=transport,
    )
    return runner.run()


def stats(run_dir: str | Path) -> dict:
    """Dataset statistics report for a completed (or partial) run."""
    run_dir = Path(run_dir)
    stats_path = run_dir / "stats.json"
    state_path = run_dir / "state.json"
    if not state_path.is_file():
        raise MissingArtifacts(f"no run state found under {run_dir}")
    state = json.loads(state_path.read_text(encoding="utf-8"))
    if not stats_path.is_file():
        raise MissingArtifacts(
            f"run under {run_dir} has no stats.json (completed stages: "
            f"{', '.join(state.get('completed', [])) or 'none'})"
        )
    report = json.loads(stats_path.read_text(encoding="utf-8"))
    report["completed_stages"] = state.get("completed", [])
    return report
