"""Command-line surface: run, stats, eval, validate, render-prompt.

Exit codes: 0 success, 1 gate failure (eval below --min-accuracy),
2 configuration error, 3 backend failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .corpus import load_corpus, validate_split_disjointness
from .errors import (
    AllBackendsFailed,
    BackendUnavailable,
    ExecutorUnavailable,
    InvariantError,
    LeakageError,
    MissingArtifacts,
    ParseError,
    SqldistillError,
)
from .evaluation import (
    execution_accuracy,
    grouped_report,
    provision_for_eval,
    read_eval_pairs,
    render_group_table,
    write_eval_report,
)
from .filters.execution import SqliteExecutor
from .gateway import BackendSpec, RetryPolicy, Role
from .nl_synth import build_nl_prompt, default_k, sample_references
from .orchestrator import RunOptions, run_pipeline, stats as run_stats
from .sql_synth import build_sql_prompt
from .types import ExampleOrigin, Setting, SynthesisExample

EXIT_OK = 0
EXIT_GATE = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3


def load_backends(path: str | Path) -> list[BackendSpec]:
    """Read backend specs from a TOML file of [[backend]] tables."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"invalid backends TOML: {exc}", path=str(path)) from exc
    specs = []
    for index, item in enumerate(data.get("backend", [])):
        fixture = item.get("fixture")
        if fixture is not None and not Path(fixture).is_absolute():
            fixture = str(path.parent / fixture)
        retry = RetryPolicy(
            max_attempts=int(item.get("max_attempts", 3)),
            backoff=tuple(item.get("backoff", (0.1, 0.5, 2.0))),
        )
        try:
            specs.append(
                BackendSpec(
                    name=item["name"],
                    endpoint=item.get("endpoint", "mock"),
                    role=Role(item["role"]),
                    concurrency_limit=int(item.get("concurrency_limit", 4)),
                    retry_policy=retry,
                    char_budget=int(item.get("char_budget", 24_000)),
                    fixture_path=fixture,
                    api_key_env=item.get("api_key_env", "LLM_API_KEY"),
                    proprietary=bool(item.get("proprietary", False)),
                )
            )
        except (KeyError, ValueError) as exc:
            raise ParseError(
                f"backend entry {index + 1} is invalid: {exc}", path=str(path)
            ) from exc
    if not specs:
        raise InvariantError(f"no [[backend]] entries in {path}")
    return specs


def _cmd_run(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    scenario = corpus.scenario()
    if args.setting and args.setting != scenario.setting.value:
        raise InvariantError(
            f"--setting {args.setting} conflicts with scenario.toml "
            f"setting {scenario.setting.value}"
        )
    options = RunOptions.from_corpus(corpus)
    if args.seed is not None:
        options.seed = args.seed
    if args.rounds is not None:
        options.rounds = args.rounds
    if args.mix_ratio is not None:
        options.mix_ratio = args.mix_ratio
    if args.per_schema_target is not None:
        options.per_schema_target = args.per_schema_target
    options.stop_after = args.stop_after
    backends = load_backends(args.backends)
    result = run_pipeline(
        scenario,
        corpus,
        backends,
        args.out,
        options=options,
        allow_proprietary=args.allow_proprietary,
    )
    if result.sft_path is not None:
        print(f"run complete: {result.sft_path}")
        print(json.dumps(result.stats.get("conservation", {}), sort_keys=True))
    else:
        print(f"run stopped after {result.completed[-1] if result.completed else 'nothing'}")
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    report = validate_split_disjointness(corpus)
    print(json.dumps({"passed": report.passed, "counts": report.counts,
                      "reference_shape": report.reference_shape}, sort_keys=True))
    return EXIT_OK


def _cmd_stats(args: argparse.Namespace) -> int:
    report = run_stats(args.run)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    pairs = read_eval_pairs(args.pairs)
    executor = SqliteExecutor(timeout_s=args.timeout)
    provision_for_eval(executor, corpus, {p.schema_id for p in pairs})
    report = execution_accuracy(pairs, executor)
    rows = grouped_report(report.outcomes)
    print(render_group_table(rows))
    print(f"overall: {report.accuracy:.4f} over {len(report.outcomes)} pairs")
    if args.report:
        write_eval_report(report, rows, args.report)
    if args.min_accuracy is not None and report.accuracy < args.min_accuracy:
        print(f"FAIL: accuracy {report.accuracy:.4f} < --min-accuracy {args.min_accuracy}")
        return EXIT_GATE
    return EXIT_OK


def _cmd_render_prompt(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    scenario = corpus.scenario()
    schema = corpus.get_schema(args.schema_id)
    if args.kind == "nl":
        refs = scenario.reference_set
        k = min(args.k or default_k(refs), len(refs.examples))
        sampled = sample_references(refs, k, args.seed)
        error_cases = (
            [c for c in scenario.error_feedback if c.schema_id == schema.schema_id]
            if scenario.uses_error_feedback
            else []
        )
        prompt = build_nl_prompt(
            sampled, schema, negatives=[], error_cases=error_cases,
            n_requested=args.n_requested,
        )
    else:
        example = SynthesisExample(
            example_id="render",
            nl_query=args.question or "example question",
            schema_id=schema.schema_id,
            origin=ExampleOrigin.REFERENCE,
            generator_model="render-prompt",
        )
        demonstrations = None
        if scenario.uses_gold_demonstrations:
            demonstrations = scenario.reference_set.gold_pairs()[:5]
        prompt = build_sql_prompt(
            example,
            schema,
            instructions=scenario.custom_instructions if scenario.uses_instructions else None,
            demonstrations=demonstrations,
        )
    sys.stdout.write(prompt)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqldistill",
        description="Synthesize, filter and package NL2SQL fine-tuning datasets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full synthesis pipeline")
    p_run.add_argument("--corpus", required=True)
    p_run.add_argument("--backends", required=True, help="TOML file of [[backend]] tables")
    p_run.add_argument("--out", required=True, help="run artifact directory")
    p_run.add_argument("--setting", choices=[s.value for s in Setting])
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--rounds", type=int)
    p_run.add_argument("--mix-ratio", type=float, dest="mix_ratio")
    p_run.add_argument("--per-schema-target", type=int, dest="per_schema_target")
    p_run.add_argument("--stop-after", dest="stop_after",
                       help="stage label, e.g. round_1/filters")
    p_run.add_argument("--allow-proprietary", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check split disjointness of a corpus")
    p_val.add_argument("--corpus", required=True)
    p_val.set_defaults(func=_cmd_validate)

    p_stats = sub.add_parser("stats", help="report statistics for a run directory")
    p_stats.add_argument("--run", required=True)
    p_stats.set_defaults(func=_cmd_stats)

    p_eval = sub.add_parser("eval", help="execution-accuracy evaluation")
    p_eval.add_argument("--pairs", required=True, help="JSONL of gold/predicted pairs")
    p_eval.add_argument("--corpus", required=True, help="corpus with schemas and fixture data")
    p_eval.add_argument("--min-accuracy", type=float, dest="min_accuracy")
    p_eval.add_argument("--report", help="write machine-readable report here")
    p_eval.add_argument("--timeout", type=float, default=5.0)
    p_eval.set_defaults(func=_cmd_eval)

    p_render = sub.add_parser("render-prompt", help="render a prompt for golden-file debugging")
    p_render.add_argument("--corpus", required=True)
    p_render.add_argument("--schema-id", required=True, dest="schema_id")
    p_render.add_argument("--kind", choices=("nl", "sql"), required=True)
    p_render.add_argument("--question")
    p_render.add_argument("--seed", type=int, default=0)
    p_render.add_argument("--k", type=int)
    p_render.add_argument("--n-requested", type=int, default=5, dest="n_requested")
    p_render.set_defaults(func=_cmd_render_prompt)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BackendUnavailable, AllBackendsFailed, ExecutorUnavailable) as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ParseError, InvariantError, LeakageError, MissingArtifacts, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SqldistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
