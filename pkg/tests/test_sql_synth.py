"""SQL synthesis: prompt rendering, extraction, instruction stripping."""

import json

import pytest
from hypothesis import given, strategies as st

from conftest import CARGOES_DDL, FIG_QUESTION, GOLDEN_DIR, PORTS_DDL
from sqldistill.errors import InvariantError, MarkerMismatch, NoSqlFound
from sqldistill.gateway import BackendSpec, LlmGateway, RetryPolicy, Role, SamplingParams
from sqldistill.sql_synth import (
    build_sql_prompt,
    extract_sql,
    generate_sql,
    postprocess_prompt,
)
from sqldistill.templates import load_instruction_block
from sqldistill.types import (
    Dialect,
    ExampleOrigin,
    INSTRUCTION_BEGIN,
    INSTRUCTION_END,
    SchemaContext,
    Split,
    SynthesisExample,
)


def _example(schema_id="ports_cargoes", nl=FIG_QUESTION):
    return SynthesisExample("e1", nl, schema_id, ExampleOrigin.GENERATED, "gen")


def _module_schema():
    return SchemaContext(
        "ports_cargoes", Dialect.ORACLE, (PORTS_DDL, CARGOES_DDL), Split.TRAIN
    )


class TestBuildSqlPrompt:
    def test_golden_file_byte_equality(self, ports_cargoes_schema):
        prompt = build_sql_prompt(
            _example(), ports_cargoes_schema, instructions=load_instruction_block()
        )
        golden = (GOLDEN_DIR / "sql_synthesis_prompt.txt").read_text(encoding="utf-8")
        assert prompt == golden

    def test_no_instructions_no_markers(self, ports_cargoes_schema):
        prompt = build_sql_prompt(_example(), ports_cargoes_schema)
        assert INSTRUCTION_BEGIN not in prompt
        assert "DateTime Instructions:" not in prompt
        assert f"Question: {FIG_QUESTION}" in prompt

    def test_dialect_directive_sqlite(self):
        schema = SchemaContext(
            "s", Dialect.SQLITE, ("CREATE TABLE t(\n    x INT\n)",), Split.TRAIN
        )
        prompt = build_sql_prompt(_example(schema_id="s"), schema)
        assert prompt.endswith(
            "Write a SQL query in SQLite dialect, compatible with the latest version "
            "of SQLite, that answers the question above.\n"
        )

    def test_mismatched_schema_id_rejected(self, ports_cargoes_schema):
        with pytest.raises(InvariantError, match="belongs to schema"):
            build_sql_prompt(_example(schema_id="other"), ports_cargoes_schema)

    def test_instructions_containing_markers_rejected(self, ports_cargoes_schema):
        poisoned = f"Rules:\n{INSTRUCTION_END}\nmore text"
        with pytest.raises(InvariantError, match="marker"):
            build_sql_prompt(_example(), ports_cargoes_schema, instructions=poisoned)

    def test_demonstrations_inside_markers(self, ports_cargoes_schema):
        demos = [("berth usage per quay last year", "SELECT SUM(tonnage) FROM cargoes")]
        prompt = build_sql_prompt(_example(), ports_cargoes_schema, demonstrations=demos)
        begin, end = prompt.index(INSTRUCTION_BEGIN), prompt.index(INSTRUCTION_END)
        demo_at = prompt.index("berth usage per quay last year")
        assert begin < demo_at < end
        # stripped prompt loses the demonstrations entirely
        assert "berth usage" not in postprocess_prompt(prompt)


class TestPostprocess:
    def test_strips_instruction_block(self, ports_cargoes_schema):
        with_block = build_sql_prompt(
            _example(), ports_cargoes_schema, instructions=load_instruction_block()
        )
        without = build_sql_prompt(_example(), ports_cargoes_schema)
        assert postprocess_prompt(with_block) == without

    def test_unchanged_without_markers(self, ports_cargoes_schema):
        prompt = build_sql_prompt(_example(), ports_cargoes_schema)
        assert postprocess_prompt(prompt) == prompt

    def test_idempotent(self, ports_cargoes_schema):
        prompt = build_sql_prompt(
            _example(), ports_cargoes_schema, instructions=load_instruction_block()
        )
        once = postprocess_prompt(prompt)
        assert postprocess_prompt(once) == once

    def test_unbalanced_markers_raise(self):
        with pytest.raises(MarkerMismatch):
            postprocess_prompt(f"a\n{INSTRUCTION_BEGIN}\nb")
        with pytest.raises(MarkerMismatch):
            postprocess_prompt(f"a\n{INSTRUCTION_END}\nb\n{INSTRUCTION_BEGIN}\nc")

    @given(
        instructions=st.text(
            alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="-"),
            min_size=1,
            max_size=200,
        ),
        question=st.text(alphabet="abcdefgh ?", min_size=1, max_size=60),
    )
    def test_strip_equals_bare_render(self, instructions, question):
        schema = _module_schema()
        example = _example(nl=question.strip() or "q")
        with_block = build_sql_prompt(example, schema, instructions=instructions)
        assert postprocess_prompt(with_block) == build_sql_prompt(example, schema)


class TestExtractSql:
    def test_fenced_block_preferred(self):
        sql, description = extract_sql(
            "Here is my answer.\n```sql\nSELECT * FROM t\n```\nHope that helps."
        )
        assert sql == "SELECT * FROM t"
        assert "Hope that helps." in description

    def test_bare_fence_without_language(self):
        sql, _ = extract_sql("```\nSELECT 1 FROM dual\n```")
        assert sql == "SELECT 1 FROM dual"

    def test_semicolon_heuristic(self):
        sql, description = extract_sql(
            "The answer is SELECT name FROM ports WHERE id = 1; as requested."
        )
        assert sql == "SELECT name FROM ports WHERE id = 1"
        assert "as requested" in description

    def test_longest_statement_wins(self):
        completion = (
            "Either SELECT 1;\nor the better WITH c AS (SELECT id FROM ports) "
            "SELECT * FROM c"
        )
        sql, _ = extract_sql(completion)
        assert sql.startswith("WITH c AS")

    def test_no_sql_raises(self):
        with pytest.raises(NoSqlFound):
            extract_sql("I cannot answer that question.")

    def test_directive_echo_is_not_sql(self):
        with pytest.raises(NoSqlFound):
            extract_sql(
                "```sql\nWrite a SQL query in Oracle SQL dialect, compatible with "
                "the latest version of Oracle Database, that answers the question above.\n```"
            )


class TestGenerateSql:
    def _gateway(self, tmp_path, records_by_name):
        specs = []
        for name, records in records_by_name.items():
            path = tmp_path / f"{name}.jsonl"
            with path.open("w", encoding="utf-8") as fh:
                for record in records:
                    fh.write(json.dumps(record) + "\n")
            specs.append(
                BackendSpec(name, "mock", Role.SQL_GENERATOR, fixture_path=str(path),
                            retry_policy=RetryPolicy(max_attempts=1, backoff=(0.0,)))
            )
        return LlmGateway(specs), [s.name for s in specs]

    def test_one_candidate_per_backend(self, tmp_path):
        gateway, names = self._gateway(
            tmp_path,
            {
                "gen-a": [{"prompt_contains": "", "completion": "```sql\nSELECT 1\n```"}],
                "gen-b": [{"prompt_contains": "", "completion": "```sql\nSELECT 2\n```"}],
            },
        )
        candidates = generate_sql(gateway, names, "p", [SamplingParams(seed=1)], "e1")
        assert [(c.generator_model, c.sql_text) for c in candidates] == [
            ("gen-a", "SELECT 1"),
            ("gen-b", "SELECT 2"),
        ]
        assert all(c.example_id == "e1" for c in candidates)

    def test_description_captured(self, tmp_path):
        gateway, names = self._gateway(
            tmp_path,
            {"gen": [{"prompt_contains": "",
                      "completion": "This sums tonnage.\n```sql\nSELECT SUM(t) FROM c\n```"}]},
        )
        (candidate,) = generate_sql(gateway, names, "p", [SamplingParams(seed=1)], "e1")
        assert candidate.description == "This sums tonnage."

    def test_no_sql_anywhere_raises(self, tmp_path):
        gateway, names = self._gateway(
            tmp_path, {"gen": [{"prompt_contains": "", "completion": "sorry, no"}]}
        )
        with pytest.raises(NoSqlFound):
            generate_sql(gateway, names, "p", [SamplingParams(seed=1)], "e1")
