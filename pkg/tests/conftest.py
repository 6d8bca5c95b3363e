"""Shared fixtures: the figure schema, an offline corpus, and mock backends."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from sqldistill.gateway import BackendSpec, RetryPolicy, Role
from sqldistill.types import Dialect, SchemaContext, Split

GOLDEN_DIR = Path(__file__).parent / "golden"

PORTS_DDL = (
    "CREATE TABLE ports(\n"
    "    id INT,\n"
    "    name VARCHAR(255),\n"
    "    country VARCHAR(255)\n"
    ")"
)
CARGOES_DDL = (
    "CREATE TABLE cargoes(\n"
    "    id INT,\n"
    "    name VARCHAR(255),\n"
    "    tonnage INT,\n"
    "    port_id INT,\n"
    "    load_date DATE\n"
    ")"
)

FIG_REFERENCES = [
    "show the distance of the flights that arrived before last May",
    "visits made past more than twelve days",
    "show a list containing staff names and their respective genders who were assigned 2 days ago",
    "Find the names of the university which has more faculties in 2002 than every university in Orange county.",
    "What is all the information about employees hired until June 21, 2002?",
]
FIG_NEGATIVE = "show oldest ship in the port of Singapore"
FIG_QUESTION = (
    "What's the total tonnage of all cargoes loaded or unloaded at the port of "
    "Singapore before last April"
)


@pytest.fixture
def ports_cargoes_schema() -> SchemaContext:
    return SchemaContext(
        schema_id="ports_cargoes",
        dialect=Dialect.ORACLE,
        ddl_statements=(PORTS_DDL, CARGOES_DDL),
        split=Split.TRAIN,
    )


def _jsonl(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


E2E_SCHEMAS = [
    {
        "schema_id": "shop_a",
        "dialect": "SQLite",
        "split": "train",
        "ddl": [
            "CREATE TABLE customers(\n    id INT,\n    name VARCHAR(64),\n    signup_date DATE\n)",
            "CREATE TABLE purchases(\n    id INT,\n    customer_id INT,\n    total REAL,\n    purchase_date DATE\n)",
        ],
    },
    {
        "schema_id": "shop_b",
        "dialect": "SQLite",
        "split": "train",
        "ddl": [
            "CREATE TABLE products(\n    id INT,\n    title VARCHAR(64),\n    price REAL,\n    added_date DATE\n)",
        ],
    },
    {
        "schema_id": "shop_c",
        "dialect": "SQLite",
        "split": "train",
        "ddl": [
            "CREATE TABLE staff(\n    id INT,\n    full_name VARCHAR(64),\n    hired_date DATE\n)",
            "CREATE TABLE shifts(\n    id INT,\n    staff_id INT,\n    shift_date DATE\n)",
        ],
    },
]

E2E_REFERENCES = [
    {"nl": "show customers who signed up last month",
     "sql": "SELECT name FROM customers WHERE strftime('%Y-%m', signup_date) = strftime('%Y-%m', date('now', '-1 month'))"},
    {"nl": "count purchases made today",
     "sql": "SELECT count(*) FROM purchases WHERE date(purchase_date) = date('now')"},
    {"nl": "total purchase amount in the last 7 days",
     "sql": "SELECT sum(total) FROM purchases WHERE purchase_date >= date('now', '-7 days')"},
    {"nl": "list products added this year",
     "sql": "SELECT title FROM products WHERE strftime('%Y', added_date) = strftime('%Y', date('now'))"},
    {"nl": "how many staff were hired before 2020",
     "sql": "SELECT count(*) FROM staff WHERE hired_date < '2020-01-01'"},
    {"nl": "shifts scheduled for tomorrow",
     "sql": "SELECT count(*) FROM shifts WHERE shift_date = date('now', '+1 day')"},
]

E2E_INSTRUCTIONS = """DateTime Instructions:
- 'today': date(DATE_column) = date('now')
- 'last month': strftime('%Y-%m', DATE_column) = strftime('%Y-%m', date('now', '-1 month'))
- 'in the last X days': DATE_column >= date('now', '-X days')
"""

E2E_BOOTSTRAP = [
    {"prompt": "Schema: customers\n \nQuestion: how many customers are there",
     "completion": "SELECT count(*) FROM customers", "source": "bootstrap", "task_tag": "datetime"},
    {"prompt": "Schema: purchases\n \nQuestion: total spent today",
     "completion": "SELECT sum(total) FROM purchases WHERE date(purchase_date) = date('now')",
     "source": "bootstrap", "task_tag": "datetime"},
    {"prompt": "Schema: products\n \nQuestion: products added this week",
     "completion": "SELECT title FROM products WHERE added_date >= date('now', '-7 days')",
     "source": "bootstrap", "task_tag": "datetime"},
    {"prompt": "Schema: staff\n \nQuestion: staff hired this year",
     "completion": "SELECT full_name FROM staff WHERE strftime('%Y', hired_date) = strftime('%Y', date('now'))",
     "source": "bootstrap", "task_tag": "datetime"},
]


def build_e2e_corpus(
    root: Path,
    setting: str = "A_Full",
    seed: int = 11,
    rounds: int = 2,
    per_schema_target: int = 6,
    mix_ratio: float = 0.25,
) -> Path:
    """Write a small offline corpus directory: 3 train schemas, refs, errors."""
    root.mkdir(parents=True, exist_ok=True)
    _jsonl(root / "schemas" / "schemas.jsonl", E2E_SCHEMAS)
    _jsonl(root / "references" / "datetime.jsonl", E2E_REFERENCES)
    _jsonl(
        root / "errors" / "errors.jsonl",
        [
            {
                "nl_query": "customers who signed up last week",
                "wrong_sql": "SELECT name FROM customers WHERE signup_date = 'last week'",
                "schema_id": "shop_a",
                "error_tag": "DateTime",
            }
        ],
    )
    (root / "instructions").mkdir(exist_ok=True)
    (root / "instructions" / "datetime.txt").write_text(E2E_INSTRUCTIONS, encoding="utf-8")
    _jsonl(root / "bootstrap" / "boot.jsonl", E2E_BOOTSTRAP)
    (root / "scenario.toml").write_text(
        "\n".join(
            [
                f'setting = "{setting}"',
                'instruction_file = "instructions/datetime.txt"',
                f"seed = {seed}",
                f"mix_ratio = {mix_ratio}",
                f"rounds = {rounds}",
                f"per_schema_target = {per_schema_target}",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    return root


NL_ALPHA_RULES = [
    {"prompt_contains": ["## Generated Examples", "CREATE TABLE customers("],
     "completion": "- How many customers signed up in window {{seed}}A?\n"
                   "- Show the total purchase amount in period {{seed}}A.\n"
                   "- List offtopic inventory colors {{seed}}A.\n"
                   "- Which customers purchased above the average in span {{seed}}A?\n"
                   "- Count purchases made in era {{seed}}A."},
    {"prompt_contains": ["## Generated Examples", "CREATE TABLE products("],
     "completion": "- How many products were added in window {{seed}}A?\n"
                   "- Show the average product price in period {{seed}}A.\n"
                   "- List products priced above ten in span {{seed}}A.\n"
                   "- Count products added in era {{seed}}A.\n"
                   "- Which product titles changed in phase {{seed}}A?"},
    {"prompt_contains": ["## Generated Examples", "CREATE TABLE staff("],
     "completion": "- How many staff were hired in window {{seed}}A?\n"
                   "- Count shifts worked in period {{seed}}A.\n"
                   "- List staff hired before span {{seed}}A.\n"
                   "- Show shifts per staff member in era {{seed}}A.\n"
                   "- Which staff joined during phase {{seed}}A?"},
]

NL_BETA_RULES = [
    {"prompt_contains": ["## Generated Examples", "CREATE TABLE customers("],
     "completion": "- Customers registered during window {{seed}}B?\n"
                   "- Purchases with large totals in period {{seed}}B.\n"
                   "- Signups counted across span {{seed}}B.\n"
                   "- Largest purchase in era {{seed}}B.\n"
                   "- Average purchase total in phase {{seed}}B."},
    {"prompt_contains": ["## Generated Examples", "CREATE TABLE products("],
     "completion": "- Products catalogued during window {{seed}}B?\n"
                   "- Cheapest product in period {{seed}}B.\n"
                   "- Product count across span {{seed}}B.\n"
                   "- Newest product in era {{seed}}B.\n"
                   "- Priciest product in phase {{seed}}B."},
    {"prompt_contains": ["## Generated Examples", "CREATE TABLE staff("],
     "completion": "- Staff rostered during window {{seed}}B?\n"
                   "- Shift totals in period {{seed}}B.\n"
                   "- Earliest hire across span {{seed}}B.\n"
                   "- Busiest staff member in era {{seed}}B.\n"
                   "- Hires counted in phase {{seed}}B."},
]

SQL_ONE_RULES = [
    {"prompt_contains": ["Question: Show the total purchase amount"],
     "completion": "The total is selected directly:\n```sql\nSELECT total FROM purchases\n```"},
    {"prompt_contains": ["Question: Count purchases made in era"],
     "completion": "```sql\nSELECT count(*) FROM purchases FETCH FIRST 1 ROWS ONLY\n```"},
    {"prompt_contains": ["Question: Which customers purchased above the average"],
     "completion": "```sql\nSELECT nonexistent_col FROM customers\n```"},
    {"prompt_contains": ["CREATE TABLE customers("],
     "completion": "Counting rows answers this.\n```sql\nSELECT count(*) FROM customers\n```"},
    {"prompt_contains": ["CREATE TABLE products("],
     "completion": "```sql\nSELECT count(*) FROM products\n```"},
    {"prompt_contains": ["CREATE TABLE staff("],
     "completion": "```sql\nSELECT count(*) FROM staff\n```"},
]

SQL_TWO_RULES = [
    {"prompt_contains": ["CREATE TABLE customers("],
     "completion": "```sql\nSELECT name FROM customers WHERE signup_date IS NOT NULL\n```"},
    {"prompt_contains": ["CREATE TABLE products("],
     "completion": "```sql\nSELECT title FROM products WHERE price > 1\n```"},
    {"prompt_contains": ["CREATE TABLE staff("],
     "completion": "```sql\nSELECT full_name FROM staff\n```"},
]

JUROR_RULES = [
    {"prompt_contains": ["## Assessment", "offtopic"],
     "completion": "The example is **Irrelevant** because it strays from the use case."},
    {"prompt_contains": ["## Assessment"], "completion": "**Relevant**"},
    {"prompt_contains": ["prepare an assessment", "SELECT total FROM purchases"],
     "completion": "- SQL Correctness: 5\n- Compliance: 4\n- NL Quality: 5\n\n"
                   "{\"SQL Correctness\": 5, \"Compliance\": 4, \"NL Quality\": 5}\n\n"
                   "Compliance loses a star for the bare projection."},
    {"prompt_contains": ["prepare an assessment"],
     "completion": "- SQL Correctness: 5\n- Compliance: 5\n- NL Quality: 4\n\n"
                   "```json\n{\"SQL Correctness\": 5, \"Compliance\": 5, \"NL Quality\": 4}\n```\n\n"
                   "Clean pair."},
]


def write_mock_fixtures(root: Path) -> dict[str, Path]:
    root.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, rules in (
        ("nl_alpha", NL_ALPHA_RULES),
        ("nl_beta", NL_BETA_RULES),
        ("sql_one", SQL_ONE_RULES),
        ("sql_two", SQL_TWO_RULES),
        ("juror", JUROR_RULES),
    ):
        path = root / f"{name}.jsonl"
        _jsonl(path, rules)
        paths[name] = path
    return paths


def e2e_backends(fixture_dir: Path) -> list[BackendSpec]:
    paths = write_mock_fixtures(fixture_dir)
    fast_retry = RetryPolicy(max_attempts=2, backoff=(0.0,))
    return [
        BackendSpec("nl-alpha", "mock", Role.NL_GENERATOR,
                    fixture_path=str(paths["nl_alpha"]), retry_policy=fast_retry),
        BackendSpec("nl-beta", "mock", Role.NL_GENERATOR,
                    fixture_path=str(paths["nl_beta"]), retry_policy=fast_retry),
        BackendSpec("sql-gen-one", "mock", Role.SQL_GENERATOR,
                    fixture_path=str(paths["sql_one"]), retry_policy=fast_retry),
        BackendSpec("sql-gen-two", "mock", Role.SQL_GENERATOR,
                    fixture_path=str(paths["sql_two"]), retry_policy=fast_retry),
        BackendSpec("judge-one", "mock", Role.JUROR,
                    fixture_path=str(paths["juror"]), retry_policy=fast_retry),
        BackendSpec("judge-two", "mock", Role.JUROR,
                    fixture_path=str(paths["juror"]), retry_policy=fast_retry),
    ]


@pytest.fixture
def e2e_corpus(tmp_path: Path) -> Path:
    return build_e2e_corpus(tmp_path / "corpus")


@pytest.fixture
def e2e_backend_specs(tmp_path: Path) -> list[BackendSpec]:
    return e2e_backends(tmp_path / "mock_fixtures")
