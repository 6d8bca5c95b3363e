"""Prompt template loading and rendering.

Templates are plain text files with named ``{placeholder}`` slots. A line
consisting solely of a placeholder is a block slot: it receives a
multi-line value and disappears entirely when the value is empty, which
keeps section headers followed by zero bullets byte-stable. Rendering is
a pure function of its inputs.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

NL_ADDREF = "nl_addref.txt"
SQL_GENERATE = "sql_generate.txt"
JUDGE_QUALITY = "judge_quality.txt"
JUDGE_RELEVANCE = "judge_relevance.txt"

DEFAULT_DATETIME_INSTRUCTIONS = "datetime_oracle.txt"


def load_template(name: str, override_dir: str | Path | None = None) -> str:
    """Read a template by file name, preferring an override directory."""
    if override_dir is not None:
        candidate = Path(override_dir) / name
        if candidate.is_file():
            return candidate.read_text(encoding="utf-8")
    return (
        resources.files("sqldistill")
        .joinpath(f"data/templates/{name}")
        .read_text(encoding="utf-8")
    )


def load_instruction_block(name: str = DEFAULT_DATETIME_INSTRUCTIONS) -> str:
    """Read a packaged instruction block (e.g. the DateTime rules)."""
    return (
        resources.files("sqldistill")
        .joinpath(f"data/instructions/{name}")
        .read_text(encoding="utf-8")
    )


def packaged_rules_path(dialect_file: str) -> Path:
    return Path(str(resources.files("sqldistill").joinpath(f"data/rules/{dialect_file}")))


def bullet_list(items: list[str]) -> str:
    """Render items as '- ' bullets, one per line; empty list renders empty.

    Embedded newlines and whitespace runs are collapsed so a single item
    can never break the one-bullet-per-line structure.
    """
    return "\n".join(f"- {' '.join(str(item).split())}" for item in items)


def render(template: str, values: dict[str, str]) -> str:
    """Substitute placeholders; block-slot lines with empty values vanish."""
    out: list[str] = []
    for line in template.split("\n"):
        stripped = line.strip()
        if (
            stripped.startswith("{")
            and stripped.endswith("}")
            and stripped[1:-1].isidentifier()
            and stripped[1:-1] in values
        ):
            value = values[stripped[1:-1]]
            if value == "":
                continue
            out.append(value)
        elif "{" in line:
            out.append(line.format(**values))
        else:
            out.append(line)
    return "\n".join(out)
