"""Lexical utilities for SQL text: masking, statement classification, table refs.

All pattern matching in the filter pipeline runs on *masked* SQL so that
string literals and quoted identifiers are opaque: a forbidden keyword
inside a literal must never trigger a rule. This module is dialect-light
on purpose; it never builds a full AST.
"""

from __future__ import annotations

from .errors import LexError

# Placeholders used in masked text. Rule-pack regexes may rely on these.
STRING_MASK = "'s'"
QUOTED_IDENT_MASK = '"q"'
BACKTICK_MASK = "`b`"

_VERBS = {
    "SELECT", "INSERT", "UPDATE", "DELETE", "REPLACE", "MERGE",
    "VALUES", "CREATE", "DROP", "ALTER", "TRUNCATE", "PRAGMA",
    "ATTACH", "GRANT", "REVOKE", "BEGIN", "COMMIT", "ROLLBACK",
}

_FROM_LIST_TERMINATORS = {
    "WHERE", "GROUP", "HAVING", "ORDER", "UNION", "INTERSECT",
    "EXCEPT", "MINUS", "LIMIT", "FETCH", "WINDOW", "CONNECT", "START",
}

_JOIN_MODIFIERS = {"INNER", "LEFT", "RIGHT", "FULL", "CROSS", "OUTER", "NATURAL"}


def _scan_quoted(sql: str, start: int, quote: str) -> int:
    """Return the index one past the closing quote; doubled quotes escape."""
    i = start + 1
    n = len(sql)
    while i < n:
        if sql[i] == quote:
            if i + 1 < n and sql[i + 1] == quote:
                i += 2
                continue
            return i + 1
        i += 1
    raise LexError(f"unterminated {quote}-quoted region starting at offset {start}")


def mask_sql(sql: str, keep_quoted_idents: bool = False) -> str:
    """Mask literals, quoted identifiers and comments in SQL text.

    String literals become ``'s'``, double-quoted identifiers ``"q"``,
    backtick-quoted identifiers ```b``` and comments a single space; all
    other characters (including whitespace) are preserved verbatim.

    With ``keep_quoted_idents=True`` double-quoted identifiers are kept
    with their content; they are identifiers, not data, so lint-level
    checks may need their names.

    Raises LexError for unterminated literals, identifiers or block
    comments.
    """
    out: list[str] = []
    i = 0
    n = len(sql)
    while i < n:
        ch = sql[i]
        if ch == "'":
            i = _scan_quoted(sql, i, "'")
            out.append(STRING_MASK)
        elif ch == '"':
            j = _scan_quoted(sql, i, '"')
            out.append(sql[i:j] if keep_quoted_idents else QUOTED_IDENT_MASK)
            i = j
        elif ch == "`":
            i = _scan_quoted(sql, i, "`")
            out.append(BACKTICK_MASK)
        elif ch == "-" and sql.startswith("--", i):
            j = sql.find("\n", i)
            out.append(" ")
            i = n if j < 0 else j  # the newline itself is preserved
        elif ch == "/" and sql.startswith("/*", i):
            j = sql.find("*/", i + 2)
            if j < 0:
                raise LexError(f"unterminated block comment starting at offset {i}")
            out.append(" ")
            i = j + 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _depth_tokens(masked: str) -> list[tuple[str, int]]:
    """Tokenize masked SQL into (token, paren_depth) pairs.

    Word tokens keep their original case; masked regions appear as their
    placeholder. Only tokens relevant to structure are emitted (words,
    placeholders, commas, semicolons).
    """
    tokens: list[tuple[str, int]] = []
    depth = 0
    i = 0
    n = len(masked)
    while i < n:
        ch = masked[i]
        if ch == "(":
            tokens.append(("(", depth))
            depth += 1
            i += 1
        elif ch == ")":
            depth = max(0, depth - 1)
            tokens.append((")", depth))
            i += 1
        elif ch.isalpha() or ch == "_":
            j = i + 1
            while j < n and (masked[j].isalnum() or masked[j] in "_$#"):
                j += 1
            tokens.append((masked[i:j], depth))
            i = j
        elif ch in "'\"`":
            # either a 3-char mask placeholder or a kept quoted identifier
            j = _scan_quoted(masked, i, ch)
            tokens.append((masked[i:j], depth))
            i = j
        elif ch in ",;":
            tokens.append((ch, depth))
            i += 1
        else:
            i += 1
    return tokens


def parens_balanced(sql: str) -> bool:
    masked = mask_sql(sql)
    depth = 0
    for ch in masked:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                return False
    return depth == 0


def statement_verb(sql: str) -> str:
    """Return the main verb of a statement, looking through a WITH prefix.

    CTE bodies sit at paren depth > 0, so the first depth-0 verb after
    WITH is the statement that actually runs.
    """
    toks = _depth_tokens(mask_sql(sql))
    words = [(t.upper(), d) for t, d in toks if t[0].isalpha() or t[0] == "_"]
    if not words:
        return ""
    first = words[0][0]
    if first != "WITH":
        return first
    for word, depth in words[1:]:
        if depth == 0 and word in _VERBS:
            return word
    return "WITH"


def is_single_statement(sql: str) -> bool:
    """True when the text holds at most one statement (trailing ; allowed)."""
    toks = _depth_tokens(mask_sql(sql))
    seen_semi = False
    for t, d in toks:
        if seen_semi and t != ";":
            return False
        if t == ";" and d == 0:
            seen_semi = True
    return True


def is_create_table(ddl: str) -> bool:
    toks = _depth_tokens(mask_sql(ddl))
    words = [t.upper() for t, _ in toks if t[0].isalpha() or t[0] == "_"]
    return len(words) >= 2 and words[0] == "CREATE" and words[1] == "TABLE"


def has_top_level_order_by(sql: str) -> bool:
    """True when the outermost query carries an ORDER BY clause."""
    toks = [(t.upper(), d) for t, d in _depth_tokens(mask_sql(sql))]
    for i in range(len(toks) - 1):
        if toks[i] == ("ORDER", 0) and toks[i + 1] == ("BY", 0):
            return True
    return False


def _unquote(token: str) -> str:
    if len(token) >= 2 and token[0] == '"' and token[-1] == '"':
        return token[1:-1].replace('""', '"')
    return token


def cte_names(sql: str) -> set[str]:
    """Names introduced by a top-level WITH clause, lowercased."""
    toks = _depth_tokens(mask_sql(sql, keep_quoted_idents=True))
    words = [(t, d) for t, d in toks if t[0].isalpha() or t[0] in "_\""]
    if not words or words[0][0].upper() != "WITH":
        return set()
    names: set[str] = set()
    for token, depth in words[1:]:
        upper = token.upper()
        if depth == 0 and upper in _VERBS:
            break
        if depth != 0 or upper in ("RECURSIVE", "AS", "NOT", "MATERIALIZED"):
            continue
        names.add(_unquote(token).lower())
    return names


def referenced_tables(sql: str) -> set[str]:
    """Base-table names referenced in FROM/JOIN clauses, lowercased.

    Lint-level extraction: derived tables (subqueries) are skipped, FROM
    lists with commas and the usual JOIN spellings are handled, and FROM
    inside non-query parens (EXTRACT(YEAR FROM col), TRIM(... FROM ...))
    is ignored by tracking which paren group opens a query scope. Names
    introduced by a top-level WITH are excluded by the caller via
    cte_names().
    """
    toks = _depth_tokens(mask_sql(sql, keep_quoted_idents=True))
    tables: set[str] = set()
    # scopes[d] is True when the paren group at depth d is a query (its
    # first word was SELECT/WITH); depth 0 always is. None = undetermined.
    scopes: list[bool | None] = [True]
    from_list_at: set[int] = set()
    expect_table = False

    for token, depth in toks:
        if token == "(":
            while len(scopes) <= depth + 1:
                scopes.append(None)
            scopes[depth + 1] = None
            from_list_at.discard(depth + 1)
            expect_table = False  # a paren after FROM/JOIN is a derived table
            continue
        if token == ")":
            from_list_at.discard(depth + 1)
            continue

        upper = token.upper()
        is_name = token[0].isalpha() or token[0] in '_"'
        if is_name and depth < len(scopes) and scopes[depth] is None:
            scopes[depth] = upper in ("SELECT", "WITH")
        if not (depth < len(scopes) and scopes[depth]):
            continue

        if upper in ("FROM", "JOIN"):
            expect_table = True
            if upper == "FROM":
                from_list_at.add(depth)
            continue
        if expect_table:
            expect_table = False
            if is_name and upper not in _VERBS and upper != "DUAL":
                tables.add(_unquote(token).lower())
            continue
        if token == "," and depth in from_list_at:
            expect_table = True
            continue
        if upper in _FROM_LIST_TERMINATORS and depth in from_list_at:
            from_list_at.discard(depth)
    return tables


def unknown_tables(sql: str, known: set[str]) -> set[str]:
    """Referenced base tables that are neither known nor CTE names."""
    known_lower = {k.lower() for k in known}
    return referenced_tables(sql) - cte_names(sql) - known_lower
