"""Read-only tabular stores and the restricted query language over them.

The query grammar deliberately stays small so the natural-language-to-query
translation loop remains checkable against a brute-force row filter:

    SELECT <column | COUNT | AVG(column) | MIN(column) | MAX(column)>
    FROM <table>
    [WHERE <column> = <literal> [AND <column> = <literal>]...]

Literals may be quoted with single or double quotes. Equality compares
numerically when both sides parse as numbers, otherwise as exact strings.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from reflectool.backend import Backend, GenerationRequest
from reflectool.errors import FormatError
from reflectool.model import Observation, ObservationStatus
from reflectool.toolbox.calculator import format_number

MAX_RESULT_ROWS = 50
MAX_QUERY_ATTEMPTS = 3


class QueryError(Exception):
    """Raised for queries that do not parse or cannot be executed."""


@dataclass(frozen=True)
class Table:
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(
                    f"row arity {len(row)} != column count {len(self.columns)}"
                )


@dataclass
class TableStore:
    """Named tables plus optional per-column documentation."""

    tables: dict[str, Table] = field(default_factory=dict)
    docs: dict[str, dict[str, str]] = field(default_factory=dict)


def load_table_store(directory: str | Path) -> TableStore:
    """Build a store from a directory of CSV files (first row = header) and
    an optional ``manual.json`` mapping table -> column -> description."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"table store directory not found: {directory}")
    store = TableStore()
    for csv_path in sorted(directory.glob("*.csv")):
        with open(csv_path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            rows = [tuple(cell for cell in row) for row in reader]
        if not rows:
            raise FormatError(f"{csv_path}: empty table file")
        try:
            store.tables[csv_path.stem] = Table(columns=rows[0], rows=tuple(rows[1:]))
        except ValueError as exc:
            raise FormatError(f"{csv_path}: {exc}") from exc
    manual = directory / "manual.json"
    if manual.exists():
        try:
            raw = json.loads(manual.read_text(encoding="utf-8"))
            store.docs = {
                table: {col: str(desc) for col, desc in cols.items()}
                for table, cols in raw.items()
            }
        except (json.JSONDecodeError, AttributeError, TypeError) as exc:
            raise FormatError(f"{manual}: {exc}") from exc
    return store


# --- query parsing and execution --------------------------------------------

_QUERY = re.compile(
    r"^\s*SELECT\s+(?P<target>.+?)\s+FROM\s+(?P<table>\w+)"
    r"(?:\s+WHERE\s+(?P<where>.+?))?\s*;?\s*$",
    re.IGNORECASE | re.DOTALL,
)
_AGGREGATE = re.compile(r"^(AVG|MIN|MAX)\s*\(\s*(\w+)\s*\)$", re.IGNORECASE)
_CONDITION = re.compile(r"^(\w+)\s*=\s*('[^']*'|\"[^\"]*\"|\S+)$", re.DOTALL)


@dataclass(frozen=True)
class Query:
    table: str
    target: str  # column name, or "COUNT"/"AVG"/"MIN"/"MAX"
    target_column: str | None
    conditions: tuple[tuple[str, str], ...]


def parse_query(text: str) -> Query:
    match = _QUERY.match(text.strip())
    if match is None:
        raise QueryError(
            "query must look like: SELECT <col|COUNT|AVG(col)|MIN(col)|MAX(col)> "
            "FROM <table> [WHERE <col> = <value> [AND ...]]"
        )
    target_raw = match.group("target").strip()
    if target_raw.upper() == "COUNT":
        target, column = "COUNT", None
    else:
        agg = _AGGREGATE.match(target_raw)
        if agg:
            target, column = agg.group(1).upper(), agg.group(2)
        elif re.fullmatch(r"\w+", target_raw):
            target, column = "SELECT", target_raw
        else:
            raise QueryError(f"unsupported select target {target_raw!r}")
    conditions: list[tuple[str, str]] = []
    where = match.group("where")
    if where:
        for part in re.split(r"\s+AND\s+", where.strip(), flags=re.IGNORECASE):
            cond = _CONDITION.match(part.strip())
            if cond is None:
                raise QueryError(f"bad WHERE condition {part.strip()!r}")
            conditions.append((cond.group(1), _strip_quotes(cond.group(2))))
    return Query(match.group("table"), target, column, tuple(conditions))


def _strip_quotes(literal: str) -> str:
    if len(literal) >= 2 and literal[0] == literal[-1] and literal[0] in "'\"":
        return literal[1:-1]
    return literal


def _values_equal(cell: str, literal: str) -> bool:
    try:
        return float(cell) == float(literal)
    except ValueError:
        return cell == literal


def execute_query(query: Query, store: TableStore) -> list[str]:
    """Run a parsed query; returns the selected cells, or the single
    aggregate value, as strings."""
    table = store.tables.get(query.table)
    if table is None:
        known = ", ".join(sorted(store.tables)) or "(none)"
        raise QueryError(f"unknown table {query.table!r}; available: {known}")
    col_index = {name: i for i, name in enumerate(table.columns)}
    for column, _ in query.conditions:
        if column not in col_index:
            raise QueryError(f"unknown column {column!r} in table {query.table!r}")
    if query.target_column is not None and query.target_column not in col_index:
        raise QueryError(
            f"unknown column {query.target_column!r} in table {query.table!r}"
        )
    rows = [
        row
        for row in table.rows
        if all(
            _values_equal(row[col_index[column]], literal)
            for column, literal in query.conditions
        )
    ]
    if query.target == "COUNT":
        return [str(len(rows))]
    assert query.target_column is not None
    cells = [row[col_index[query.target_column]] for row in rows]
    if query.target == "SELECT":
        return cells
    if not cells:
        raise QueryError(f"{query.target} over zero matching rows")
    try:
        numbers = [float(cell) for cell in cells]
    except ValueError as exc:
        raise QueryError(
            f"non-numeric value in column {query.target_column!r}: {exc}"
        ) from exc
    if query.target == "AVG":
        return [format_number(sum(numbers) / len(numbers))]
    if query.target == "MIN":
        return [format_number(min(numbers))]
    return [format_number(max(numbers))]


def format_result(values: list[str]) -> str:
    if not values:
        return "(no rows)"
    shown = values[:MAX_RESULT_ROWS]
    text = "\n".join(shown)
    if len(values) > MAX_RESULT_ROWS:
        text += f"\n... ({len(values) - MAX_RESULT_ROWS} more rows)"
    return text


# --- natural language -> query loop -----------------------------------------

_SQL_SYSTEM = (
    "You translate a request into exactly one query in this restricted language:\n"
    "SELECT <column|COUNT|AVG(column)|MIN(column)|MAX(column)> FROM <table> "
    "[WHERE <column> = <value> [AND ...]]\n"
    "Reply with the query only, no commentary."
)


def _schema_text(store: TableStore) -> str:
    lines = []
    for name, table in store.tables.items():
        lines.append(f"table {name}({', '.join(table.columns)})")
    return "\n".join(lines)


def _clean_reply(reply: str) -> str:
    text = reply.strip()
    if text.startswith("```"):
        text = re.sub(r"^```[a-zA-Z]*\n?", "", text)
        text = re.sub(r"\n?```$", "", text.strip())
    return text.strip()


def structured_query(
    nl_request: str,
    store: TableStore,
    backend: Backend,
    max_attempts: int = MAX_QUERY_ATTEMPTS,
) -> tuple[Observation, int]:
    """Have the backend translate ``nl_request`` into the restricted query
    language, execute it, and re-prompt with the error message on failure.

    Returns the observation and the number of attempts used (at most
    ``max_attempts`` backend calls).
    """
    schema = _schema_text(store)
    user_prompt = f"Schema:\n{schema}\n\nRequest: {nl_request}"
    last_error = "no attempt made"
    attempts = 0
    for attempts in range(1, max_attempts + 1):
        reply = backend.generate(
            GenerationRequest(system_prompt=_SQL_SYSTEM, user_prompt=user_prompt, role="sql")
        )
        try:
            values = execute_query(parse_query(_clean_reply(reply)), store)
        except QueryError as exc:
            last_error = str(exc)
            user_prompt = (
                f"Schema:\n{schema}\n\nRequest: {nl_request}\n\n"
                f"Your previous query failed with: {last_error}\n"
                "Reply with a corrected query."
            )
            continue
        return Observation(format_result(values)), attempts
    return (
        Observation(
            f"query failed after {attempts} attempts: {last_error}",
            ObservationStatus.TOOL_ERROR,
        ),
        attempts,
    )


def schema_manual(query: str, store: TableStore) -> str:
    """Documentation for tables/columns whose name or description contains
    any query token (case-insensitive); the full manual when nothing hits."""
    from reflectool.memory import tokenize

    tokens = tokenize(query)

    def hits(text: str) -> bool:
        lowered = text.lower()
        return any(token in lowered for token in tokens)

    sections: list[str] = []
    for name, table in store.tables.items():
        docs = store.docs.get(name, {})
        header = f"Table {name} ({', '.join(table.columns)}):"
        if hits(name):
            selected = list(docs.items())
        else:
            selected = [
                (col, desc) for col, desc in docs.items() if hits(col) or hits(desc)
            ]
            if not selected:
                continue
        body = "\n".join(f"  {col}: {desc}" for col, desc in selected)
        sections.append(header + ("\n" + body if body else ""))
    if sections:
        return "\n".join(sections)
    # no hit anywhere: return the whole manual
    sections = []
    for name, table in store.tables.items():
        docs = store.docs.get(name, {})
        header = f"Table {name} ({', '.join(table.columns)}):"
        body = "\n".join(f"  {col}: {desc}" for col, desc in docs.items())
        sections.append(header + ("\n" + body if body else ""))
    return "\n".join(sections)
