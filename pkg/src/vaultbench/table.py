"""Typed columnar tables: the unit of data the prep and analytics engines
operate on.

Columns are plain Python lists with ``None`` for null.  The five column
types are ``string``, ``int64``, ``float64``, ``bool`` and
``timestamp_ms_utc`` (epoch milliseconds, proleptic Gregorian calendar).
Row order is significant and preserved by every non-reordering operation.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field

from .errors import CsvParseError, InvalidSchemaError
from .util import iso_to_ms, ms_to_iso

COLUMN_TYPES = ("string", "int64", "float64", "bool", "timestamp_ms_utc")

Schema = list[tuple[str, str]]

_INT_RE = re.compile(r"^[+-]?\d+$")
_NONFINITE = {"nan", "inf", "-inf", "+inf", "infinity", "-infinity", "+infinity"}


def validate_schema(schema: Schema) -> None:
    seen: set[str] = set()
    for name, dtype in schema:
        if not name or not isinstance(name, str):
            raise InvalidSchemaError(f"invalid column name {name!r}")
        if name in seen:
            raise InvalidSchemaError(f"duplicate column name {name!r}")
        seen.add(name)
        if dtype not in COLUMN_TYPES:
            raise InvalidSchemaError(f"unknown column type {dtype!r} for column {name!r}")


def _conform(value, dtype: str, column: str):
    if value is None:
        return None
    if dtype == "string":
        if not isinstance(value, str):
            raise InvalidSchemaError(f"column {column!r}: {value!r} is not a string")
        return value
    if dtype == "bool":
        if not isinstance(value, bool):
            raise InvalidSchemaError(f"column {column!r}: {value!r} is not a bool")
        return value
    if dtype == "int64":
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidSchemaError(f"column {column!r}: {value!r} is not an int64")
        return value
    if dtype == "float64":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidSchemaError(f"column {column!r}: {value!r} is not a float64")
        out = float(value)
        if not math.isfinite(out):
            raise InvalidSchemaError(f"column {column!r}: non-finite float")
        return out
    if dtype == "timestamp_ms_utc":
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidSchemaError(f"column {column!r}: {value!r} is not a timestamp")
        return value
    raise InvalidSchemaError(f"unknown column type {dtype!r}")


@dataclass
class Table:
    schema: Schema
    columns: dict[str, list] = field(default_factory=dict)
    nrows: int = 0

    def __post_init__(self):
        self.schema = [(str(n), str(t)) for n, t in self.schema]
        validate_schema(self.schema)
        names = [n for n, _ in self.schema]
        if set(self.columns) != set(names):
            raise InvalidSchemaError("columns do not match schema")
        for name, dtype in self.schema:
            col = self.columns[name]
            if len(col) != self.nrows:
                raise InvalidSchemaError(f"column {name!r} length {len(col)} != nrows {self.nrows}")
            self.columns[name] = [_conform(v, dtype, name) for v in col]

    # -- construction -------------------------------------------------------

    @classmethod
    def from_columns(cls, schema: Schema, columns: dict[str, list]) -> "Table":
        names = [n for n, _ in schema]
        nrows = len(columns[names[0]]) if names else 0
        return cls(schema=list(schema), columns={n: list(columns[n]) for n in names}, nrows=nrows)

    @classmethod
    def from_rows(cls, schema: Schema, rows: list[tuple]) -> "Table":
        names = [n for n, _ in schema]
        columns = {n: [row[i] for row in rows] for i, n in enumerate(names)}
        return cls(schema=list(schema), columns=columns, nrows=len(rows))

    @classmethod
    def empty(cls, schema: Schema) -> "Table":
        return cls(schema=list(schema), columns={n: [] for n, _ in schema}, nrows=0)

    # -- access ---------------------------------------------------------------

    def column_names(self) -> list[str]:
        return [n for n, _ in self.schema]

    def dtype_of(self, name: str) -> str:
        for n, t in self.schema:
            if n == name:
                return t
        raise KeyError(name)

    def column(self, name: str) -> list:
        return self.columns[name]

    def row(self, i: int) -> tuple:
        return tuple(self.columns[n][i] for n, _ in self.schema)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Table):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.nrows == other.nrows
            and all(self.columns[n] == other.columns[n] for n, _ in self.schema)
        )

    # -- serialization ----------------------------------------------------------

    def to_doc(self) -> dict:
        return {
            "schema": [[n, t] for n, t in self.schema],
            "nrows": self.nrows,
            "columns": {n: self.columns[n] for n, _ in self.schema},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Table":
        schema = [(n, t) for n, t in doc["schema"]]
        return cls(schema=schema, columns={n: list(v) for n, v in doc["columns"].items()}, nrows=doc["nrows"])

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), separators=(",", ":"), sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "Table":
        return cls.from_doc(json.loads(text))


# -- CSV ingestion ---------------------------------------------------------------

def _parse_bool(text: str):
    lowered = text.lower()
    if lowered == "true":
        return True
    if lowered == "false":
        return False
    return None


def _is_int(text: str) -> bool:
    return bool(_INT_RE.match(text.strip()))


def _is_float(text: str) -> bool:
    stripped = text.strip()
    if stripped.lower() in _NONFINITE:
        return False
    try:
        float(stripped)
        return True
    except ValueError:
        return False


def _is_timestamp(text: str) -> bool:
    try:
        iso_to_ms(text)
        return True
    except ValueError:
        return False


def _infer_dtype(values: list[str]) -> str:
    """Full-column scan; lowest type in the precedence order
    bool < int64 < float64 < timestamp < string that fits all values."""
    present = [v for v in values if v != ""]
    if all(_parse_bool(v) is not None for v in present):
        return "bool"
    if all(_is_int(v) for v in present):
        return "int64"
    if all(_is_float(v) for v in present):
        return "float64"
    if all(_is_timestamp(v) for v in present):
        return "timestamp_ms_utc"
    return "string"


def _convert(text: str, dtype: str, line_number: int):
    if text == "":
        return None
    try:
        if dtype == "bool":
            parsed = _parse_bool(text)
            if parsed is None:
                raise ValueError(text)
            return parsed
        if dtype == "int64":
            return int(text.strip())
        if dtype == "float64":
            if text.strip().lower() in _NONFINITE:
                raise ValueError(text)
            return float(text.strip())
        if dtype == "timestamp_ms_utc":
            stripped = text.strip()
            if _INT_RE.match(stripped):
                return int(stripped)
            return iso_to_ms(stripped)
        return text
    except ValueError as exc:
        raise CsvParseError(
            f"line {line_number}: cannot parse {text!r} as {dtype}", line_number
        ) from exc


def parse_csv(text: str, schema: Schema | None = None) -> Table:
    """CSV with a header row, RFC-4180 quoting, empty field = null.

    Without an explicit ``schema`` the column types are inferred by a
    full-column scan.  Timestamps parse from ISO-8601 (inference) or
    epoch-milliseconds (explicit schema only, where integers would
    otherwise infer as int64).
    """
    reader = csv.reader(io.StringIO(text), strict=True)
    try:
        raw_rows = [(reader.line_num, row) for row in reader]
    except csv.Error as exc:
        raise CsvParseError(f"line {reader.line_num}: {exc}", reader.line_num) from exc
    if not raw_rows:
        raise CsvParseError("empty input: missing header row", 1)
    header_line, header = raw_rows[0]
    if any(not name.strip() for name in header):
        raise CsvParseError(f"line {header_line}: blank column name in header", header_line)
    header = [name.strip() for name in header]
    body = raw_rows[1:]
    for line_number, row in body:
        if len(row) != len(header):
            raise CsvParseError(
                f"line {line_number}: expected {len(header)} fields, found {len(row)}", line_number
            )

    if schema is None:
        dtypes = [
            _infer_dtype([row[i] for _ln, row in body]) for i in range(len(header))
        ]
        schema = list(zip(header, dtypes))
    else:
        if [n for n, _ in schema] != header:
            raise CsvParseError(f"header {header} does not match declared schema", header_line)

    columns: dict[str, list] = {name: [] for name in header}
    for line_number, row in body:
        for (name, dtype), cell in zip(schema, row):
            columns[name].append(_convert(cell, dtype, line_number))
    return Table(schema=list(schema), columns=columns, nrows=len(body))


def to_csv(table: Table) -> str:
    """Inverse of parse_csv given the same schema: null = empty field,
    booleans lowercase, timestamps ISO-8601."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.column_names())
    for i in range(table.nrows):
        out_row = []
        for name, dtype in table.schema:
            value = table.columns[name][i]
            if value is None:
                out_row.append("")
            elif dtype == "bool":
                out_row.append("true" if value else "false")
            elif dtype == "timestamp_ms_utc":
                out_row.append(ms_to_iso(value))
            elif dtype == "float64":
                out_row.append(repr(value))
            else:
                out_row.append(str(value))
        writer.writerow(out_row)
    return buffer.getvalue()
