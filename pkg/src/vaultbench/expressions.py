"""Expression and predicate evaluation over columnar tables.

Expressions and predicates are plain JSON-able dicts (the same documents
that appear inside saved pipeline definitions), dispatched on their
``"op"`` key.  Evaluation is columnar: an expression yields a whole
column, a predicate yields a column of three-valued logic results
(True / False / None).

Semantics follow SQL conventions: arithmetic with null yields null,
comparisons with null yield null, aggregates skip nulls, division by
zero and log of a non-positive value yield null, and any non-finite
float result collapses to null.
"""

from __future__ import annotations

import math
from datetime import datetime, timedelta, timezone

from .errors import TypeMismatchError, UnknownColumnError
from .table import Schema, Table

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

NUMERIC = ("int64", "float64")

BINARY_OPS = ("add", "sub", "mul", "div")
TS_EXTRACT_OPS = ("ts_year", "ts_month", "ts_day", "ts_hour", "ts_weekday")
AGG_FNS = ("mean", "sum", "min", "max", "count")
CMP_OPS = ("eq", "ne", "lt", "le", "gt", "ge")

_COMPARABLE = {
    "int64": "numeric",
    "float64": "numeric",
    "string": "string",
    "bool": "bool",
    "timestamp_ms_utc": "timestamp",
}


# -- construction helpers (used by tests and the demo) -------------------------

def lit(value, dtype: str | None = None) -> dict:
    doc = {"op": "lit", "value": value}
    if dtype is not None:
        doc["dtype"] = dtype
    return doc


def col(name: str) -> dict:
    return {"op": "col", "name": name}


def binop(op: str, left: dict, right: dict) -> dict:
    return {"op": op, "left": left, "right": right}


def cmp(op: str, left: dict, right: dict) -> dict:
    return {"op": "cmp", "cmp": op, "left": left, "right": right}


# -- schema helpers ---------------------------------------------------------------

def _dtype_of(schema: Schema, name: str, step_index: int | None):
    for n, t in schema:
        if n == name:
            return t
    raise UnknownColumnError(f"unknown column {name!r}", step_index)


def _lit_dtype(value, declared: str | None, step_index: int | None) -> str:
    if declared is not None:
        if declared == "timestamp_ms_utc" and isinstance(value, int) and not isinstance(value, bool):
            return declared
        if declared == "float64" and isinstance(value, (int, float)) and not isinstance(value, bool):
            return declared
        if declared == "int64" and isinstance(value, int) and not isinstance(value, bool):
            return declared
        if declared == "string" and isinstance(value, str):
            return declared
        if declared == "bool" and isinstance(value, bool):
            return declared
        raise TypeMismatchError(f"literal {value!r} does not conform to {declared}", step_index)
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int64"
    if isinstance(value, float):
        return "float64"
    if isinstance(value, str):
        return "string"
    raise TypeMismatchError(f"unsupported literal {value!r}", step_index)


def infer_expr_dtype(expr: dict, schema: Schema, step_index: int | None = None) -> str:
    """Static type of ``expr`` against ``schema``; raises step-tagged
    unknown-column / type-mismatch errors."""
    op = expr.get("op")
    if op == "lit":
        return _lit_dtype(expr.get("value"), expr.get("dtype"), step_index)
    if op == "col":
        return _dtype_of(schema, expr["name"], step_index)
    if op in BINARY_OPS:
        left = infer_expr_dtype(expr["left"], schema, step_index)
        right = infer_expr_dtype(expr["right"], schema, step_index)
        if left not in NUMERIC or right not in NUMERIC:
            raise TypeMismatchError(f"{op} requires numeric operands, got {left}/{right}", step_index)
        if op == "div":
            return "float64"
        return "int64" if left == right == "int64" else "float64"
    if op == "abs":
        arg = infer_expr_dtype(expr["arg"], schema, step_index)
        if arg not in NUMERIC:
            raise TypeMismatchError(f"abs requires a numeric operand, got {arg}", step_index)
        return arg
    if op == "log":
        arg = infer_expr_dtype(expr["arg"], schema, step_index)
        if arg not in NUMERIC:
            raise TypeMismatchError(f"log requires a numeric operand, got {arg}", step_index)
        return "float64"
    if op == "pow":
        base = infer_expr_dtype(expr["base"], schema, step_index)
        exponent = infer_expr_dtype(expr["exp"], schema, step_index)
        if base not in NUMERIC or exponent not in NUMERIC:
            raise TypeMismatchError(f"pow requires numeric operands, got {base}/{exponent}", step_index)
        return "float64"
    if op in TS_EXTRACT_OPS:
        arg = infer_expr_dtype(expr["arg"], schema, step_index)
        if arg != "timestamp_ms_utc":
            raise TypeMismatchError(f"{op} requires a timestamp operand, got {arg}", step_index)
        return "int64"
    if op == "ts_diff_seconds":
        left = infer_expr_dtype(expr["left"], schema, step_index)
        right = infer_expr_dtype(expr["right"], schema, step_index)
        if left != "timestamp_ms_utc" or right != "timestamp_ms_utc":
            raise TypeMismatchError("ts_diff_seconds requires timestamp operands", step_index)
        return "float64"
    if op == "shift":
        dtype = _dtype_of(schema, expr["column"], step_index)
        offset = expr.get("offset")
        if not isinstance(offset, int) or isinstance(offset, bool) or offset < 0:
            raise TypeMismatchError("shift offset must be a non-negative integer", step_index)
        if expr.get("direction") not in ("lag", "lead"):
            raise TypeMismatchError("shift direction must be lag or lead", step_index)
        return dtype
    if op == "cond":
        validate_predicate(expr["pred"], schema, step_index)
        then_t = infer_expr_dtype(expr["then"], schema, step_index)
        else_t = infer_expr_dtype(expr["else"], schema, step_index)
        if then_t == else_t:
            return then_t
        if then_t in NUMERIC and else_t in NUMERIC:
            return "float64"
        raise TypeMismatchError(f"cond branches disagree: {then_t} vs {else_t}", step_index)
    if op == "agg_ref":
        fn = expr.get("fn")
        if fn not in AGG_FNS:
            raise TypeMismatchError(f"unknown aggregate {fn!r}", step_index)
        dtype = _dtype_of(schema, expr["column"], step_index)
        return agg_output_dtype(fn, dtype, step_index)
    raise TypeMismatchError(f"unknown expression op {op!r}", step_index)


def agg_output_dtype(fn: str, dtype: str, step_index: int | None = None) -> str:
    if fn == "count":
        return "int64"
    if fn in ("mean", "sum") and dtype not in NUMERIC:
        raise TypeMismatchError(f"{fn} requires a numeric column, got {dtype}", step_index)
    if fn == "mean":
        return "float64"
    if fn == "sum":
        return dtype
    return dtype  # min/max preserve the column type


def validate_predicate(pred: dict, schema: Schema, step_index: int | None = None) -> None:
    op = pred.get("op")
    if op == "cmp":
        if pred.get("cmp") not in CMP_OPS:
            raise TypeMismatchError(f"unknown comparison {pred.get('cmp')!r}", step_index)
        left = infer_expr_dtype(pred["left"], schema, step_index)
        right = infer_expr_dtype(pred["right"], schema, step_index)
        if _COMPARABLE[left] != _COMPARABLE[right]:
            raise TypeMismatchError(f"cannot compare {left} with {right}", step_index)
        return
    if op in ("is_null", "not_null"):
        infer_expr_dtype(pred["arg"], schema, step_index)
        return
    if op in ("and", "or"):
        validate_predicate(pred["left"], schema, step_index)
        validate_predicate(pred["right"], schema, step_index)
        return
    if op == "not":
        validate_predicate(pred["arg"], schema, step_index)
        return
    raise TypeMismatchError(f"unknown predicate op {op!r}", step_index)


# -- arithmetic kernels -------------------------------------------------------------

def _finite_or_none(value: float):
    return value if math.isfinite(value) else None


def _add(a, b):
    return _finite_or_none(a + b) if isinstance(a, float) or isinstance(b, float) else a + b


def _sub(a, b):
    return _finite_or_none(a - b) if isinstance(a, float) or isinstance(b, float) else a - b


def _mul(a, b):
    return _finite_or_none(a * b) if isinstance(a, float) or isinstance(b, float) else a * b


def _div(a, b):
    if b == 0:
        return None
    return _finite_or_none(a / b)


_BINARY_FN = {"add": _add, "sub": _sub, "mul": _mul, "div": _div}


def _pow(base, exponent):
    try:
        result = float(base) ** float(exponent)
    except (OverflowError, ValueError, ZeroDivisionError):
        return None
    if isinstance(result, complex):
        return None
    return _finite_or_none(result)


def _ts_parts(ms: int):
    return _EPOCH + timedelta(milliseconds=ms)


_TS_EXTRACT_FN = {
    "ts_year": lambda dt: dt.year,
    "ts_month": lambda dt: dt.month,
    "ts_day": lambda dt: dt.day,
    "ts_hour": lambda dt: dt.hour,
    "ts_weekday": lambda dt: dt.weekday(),  # Monday = 0
}


def compute_aggregate(fn: str, values: list, dtype: str):
    """Windowless aggregate over one column.

    Sums accumulate left-to-right in 64-bit floats (ints stay exact);
    all aggregates skip nulls.  Empty input: count = 0, others null.
    """
    present = [v for v in values if v is not None]
    if fn == "count":
        return len(present)
    if not present:
        return None
    if fn == "sum":
        total = present[0]
        for v in present[1:]:
            total = total + v
        if dtype == "float64":
            return _finite_or_none(float(total))
        return total
    if fn == "mean":
        total = float(present[0])
        for v in present[1:]:
            total = total + v
        return _finite_or_none(total / len(present))
    if fn == "min":
        best = present[0]
        for v in present[1:]:
            if v < best:
                best = v
        return best
    if fn == "max":
        best = present[0]
        for v in present[1:]:
            if v > best:
                best = v
        return best
    raise TypeMismatchError(f"unknown aggregate {fn!r}")


# -- evaluation -----------------------------------------------------------------------

def eval_expr(expr: dict, table: Table) -> list:
    """Evaluates ``expr`` to a full column of ``table.nrows`` values."""
    op = expr["op"]
    n = table.nrows
    if op == "lit":
        value = expr["value"]
        if isinstance(value, int) and not isinstance(value, bool):
            declared = expr.get("dtype")
            if declared == "float64":
                value = float(value)
        return [value] * n
    if op == "col":
        return list(table.columns[expr["name"]])
    if op in BINARY_OPS:
        left = eval_expr(expr["left"], table)
        right = eval_expr(expr["right"], table)
        fn = _BINARY_FN[op]
        return [None if a is None or b is None else fn(a, b) for a, b in zip(left, right)]
    if op == "abs":
        return [None if v is None else abs(v) for v in eval_expr(expr["arg"], table)]
    if op == "log":
        return [
            None if v is None or v <= 0 else _finite_or_none(math.log(v))
            for v in eval_expr(expr["arg"], table)
        ]
    if op == "pow":
        base = eval_expr(expr["base"], table)
        exponent = eval_expr(expr["exp"], table)
        return [None if a is None or b is None else _pow(a, b) for a, b in zip(base, exponent)]
    if op in TS_EXTRACT_OPS:
        fn = _TS_EXTRACT_FN[op]
        return [None if v is None else fn(_ts_parts(v)) for v in eval_expr(expr["arg"], table)]
    if op == "ts_diff_seconds":
        left = eval_expr(expr["left"], table)
        right = eval_expr(expr["right"], table)
        return [
            None if a is None or b is None else (a - b) / 1000.0 for a, b in zip(left, right)
        ]
    if op == "shift":
        source = table.columns[expr["column"]]
        offset = expr["offset"]
        if expr["direction"] == "lag":
            return [source[i - offset] if i - offset >= 0 else None for i in range(n)]
        return [source[i + offset] if i + offset < n else None for i in range(n)]
    if op == "cond":
        flags = eval_pred(expr["pred"], table)
        then_vals = eval_expr(expr["then"], table)
        else_vals = eval_expr(expr["else"], table)
        # SQL CASE: a null condition selects the else branch
        out = [t if flag is True else e for flag, t, e in zip(flags, then_vals, else_vals)]
        then_t = infer_expr_dtype(expr["then"], table.schema)
        else_t = infer_expr_dtype(expr["else"], table.schema)
        if then_t != else_t and {then_t, else_t} <= set(NUMERIC):
            out = [None if v is None else float(v) for v in out]
        return out
    if op == "agg_ref":
        name = expr["column"]
        value = compute_aggregate(expr["fn"], table.columns[name], table.dtype_of(name))
        return [value] * n
    raise TypeMismatchError(f"unknown expression op {op!r}")


def _cmp_tv(op: str, a, b):
    if a is None or b is None:
        return None
    if op == "eq":
        return a == b
    if op == "ne":
        return a != b
    if op == "lt":
        return a < b
    if op == "le":
        return a <= b
    if op == "gt":
        return a > b
    return a >= b


def eval_pred(pred: dict, table: Table) -> list:
    """Three-valued logic column: True / False / None per row."""
    op = pred["op"]
    if op == "cmp":
        left = eval_expr(pred["left"], table)
        right = eval_expr(pred["right"], table)
        code = pred["cmp"]
        return [_cmp_tv(code, a, b) for a, b in zip(left, right)]
    if op == "is_null":
        return [v is None for v in eval_expr(pred["arg"], table)]
    if op == "not_null":
        return [v is not None for v in eval_expr(pred["arg"], table)]
    if op == "and":
        left = eval_pred(pred["left"], table)
        right = eval_pred(pred["right"], table)
        return [
            False if a is False or b is False else (None if a is None or b is None else True)
            for a, b in zip(left, right)
        ]
    if op == "or":
        left = eval_pred(pred["left"], table)
        right = eval_pred(pred["right"], table)
        return [
            True if a is True or b is True else (None if a is None or b is None else False)
            for a, b in zip(left, right)
        ]
    if op == "not":
        return [None if v is None else not v for v in eval_pred(pred["arg"], table)]
    raise TypeMismatchError(f"unknown predicate op {op!r}")
