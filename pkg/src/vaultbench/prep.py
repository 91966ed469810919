"""Data-preparation pipelines: ordered transformation steps over tables.

A pipeline document looks like::

    {
      "pipeline_id": "...",
      "input_dataset_ids": ["<primary>", "<merge-source>", ...],
      "steps": [
        {"op": "create_column", "name": "...", "expr": {...}},
        {"op": "drop_columns", "names": [...]},
        {"op": "filter_rows", "pred": {...}},
        {"op": "rename_column", "from": "...", "to": "..."},
        {"op": "merge", "right_dataset_id": "...", "keys": [...], "join_type": "inner"|"left"},
        {"op": "fill_null", "column": "...", "strategy": {"kind": "constant"|"mean"|"median"|"forward", ...}},
        {"op": "aggregate", "group_by": [...], "aggs": [[fn, column, out_name], ...]}
      ]
    }

The whole pipeline is validated statically before execution; validation
errors carry the index of the offending step.  Execution is a left fold
of ``apply_step`` and is fully deterministic: filters preserve the
relative order of kept rows, aggregates order groups by first
appearance, and merges order output by left-row order then right match
order (duplicate keys produce the cross product of matches, null keys
never match).
"""

from __future__ import annotations

from .errors import (
    NameCollisionError,
    PrepError,
    TypeMismatchError,
    UnknownColumnError,
)
from .expressions import (
    NUMERIC,
    agg_output_dtype,
    compute_aggregate,
    eval_expr,
    eval_pred,
    infer_expr_dtype,
    validate_predicate,
)
from .table import Schema, Table

STEP_OPS = (
    "create_column",
    "drop_columns",
    "filter_rows",
    "rename_column",
    "merge",
    "fill_null",
    "aggregate",
)

_FILL_KINDS = ("constant", "mean", "median", "forward")


def _schema_names(schema: Schema) -> list[str]:
    return [n for n, _ in schema]


def _require_column(schema: Schema, name: str, i: int) -> str:
    for n, t in schema:
        if n == name:
            return t
    raise UnknownColumnError(f"step {i}: unknown column {name!r}", i)


def validate_step(schema: Schema, step: dict, i: int, input_schemas: dict[str, Schema]) -> Schema:
    """Static schema transform for one step; raises step-indexed errors."""
    op = step.get("op")
    if op == "create_column":
        name = step["name"]
        if name in _schema_names(schema):
            raise NameCollisionError(f"step {i}: column {name!r} already exists", i)
        dtype = infer_expr_dtype(step["expr"], schema, i)
        return schema + [(name, dtype)]
    if op == "drop_columns":
        names = list(step["names"])
        for name in names:
            _require_column(schema, name, i)
        if len(set(names)) != len(names):
            raise NameCollisionError(f"step {i}: duplicate names in drop list", i)
        return [(n, t) for n, t in schema if n not in set(names)]
    if op == "filter_rows":
        validate_predicate(step["pred"], schema, i)
        return schema
    if op == "rename_column":
        source, target = step["from"], step["to"]
        _require_column(schema, source, i)
        if target in _schema_names(schema) and target != source:
            raise NameCollisionError(f"step {i}: column {target!r} already exists", i)
        return [(target if n == source else n, t) for n, t in schema]
    if op == "merge":
        right_id = step["right_dataset_id"]
        right_schema = input_schemas.get(right_id)
        if right_schema is None:
            raise UnknownColumnError(f"step {i}: dataset {right_id!r} not among pipeline inputs", i)
        keys = list(step["keys"])
        if not keys:
            raise TypeMismatchError(f"step {i}: merge requires at least one key", i)
        if step.get("join_type") not in ("inner", "left"):
            raise TypeMismatchError(f"step {i}: join_type must be inner or left", i)
        for key in keys:
            left_t = _require_column(schema, key, i)
            right_t = _require_column(right_schema, key, i)
            if left_t != right_t:
                raise TypeMismatchError(
                    f"step {i}: key {key!r} types differ ({left_t} vs {right_t})", i
                )
        out = list(schema)
        left_names = set(_schema_names(schema))
        for n, t in right_schema:
            if n in keys:
                continue
            if n in left_names:
                raise NameCollisionError(f"step {i}: merge would duplicate column {n!r}", i)
            out.append((n, t))
        return out
    if op == "fill_null":
        name = step["column"]
        dtype = _require_column(schema, name, i)
        strategy = step["strategy"]
        kind = strategy.get("kind")
        if kind not in _FILL_KINDS:
            raise TypeMismatchError(f"step {i}: unknown fill strategy {kind!r}", i)
        if kind in ("mean", "median"):
            if dtype not in NUMERIC:
                raise TypeMismatchError(f"step {i}: {kind} fill requires a numeric column", i)
            return [(n, "float64" if n == name else t) for n, t in schema]
        if kind == "constant":
            value = strategy.get("value")
            if value is None:
                raise TypeMismatchError(f"step {i}: constant fill requires a value", i)
            _check_constant(value, dtype, i)
        return schema
    if op == "aggregate":
        group_by = list(step["group_by"])
        for name in group_by:
            _require_column(schema, name, i)
        if len(set(group_by)) != len(group_by):
            raise NameCollisionError(f"step {i}: duplicate group_by column", i)
        out: Schema = [(n, t) for n in group_by for m, t in schema if m == n]
        taken = set(group_by)
        for fn, column, out_name in (tuple(a) for a in step["aggs"]):
            dtype = _require_column(schema, column, i)
            result_t = agg_output_dtype(fn, dtype, i)
            if out_name in taken:
                raise NameCollisionError(f"step {i}: output column {out_name!r} collides", i)
            taken.add(out_name)
            out.append((out_name, result_t))
        return out
    raise TypeMismatchError(f"step {i}: unknown step op {op!r}", i)


def _check_constant(value, dtype: str, i: int) -> None:
    ok = (
        (dtype == "string" and isinstance(value, str))
        or (dtype == "bool" and isinstance(value, bool))
        or (dtype == "int64" and isinstance(value, int) and not isinstance(value, bool))
        or (dtype == "float64" and isinstance(value, (int, float)) and not isinstance(value, bool))
        or (dtype == "timestamp_ms_utc" and isinstance(value, int) and not isinstance(value, bool))
    )
    if not ok:
        raise TypeMismatchError(f"step {i}: constant {value!r} does not fit column type {dtype}", i)


def validate_pipeline(input_schemas: dict[str, Schema], pipeline: dict) -> Schema:
    """Resolves the pipeline's output schema statically, or raises a
    step-indexed validation error."""
    inputs = list(pipeline.get("input_dataset_ids", []))
    if not inputs:
        raise UnknownColumnError("pipeline has no input datasets", None)
    primary = input_schemas.get(inputs[0])
    if primary is None:
        raise UnknownColumnError(f"primary dataset {inputs[0]!r} has no schema", None)
    schema = list(primary)
    for i, step in enumerate(pipeline.get("steps", [])):
        schema = validate_step(schema, step, i, input_schemas)
    return schema


# -- execution ------------------------------------------------------------------------


def apply_step(table: Table, step: dict, tables_by_id: dict[str, Table] | None = None) -> Table:
    """Executes one validated step; deterministic and order-stable."""
    op = step["op"]
    if op == "create_column":
        dtype = infer_expr_dtype(step["expr"], table.schema)
        values = eval_expr(step["expr"], table)
        columns = {n: table.columns[n] for n, _ in table.schema}
        columns[step["name"]] = values
        return Table(schema=table.schema + [(step["name"], dtype)], columns=columns, nrows=table.nrows)
    if op == "drop_columns":
        dropped = set(step["names"])
        schema = [(n, t) for n, t in table.schema if n not in dropped]
        return Table(
            schema=schema, columns={n: table.columns[n] for n, _ in schema}, nrows=table.nrows
        )
    if op == "filter_rows":
        flags = eval_pred(step["pred"], table)
        keep = [i for i, flag in enumerate(flags) if flag is True]
        columns = {n: [table.columns[n][i] for i in keep] for n, _ in table.schema}
        return Table(schema=list(table.schema), columns=columns, nrows=len(keep))
    if op == "rename_column":
        source, target = step["from"], step["to"]
        schema = [(target if n == source else n, t) for n, t in table.schema]
        columns = {}
        for n, _ in table.schema:
            columns[target if n == source else n] = table.columns[n]
        return Table(schema=schema, columns=columns, nrows=table.nrows)
    if op == "merge":
        right = (tables_by_id or {}).get(step["right_dataset_id"])
        if right is None:
            raise UnknownColumnError(f"dataset {step['right_dataset_id']!r} not loaded", None)
        return _merge(table, right, list(step["keys"]), step["join_type"])
    if op == "fill_null":
        return _fill_null(table, step["column"], step["strategy"])
    if op == "aggregate":
        return _aggregate(table, list(step["group_by"]), [tuple(a) for a in step["aggs"]])
    raise TypeMismatchError(f"unknown step op {op!r}")


def _merge(left: Table, right: Table, keys: list[str], join_type: str) -> Table:
    right_extra = [(n, t) for n, t in right.schema if n not in keys]
    schema = list(left.schema) + right_extra

    index: dict[tuple, list[int]] = {}
    for j in range(right.nrows):
        key = tuple(right.columns[k][j] for k in keys)
        if any(v is None for v in key):
            continue  # null keys never match
        index.setdefault(key, []).append(j)

    columns: dict[str, list] = {n: [] for n, _ in schema}
    for i in range(left.nrows):
        key = tuple(left.columns[k][i] for k in keys)
        matches = [] if any(v is None for v in key) else index.get(key, [])
        if matches:
            for j in matches:
                for n, _ in left.schema:
                    columns[n].append(left.columns[n][i])
                for n, _ in right_extra:
                    columns[n].append(right.columns[n][j])
        elif join_type == "left":
            for n, _ in left.schema:
                columns[n].append(left.columns[n][i])
            for n, _ in right_extra:
                columns[n].append(None)
    nrows = len(columns[schema[0][0]]) if schema else 0
    return Table(schema=schema, columns=columns, nrows=nrows)


def _fill_null(table: Table, name: str, strategy: dict) -> Table:
    dtype = table.dtype_of(name)
    values = list(table.columns[name])
    kind = strategy["kind"]
    schema = list(table.schema)
    if kind == "constant":
        fill = strategy["value"]
        values = [fill if v is None else v for v in values]
    elif kind == "forward":
        last = None
        for i, v in enumerate(values):
            if v is None:
                values[i] = last
            else:
                last = v
    else:  # mean / median promote the column to float64
        present = [v for v in values if v is not None]
        fill = None
        if present:
            if kind == "mean":
                total = float(present[0])
                for v in present[1:]:
                    total = total + v
                fill = total / len(present)
            else:
                ordered = sorted(present)
                mid = len(ordered) // 2
                if len(ordered) % 2 == 1:
                    fill = float(ordered[mid])
                else:
                    fill = (ordered[mid - 1] + ordered[mid]) / 2.0
        values = [fill if v is None else float(v) for v in values]
        schema = [(n, "float64" if n == name else t) for n, t in schema]
    columns = {n: (values if n == name else table.columns[n]) for n, _ in table.schema}
    return Table(schema=schema, columns=columns, nrows=table.nrows)


def _aggregate(table: Table, group_by: list[str], aggs: list[tuple]) -> Table:
    # group keys in first-appearance order; null keys group together
    order: list[tuple] = []
    members: dict[tuple, list[int]] = {}
    for i in range(table.nrows):
        key = tuple(table.columns[k][i] for k in group_by)
        if key not in members:
            members[key] = []
            order.append(key)
        members[key].append(i)
    if not group_by:
        order = [()]
        members = {(): list(range(table.nrows))}

    schema: Schema = [(n, table.dtype_of(n)) for n in group_by]
    for fn, column, out_name in aggs:
        schema.append((out_name, agg_output_dtype(fn, table.dtype_of(column))))

    columns: dict[str, list] = {n: [] for n, _ in schema}
    for key in order:
        for k_name, k_value in zip(group_by, key):
            columns[k_name].append(k_value)
        rows = members[key]
        for fn, column, out_name in aggs:
            values = [table.columns[column][i] for i in rows]
            columns[out_name].append(compute_aggregate(fn, values, table.dtype_of(column)))
    return Table(schema=schema, columns=columns, nrows=len(order))


def run_pipeline(tables_by_id: dict[str, Table], pipeline: dict) -> Table:
    """Left fold of apply_step over the validated pipeline steps.

    Pure function over in-memory tables; persisting the derived result as
    an encrypted dataset is the job executor's responsibility.
    """
    inputs = list(pipeline["input_dataset_ids"])
    table = tables_by_id[inputs[0]]
    for i, step in enumerate(pipeline.get("steps", [])):
        try:
            table = apply_step(table, step, tables_by_id)
        except PrepError as exc:
            if exc.step_index is None:
                exc.step_index = i
            raise
    return table
