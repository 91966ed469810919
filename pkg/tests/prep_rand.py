"""Random tables and random valid pipelines for oracle-equivalence tests."""

from __future__ import annotations

import random

from vaultbench.prep import validate_step
from vaultbench.table import Table

DTYPES = ("string", "int64", "float64", "bool", "timestamp_ms_utc")
_WORDS = ("alpha", "beta", "gamma", "delta", "epsilon", "zeta", "")
_AGG_FNS = ("mean", "sum", "min", "max", "count")


def random_value(rng: random.Random, dtype: str, null_rate: float = 0.15):
    if rng.random() < null_rate:
        return None
    if dtype == "string":
        return rng.choice(_WORDS)
    if dtype == "int64":
        return rng.randint(-50, 50)
    if dtype == "float64":
        return round(rng.uniform(-100.0, 100.0), 3)
    if dtype == "bool":
        return rng.random() < 0.5
    return rng.randint(0, 2_000_000_000_000)  # 1970..2033


def random_table(rng: random.Random, max_rows: int = 150, max_cols: int = 6) -> Table:
    ncols = rng.randint(1, max_cols)
    schema = [(f"c{i}", rng.choice(DTYPES)) for i in range(ncols)]
    nrows = rng.randint(0, max_rows)
    columns = {
        name: [random_value(rng, dtype) for _ in range(nrows)] for name, dtype in schema
    }
    return Table(schema=schema, columns=columns, nrows=nrows)


def _cols_of(schema, wanted):
    return [n for n, t in schema if t in wanted]


def _numeric_expr(rng, schema, depth):
    numeric = _cols_of(schema, ("int64", "float64"))
    if depth <= 0 or (not numeric and rng.random() < 0.5):
        if numeric and rng.random() < 0.7:
            return {"op": "col", "name": rng.choice(numeric)}
        if rng.random() < 0.5:
            return {"op": "lit", "value": rng.randint(-20, 20)}
        return {"op": "lit", "value": round(rng.uniform(-20.0, 20.0), 2)}
    choice = rng.random()
    if choice < 0.45:
        return {
            "op": rng.choice(("add", "sub", "mul", "div")),
            "left": _numeric_expr(rng, schema, depth - 1),
            "right": _numeric_expr(rng, schema, depth - 1),
        }
    if choice < 0.55:
        return {"op": "abs", "arg": _numeric_expr(rng, schema, depth - 1)}
    if choice < 0.65:
        return {"op": "log", "arg": _numeric_expr(rng, schema, depth - 1)}
    if choice < 0.72:
        return {
            "op": "pow",
            "base": _numeric_expr(rng, schema, depth - 1),
            "exp": {"op": "lit", "value": rng.randint(0, 3)},
        }
    ts = _cols_of(schema, ("timestamp_ms_utc",))
    if choice < 0.80 and ts:
        return {"op": rng.choice(("ts_year", "ts_month", "ts_day", "ts_hour", "ts_weekday")),
                "arg": {"op": "col", "name": rng.choice(ts)}}
    if choice < 0.85 and ts:
        return {
            "op": "ts_diff_seconds",
            "left": {"op": "col", "name": rng.choice(ts)},
            "right": {"op": "col", "name": rng.choice(ts)},
        }
    if choice < 0.90 and numeric:
        return {"op": "shift", "column": rng.choice(numeric),
                "offset": rng.randint(0, 3), "direction": rng.choice(("lag", "lead"))}
    if choice < 0.95 and numeric:
        fn = rng.choice(("mean", "sum", "min", "max", "count"))
        return {"op": "agg_ref", "fn": fn, "column": rng.choice(numeric)}
    return {
        "op": "cond",
        "pred": random_pred(rng, schema, depth - 1),
        "then": _numeric_expr(rng, schema, depth - 1),
        "else": _numeric_expr(rng, schema, depth - 1),
    }


def random_expr(rng, schema, depth=3):
    roll = rng.random()
    if roll < 0.75:
        return _numeric_expr(rng, schema, depth)
    names = [n for n, _ in schema]
    if roll < 0.85 and names:
        name = rng.choice(names)
        return {"op": "shift", "column": name, "offset": rng.randint(0, 2),
                "direction": rng.choice(("lag", "lead"))}
    if roll < 0.95 and names:
        name, dtype = rng.choice(schema)
        fn = rng.choice(_AGG_FNS)
        if dtype not in ("int64", "float64") and fn in ("mean", "sum"):
            fn = rng.choice(("min", "max", "count"))
        return {"op": "agg_ref", "fn": fn, "column": name}
    return _numeric_expr(rng, schema, depth)


def random_pred(rng, schema, depth=2):
    if depth <= 0 or rng.random() < 0.55:
        kind = rng.random()
        if kind < 0.6:
            # compare two same-family expressions
            numeric = _cols_of(schema, ("int64", "float64"))
            if numeric and rng.random() < 0.8:
                return {
                    "op": "cmp",
                    "cmp": rng.choice(("eq", "ne", "lt", "le", "gt", "ge")),
                    "left": _numeric_expr(rng, schema, 1),
                    "right": _numeric_expr(rng, schema, 1),
                }
            strings = _cols_of(schema, ("string",))
            if strings:
                return {
                    "op": "cmp",
                    "cmp": rng.choice(("eq", "ne", "lt", "gt")),
                    "left": {"op": "col", "name": rng.choice(strings)},
                    "right": {"op": "lit", "value": rng.choice(_WORDS)},
                }
            return {
                "op": "cmp",
                "cmp": "eq",
                "left": {"op": "lit", "value": 1},
                "right": {"op": "lit", "value": rng.randint(0, 2)},
            }
        names = [n for n, _ in schema]
        if names:
            return {"op": rng.choice(("is_null", "not_null")),
                    "arg": {"op": "col", "name": rng.choice(names)}}
        return {"op": "cmp", "cmp": "eq", "left": {"op": "lit", "value": 1},
                "right": {"op": "lit", "value": 1}}
    op = rng.choice(("and", "or", "not"))
    if op == "not":
        return {"op": "not", "arg": random_pred(rng, schema, depth - 1)}
    return {"op": op, "left": random_pred(rng, schema, depth - 1),
            "right": random_pred(rng, schema, depth - 1)}


def _random_step(rng, schema, input_schemas, merge_candidates, fresh):
    ops = ["create_column", "filter_rows", "rename_column", "fill_null"]
    if len(schema) >= 2:
        ops.append("drop_columns")
        ops.append("aggregate")
    usable_merges = []
    for right_id in merge_candidates:
        right_schema = input_schemas[right_id]
        keys = [n for n, t in right_schema if dict(schema).get(n) == t]
        clash = [n for n, _ in right_schema if n in dict(schema) and n not in keys]
        if keys and not clash:
            usable_merges.append((right_id, keys))
    if usable_merges:
        ops.append("merge")

    op = rng.choice(ops)
    if op == "create_column":
        return {"op": "create_column", "name": next(fresh), "expr": random_expr(rng, schema)}
    if op == "filter_rows":
        return {"op": "filter_rows", "pred": random_pred(rng, schema)}
    if op == "rename_column":
        name = rng.choice([n for n, _ in schema])
        return {"op": "rename_column", "from": name, "to": next(fresh)}
    if op == "drop_columns":
        names = [n for n, _ in schema]
        count = rng.randint(1, len(names) - 1)
        return {"op": "drop_columns", "names": rng.sample(names, count)}
    if op == "fill_null":
        name, dtype = rng.choice(schema)
        if dtype in ("int64", "float64") and rng.random() < 0.6:
            strategy = {"kind": rng.choice(("mean", "median"))}
        elif rng.random() < 0.5:
            strategy = {"kind": "forward"}
        else:
            value = random_value(rng, dtype, null_rate=0.0)
            strategy = {"kind": "constant", "value": value}
        return {"op": "fill_null", "column": name, "strategy": strategy}
    if op == "aggregate":
        names = [n for n, _ in schema]
        group_n = rng.randint(0, min(2, len(names) - 1))
        group_by = rng.sample(names, group_n)
        aggs = []
        for _ in range(rng.randint(1, 2)):
            name, dtype = rng.choice(schema)
            fn = rng.choice(_AGG_FNS)
            if dtype not in ("int64", "float64") and fn in ("mean", "sum"):
                fn = "count"
            aggs.append([fn, name, next(fresh)])
        return {"op": "aggregate", "group_by": group_by, "aggs": aggs}
    right_id, keys = rng.choice(usable_merges)
    key_count = rng.randint(1, min(2, len(keys)))
    return {
        "op": "merge",
        "right_dataset_id": right_id,
        "keys": rng.sample(keys, key_count),
        "join_type": rng.choice(("inner", "left")),
    }


def random_case(rng: random.Random, max_rows: int = 150, max_steps: int = 5):
    """One oracle-equivalence case: input tables + a valid pipeline."""

    def fresh_names():
        i = 0
        while True:
            yield f"d{i}"
            i += 1

    fresh = fresh_names()
    primary = random_table(rng, max_rows=max_rows)
    tables = {"t0": primary}
    if rng.random() < 0.5:
        # build a mergeable right table: share 1-2 key columns with the
        # primary (same name and dtype), add fresh non-colliding columns
        key_count = rng.randint(1, min(2, len(primary.schema)))
        key_schema = rng.sample(primary.schema, key_count)
        extra = [(f"r{i}", rng.choice(DTYPES)) for i in range(rng.randint(1, 3))]
        right_schema = key_schema + extra
        nrows = rng.randint(0, min(80, max_rows))
        columns = {}
        for name, dtype in key_schema:
            pool = [v for v in primary.columns[name] if v is not None]
            columns[name] = [
                rng.choice(pool) if pool and rng.random() < 0.7 else random_value(rng, dtype)
                for _ in range(nrows)
            ]
        for name, dtype in extra:
            columns[name] = [random_value(rng, dtype) for _ in range(nrows)]
        tables["t1"] = Table(schema=right_schema, columns=columns, nrows=nrows)
    input_schemas = {k: list(v.schema) for k, v in tables.items()}

    schema = list(primary.schema)
    steps = []
    merge_candidates = [k for k in tables if k != "t0"]
    for i in range(rng.randint(0, max_steps)):
        for _attempt in range(25):
            step = _random_step(rng, schema, input_schemas, merge_candidates, fresh)
            try:
                schema = validate_step(schema, step, i, input_schemas)
            except Exception:
                continue
            steps.append(step)
            if step["op"] == "merge":
                merge_candidates.remove(step["right_dataset_id"])
            break
    pipeline = {
        "pipeline_id": "rand",
        "input_dataset_ids": ["t0"] + [k for k in tables if k != "t0"],
        "steps": steps,
    }
    return tables, pipeline
