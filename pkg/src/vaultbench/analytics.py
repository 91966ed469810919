"""Partitioned local analytics executor.

Each algorithm runs as map/merge over disjoint contiguous row
partitions: partitions compute partial accumulator state independently
(in a thread pool), then partials merge associatively.  Per-partition
sums use exactly-rounded summation so results agree across partition
counts to well under the 1e-12 relative tolerance the contract demands.

Null handling is listwise deletion per algorithm, with the dropped-row
count reported in the metrics.
"""

from __future__ import annotations

import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import (
    EmptyInputError,
    InsufficientRowsError,
    KExceedsRowsError,
    NonNumericColumnError,
    SingularDesignError,
    UnknownColumnError,
    ZeroVarianceError,
)
from .table import Table
from .util import now_ms

DEFAULT_PARTITIONS = 4

fsum = math.fsum


@dataclass
class ResultSet:
    algorithm: str
    metrics: dict
    tables: dict[str, Table] = field(default_factory=dict)
    produced_at_ms: int = 0

    def to_doc(self) -> dict:
        for name, value in self.metrics.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise ValueError(f"non-finite metric {name}")
        return {
            "algorithm": self.algorithm,
            "metrics": {k: self.metrics[k] for k in sorted(self.metrics)},
            "tables": {k: self.tables[k].to_doc() for k in sorted(self.tables)},
            "produced_at_ms": self.produced_at_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), separators=(",", ":"))

    @classmethod
    def from_doc(cls, doc: dict) -> "ResultSet":
        return cls(
            algorithm=doc["algorithm"],
            metrics=dict(doc["metrics"]),
            tables={k: Table.from_doc(v) for k, v in doc["tables"].items()},
            produced_at_ms=doc["produced_at_ms"],
        )


@dataclass
class DataSeries:
    chart_type: str  # line | bar | scatter | histogram
    x: list
    series: list[dict]  # [{"name": str, "y": list}]
    x_label: str = ""
    y_label: str = ""

    def to_doc(self) -> dict:
        for entry in self.series:
            if len(entry["y"]) != len(self.x):
                raise ValueError("series length does not match x length")
        return {
            "chart_type": self.chart_type,
            "x": self.x,
            "series": self.series,
            "x_label": self.x_label,
            "y_label": self.y_label,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "DataSeries":
        return cls(
            chart_type=doc["chart_type"],
            x=list(doc["x"]),
            series=[dict(s) for s in doc["series"]],
            x_label=doc.get("x_label", ""),
            y_label=doc.get("y_label", ""),
        )


# -- partitioned execution -------------------------------------------------------

def partition_ranges(n: int, partitions: int) -> list[tuple[int, int]]:
    """Disjoint contiguous ranges covering [0, n)."""
    partitions = max(1, partitions)
    return [(i * n // partitions, (i + 1) * n // partitions) for i in range(partitions)]


def run_partitioned(n: int, partitions: int, map_fn, merge_fn):
    ranges = partition_ranges(n, partitions)
    if len(ranges) == 1:
        parts = [map_fn(*ranges[0])]
    else:
        with ThreadPoolExecutor(max_workers=min(len(ranges), 8)) as pool:
            parts = list(pool.map(lambda r: map_fn(*r), ranges))
    acc = parts[0]
    for part in parts[1:]:
        acc = merge_fn(acc, part)
    return acc


def _require_numeric(table: Table, columns: list[str]) -> None:
    for name in columns:
        try:
            dtype = table.dtype_of(name)
        except KeyError:
            raise UnknownColumnError(f"unknown column {name!r}")
        if dtype not in ("int64", "float64"):
            raise NonNumericColumnError(f"column {name!r} is {dtype}, not numeric")


def _complete_rows(table: Table, columns: list[str]) -> list[int]:
    """Indices of rows with no null in any of ``columns`` (listwise)."""
    cols = [table.columns[c] for c in columns]
    return [i for i in range(table.nrows) if all(col[i] is not None for col in cols)]


# -- descriptive statistics ---------------------------------------------------------

def descriptive_stats(table: Table, columns: list[str], partitions: int = DEFAULT_PARTITIONS) -> ResultSet:
    """Per column: non-null count, null count, mean, population std, min, max."""
    _require_numeric(table, columns)

    def map_fn(lo: int, hi: int):
        out = {}
        for name in columns:
            col = table.columns[name]
            present = [col[i] for i in range(lo, hi) if col[i] is not None]
            out[name] = {
                "count": len(present),
                "nulls": (hi - lo) - len(present),
                "sum": fsum(present),
                "sumsq": fsum(v * v for v in present),
                "min": min(present) if present else None,
                "max": max(present) if present else None,
            }
        return out

    def merge_fn(a, b):
        merged = {}
        for name in columns:
            pa, pb = a[name], b[name]
            mins = [v for v in (pa["min"], pb["min"]) if v is not None]
            maxs = [v for v in (pa["max"], pb["max"]) if v is not None]
            merged[name] = {
                "count": pa["count"] + pb["count"],
                "nulls": pa["nulls"] + pb["nulls"],
                "sum": pa["sum"] + pb["sum"],
                "sumsq": pa["sumsq"] + pb["sumsq"],
                "min": min(mins) if mins else None,
                "max": max(maxs) if maxs else None,
            }
        return merged

    stats = run_partitioned(table.nrows, partitions, map_fn, merge_fn)

    rows = []
    for name in columns:
        s = stats[name]
        if s["count"] == 0:
            rows.append((name, 0, s["nulls"], None, None, None, None))
            continue
        mean = s["sum"] / s["count"]
        variance = max(0.0, s["sumsq"] / s["count"] - mean * mean)
        std = math.sqrt(variance)
        mn = float(s["min"]) if s["min"] is not None else None
        mx = float(s["max"]) if s["max"] is not None else None
        rows.append((name, s["count"], s["nulls"], mean, std, mn, mx))

    stats_table = Table.from_rows(
        [
            ("column", "string"),
            ("count", "int64"),
            ("null_count", "int64"),
            ("mean", "float64"),
            ("std", "float64"),
            ("min", "float64"),
            ("max", "float64"),
        ],
        rows,
    )
    return ResultSet(
        algorithm="descriptive_stats",
        metrics={"columns_analyzed": len(columns), "rows": table.nrows},
        tables={"stats": stats_table},
        produced_at_ms=now_ms(),
    )


# -- ordinary least squares -------------------------------------------------------------

def _solve_linear(matrix: list[list[float]], rhs: list[float]) -> list[float]:
    """Gaussian elimination with partial pivoting; raises singular-design."""
    n = len(matrix)
    a = [row[:] + [rhs[i]] for i, row in enumerate(matrix)]
    scale = max((abs(v) for row in matrix for v in row), default=0.0)
    if scale == 0.0:
        raise SingularDesignError("design matrix is all zeros")
    for col in range(n):
        pivot_row = max(range(col, n), key=lambda r: abs(a[r][col]))
        if abs(a[pivot_row][col]) <= 1e-10 * scale:
            raise SingularDesignError("design matrix is rank deficient")
        if pivot_row != col:
            a[col], a[pivot_row] = a[pivot_row], a[col]
        pivot = a[col][col]
        for r in range(col + 1, n):
            factor = a[r][col] / pivot
            if factor != 0.0:
                for c in range(col, n + 1):
                    a[r][c] -= factor * a[col][c]
    solution = [0.0] * n
    for i in range(n - 1, -1, -1):
        acc = a[i][n] - sum(a[i][j] * solution[j] for j in range(i + 1, n))
        solution[i] = acc / a[i][i]
    return solution


def linear_regression(
    table: Table, target: str, features: list[str], partitions: int = DEFAULT_PARTITIONS
) -> ResultSet:
    """OLS via normal equations with an intercept term."""
    if not features:
        raise InsufficientRowsError("at least one feature is required")
    _require_numeric(table, [target] + features)
    rows = _complete_rows(table, [target] + features)
    dropped = table.nrows - len(rows)
    p = len(features) + 1  # intercept first
    if len(rows) <= len(features):
        raise InsufficientRowsError(
            f"{len(rows)} usable rows for {len(features)} features"
        )

    y_col = table.columns[target]
    feat_cols = [table.columns[f] for f in features]

    def design_row(i: int) -> list[float]:
        return [1.0] + [float(col[i]) for col in feat_cols]

    def map_fn(lo: int, hi: int):
        chunk = rows[lo:hi]
        xtx = [[0.0] * p for _ in range(p)]
        xty = [0.0] * p
        xs = [design_row(i) for i in chunk]
        ys = [float(y_col[i]) for i in chunk]
        for a in range(p):
            xty[a] = fsum(x[a] * yv for x, yv in zip(xs, ys))
            for b in range(a, p):
                xtx[a][b] = fsum(x[a] * x[b] for x in xs)
        return xtx, xty

    def merge_fn(left, right):
        xtx_l, xty_l = left
        xtx_r, xty_r = right
        for a in range(p):
            xty_l[a] += xty_r[a]
            for b in range(a, p):
                xtx_l[a][b] += xtx_r[a][b]
        return xtx_l, xty_l

    xtx, xty = run_partitioned(len(rows), partitions, map_fn, merge_fn)
    for a in range(p):
        for b in range(a):
            xtx[a][b] = xtx[b][a]

    weights = _solve_linear(xtx, xty)

    # fit diagnostics (single pass; plain definitions)
    ys = [float(y_col[i]) for i in rows]
    preds = [
        weights[0] + sum(w * float(col[i]) for w, col in zip(weights[1:], feat_cols))
        for i in rows
    ]
    ss_res = fsum((yv - pv) ** 2 for yv, pv in zip(ys, preds))
    y_mean = fsum(ys) / len(ys)
    ss_tot = fsum((yv - y_mean) ** 2 for yv in ys)
    if ss_tot == 0.0:
        r_squared = 1.0 if ss_res <= 1e-12 else 0.0
    else:
        r_squared = 1.0 - ss_res / ss_tot
    rmse = math.sqrt(ss_res / len(ys))

    coef_table = Table.from_rows(
        [("term", "string"), ("weight", "float64")],
        [("intercept", weights[0])] + list(zip(features, weights[1:])),
    )
    return ResultSet(
        algorithm="linear_regression",
        metrics={
            "r_squared": r_squared,
            "rmse": rmse,
            "rows_used": len(rows),
            "dropped_rows": dropped,
        },
        tables={"coefficients": coef_table},
        produced_at_ms=now_ms(),
    )


# -- k-means ------------------------------------------------------------------------------

def kmeans(
    table: Table,
    k: int,
    features: list[str],
    seed: int = 0,
    max_iter: int = 100,
    partitions: int = DEFAULT_PARTITIONS,
) -> ResultSet:
    """Lloyd's iterations; k distinct seed rows; stops when assignments
    are stable or max_iter is reached.  Ties assign to the lowest
    centroid index; an emptied cluster keeps its previous centroid."""
    if k < 1 or max_iter < 1:
        raise KExceedsRowsError("k and max_iter must be at least 1")
    _require_numeric(table, features)
    rows = _complete_rows(table, features)
    dropped = table.nrows - len(rows)
    if len(rows) < k:
        raise KExceedsRowsError(f"k={k} exceeds {len(rows)} usable rows")

    feat_cols = [table.columns[f] for f in features]
    points = [[float(col[i]) for col in feat_cols] for i in rows]
    dims = len(features)

    rng = random.Random(seed)
    seen: set[tuple] = set()
    centroids: list[list[float]] = []
    for idx in rng.sample(range(len(points)), len(points)):
        key = tuple(points[idx])
        if key not in seen:
            seen.add(key)
            centroids.append(list(points[idx]))
        if len(centroids) == k:
            break
    if len(centroids) < k:
        raise KExceedsRowsError(f"k={k} exceeds {len(seen)} distinct points")

    def assign_map(lo: int, hi: int):
        labels_part = []
        sums = [[[] for _ in range(dims)] for _ in range(k)]
        counts = [0] * k
        dist_sq = []
        for point in points[lo:hi]:
            best, best_d = 0, None
            for c, centroid in enumerate(centroids):
                d = fsum((a - b) * (a - b) for a, b in zip(point, centroid))
                if best_d is None or d < best_d:
                    best, best_d = c, d
            labels_part.append(best)
            counts[best] += 1
            dist_sq.append(best_d)
            for dim in range(dims):
                sums[best][dim].append(point[dim])
        partial_sums = [[fsum(sums[c][dim]) for dim in range(dims)] for c in range(k)]
        return labels_part, counts, partial_sums, fsum(dist_sq)

    def assign_merge(a, b):
        labels_a, counts_a, sums_a, inertia_a = a
        labels_b, counts_b, sums_b, inertia_b = b
        return (
            labels_a + labels_b,
            [x + y for x, y in zip(counts_a, counts_b)],
            [[x + y for x, y in zip(sa, sb)] for sa, sb in zip(sums_a, sums_b)],
            inertia_a + inertia_b,
        )

    labels: list[int] = []
    history: list[float] = []
    iterations = 0
    prev_labels: list[int] | None = None
    for _ in range(max_iter):
        labels, counts, sums, inertia = run_partitioned(
            len(points), partitions, assign_map, assign_merge
        )
        history.append(inertia)
        iterations += 1
        if labels == prev_labels:
            break
        prev_labels = labels
        centroids = [
            [sums[c][dim] / counts[c] for dim in range(dims)] if counts[c] else centroids[c]
            for c in range(k)
        ]

    # converged runs end with an assignment pass against the mean-updated
    # centroids, so the last history entry is the final inertia
    final_inertia = history[-1]

    centroid_table = Table.from_rows(
        [("cluster", "int64")] + [(f, "float64") for f in features],
        [tuple([c] + centroids[c]) for c in range(k)],
    )
    labels_table = Table.from_rows(
        [("row_index", "int64"), ("cluster", "int64")],
        list(zip(rows, labels)),
    )
    history_table = Table.from_rows(
        [("iteration", "int64"), ("inertia", "float64")],
        list(enumerate(history)),
    )
    return ResultSet(
        algorithm="kmeans",
        metrics={
            "inertia": final_inertia,
            "iterations": iterations,
            "k": k,
            "rows_used": len(rows),
            "dropped_rows": dropped,
        },
        tables={
            "centroids": centroid_table,
            "labels": labels_table,
            "inertia_history": history_table,
        },
        produced_at_ms=now_ms(),
    )


# -- correlation ------------------------------------------------------------------------------

def pearson_correlation(
    table: Table, col_a: str, col_b: str, partitions: int = DEFAULT_PARTITIONS
) -> ResultSet:
    _require_numeric(table, [col_a, col_b])
    rows = _complete_rows(table, [col_a, col_b])
    dropped = table.nrows - len(rows)
    if len(rows) < 2:
        raise InsufficientRowsError("pearson correlation requires at least 2 complete rows")
    xs_col, ys_col = table.columns[col_a], table.columns[col_b]
    xs = [float(xs_col[i]) for i in rows]
    ys = [float(ys_col[i]) for i in rows]
    if min(xs) == max(xs) or min(ys) == max(ys):
        raise ZeroVarianceError("a column with zero variance has no defined correlation")

    def map_fn(lo: int, hi: int):
        cx, cy = xs[lo:hi], ys[lo:hi]
        return {
            "n": hi - lo,
            "sx": fsum(cx),
            "sy": fsum(cy),
            "sxx": fsum(v * v for v in cx),
            "syy": fsum(v * v for v in cy),
            "sxy": fsum(a * b for a, b in zip(cx, cy)),
        }

    def merge_fn(a, b):
        return {key: a[key] + b[key] for key in a}

    s = run_partitioned(len(rows), partitions, map_fn, merge_fn)
    var_x = max(0.0, s["n"] * s["sxx"] - s["sx"] * s["sx"])
    var_y = max(0.0, s["n"] * s["syy"] - s["sy"] * s["sy"])
    if var_x == 0.0 or var_y == 0.0:
        raise ZeroVarianceError("zero variance after accumulation")
    r = (s["n"] * s["sxy"] - s["sx"] * s["sy"]) / math.sqrt(var_x * var_y)
    r = max(-1.0, min(1.0, r))
    return ResultSet(
        algorithm="pearson_correlation",
        metrics={"r": r, "rows_used": len(rows), "dropped_rows": dropped},
        produced_at_ms=now_ms(),
    )


# -- algorithm dispatch --------------------------------------------------------------------------

def run_algorithm(table: Table, spec: dict, partitions: int = DEFAULT_PARTITIONS) -> ResultSet:
    """Executes an algorithm document against a prepared table.

    Documents: {"algorithm": "descriptive_stats", "columns": [...]}
             | {"algorithm": "linear_regression", "target": ..., "features": [...]}
             | {"algorithm": "kmeans", "k": ..., "features": [...], "seed": ..., "max_iter": ...}
             | {"algorithm": "pearson_correlation", "col_a": ..., "col_b": ...}
    """
    kind = spec.get("algorithm")
    if kind == "descriptive_stats":
        return descriptive_stats(table, list(spec["columns"]), partitions)
    if kind == "linear_regression":
        return linear_regression(table, spec["target"], list(spec["features"]), partitions)
    if kind == "kmeans":
        return kmeans(
            table,
            k=int(spec["k"]),
            features=list(spec["features"]),
            seed=int(spec.get("seed", 0)),
            max_iter=int(spec.get("max_iter", 100)),
            partitions=partitions,
        )
    if kind == "pearson_correlation":
        return pearson_correlation(table, spec["col_a"], spec["col_b"], partitions)
    raise UnknownColumnError(f"unknown algorithm {kind!r}")


# -- chart series ------------------------------------------------------------------------------------

def render_series(table: Table, spec: dict) -> DataSeries:
    """Chart-ready series from a table.

    line/bar/scatter map x and y columns directly in row order; histogram
    bins one numeric column into ceil(sqrt(n)) equal-width bins.
    """
    chart = spec.get("chart_type")
    if chart not in ("line", "bar", "scatter", "histogram"):
        raise UnknownColumnError(f"unknown chart type {chart!r}")
    if chart == "histogram":
        name = spec["column"]
        if name not in table.column_names():
            raise UnknownColumnError(f"unknown column {name!r}")
        _require_numeric(table, [name])
        values = [float(v) for v in table.columns[name] if v is not None]
        if not values:
            raise EmptyInputError("histogram of an empty column")
        bins = math.ceil(math.sqrt(len(values)))
        lo, hi = min(values), max(values)
        if lo == hi:
            return DataSeries(
                chart_type="histogram",
                x=[lo],
                series=[{"name": "count", "y": [len(values)]}],
                x_label=name,
                y_label="count",
            )
        width = (hi - lo) / bins
        counts = [0] * bins
        for v in values:
            idx = min(int((v - lo) / width), bins - 1)
            counts[idx] += 1
        centers = [lo + (i + 0.5) * width for i in range(bins)]
        return DataSeries(
            chart_type="histogram",
            x=centers,
            series=[{"name": "count", "y": counts}],
            x_label=name,
            y_label="count",
        )

    x_name = spec["x"]
    y_names = list(spec["y"])
    for name in [x_name] + y_names:
        if name not in table.column_names():
            raise UnknownColumnError(f"unknown column {name!r}")
    if table.nrows == 0:
        raise EmptyInputError("chart of an empty table")
    return DataSeries(
        chart_type=chart,
        x=list(table.columns[x_name]),
        series=[{"name": name, "y": list(table.columns[name])} for name in y_names],
        x_label=spec.get("x_label", x_name),
        y_label=spec.get("y_label", ", ".join(y_names)),
    )
