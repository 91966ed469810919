"""Analytics algorithms: fixed examples, oracles, partition invariance."""

import math
import random

import pytest

from vaultbench.analytics import (
    DataSeries,
    descriptive_stats,
    kmeans,
    linear_regression,
    pearson_correlation,
    render_series,
    run_algorithm,
)
from vaultbench.errors import (
    EmptyInputError,
    InsufficientRowsError,
    KExceedsRowsError,
    NonNumericColumnError,
    SingularDesignError,
    UnknownColumnError,
    ZeroVarianceError,
)
from vaultbench.table import Table

from .analytics_oracles import ols_oracle, pearson_oracle, squared_loss_gradient


def _table(schema, columns):
    names = [n for n, _ in schema]
    return Table(schema=schema, columns=columns, nrows=len(columns[names[0]]))


def _stats_row(result, column):
    table = result.tables["stats"]
    idx = table.columns["column"].index(column)
    return {name: table.columns[name][idx] for name, _ in table.schema}


class TestDescriptiveStats:
    def test_basic_example(self):
        table = _table([("x", "int64")], {"x": [1, 2, 3]})
        row = _stats_row(descriptive_stats(table, ["x"]), "x")
        assert row["count"] == 3
        assert row["mean"] == pytest.approx(2.0, abs=1e-12)
        assert row["min"] == 1.0 and row["max"] == 3.0
        assert row["std"] == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-12)

    def test_all_null_column(self):
        table = _table([("x", "float64")], {"x": [None, None]})
        row = _stats_row(descriptive_stats(table, ["x"]), "x")
        assert row["count"] == 0
        assert row["null_count"] == 2
        assert row["mean"] is None

    def test_partition_invariance(self):
        rng = random.Random(5)
        values = [rng.uniform(-100, 100) if rng.random() > 0.1 else None for _ in range(997)]
        table = _table([("x", "float64")], {"x": values})
        base = _stats_row(descriptive_stats(table, ["x"], partitions=1), "x")
        for partitions in (2, 4, 8):
            other = _stats_row(descriptive_stats(table, ["x"], partitions=partitions), "x")
            for key in ("count", "null_count"):
                assert other[key] == base[key]
            for key in ("mean", "std", "min", "max"):
                assert other[key] == pytest.approx(base[key], rel=1e-12)

    def test_non_numeric_rejected(self):
        table = _table([("s", "string")], {"s": ["a"]})
        with pytest.raises(NonNumericColumnError):
            descriptive_stats(table, ["s"])


class TestLinearRegression:
    def test_exact_line(self):
        xs = list(range(10))
        table = _table(
            [("x", "float64"), ("y", "float64")],
            {"x": [float(v) for v in xs], "y": [2.0 * v + 3.0 for v in xs]},
        )
        result = linear_regression(table, "y", ["x"])
        coef = dict(zip(result.tables["coefficients"].columns["term"],
                        result.tables["coefficients"].columns["weight"]))
        assert coef["intercept"] == pytest.approx(3.0, abs=1e-9)
        assert coef["x"] == pytest.approx(2.0, abs=1e-9)
        assert result.metrics["r_squared"] == pytest.approx(1.0, abs=1e-12)

    def test_matches_numpy_oracle(self):
        rng = random.Random(42)
        xs = [[rng.uniform(-5, 5), rng.uniform(-5, 5)] for _ in range(50)]
        ys = [1.5 * a - 2.25 * b + 0.75 + rng.gauss(0, 0.5) for a, b in xs]
        table = _table(
            [("a", "float64"), ("b", "float64"), ("y", "float64")],
            {"a": [r[0] for r in xs], "b": [r[1] for r in xs], "y": ys},
        )
        result = linear_regression(table, "y", ["a", "b"])
        weights = result.tables["coefficients"].columns["weight"]
        expected = ols_oracle(xs, ys)
        for got, want in zip(weights, expected):
            assert got == pytest.approx(want, abs=1e-8)

    def test_gradient_at_solution(self):
        rng = random.Random(7)
        xs = [[rng.uniform(-2, 2)] for _ in range(40)]
        ys = [3.0 * r[0] - 1.0 + rng.gauss(0, 0.1) for r in xs]
        table = _table(
            [("x", "float64"), ("y", "float64")],
            {"x": [r[0] for r in xs], "y": ys},
        )
        result = linear_regression(table, "y", ["x"])
        weights = result.tables["coefficients"].columns["weight"]
        grad = squared_loss_gradient(xs, ys, list(weights))
        assert max(abs(g) for g in grad) <= 1e-6

    def test_duplicated_feature_singular(self):
        table = _table(
            [("a", "float64"), ("b", "float64"), ("y", "float64")],
            {"a": [1.0, 2.0, 3.0, 4.0], "b": [1.0, 2.0, 3.0, 4.0], "y": [1.0, 2.0, 3.0, 4.0]},
        )
        with pytest.raises(SingularDesignError):
            linear_regression(table, "y", ["a", "b"])

    def test_insufficient_rows(self):
        table = _table(
            [("x", "float64"), ("y", "float64")],
            {"x": [1.0, None], "y": [2.0, 3.0]},
        )
        with pytest.raises(InsufficientRowsError):
            linear_regression(table, "y", ["x"])

    def test_null_rows_dropped_and_reported(self):
        table = _table(
            [("x", "float64"), ("y", "float64")],
            {"x": [1.0, None, 2.0, 3.0], "y": [2.0, 9.0, None, 6.0]},
        )
        result = linear_regression(table, "y", ["x"])
        assert result.metrics["rows_used"] == 2
        assert result.metrics["dropped_rows"] == 2


class TestKMeans:
    def test_k1_analytic_identity(self):
        rng = random.Random(3)
        values = [rng.uniform(-10, 10) for _ in range(25)]
        table = _table([("x", "float64")], {"x": values})
        result = kmeans(table, k=1, features=["x"], seed=1)
        mean = sum(values) / len(values)
        centroid = result.tables["centroids"].columns["x"][0]
        assert centroid == pytest.approx(mean, abs=1e-9)
        variance = sum((v - mean) ** 2 for v in values) / len(values)
        assert result.metrics["inertia"] == pytest.approx(variance * len(values), rel=1e-9)

    def test_two_separated_clusters(self):
        rng = random.Random(11)
        cloud_a = [(rng.gauss(0.0, 0.05), rng.gauss(0.0, 0.05)) for _ in range(10)]
        cloud_b = [(rng.gauss(10.0, 0.05), rng.gauss(10.0, 0.05)) for _ in range(10)]
        points = cloud_a + cloud_b
        table = _table(
            [("x", "float64"), ("y", "float64")],
            {"x": [p[0] for p in points], "y": [p[1] for p in points]},
        )
        result = kmeans(table, k=2, features=["x", "y"], seed=5)
        centroids = list(
            zip(result.tables["centroids"].columns["x"], result.tables["centroids"].columns["y"])
        )
        mean_a = (sum(p[0] for p in cloud_a) / 10, sum(p[1] for p in cloud_a) / 10)
        mean_b = (sum(p[0] for p in cloud_b) / 10, sum(p[1] for p in cloud_b) / 10)
        found = sorted(centroids)
        expected = sorted([mean_a, mean_b])
        for got, want in zip(found, expected):
            assert got[0] == pytest.approx(want[0], abs=1e-9)
            assert got[1] == pytest.approx(want[1], abs=1e-9)

    def test_inertia_non_increasing(self):
        rng = random.Random(23)
        table = _table(
            [("x", "float64"), ("y", "float64")],
            {
                "x": [rng.uniform(0, 100) for _ in range(200)],
                "y": [rng.uniform(0, 100) for _ in range(200)],
            },
        )
        result = kmeans(table, k=5, features=["x", "y"], seed=9)
        history = result.tables["inertia_history"].columns["inertia"]
        assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))

    def test_fixed_seed_deterministic(self):
        rng = random.Random(31)
        table = _table(
            [("x", "float64")], {"x": [rng.uniform(0, 50) for _ in range(100)]}
        )
        first = kmeans(table, k=4, features=["x"], seed=77)
        second = kmeans(table, k=4, features=["x"], seed=77)
        assert first.tables["labels"].columns["cluster"] == second.tables["labels"].columns["cluster"]
        assert first.tables["centroids"].to_json() == second.tables["centroids"].to_json()
        assert first.metrics["inertia"] == second.metrics["inertia"]

    def test_labels_in_range_and_centroids_are_means(self):
        rng = random.Random(13)
        table = _table(
            [("x", "float64"), ("y", "float64")],
            {
                "x": [rng.uniform(0, 10) for _ in range(60)],
                "y": [rng.uniform(0, 10) for _ in range(60)],
            },
        )
        k = 3
        result = kmeans(table, k=k, features=["x", "y"], seed=2)
        labels = result.tables["labels"].columns["cluster"]
        assert all(0 <= label < k for label in labels)
        for c in range(k):
            members = [i for i, label in enumerate(labels) if label == c]
            if not members:
                continue
            mean_x = sum(table.columns["x"][i] for i in members) / len(members)
            got_x = result.tables["centroids"].columns["x"][c]
            assert got_x == pytest.approx(mean_x, abs=1e-9)

    def test_k_exceeds_rows(self):
        table = _table([("x", "float64")], {"x": [1.0, 2.0]})
        with pytest.raises(KExceedsRowsError):
            kmeans(table, k=3, features=["x"], seed=0)


class TestPearson:
    def test_self_correlation(self):
        table = _table(
            [("x", "float64"), ("y", "float64")],
            {"x": [1.0, 2.0, 5.0], "y": [1.0, 2.0, 5.0]},
        )
        assert pearson_correlation(table, "x", "y").metrics["r"] == pytest.approx(1.0)

    def test_anti_correlation(self):
        table = _table(
            [("x", "float64"), ("y", "float64")],
            {"x": [1.0, 2.0, 5.0], "y": [-1.0, -2.0, -5.0]},
        )
        assert pearson_correlation(table, "x", "y").metrics["r"] == pytest.approx(-1.0)

    def test_matches_formula_oracle(self):
        rng = random.Random(99)
        xs = [rng.uniform(-10, 10) for _ in range(100)]
        ys = [0.5 * v + rng.gauss(0, 2) for v in xs]
        table = _table([("x", "float64"), ("y", "float64")], {"x": xs, "y": ys})
        got = pearson_correlation(table, "x", "y").metrics["r"]
        assert got == pytest.approx(pearson_oracle(xs, ys), abs=1e-12)

    def test_affine_invariance(self):
        rng = random.Random(17)
        xs = [rng.uniform(-10, 10) for _ in range(80)]
        ys = [v ** 2 + rng.gauss(0, 1) for v in xs]
        table = _table([("x", "float64"), ("y", "float64")], {"x": xs, "y": ys})
        base = pearson_correlation(table, "x", "y").metrics["r"]
        rescaled = _table(
            [("x", "float64"), ("y", "float64")],
            {"x": [3.5 * v + 11.0 for v in xs], "y": ys},
        )
        got = pearson_correlation(rescaled, "x", "y").metrics["r"]
        assert got == pytest.approx(base, abs=1e-12)

    def test_zero_variance(self):
        table = _table(
            [("x", "float64"), ("y", "float64")],
            {"x": [2.0, 2.0, 2.0], "y": [1.0, 2.0, 3.0]},
        )
        with pytest.raises(ZeroVarianceError):
            pearson_correlation(table, "x", "y")


class TestRenderSeries:
    def test_scatter_rows_in_order(self):
        table = _table(
            [("x", "float64"), ("y", "float64")],
            {"x": [1.0, 2.0, 3.0], "y": [5.0, 4.0, 3.0]},
        )
        series = render_series(table, {"chart_type": "scatter", "x": "x", "y": ["y"]})
        assert series.x == [1.0, 2.0, 3.0]
        assert series.series[0]["y"] == [5.0, 4.0, 3.0]
        assert len(series.x) == len(series.series[0]["y"])

    def test_histogram_uniform_counts(self):
        table = _table([("v", "int64")], {"v": list(range(100))})
        series = render_series(table, {"chart_type": "histogram", "column": "v"})
        # counting oracle: 100 values, 10 equal-width bins, 10 in each
        assert len(series.x) == 10
        assert series.series[0]["y"] == [10] * 10

    def test_histogram_empty_input(self):
        table = _table([("v", "int64")], {"v": []})
        with pytest.raises(EmptyInputError):
            render_series(table, {"chart_type": "histogram", "column": "v"})

    def test_unknown_column(self):
        table = _table([("v", "int64")], {"v": [1]})
        with pytest.raises(UnknownColumnError):
            render_series(table, {"chart_type": "line", "x": "v", "y": ["nope"]})

    def test_series_doc_round_trip(self):
        table = _table([("v", "int64")], {"v": [1, 2, 3, 4]})
        series = render_series(table, {"chart_type": "bar", "x": "v", "y": ["v"]})
        doc = series.to_doc()
        assert DataSeries.from_doc(doc).to_doc() == doc


class TestPartitionInvariance:
    def test_all_algorithms_agree_across_partitionings(self):
        rng = random.Random(2024)
        n = 500
        table = _table(
            [("a", "float64"), ("b", "float64"), ("y", "float64")],
            {
                "a": [rng.uniform(-50, 50) for _ in range(n)],
                "b": [rng.uniform(-50, 50) for _ in range(n)],
                "y": [rng.uniform(-50, 50) for _ in range(n)],
            },
        )
        specs = [
            {"algorithm": "descriptive_stats", "columns": ["a", "b", "y"]},
            {"algorithm": "linear_regression", "target": "y", "features": ["a", "b"]},
            {"algorithm": "kmeans", "k": 4, "features": ["a", "b"], "seed": 3, "max_iter": 50},
            {"algorithm": "pearson_correlation", "col_a": "a", "col_b": "y"},
        ]
        for spec in specs:
            base = run_algorithm(table, spec, partitions=1)
            for partitions in (2, 4, 8):
                other = run_algorithm(table, spec, partitions=partitions)
                _assert_results_close(base, other)


def _assert_results_close(a, b, rel=1e-12):
    assert a.algorithm == b.algorithm
    assert set(a.metrics) == set(b.metrics)
    for key, value in a.metrics.items():
        other = b.metrics[key]
        if isinstance(value, float):
            assert other == pytest.approx(value, rel=rel, abs=1e-300), key
        else:
            assert other == value, key
    assert set(a.tables) == set(b.tables)
    for name, table in a.tables.items():
        other = b.tables[name]
        assert table.schema == other.schema
        assert table.nrows == other.nrows
        for column, dtype in table.schema:
            for x, y in zip(table.columns[column], other.columns[column]):
                if dtype == "float64" and x is not None:
                    assert y == pytest.approx(x, rel=rel, abs=1e-300), (name, column)
                else:
                    assert x == y, (name, column)
