"""Scripted end-to-end tour: synthetic flight-delay dataset, sharing,
prep + regression workflow, chart series.

The dataset is 500 synthetic rows of (flight_id, scheduled_dep,
taxi_out_min, distance_km, delay_min) where delay_min is a linear
function of taxi-out time and distance plus seeded noise — enough to
exercise the timestamp, math, filter and regression paths.
"""

from __future__ import annotations

import random

from .client import PlatformClient
from .table import Table
from .util import ms_to_iso

BASE_DEP_MS = 1_717_200_000_000  # 2024-06-01T00:40:00Z


def make_flight_table(seed: int, rows: int = 500) -> Table:
    rng = random.Random(seed)
    flight_ids = []
    deps = []
    taxi = []
    distance = []
    delay = []
    for i in range(rows):
        flight_ids.append(f"VB{1000 + i}")
        deps.append(BASE_DEP_MS + rng.randint(0, 13) * 86_400_000 + rng.randint(5 * 60, 22 * 60) * 60_000)
        taxi_out = round(rng.uniform(4.0, 35.0), 2)
        dist = round(rng.uniform(150.0, 2600.0), 1)
        noise = rng.gauss(0.0, 2.5)
        taxi.append(taxi_out)
        distance.append(dist)
        delay.append(round(1.8 * taxi_out + 0.012 * dist + noise, 3))
    return Table(
        schema=[
            ("flight_id", "string"),
            ("scheduled_dep", "timestamp_ms_utc"),
            ("taxi_out_min", "float64"),
            ("distance_km", "float64"),
            ("delay_min", "float64"),
        ],
        columns={
            "flight_id": flight_ids,
            "scheduled_dep": deps,
            "taxi_out_min": taxi,
            "distance_km": distance,
            "delay_min": delay,
        },
        nrows=rows,
    )


def flight_delay_workflow(dataset_id: str, name: str = "flight-delay-regression") -> dict:
    """Prep (hour extraction + daytime filter) feeding an OLS regression,
    charted as delay vs taxi-out scatter."""
    return {
        "name": name,
        "input_dataset_ids": [dataset_id],
        "pipeline": {
            "steps": [
                {
                    "op": "create_column",
                    "name": "dep_hour",
                    "expr": {"op": "ts_hour", "arg": {"op": "col", "name": "scheduled_dep"}},
                },
                {
                    "op": "filter_rows",
                    "pred": {
                        "op": "cmp",
                        "cmp": "ge",
                        "left": {"op": "col", "name": "dep_hour"},
                        "right": {"op": "lit", "value": 6},
                    },
                },
            ]
        },
        "algorithm": {
            "algorithm": "linear_regression",
            "target": "delay_min",
            "features": ["taxi_out_min", "distance_km"],
        },
        "visualization": {"chart_type": "scatter", "x": "taxi_out_min", "y": ["delay_min"]},
    }


def run_demo(
    provider: PlatformClient,
    consumer: PlatformClient,
    seed: int = 42,
    emit=print,
    wait_timeout_s: float = 60.0,
    local_csv_path: str | None = None,
) -> dict:
    """Runs the whole tour; raises on the first failing phase."""
    emit("[1/6] generating synthetic flight-delay dataset (500 rows)")
    table = make_flight_table(seed)
    if local_csv_path:
        # the provider's plaintext copy stays in their local data directory
        import os

        from .table import to_csv

        os.makedirs(os.path.dirname(local_csv_path) or ".", exist_ok=True)
        with open(local_csv_path, "w", encoding="utf-8") as fh:
            fh.write(to_csv(table))
        emit(f"      local plaintext copy: {local_csv_path}")

    emit("[2/6] provider: encrypting locally and uploading")
    dataset = provider.upload_table(table, "flight-delays")
    emit(f"      dataset_id {dataset['dataset_id']}")

    emit("[3/6] provider: sharing with consumer (1 h agreement)")
    agreement = provider.grant(dataset["dataset_id"], consumer.principal_id, ttl_seconds=3600)
    emit(f"      agreement {agreement['agreement_id']}")

    emit("[4/6] consumer: designing prep + regression workflow")
    workflow = consumer.create_workflow(flight_delay_workflow(dataset["dataset_id"]))
    emit(f"      workflow {workflow['workflow_id']}")

    emit("[5/6] consumer: submitting for immediate execution")
    job = consumer.submit_job(workflow["workflow_id"])
    record = consumer.wait_for_job(job["job_id"], timeout_s=wait_timeout_s)
    if record["state"] != "completed":
        error = record.get("error") or {}
        raise RuntimeError(
            f"demo job ended {record['state']}: {error.get('code')} {error.get('message')}"
        )
    phases = [s for s in ("queued", "fetching", "decrypting", "running",
                          "encrypting_results", "uploading", "completed")
              if s in record["timestamps"]]
    emit(f"      phases: {' -> '.join(phases)}")

    emit("[6/6] consumer: fetching decrypted results")
    results = consumer.job_results(job["job_id"])
    metrics = results["result_set"]["metrics"]
    series = consumer.job_series(job["job_id"])
    emit(f"      r_squared = {metrics['r_squared']:.4f}  rmse = {metrics['rmse']:.3f}")
    emit(
        f"      series: {series['chart_type']} with {len(series['x'])} points"
        f" ({', '.join(s['name'] for s in series['series'])})"
    )
    return {
        "dataset_id": dataset["dataset_id"],
        "job_id": job["job_id"],
        "completed_at": ms_to_iso(record["timestamps"]["completed"]),
        "r_squared": metrics["r_squared"],
        "rmse": metrics["rmse"],
        "series_points": len(series["x"]),
    }
