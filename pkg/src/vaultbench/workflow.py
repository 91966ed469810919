"""Workflow definitions and the reusable application catalogue.

A workflow bundles input datasets, a prep pipeline, an algorithm choice
and a visualization choice — the unit a user designs, saves, and
submits for execution.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from typing import Optional

from .errors import InvalidWorkflowError, PrepError
from .prep import validate_pipeline
from .table import Schema
from .util import new_id128, now_ms


@dataclass
class WorkflowDefinition:
    workflow_id: str
    owner_id: str
    name: str
    input_dataset_ids: list[str]
    pipeline: dict
    algorithm: dict
    visualization: dict
    created_at_ms: int

    def to_record(self) -> dict:
        return {
            "workflow_id": self.workflow_id,
            "owner_id": self.owner_id,
            "name": self.name,
            "input_dataset_ids": list(self.input_dataset_ids),
            "pipeline": self.pipeline,
            "algorithm": self.algorithm,
            "visualization": self.visualization,
            "created_at_ms": self.created_at_ms,
        }

    @classmethod
    def from_record(cls, record: dict) -> "WorkflowDefinition":
        return cls(
            workflow_id=record["workflow_id"],
            owner_id=record["owner_id"],
            name=record["name"],
            input_dataset_ids=list(record["input_dataset_ids"]),
            pipeline=record["pipeline"],
            algorithm=record["algorithm"],
            visualization=record["visualization"],
            created_at_ms=record["created_at_ms"],
        )


@dataclass
class ApplicationRecord:
    application_id: str
    owner_id: str
    name: str
    workflow: dict  # saved WorkflowDefinition content (minus ids)
    saved_at_ms: int

    def to_record(self) -> dict:
        return {
            "application_id": self.application_id,
            "owner_id": self.owner_id,
            "name": self.name,
            "workflow": self.workflow,
            "saved_at_ms": self.saved_at_ms,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ApplicationRecord":
        return cls(
            application_id=record["application_id"],
            owner_id=record["owner_id"],
            name=record["name"],
            workflow=record["workflow"],
            saved_at_ms=record["saved_at_ms"],
        )


def validate_workflow(defn: WorkflowDefinition, schemas_by_dataset: dict[str, Schema]) -> Schema:
    """Static validation: datasets known, pipeline type-checks, algorithm
    and visualization reference columns of the pipeline's output schema.

    Returns the resolved output schema.  Raises invalid-workflow with a
    step index when the failing part is a pipeline step.
    """
    if not defn.input_dataset_ids:
        raise InvalidWorkflowError("workflow has no input datasets")
    for dataset_id in defn.input_dataset_ids:
        if dataset_id not in schemas_by_dataset:
            raise InvalidWorkflowError(f"unknown dataset {dataset_id!r}")
    pipeline = dict(defn.pipeline)
    pipeline.setdefault("input_dataset_ids", list(defn.input_dataset_ids))
    if list(pipeline["input_dataset_ids"]) != list(defn.input_dataset_ids):
        raise InvalidWorkflowError("pipeline inputs do not match workflow inputs")
    try:
        output_schema = validate_pipeline(schemas_by_dataset, pipeline)
    except PrepError as exc:
        error = InvalidWorkflowError(f"pipeline invalid: {exc} ({exc.code})")
        error.step_index = exc.step_index
        error.detail_code = exc.code
        raise error from exc

    out_names = {n for n, _ in output_schema}
    algorithm = defn.algorithm or {}
    kind = algorithm.get("algorithm")
    referenced: list[str] = []
    if kind == "descriptive_stats":
        referenced = list(algorithm.get("columns", []))
    elif kind == "linear_regression":
        referenced = [algorithm.get("target")] + list(algorithm.get("features", []))
    elif kind == "kmeans":
        referenced = list(algorithm.get("features", []))
    elif kind == "pearson_correlation":
        referenced = [algorithm.get("col_a"), algorithm.get("col_b")]
    else:
        raise InvalidWorkflowError(f"unknown algorithm {kind!r}")
    for name in referenced:
        if name not in out_names:
            raise InvalidWorkflowError(f"algorithm references unknown column {name!r}")

    viz = defn.visualization or {}
    chart = viz.get("chart_type")
    if chart not in ("line", "bar", "scatter", "histogram"):
        raise InvalidWorkflowError(f"unknown chart type {chart!r}")
    if chart == "histogram":
        if viz.get("column") not in out_names:
            raise InvalidWorkflowError(f"chart references unknown column {viz.get('column')!r}")
    else:
        for name in [viz.get("x")] + list(viz.get("y", [])):
            if name not in out_names:
                raise InvalidWorkflowError(f"chart references unknown column {name!r}")
    return output_schema


class _JsonlStore:
    def __init__(self, path: str):
        self._path = path
        self._lock = threading.Lock()
        self._records: dict[str, dict] = {}
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        record = json.loads(line)
                        self._records[record[self.key_field]] = record

    key_field = "id"

    def _append(self, record: dict) -> None:
        with self._lock:
            self._records[record[self.key_field]] = record
            with open(self._path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")


class WorkflowStore(_JsonlStore):
    key_field = "workflow_id"

    def add(self, defn: WorkflowDefinition) -> None:
        self._append(defn.to_record())

    def get(self, workflow_id: str) -> Optional[WorkflowDefinition]:
        record = self._records.get(workflow_id)
        return WorkflowDefinition.from_record(record) if record else None

    def list_for(self, owner_id: str) -> list[WorkflowDefinition]:
        return [
            WorkflowDefinition.from_record(r)
            for r in self._records.values()
            if r["owner_id"] == owner_id
        ]


class ApplicationStore(_JsonlStore):
    key_field = "application_id"

    def save(self, owner_id: str, name: str, workflow: WorkflowDefinition) -> ApplicationRecord:
        content = workflow.to_record()
        content.pop("workflow_id", None)
        content.pop("created_at_ms", None)
        app = ApplicationRecord(
            application_id=new_id128(),
            owner_id=owner_id,
            name=name,
            workflow=content,
            saved_at_ms=now_ms(),
        )
        self._append(app.to_record())
        return app

    def get(self, application_id: str) -> Optional[ApplicationRecord]:
        record = self._records.get(application_id)
        return ApplicationRecord.from_record(record) if record else None

    def list_for(self, owner_id: str) -> list[ApplicationRecord]:
        return [
            ApplicationRecord.from_record(r)
            for r in self._records.values()
            if r["owner_id"] == owner_id
        ]

    def instantiate(self, app: ApplicationRecord) -> WorkflowDefinition:
        """Fresh workflow with identical content and a new identity."""
        content = dict(app.workflow)
        return WorkflowDefinition(
            workflow_id=new_id128(),
            owner_id=app.owner_id,
            name=content.get("name", app.name),
            input_dataset_ids=list(content["input_dataset_ids"]),
            pipeline=content["pipeline"],
            algorithm=content["algorithm"],
            visualization=content["visualization"],
            created_at_ms=now_ms(),
        )
