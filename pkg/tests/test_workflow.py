"""Workflow validation and application copy semantics (unit level)."""

import pytest

from vaultbench.errors import InvalidWorkflowError
from vaultbench.util import now_ms
from vaultbench.workflow import (
    ApplicationStore,
    WorkflowDefinition,
    WorkflowStore,
    validate_workflow,
)

SCHEMAS = {"d1": [("when", "timestamp_ms_utc"), ("v", "int64"), ("s", "string")]}


def _defn(pipeline_steps=None, algorithm=None, viz=None, datasets=("d1",)):
    return WorkflowDefinition(
        workflow_id="w" * 32,
        owner_id="owner",
        name="wf",
        input_dataset_ids=list(datasets),
        pipeline={"steps": pipeline_steps or []},
        algorithm=algorithm or {"algorithm": "descriptive_stats", "columns": ["v"]},
        visualization=viz or {"chart_type": "histogram", "column": "v"},
        created_at_ms=now_ms(),
    )


def test_valid_workflow_resolves_schema():
    steps = [
        {"op": "create_column", "name": "hour",
         "expr": {"op": "ts_hour", "arg": {"op": "col", "name": "when"}}},
    ]
    out = validate_workflow(_defn(pipeline_steps=steps), SCHEMAS)
    assert ("hour", "int64") in out


def test_unknown_dataset_rejected():
    with pytest.raises(InvalidWorkflowError):
        validate_workflow(_defn(datasets=("nope",)), SCHEMAS)


def test_pipeline_error_carries_step_index():
    steps = [
        {"op": "rename_column", "from": "v", "to": "v2"},
        {"op": "drop_columns", "names": ["ghost"]},
    ]
    with pytest.raises(InvalidWorkflowError) as info:
        validate_workflow(_defn(pipeline_steps=steps), SCHEMAS)
    assert info.value.step_index == 1
    assert info.value.detail_code == "unknown-column"


def test_algorithm_column_must_exist_after_prep():
    steps = [{"op": "drop_columns", "names": ["v"]}]
    with pytest.raises(InvalidWorkflowError):
        validate_workflow(_defn(pipeline_steps=steps), SCHEMAS)


def test_chart_column_checked():
    viz = {"chart_type": "scatter", "x": "v", "y": ["missing"]}
    with pytest.raises(InvalidWorkflowError):
        validate_workflow(_defn(viz=viz), SCHEMAS)


def test_application_instantiate_copies_content(tmp_path):
    workflows = WorkflowStore(str(tmp_path / "w.jsonl"))
    applications = ApplicationStore(str(tmp_path / "a.jsonl"))
    original = _defn()
    workflows.add(original)
    app = applications.save("owner", "saved", original)
    fresh = applications.instantiate(app)
    assert fresh.workflow_id != original.workflow_id
    assert fresh.input_dataset_ids == original.input_dataset_ids
    assert fresh.pipeline == original.pipeline
    assert fresh.algorithm == original.algorithm
    assert fresh.visualization == original.visualization


def test_stores_persist(tmp_path):
    workflows = WorkflowStore(str(tmp_path / "w.jsonl"))
    workflows.add(_defn())
    reloaded = WorkflowStore(str(tmp_path / "w.jsonl"))
    assert reloaded.get("w" * 32) is not None
