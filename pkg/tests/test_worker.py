"""Worker agent: plan validation, idempotent progress, plaintext confinement."""

import os
import time

import pytest

from vaultbench.client import PlatformClient
from vaultbench.coordinator import Coordinator
from vaultbench.errors import IllegalTransitionError
from vaultbench.harness import scan_for_bytes
from vaultbench.orchestrator import default_worker_launcher
from vaultbench.worker import PhaseFailure, WorkerAgent, WorkerSession

from .conftest import fast_config

SENTINEL = "CONFINE-ME-81b2c4"

CSV = f"label,v\n{SENTINEL},1\nplain,2\nmore,3\n"


def _workflow(dataset_id):
    return {
        "name": "confinement",
        "input_dataset_ids": [dataset_id],
        "pipeline": {"steps": []},
        "algorithm": {"algorithm": "descriptive_stats", "columns": ["v"]},
        "visualization": {"chart_type": "histogram", "column": "v"},
    }


class TestPlanValidation:
    def test_well_ordered_plan_accepted(self):
        plan = {
            "job_id": "j",
            "instructions": [
                {"op": "fetch_dataset", "dataset_id": "a"},
                {"op": "fetch_dataset", "dataset_id": "b"},
                {"op": "obtain_key", "dataset_id": "a"},
                {"op": "obtain_key", "dataset_id": "b"},
                {"op": "decrypt", "dataset_id": "a"},
                {"op": "decrypt", "dataset_id": "b"},
                {"op": "run_job"},
                {"op": "encrypt_results"},
                {"op": "upload_results"},
                {"op": "terminate"},
            ],
        }
        WorkerAgent._validate_plan(plan)  # must not raise

    def test_out_of_order_plan_rejected(self):
        plan = {
            "job_id": "j",
            "instructions": [
                {"op": "decrypt", "dataset_id": "a"},
                {"op": "fetch_dataset", "dataset_id": "a"},
            ],
        }
        with pytest.raises(PhaseFailure):
            WorkerAgent._validate_plan(plan)

    def test_duplicate_phase_per_dataset_rejected(self):
        plan = {
            "job_id": "j",
            "instructions": [
                {"op": "fetch_dataset", "dataset_id": "a"},
                {"op": "fetch_dataset", "dataset_id": "a"},
            ],
        }
        with pytest.raises(PhaseFailure):
            WorkerAgent._validate_plan(plan)

    def test_run_before_decrypt_rejected(self):
        plan = {
            "job_id": "j",
            "instructions": [
                {"op": "run_job"},
                {"op": "fetch_dataset", "dataset_id": "a"},
            ],
        }
        with pytest.raises(PhaseFailure):
            WorkerAgent._validate_plan(plan)


class TestSessionWipe:
    def test_wipe_zeroes_keys_and_removes_cache(self, tmp_path):
        session = WorkerSession("job1", str(tmp_path))
        session.hold_key("aa" * 16, b"\x42" * 32)
        buffer = session.keys["aa" * 16]
        cache_file = os.path.join(session.cache_dir, "d.csv")
        with open(cache_file, "w") as fh:
            fh.write("decrypted plaintext")
        session.wipe()
        assert bytes(buffer) == b"\x00" * 32
        assert not session.keys
        assert not os.path.exists(cache_file)
        assert not os.path.exists(session.cache_dir)


class TestProgressIdempotence:
    def _running_job(self, platform, provider):
        dataset = provider.upload_csv_text(CSV, "confine")
        workflow = provider.create_workflow(_workflow(dataset["dataset_id"]))
        job = provider.submit_job(workflow["workflow_id"])
        record = provider.wait_for_job(job["job_id"], timeout_s=25.0)
        assert record["state"] == "completed"
        return record

    def test_duplicate_phase_acked_single_transition(self, platform, provider):
        record = self._running_job(platform, provider)
        job_id = record["job_id"]
        sandbox_id = record["sandbox_id"]
        before = platform.scheduler.get_status(job_id).timestamps.copy()
        reply = platform.worker_progress(sandbox_id, {"job_id": job_id, "phase": "running"})
        assert reply.get("duplicate") is True
        after = platform.scheduler.get_status(job_id).timestamps
        assert before == after
        assert platform.scheduler.get_status(job_id).state == "completed"

    def test_illegal_phase_rejected(self, platform, provider):
        record = self._running_job(platform, provider)
        with pytest.raises(IllegalTransitionError):
            platform.scheduler.update_state(record["job_id"], "running")


class TestPlaintextConfinement:
    def test_decrypted_bytes_only_under_scoped_root(self, tmp_path):
        slow_launcher = lambda env: default_worker_launcher(
            {**env, "VAULTBENCH_RUNJOB_DELAY_MS": "3000"}
        )
        coordinator = Coordinator(fast_config(str(tmp_path / "data")), launcher=slow_launcher)
        coordinator.start()
        try:
            provider = PlatformClient(coordinator.endpoint, "provider", "provider-secret")
            dataset = provider.upload_csv_text(CSV, "confine")
            workflow = provider.create_workflow(_workflow(dataset["dataset_id"]))
            job = provider.submit_job(workflow["workflow_id"])

            deadline = time.monotonic() + 20
            record = provider.job_status(job["job_id"])
            while time.monotonic() < deadline and record["state"] != "running":
                time.sleep(0.05)
                record = provider.job_status(job["job_id"])
            assert record["state"] == "running"

            scoped_roots = [
                s.scoped_root
                for s in coordinator.orchestrator.list_sandboxes()
                if s.state != "terminated"
            ]
            # while the job runs, the decrypted sentinel exists under the
            # scoped root and nowhere else
            inside = scan_for_bytes(scoped_roots[0], [SENTINEL.encode()])
            assert inside, "expected the decrypted cache inside the scoped root"
            outside = scan_for_bytes(
                coordinator.config.data_root, [SENTINEL.encode()], exclude_dirs=scoped_roots
            )
            assert outside == []

            record = provider.wait_for_job(job["job_id"], timeout_s=25.0)
            assert record["state"] == "completed"
            # after the terminal report the plaintext is gone everywhere,
            # including inside the still-live sandbox
            time.sleep(0.2)
            assert scan_for_bytes(coordinator.config.data_root, [SENTINEL.encode()]) == []
        finally:
            coordinator.stop()
