"""End-to-end verification harness: scripted scenarios plus leak scans.

Each scenario builds a clean platform in a temporary data root, drives it
through a failure mode (or the happy path), asserts the observable
contract, and scans persisted bytes for plaintext sentinels and raw key
material.  Reports are plain data so the test suite and operators can
consume them alike.
"""

from __future__ import annotations

import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field

from . import envelope
from .client import PlatformClient
from .config import PlatformConfig, ResourceBudget
from .coordinator import Coordinator
from .orchestrator import default_worker_launcher
from .table import parse_csv, to_csv
from .util import now_ms

SCENARIOS = (
    "happy_path",
    "revocation_mid_queue",
    "tamper",
    "worker_crash",
    "restart_recovery",
)

SENTINEL = "SENTINEL-PLAINTEXT-c41e77"


@dataclass
class ScenarioReport:
    scenario: str
    passed: bool
    details: list[str] = field(default_factory=list)
    leak_scan: dict = field(default_factory=dict)


def scan_for_bytes(root: str, needles: list[bytes], exclude_dirs: list[str] = ()) -> list[str]:
    """Walks every persisted file under ``root`` and reports which contain
    any needle; ``exclude_dirs`` are skipped (by real path prefix)."""
    hits: list[str] = []
    excluded = [os.path.realpath(d) for d in exclude_dirs]
    for dirpath, _dirnames, filenames in os.walk(root):
        real = os.path.realpath(dirpath)
        if any(real == e or real.startswith(e + os.sep) for e in excluded):
            continue
        for name in filenames:
            path = os.path.join(dirpath, name)
            try:
                with open(path, "rb") as fh:
                    blob = fh.read()
            except OSError:
                continue
            for needle in needles:
                if needle and needle in blob:
                    hits.append(f"{path}: contains needle of length {len(needle)}")
                    break
    return hits


def _harness_config(data_root: str) -> PlatformConfig:
    config = PlatformConfig(
        data_root=data_root,
        host="127.0.0.1",
        port=0,
        principals=[
            {"id": "provider", "secret": "provider-secret"},
            {"id": "consumer", "secret": "consumer-secret"},
        ],
        budget=ResourceBudget(max_sandboxes=4, memory_mb=256, job_timeout_s=60.0),
        dispatch_period_s=0.1,
        heartbeat_interval_s=0.25,
        heartbeat_failure_threshold=3,
        session_ttl_s=600.0,
        worker_poll_s=0.05,
    )
    config.validate()
    return config


def _sentinel_csv() -> str:
    rows = ["station,load,note"]
    for i in range(6):
        note = SENTINEL if i % 2 == 0 else "ordinary"
        rows.append(f"st{i},{10 + i},{note}")
    return "\n".join(rows) + "\n"


def _stats_workflow(dataset_id: str) -> dict:
    return {
        "name": "harness-flow",
        "input_dataset_ids": [dataset_id],
        "pipeline": {"steps": []},
        "algorithm": {"algorithm": "descriptive_stats", "columns": ["load"]},
        "visualization": {"chart_type": "histogram", "column": "load"},
    }


class _Scenario:
    """One coordinator on a fresh data root plus both demo principals."""

    def __init__(self, base_dir: str | None = None, launcher=default_worker_launcher):
        self._own_tmp = base_dir is None
        self.base_dir = base_dir or tempfile.mkdtemp(prefix="vaultbench-harness-")
        self.provider_dir = os.path.join(self.base_dir, "provider-local")
        os.makedirs(self.provider_dir, exist_ok=True)
        self.config = _harness_config(os.path.join(self.base_dir, "data"))
        self.coordinator = Coordinator(self.config, launcher=launcher)
        self.coordinator.start()
        self.provider = PlatformClient(self.coordinator.endpoint, "provider", "provider-secret")
        self.consumer = PlatformClient(self.coordinator.endpoint, "consumer", "consumer-secret")
        self.client_key_material: list[bytes] = []

    def upload_sentinel_dataset(self) -> dict:
        """Provider-side flow with the key captured for leak scanning:
        plaintext CSV stays in the provider's local directory only."""
        csv_text = _sentinel_csv()
        local_copy = os.path.join(self.provider_dir, "dataset.csv")
        with open(local_copy, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        table = parse_csv(csv_text)
        key_id, key = self.provider.issue_dataset_key()
        self.client_key_material.append(key)
        sealed = envelope.seal(key, key_id, to_csv(table).encode())
        import base64

        return self.provider._request(
            "POST",
            "/datasets",
            {
                "name": "sentinel-data",
                "schema": [[n, t] for n, t in table.schema],
                "row_count": table.nrows,
                "envelope_b64": base64.b64encode(sealed).decode(),
            },
        )

    def leak_needles(self) -> list[bytes]:
        needles = [SENTINEL.encode()]
        for key in list(self.client_key_material) + self.coordinator.keysvc.known_key_material():
            needles.append(key)
            needles.append(key.hex().encode())
        return needles

    def active_scoped_roots(self) -> list[str]:
        return [
            s.scoped_root
            for s in self.coordinator.orchestrator.list_sandboxes()
            if s.state != "terminated"
        ]

    def stop(self, graceful: bool = True) -> None:
        self.coordinator.stop(graceful=graceful)

    def cleanup(self) -> None:
        if self._own_tmp:
            shutil.rmtree(self.base_dir, ignore_errors=True)

    def hygiene_issues(self) -> list[str]:
        issues = []
        sandbox_dir = os.path.join(self.config.data_root, "sandboxes")
        if os.path.isdir(sandbox_dir) and os.listdir(sandbox_dir):
            issues.append(f"orphan sandbox roots: {os.listdir(sandbox_dir)}")
        for job in self.coordinator.scheduler.list_jobs():
            if not job.terminal:
                issues.append(f"non-terminal job {job.job_id} in state {job.state}")
        return issues


def run_scenario(name: str, base_dir: str | None = None) -> ScenarioReport:
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")
    return globals()[f"_scenario_{name}"](base_dir)


def _scenario_happy_path(base_dir) -> ScenarioReport:
    report = ScenarioReport("happy_path", passed=False)
    scenario = _Scenario(base_dir)
    try:
        dataset = scenario.upload_sentinel_dataset()
        scenario.provider.grant(dataset["dataset_id"], "consumer", ttl_seconds=600)
        workflow = scenario.consumer.create_workflow(_stats_workflow(dataset["dataset_id"]))
        job = scenario.consumer.submit_job(workflow["workflow_id"])
        record = scenario.consumer.wait_for_job(job["job_id"], timeout_s=30.0)
        if record["state"] != "completed":
            report.details.append(f"job ended {record['state']}: {record.get('error')}")
            return report
        results = scenario.consumer.job_results(job["job_id"])
        mean = None
        stats = results["result_set"]["tables"]["stats"]
        mean = stats["columns"]["mean"][stats["columns"]["column"].index("load")]
        report.details.append(f"job completed; mean load = {mean}")

        needles = scenario.leak_needles()
        live_hits = scan_for_bytes(
            scenario.config.data_root, needles, exclude_dirs=scenario.active_scoped_roots()
        )
        report.leak_scan["during_run_hits"] = live_hits
        scenario.stop(graceful=True)  # terminates sandboxes with secure wipe
        after_hits = scan_for_bytes(scenario.config.data_root, needles)
        report.leak_scan["after_teardown_hits"] = after_hits
        hygiene = scenario.hygiene_issues()
        if live_hits or after_hits or hygiene:
            report.details += live_hits + after_hits + hygiene
            return report
        report.details.append("leak scan clean during run and after teardown")
        report.passed = True
        return report
    finally:
        try:
            scenario.stop()
        except Exception:
            pass
        scenario.cleanup()


def _scenario_revocation_mid_queue(base_dir) -> ScenarioReport:
    report = ScenarioReport("revocation_mid_queue", passed=False)
    scenario = _Scenario(base_dir)
    try:
        dataset = scenario.upload_sentinel_dataset()
        agreement = scenario.provider.grant(dataset["dataset_id"], "consumer", ttl_seconds=600)
        workflow = scenario.consumer.create_workflow(_stats_workflow(dataset["dataset_id"]))
        job = scenario.consumer.submit_job(
            workflow["workflow_id"], {"type": "at", "at_ms": now_ms() + 1200}
        )
        scenario.provider.revoke(agreement["agreement_id"])
        record = scenario.consumer.wait_for_job(job["job_id"], timeout_s=30.0)
        if record["state"] != "failed" or record["error"]["code"] != "key-denied":
            report.details.append(f"expected failed(key-denied), got {record['state']} {record.get('error')}")
            return report
        report.details.append("revoked agreement denied the key; job failed(key-denied)")
        scenario.stop(graceful=True)
        hygiene = scenario.hygiene_issues()
        if hygiene:
            report.details += hygiene
            return report
        report.passed = True
        return report
    finally:
        try:
            scenario.stop()
        except Exception:
            pass
        scenario.cleanup()


def _scenario_tamper(base_dir) -> ScenarioReport:
    report = ScenarioReport("tamper", passed=False)
    scenario = _Scenario(base_dir)
    try:
        dataset = scenario.upload_sentinel_dataset()
        descriptor = scenario.coordinator.catalogue.get(dataset["dataset_id"])
        space = scenario.coordinator.store.space_for_owner("provider")
        path = os.path.join(space.root, descriptor.envelope_ref)
        with open(path, "r+b") as fh:
            fh.seek(envelope.HEADER_LEN + 3)
            byte = fh.read(1)
            fh.seek(envelope.HEADER_LEN + 3)
            fh.write(bytes([byte[0] ^ 0x01]))
        workflow = scenario.provider.create_workflow(_stats_workflow(dataset["dataset_id"]))
        job = scenario.provider.submit_job(workflow["workflow_id"])
        record = scenario.provider.wait_for_job(job["job_id"], timeout_s=30.0)
        if record["state"] != "failed" or record["error"]["code"] != "integrity-failure":
            report.details.append(f"expected failed(integrity-failure), got {record['state']} {record.get('error')}")
            return report
        report.details.append("tampered envelope rejected; job failed(integrity-failure)")
        scenario.stop(graceful=True)
        hygiene = scenario.hygiene_issues()
        if hygiene:
            report.details += hygiene
            return report
        report.passed = True
        return report
    finally:
        try:
            scenario.stop()
        except Exception:
            pass
        scenario.cleanup()


def _scenario_worker_crash(base_dir) -> ScenarioReport:
    report = ScenarioReport("worker_crash", passed=False)
    slow_launcher = lambda env: default_worker_launcher(
        {**env, "VAULTBENCH_RUNJOB_DELAY_MS": "20000"}
    )
    scenario = _Scenario(base_dir, launcher=slow_launcher)
    try:
        dataset = scenario.upload_sentinel_dataset()
        workflow = scenario.provider.create_workflow(_stats_workflow(dataset["dataset_id"]))
        job = scenario.provider.submit_job(workflow["workflow_id"])
        deadline = time.monotonic() + 20
        record = scenario.provider.job_status(job["job_id"])
        while time.monotonic() < deadline and record["state"] != "running":
            time.sleep(0.05)
            record = scenario.provider.job_status(job["job_id"])
        if record["state"] != "running":
            report.details.append(f"job never reached running: {record['state']}")
            return report
        process = scenario.coordinator.orchestrator.process_for(record["sandbox_id"])
        process.kill()
        killed_at = time.monotonic()
        record = scenario.provider.wait_for_job(job["job_id"], timeout_s=10.0)
        elapsed = time.monotonic() - killed_at
        interval = scenario.config.heartbeat_interval_s
        if record["state"] != "failed":
            report.details.append(f"expected failed, got {record['state']}")
            return report
        if elapsed > 3 * interval + 1.0:
            report.details.append(f"failure detected too late: {elapsed:.2f}s")
            return report
        report.details.append(
            f"killed worker detected in {elapsed:.2f}s (threshold {3 * interval:.2f}s + slack)"
        )
        scenario.stop(graceful=True)
        hygiene = scenario.hygiene_issues()
        if hygiene:
            report.details += hygiene
            return report
        report.passed = True
        return report
    finally:
        try:
            scenario.stop()
        except Exception:
            pass
        scenario.cleanup()


def _scenario_restart_recovery(base_dir) -> ScenarioReport:
    report = ScenarioReport("restart_recovery", passed=False)
    own_tmp = base_dir is None
    base = base_dir or tempfile.mkdtemp(prefix="vaultbench-harness-")
    try:
        scenario = _Scenario(base)
        dataset = scenario.upload_sentinel_dataset()
        workflow = scenario.provider.create_workflow(_stats_workflow(dataset["dataset_id"]))
        fire_at = now_ms() + 3000
        job = scenario.provider.submit_job(
            workflow["workflow_id"], {"type": "at", "at_ms": fire_at}
        )
        scenario.stop(graceful=False)  # simulated crash: workers killed, no wipe

        recovered = Coordinator(_harness_config(os.path.join(base, "data")))
        recovered.start()
        try:
            provider = PlatformClient(recovered.endpoint, "provider", "provider-secret")
            record = provider.job_status(job["job_id"])
            if record["state"] != "scheduled":
                report.details.append(f"recovered state was {record['state']}, not scheduled")
                return report
            record = provider.wait_for_job(job["job_id"], timeout_s=30.0)
            if record["state"] != "completed":
                report.details.append(f"job after restart ended {record['state']}: {record.get('error')}")
                return report
            if record["timestamps"]["fetching"] < fire_at:
                report.details.append("job started before its scheduled time")
                return report
            report.details.append("scheduled job recovered after restart and completed on time")
            recovered.stop(graceful=True)
            sandbox_dir = os.path.join(recovered.config.data_root, "sandboxes")
            if os.path.isdir(sandbox_dir) and os.listdir(sandbox_dir):
                report.details.append(f"orphan sandboxes: {os.listdir(sandbox_dir)}")
                return report
            report.passed = True
            return report
        finally:
            try:
                recovered.stop()
            except Exception:
                pass
    finally:
        if own_tmp:
            shutil.rmtree(base, ignore_errors=True)


def run_all(base_dir: str | None = None) -> list[ScenarioReport]:
    return [run_scenario(name, base_dir=None) for name in SCENARIOS]
