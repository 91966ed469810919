"""Job scheduling control plane: state machine, event log, dispatch.

Job lifecycle::

    scheduled ──(due)──> queued ──> fetching ──> decrypting ──> running
        │                  │            │             │            │
        └──> cancelled <───┘            └─────────────┴────────────┤
                                                                   v
               completed <── uploading <── encrypting_results ──> failed

Any pre-terminal state may move to ``failed``; ``cancelled`` is reachable
only from ``scheduled``/``queued``; terminal states are immutable.

Every mutation appends one event to a newline-delimited JSON log
(``{ts, job_id, event, detail}``); the full scheduler state is rebuilt
by replaying that log on startup, which is what makes crash recovery
testable.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (
    IllegalTransitionError,
    MissingAgreementError,
    NotCancellableError,
    UnknownJobError,
    VaultbenchError,
)
from .util import new_id128, now_ms
from .workflow import WorkflowDefinition

STATES = (
    "scheduled",
    "queued",
    "fetching",
    "decrypting",
    "running",
    "encrypting_results",
    "uploading",
    "completed",
    "failed",
    "cancelled",
)

TERMINAL_STATES = frozenset({"completed", "failed", "cancelled"})

PHASE_CHAIN = ("fetching", "decrypting", "running", "encrypting_results", "uploading")

_LEGAL: dict[str, frozenset] = {
    "scheduled": frozenset({"queued", "cancelled", "failed"}),
    "queued": frozenset({"fetching", "cancelled", "failed"}),
    "fetching": frozenset({"decrypting", "failed"}),
    "decrypting": frozenset({"running", "failed"}),
    "running": frozenset({"encrypting_results", "failed"}),
    "encrypting_results": frozenset({"uploading", "failed"}),
    "uploading": frozenset({"completed", "failed"}),
    "completed": frozenset(),
    "failed": frozenset(),
    "cancelled": frozenset(),
}

PROVISION_MAX_ATTEMPTS = 3
PROVISION_BACKOFF_MS = 500


class ProvisionFailure(VaultbenchError):
    """Raised by the assignment callback when provisioning a sandbox
    failed; the job stays queued and retries with doubling backoff."""

    code = "provision-failure"


@dataclass
class JobRecord:
    job_id: str
    workflow_id: str
    owner_id: str
    schedule: dict  # {"type": "immediate"} | {"type": "at", "at_ms": int}
    state: str
    sandbox_id: Optional[str] = None
    timestamps: dict = field(default_factory=dict)  # state -> epoch ms
    error: Optional[dict] = None  # {"code", "message"}
    result_envelope_ref: Optional[str] = None
    derived_dataset_id: Optional[str] = None
    retry_count: int = 0
    next_attempt_ms: int = 0

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    def to_record(self) -> dict:
        return {
            "job_id": self.job_id,
            "workflow_id": self.workflow_id,
            "owner_id": self.owner_id,
            "schedule": self.schedule,
            "state": self.state,
            "sandbox_id": self.sandbox_id,
            "timestamps": dict(self.timestamps),
            "error": self.error,
            "result_envelope_ref": self.result_envelope_ref,
            "derived_dataset_id": self.derived_dataset_id,
            "retry_count": self.retry_count,
        }


class JobScheduler:
    """Accepts submissions, drives the state machine, dispatches due jobs.

    Collaborators are injected as callables so the control plane stays
    independently testable:

    - ``validate_workflow(defn)`` raises invalid-workflow;
    - ``has_agreement(owner_id, dataset_id)`` says whether the owner may
      use the dataset right now (ownership or active agreement);
    - ``release_sandbox(sandbox_id)`` frees the slot on terminal states.
    """

    def __init__(
        self,
        data_root: str,
        validate_workflow: Callable[[WorkflowDefinition], None],
        has_agreement: Callable[[str, str], bool],
        release_sandbox: Callable[[str], None] = lambda sandbox_id: None,
    ):
        self._lock = threading.RLock()
        self._events_path = os.path.join(data_root, "events.jsonl")
        os.makedirs(data_root, exist_ok=True)
        self._validate_workflow = validate_workflow
        self._has_agreement = has_agreement
        self._release_sandbox = release_sandbox
        self._jobs: dict[str, JobRecord] = {}
        self._order: list[str] = []  # submission order for FIFO dispatch
        self._replay()

    # -- event log -------------------------------------------------------------

    def _append_event(self, job_id: str, event: str, detail: dict) -> None:
        line = json.dumps(
            {"ts": now_ms(), "job_id": job_id, "event": event, "detail": detail}
        )
        with open(self._events_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def _replay(self) -> None:
        if not os.path.exists(self._events_path):
            return
        with open(self._events_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                self._apply_event(record["job_id"], record["event"], record["detail"], record["ts"])

    def _apply_event(self, job_id: str, event: str, detail: dict, ts: int) -> None:
        if event == "submitted":
            job = JobRecord(
                job_id=job_id,
                workflow_id=detail["workflow_id"],
                owner_id=detail["owner_id"],
                schedule=detail["schedule"],
                state=detail["state"],
                timestamps={detail["state"]: ts},
            )
            self._jobs[job_id] = job
            self._order.append(job_id)
            return
        job = self._jobs.get(job_id)
        if job is None:
            return
        if event == "assigned":
            job.sandbox_id = detail["sandbox_id"]
            return
        if event == "transition":
            job.state = detail["to"]
            job.timestamps[detail["to"]] = ts
            if detail.get("error") is not None:
                job.error = detail["error"]
            if detail.get("result_envelope_ref"):
                job.result_envelope_ref = detail["result_envelope_ref"]
            if detail.get("derived_dataset_id"):
                job.derived_dataset_id = detail["derived_dataset_id"]
            return
        if event == "retry":
            job.retry_count = detail["count"]
            job.next_attempt_ms = detail["next_attempt_ms"]
            return
        if event == "result":
            job.result_envelope_ref = detail.get("result_envelope_ref")
            job.derived_dataset_id = detail.get("derived_dataset_id")
            return

    # -- submission ---------------------------------------------------------------

    def submit(self, workflow: WorkflowDefinition, schedule: dict) -> JobRecord:
        """Immediate submissions start queued; at(T) starts scheduled.
        The record is persisted before this returns."""
        self._validate_workflow(workflow)
        for dataset_id in workflow.input_dataset_ids:
            if not self._has_agreement(workflow.owner_id, dataset_id):
                raise MissingAgreementError(
                    f"no active agreement for dataset {dataset_id}", dataset_id
                )
        kind = schedule.get("type")
        if kind == "at":
            if not isinstance(schedule.get("at_ms"), int):
                raise VaultbenchError("schedule.at_ms must be epoch milliseconds", code="invalid-workflow")
            state = "scheduled"
        elif kind == "immediate":
            state = "queued"
        else:
            raise VaultbenchError(f"unknown schedule type {kind!r}", code="invalid-workflow")

        with self._lock:
            job = JobRecord(
                job_id=new_id128(),
                workflow_id=workflow.workflow_id,
                owner_id=workflow.owner_id,
                schedule=dict(schedule),
                state=state,
                timestamps={state: now_ms()},
            )
            self._jobs[job.job_id] = job
            self._order.append(job.job_id)
            self._append_event(
                job.job_id,
                "submitted",
                {
                    "workflow_id": workflow.workflow_id,
                    "owner_id": workflow.owner_id,
                    "schedule": job.schedule,
                    "state": state,
                },
            )
            return job

    # -- dispatch --------------------------------------------------------------------

    def dispatch_due(self, now: int, assign: Callable[[JobRecord], Optional[str]]) -> list[JobRecord]:
        """Promotes due scheduled jobs to queued, then offers unassigned
        queued jobs (FIFO) to ``assign``.

        ``assign`` returns a sandbox_id, or None when the owner's sandbox
        is not ready yet, or raises :class:`ProvisionFailure` — which
        counts against the retry budget (3 attempts, doubling backoff).
        """
        dispatched: list[JobRecord] = []
        with self._lock:
            for job_id in list(self._order):
                job = self._jobs[job_id]
                if job.state == "scheduled" and job.schedule.get("at_ms", 0) <= now:
                    self._transition(job, "queued", None)
            for job_id in list(self._order):
                job = self._jobs[job_id]
                if job.state != "queued" or job.sandbox_id is not None:
                    continue
                if job.next_attempt_ms > now:
                    continue
                try:
                    sandbox_id = assign(job)
                except ProvisionFailure as exc:
                    job.retry_count += 1
                    if job.retry_count >= PROVISION_MAX_ATTEMPTS:
                        self._transition(
                            job,
                            "failed",
                            {"code": "provision-failure", "message": str(exc)},
                        )
                    else:
                        job.next_attempt_ms = now + PROVISION_BACKOFF_MS * (2 ** (job.retry_count - 1))
                        self._append_event(
                            job.job_id,
                            "retry",
                            {"count": job.retry_count, "next_attempt_ms": job.next_attempt_ms},
                        )
                    continue
                if sandbox_id is None:
                    continue
                job.sandbox_id = sandbox_id
                self._append_event(job.job_id, "assigned", {"sandbox_id": sandbox_id})
                dispatched.append(job)
        return dispatched

    # -- state machine ------------------------------------------------------------------

    def _transition(self, job: JobRecord, new_state: str, error: Optional[dict], **extra) -> None:
        if new_state not in _LEGAL.get(job.state, frozenset()):
            raise IllegalTransitionError(f"{job.state} -> {new_state} is not a legal transition")
        previous = job.state
        job.state = new_state
        job.timestamps[new_state] = now_ms()
        if error is not None:
            job.error = error
        if extra.get("result_envelope_ref"):
            job.result_envelope_ref = extra["result_envelope_ref"]
        if extra.get("derived_dataset_id"):
            job.derived_dataset_id = extra["derived_dataset_id"]
        detail = {"from": previous, "to": new_state, "error": error}
        detail.update({k: v for k, v in extra.items() if v})
        self._append_event(job.job_id, "transition", detail)
        if new_state in TERMINAL_STATES and job.sandbox_id:
            self._release_sandbox(job.sandbox_id)

    def update_state(
        self,
        job_id: str,
        new_state: str,
        detail: Optional[dict] = None,
        *,
        result_envelope_ref: str | None = None,
        derived_dataset_id: str | None = None,
    ) -> JobRecord:
        """Applies one transition; illegal moves (including repeats of the
        current state) raise.  Progress-report deduplication lives one
        layer up, keyed on (job_id, phase)."""
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise UnknownJobError(f"unknown job {job_id}")
            self._transition(
                job,
                new_state,
                detail,
                result_envelope_ref=result_envelope_ref,
                derived_dataset_id=derived_dataset_id,
            )
            return job

    def record_result(self, job_id: str, result_envelope_ref: str, derived_dataset_id: str | None) -> None:
        """Attaches result references produced during the uploading phase."""
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise UnknownJobError(f"unknown job {job_id}")
            job.result_envelope_ref = result_envelope_ref
            job.derived_dataset_id = derived_dataset_id
            self._append_event(
                job_id,
                "result",
                {
                    "result_envelope_ref": result_envelope_ref,
                    "derived_dataset_id": derived_dataset_id,
                },
            )

    def fail_job(self, job_id: str, code: str, message: str) -> Optional[JobRecord]:
        """Forces a job to failed from any pre-terminal state (used by the
        heartbeat monitor); no-op when already terminal."""
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None or job.terminal:
                return job
            self._transition(job, "failed", {"code": code, "message": message})
            return job

    def cancel(self, job_id: str) -> JobRecord:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise UnknownJobError(f"unknown job {job_id}")
            if job.state not in ("queued", "scheduled"):
                raise NotCancellableError(f"cannot cancel a job in state {job.state}")
            self._transition(job, "cancelled", None)
            return job

    # -- queries -----------------------------------------------------------------------

    def get_status(self, job_id: str) -> JobRecord:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise UnknownJobError(f"unknown job {job_id}")
            return job

    def list_jobs(self, owner_id: str | None = None) -> list[JobRecord]:
        with self._lock:
            return [
                job
                for job_id in self._order
                for job in (self._jobs[job_id],)
                if owner_id is None or job.owner_id == owner_id
            ]

    def jobs_on_sandbox(self, sandbox_id: str) -> list[JobRecord]:
        with self._lock:
            return [
                job
                for job in self._jobs.values()
                if job.sandbox_id == sandbox_id and not job.terminal
            ]
