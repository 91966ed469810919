"""Coordinator: wires storage, keys, scheduling, orchestration and the
HTTP API into one process.

Spaces, the catalogue, the key registry, agreements, the audit log and
the job event log all persist under ``data_root``; sandbox state is
in-memory and rebuilt from scratch (stale scoped roots are destroyed at
startup).  A background dispatch thread promotes due jobs, assigns them
to ready sandboxes, and sweeps for dead workers.
"""

from __future__ import annotations

import base64
import hmac
import json
import logging
import os
import secrets
import threading
from dataclasses import dataclass
from typing import Optional

from . import envelope
from .config import PlatformConfig
from .errors import (
    AlreadyProvisionedError,
    ApiError,
    BudgetExceededError,
    InvalidSchemaError,
    InvalidWorkflowError,
    JobNotFinishedError,
    NotFoundError,
    UnauthenticatedError,
    UnknownJobError,
    VaultbenchError,
)
from .keyservice import ChannelContext, KeyReleaseRequest, KeyService
from .orchestrator import Orchestrator, default_worker_launcher
from .scheduler import JobRecord, JobScheduler, ProvisionFailure
from .securechannel import ChannelServer
from .storage import Catalogue, DatasetDescriptor, ObjectStore
from .table import validate_schema
from .util import new_id128, now_ms
from .workflow import ApplicationStore, WorkflowDefinition, WorkflowStore, validate_workflow

logger = logging.getLogger(__name__)


@dataclass
class Session:
    token: str
    principal_id: str
    expires_at_ms: int


class SessionStore:
    """Static principal registry plus expiring bearer sessions."""

    def __init__(self, principals: list[dict], ttl_s: float):
        self._secrets = {p["id"]: p["secret"] for p in principals}
        self._ttl_ms = int(ttl_s * 1000)
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def login(self, principal_id: str, secret: str) -> Session:
        expected = self._secrets.get(principal_id)
        if expected is None or not hmac.compare_digest(expected, secret):
            raise UnauthenticatedError("unknown principal or bad secret")
        session = Session(
            token=secrets.token_hex(32),
            principal_id=principal_id,
            expires_at_ms=now_ms() + self._ttl_ms,
        )
        with self._lock:
            self._sessions[session.token] = session
        return session

    def authenticate(self, token: str | None) -> str:
        if not token:
            raise UnauthenticatedError("missing bearer token")
        with self._lock:
            session = self._sessions.get(token)
            if session is None:
                raise UnauthenticatedError("unknown session token")
            if now_ms() >= session.expires_at_ms:
                del self._sessions[token]
                raise UnauthenticatedError("session expired")
            return session.principal_id

    def knows(self, principal_id: str) -> bool:
        return principal_id in self._secrets


class Coordinator:
    def __init__(self, config: PlatformConfig, launcher=default_worker_launcher):
        self.config = config
        os.makedirs(config.data_root, exist_ok=True)
        self.store = ObjectStore(config.data_root)
        self.catalogue = Catalogue(config.data_root, self.store)
        self.keysvc = KeyService(
            os.path.join(config.data_root, "keys"),
            dataset_owner=self.catalogue.owner_of,
            dataset_key=self._dataset_key_id,
        )
        self.workflows = WorkflowStore(os.path.join(config.data_root, "workflows.jsonl"))
        self.applications = ApplicationStore(os.path.join(config.data_root, "applications.jsonl"))
        self.sessions = SessionStore(config.principals, config.session_ttl_s)
        self.user_channels = ChannelServer()
        self.worker_channels = ChannelServer()
        self.scheduler = JobScheduler(
            config.data_root,
            validate_workflow=self._validate_workflow,
            has_agreement=self._has_agreement,
            release_sandbox=lambda sandbox_id: self.orchestrator.release(sandbox_id),
        )
        # HTTP server binds first so workers get a real endpoint
        from .api import ApiServer

        self.api = ApiServer(self, config.host, config.port)
        self.endpoint = f"http://{config.host}:{self.api.port}"
        self.orchestrator = Orchestrator(
            config.data_root,
            config.budget,
            coordinator_endpoint=self.endpoint,
            heartbeat_interval_s=config.heartbeat_interval_s,
            failure_threshold=config.heartbeat_failure_threshold,
            worker_poll_s=config.worker_poll_s,
            launcher=launcher,
        )
        self._plans: dict[str, dict] = {}  # job_id -> plan
        self._pending_plans: dict[str, str] = {}  # sandbox_id -> job_id awaiting pickup
        self._plans_lock = threading.Lock()
        self._dispatch_stop = threading.Event()
        self._dispatch_thread: Optional[threading.Thread] = None
        # ensure every configured principal has a private space
        for principal in config.principals:
            if self.store.space_for_owner(principal["id"]) is None:
                self.store.create_space(principal["id"])

    # -- lifecycle ----------------------------------------------------------------

    def start(self) -> None:
        self.api.start()
        self._dispatch_stop.clear()
        self._dispatch_thread = threading.Thread(target=self._dispatch_loop, daemon=True)
        self._dispatch_thread.start()

    def stop(self, *, graceful: bool = True) -> None:
        """Graceful stop terminates sandboxes (secure wipe); a crash-style
        stop kills workers outright, leaving recovery to the next boot."""
        self._dispatch_stop.set()
        if self._dispatch_thread is not None:
            self._dispatch_thread.join(timeout=5.0)
            self._dispatch_thread = None
        if graceful:
            self.orchestrator.terminate_all()
        else:
            self.orchestrator.kill_all_processes()
        self.api.stop()

    def _dispatch_loop(self) -> None:
        while not self._dispatch_stop.is_set():
            try:
                self.dispatch_once()
            except Exception:
                logger.exception("dispatch tick failed")
            self._dispatch_stop.wait(self.config.dispatch_period_s)

    def dispatch_once(self) -> None:
        self.scheduler.dispatch_due(now_ms(), self._assign_job)
        failures = self.orchestrator.sweep(self.config.budget.job_timeout_s)
        for sandbox_id, job_id in failures:
            with self._plans_lock:
                self._pending_plans.pop(sandbox_id, None)
            if job_id:
                self.scheduler.fail_job(job_id, "worker-lost", "sandbox missed 3 heartbeats")
            else:
                for job in self.scheduler.jobs_on_sandbox(sandbox_id):
                    self.scheduler.fail_job(job.job_id, "worker-lost", "sandbox missed 3 heartbeats")

    # -- resolvers wired into collaborators --------------------------------------------

    def _dataset_key_id(self, dataset_id: str) -> Optional[bytes]:
        descriptor = self.catalogue.get(dataset_id)
        if descriptor is None:
            return None
        space = self.store.space_for_owner(descriptor.owner_id)
        if space is None:
            return None
        try:
            token = self.store.token_for_owner(descriptor.owner_id)
            blob = self.store.get_object(space.space_id, descriptor.envelope_ref, token)
            return envelope.read_header(blob).key_id
        except VaultbenchError:
            return None

    def _schemas_for(self, dataset_ids: list[str]) -> dict:
        schemas = {}
        for dataset_id in dataset_ids:
            descriptor = self.catalogue.get(dataset_id)
            if descriptor is not None:
                schemas[dataset_id] = list(descriptor.schema)
        return schemas

    def _validate_workflow(self, defn: WorkflowDefinition) -> None:
        validate_workflow(defn, self._schemas_for(defn.input_dataset_ids))

    def _has_agreement(self, owner_id: str, dataset_id: str) -> bool:
        descriptor = self.catalogue.get(dataset_id)
        if descriptor is None:
            return False
        if descriptor.owner_id == owner_id:
            return True
        return any(
            a.dataset_id == dataset_id and a.consumer_id == owner_id and a.status == "active"
            for a in self.keysvc.list_agreements(owner_id)
        )

    # -- dispatch assignment -------------------------------------------------------------

    def _assign_job(self, job: JobRecord) -> Optional[str]:
        sandbox = self.orchestrator.sandbox_for_owner(job.owner_id)
        if sandbox is None:
            try:
                self.orchestrator.provision(job.owner_id)
            except AlreadyProvisionedError:
                return None
            except (BudgetExceededError, OSError) as exc:
                raise ProvisionFailure(str(exc)) from exc
            return None  # assign on a later tick, once the handshake lands
        if sandbox.state != "ready":
            return None
        plan = self._build_plan(job)
        with self._plans_lock:
            self._plans[job.job_id] = plan
            self._pending_plans[sandbox.sandbox_id] = job.job_id
        self.orchestrator.mark_busy(sandbox.sandbox_id, job.job_id)
        return sandbox.sandbox_id

    def _build_plan(self, job: JobRecord) -> dict:
        workflow = self.workflows.get(job.workflow_id)
        if workflow is None:
            raise ProvisionFailure(f"workflow {job.workflow_id} vanished")
        instructions = []
        for dataset_id in workflow.input_dataset_ids:
            descriptor = self.catalogue.get(dataset_id)
            instructions.append(
                {
                    "op": "fetch_dataset",
                    "dataset_id": dataset_id,
                    "source_ref": descriptor.envelope_ref if descriptor else "",
                }
            )
        for dataset_id in workflow.input_dataset_ids:
            key_id = self._dataset_key_id(dataset_id)
            instructions.append(
                {
                    "op": "obtain_key",
                    "dataset_id": dataset_id,
                    "key_id": key_id.hex() if key_id else "00" * 16,
                    "agreement_id": self._agreement_for(job.owner_id, dataset_id),
                    "requester_id": job.owner_id,
                }
            )
        for dataset_id in workflow.input_dataset_ids:
            instructions.append({"op": "decrypt", "dataset_id": dataset_id})
        pipeline = dict(workflow.pipeline)
        pipeline.setdefault("input_dataset_ids", list(workflow.input_dataset_ids))
        instructions.append(
            {
                "op": "run_job",
                "pipeline": pipeline,
                "algorithm": workflow.algorithm,
                "visualization": workflow.visualization,
            }
        )
        instructions.append({"op": "encrypt_results"})
        instructions.append(
            {"op": "upload_results", "destination_ref": f"results/{job.job_id}.env"}
        )
        instructions.append({"op": "terminate"})
        return {
            "job_id": job.job_id,
            "workflow_id": workflow.workflow_id,
            "workflow_name": workflow.name,
            "instructions": instructions,
        }

    def _agreement_for(self, consumer_id: str, dataset_id: str) -> Optional[str]:
        descriptor = self.catalogue.get(dataset_id)
        if descriptor is not None and descriptor.owner_id == consumer_id:
            return None  # owner path needs no agreement
        candidates = [
            a
            for a in self.keysvc.list_agreements(consumer_id)
            if a.dataset_id == dataset_id and a.consumer_id == consumer_id
        ]
        if not candidates:
            return None
        active = [a for a in candidates if a.status == "active"]
        chosen = max(active or candidates, key=lambda a: a.granted_at_ms)
        return chosen.agreement_id

    # -- user API operations ------------------------------------------------------------------

    def login(self, principal_id: str, secret: str) -> dict:
        session = self.sessions.login(principal_id, secret)
        return {
            "token": session.token,
            "principal_id": session.principal_id,
            "expires_at_ms": session.expires_at_ms,
        }

    def upload_dataset(self, principal: str, body: dict) -> dict:
        try:
            blob = base64.b64decode(body.get("envelope_b64", ""), validate=True)
        except Exception as exc:
            raise ApiError("not-an-envelope", f"envelope_b64 is not valid base64: {exc}") from exc
        if not envelope.is_envelope(blob):
            raise ApiError("not-an-envelope", "payload is not an encrypted envelope")
        schema = [(n, t) for n, t in body.get("schema", [])]
        try:
            validate_schema(schema)
        except InvalidSchemaError as exc:
            raise ApiError("schema-mismatch", str(exc)) from exc
        row_count = body.get("row_count", 0)
        if not isinstance(row_count, int) or row_count < 0:
            raise ApiError("schema-mismatch", "row_count must be a non-negative integer")
        envelope.decode(blob)  # structural check before accepting the bytes
        dataset_id = new_id128()
        space = self.store.space_for_owner(principal)
        if space is None:
            space, _ = self.store.create_space(principal)
        token = self.store.token_for_owner(principal)
        ref = f"datasets/{dataset_id}.env"
        self.store.put_object(space.space_id, ref, blob, token)
        descriptor = DatasetDescriptor(
            dataset_id=dataset_id,
            owner_id=principal,
            name=str(body.get("name") or dataset_id),
            schema=schema,
            row_count=row_count,
            envelope_ref=ref,
            created_at_ms=now_ms(),
        )
        self.catalogue.register_dataset(descriptor, token)
        return descriptor.to_record()

    def list_datasets(self, owner: str | None, cursor: str | None, limit: int = 100) -> dict:
        entries = [d.to_record() for d in self.catalogue.list_datasets(owner)]
        return _paginate(entries, cursor, limit)

    def dataset_schema(self, dataset_id: str) -> dict:
        descriptor = self.catalogue.get(dataset_id)
        if descriptor is None:
            raise ApiError("unknown-dataset", f"no dataset {dataset_id}", status=404)
        record = descriptor.to_record()
        record.pop("envelope_ref", None)  # metadata only
        return record

    def grant_agreement(self, principal: str, body: dict) -> dict:
        dataset_id = body.get("dataset_id", "")
        consumer = body.get("consumer_id", "")
        if self.catalogue.get(dataset_id) is None:
            raise ApiError("unknown-dataset", f"no dataset {dataset_id}", status=404)
        ttl_ms = int(float(body.get("ttl_seconds", 3600)) * 1000)
        agreement = self.keysvc.grant_agreement(principal, consumer, dataset_id, ttl_ms)
        return agreement.to_record()

    def revoke_agreement(self, principal: str, agreement_id: str) -> dict:
        return self.keysvc.revoke_agreement(agreement_id, by_principal=principal).to_record()

    def list_agreements(self, principal: str, cursor: str | None, limit: int = 100) -> dict:
        entries = [a.to_record() for a in self.keysvc.list_agreements(principal)]
        return _paginate(entries, cursor, limit)

    def create_workflow(self, principal: str, body: dict) -> dict:
        defn = WorkflowDefinition(
            workflow_id=new_id128(),
            owner_id=principal,
            name=str(body.get("name") or "workflow"),
            input_dataset_ids=list(body.get("input_dataset_ids", [])),
            pipeline=body.get("pipeline") or {},
            algorithm=body.get("algorithm") or {},
            visualization=body.get("visualization") or {},
            created_at_ms=now_ms(),
        )
        self._validate_workflow(defn)
        self.workflows.add(defn)
        return defn.to_record()

    def list_workflows(self, principal: str, cursor: str | None, limit: int = 100) -> dict:
        entries = [w.to_record() for w in self.workflows.list_for(principal)]
        return _paginate(entries, cursor, limit)

    def save_application(self, principal: str, body: dict) -> dict:
        workflow = self.workflows.get(body.get("workflow_id", ""))
        if workflow is None or workflow.owner_id != principal:
            raise ApiError("invalid-workflow", "workflow not found for this principal", status=404)
        app = self.applications.save(principal, str(body.get("name") or workflow.name), workflow)
        return app.to_record()

    def instantiate_application(self, principal: str, application_id: str) -> dict:
        app = self.applications.get(application_id)
        if app is None or app.owner_id != principal:
            raise ApiError("invalid-workflow", "application not found", status=404)
        defn = self.applications.instantiate(app)
        self._validate_workflow(defn)
        self.workflows.add(defn)
        return defn.to_record()

    def list_applications(self, principal: str, cursor: str | None, limit: int = 100) -> dict:
        entries = [a.to_record() for a in self.applications.list_for(principal)]
        return _paginate(entries, cursor, limit)

    def submit_job(self, principal: str, body: dict) -> dict:
        workflow = self.workflows.get(body.get("workflow_id", ""))
        if workflow is None or workflow.owner_id != principal:
            raise InvalidWorkflowError("workflow not found for this principal")
        schedule = body.get("schedule") or {"type": "immediate"}
        job = self.scheduler.submit(workflow, schedule)
        return job.to_record()

    def job_status(self, principal: str, job_id: str) -> dict:
        job = self._owned_job(principal, job_id)
        return job.to_record()

    def list_jobs(self, principal: str, cursor: str | None, limit: int = 100) -> dict:
        entries = [j.to_record() for j in self.scheduler.list_jobs(principal)]
        return _paginate(entries, cursor, limit)

    def cancel_job(self, principal: str, job_id: str) -> dict:
        self._owned_job(principal, job_id)
        job = self.scheduler.cancel(job_id)
        # withdraw a plan the worker has not picked up yet
        with self._plans_lock:
            for sandbox_id, pending_job in list(self._pending_plans.items()):
                if pending_job == job_id:
                    del self._pending_plans[sandbox_id]
                    self.orchestrator.release(sandbox_id)
        return job.to_record()

    def job_results(self, principal: str, job_id: str) -> dict:
        return self._decrypt_result_doc(principal, job_id)

    def job_series(self, principal: str, job_id: str) -> dict:
        doc = self._decrypt_result_doc(principal, job_id)
        series = doc.get("data_series")
        if series is None:
            raise ApiError("job-not-finished", "job produced no series", status=409)
        return series

    def _owned_job(self, principal: str, job_id: str) -> JobRecord:
        try:
            job = self.scheduler.get_status(job_id)
        except UnknownJobError:
            raise
        if job.owner_id != principal:
            raise UnknownJobError(f"unknown job {job_id}")
        return job

    def _decrypt_result_doc(self, principal: str, job_id: str) -> dict:
        job = self._owned_job(principal, job_id)
        if job.state != "completed" or not job.result_envelope_ref:
            raise JobNotFinishedError(f"job is {job.state}")
        space = self.store.space_for_owner(principal)
        token = self.store.token_for_owner(principal)
        blob = self.store.get_object(space.space_id, job.result_envelope_ref, token)
        header = envelope.read_header(blob)
        request = KeyReleaseRequest(
            key_id=header.key_id,
            requester_id=principal,
            agreement_id=None,
            request_nonce=os.urandom(16),
        )
        response = self.keysvc.release_key(
            request, ChannelContext(peer_id=principal, authenticated=True, confidential=True)
        )
        if not response.granted:
            raise ApiError("decryption-denied", response.denial_reason or "denied", status=403)
        plaintext = envelope.unseal(blob, response.key_bytes, header.key_id)
        return json.loads(plaintext.decode())

    # -- user secure-channel operations -----------------------------------------------------------

    def user_channel_open(self, principal: str, token: str, body: dict) -> dict:
        return self.user_channels.open(body["client_pub_b64"], token, principal)

    def user_channel_msg(self, body: dict) -> dict:
        principal, record = self.user_channels.receive(
            body["channel_id"], body["nonce_b64"], body["sealed_b64"]
        )
        reply = self._handle_user_channel_op(principal, record)
        return self.user_channels.respond(body["channel_id"], reply)

    def _handle_user_channel_op(self, principal: str, record: dict) -> dict:
        op = record.get("op")
        if op == "issue_dataset_key":
            key = self.keysvc.generate_key(principal)
            return {
                "granted": True,
                "key_id": key.key_id.hex(),
                "key_b64": base64.b64encode(key.key_bytes).decode(),
            }
        return {"granted": False, "reason": f"unknown channel op {op!r}"}

    # -- worker-facing operations --------------------------------------------------------------------

    def worker_auth(self, sandbox_id: str, token: str | None) -> str:
        if not token or not self.orchestrator.validate_token(sandbox_id, token):
            raise UnauthenticatedError("bad sandbox token")
        return sandbox_id

    def worker_register(self, sandbox_id: str) -> dict:
        descriptor = self.orchestrator.register_handshake(sandbox_id)
        return {"sandbox_id": descriptor.sandbox_id, "state": descriptor.state}

    def worker_heartbeat(self, sandbox_id: str) -> dict:
        self.orchestrator.heartbeat(sandbox_id)
        return {"ok": True}

    def worker_poll_plan(self, sandbox_id: str) -> dict:
        with self._plans_lock:
            job_id = self._pending_plans.pop(sandbox_id, None)
            plan = self._plans.get(job_id) if job_id else None
        return {"plan": plan}

    def worker_fetch(self, sandbox_id: str, body: dict) -> dict:
        job_id = body.get("job_id", "")
        dataset_id = body.get("dataset_id", "")
        plan = self._plan_for_sandbox_job(sandbox_id, job_id)
        allowed = {
            i["dataset_id"] for i in plan["instructions"] if i["op"] == "fetch_dataset"
        }
        if dataset_id not in allowed:
            raise ApiError("access-denied", "dataset not in this job's instruction plan", status=403)
        descriptor = self.catalogue.get(dataset_id)
        if descriptor is None:
            raise NotFoundError(f"dataset {dataset_id} vanished")
        space = self.store.space_for_owner(descriptor.owner_id)
        token = self.store.token_for_owner(descriptor.owner_id)
        blob = self.store.get_object(space.space_id, descriptor.envelope_ref, token)
        return {
            "envelope_b64": base64.b64encode(blob).decode(),
            "schema": [[n, t] for n, t in descriptor.schema],
            "name": descriptor.name,
        }

    def worker_progress(self, sandbox_id: str, body: dict) -> dict:
        job_id = body.get("job_id", "")
        phase = body.get("phase", "")
        detail = body.get("detail")
        job = self.scheduler.get_status(job_id)
        if job.sandbox_id != sandbox_id:
            raise ApiError("access-denied", "job is not assigned to this sandbox", status=403)
        # idempotent delivery: a (job_id, phase) pair already recorded acks
        # without a second transition
        if phase in job.timestamps:
            return {"ok": True, "state": job.state, "duplicate": True}
        updated = self.scheduler.update_state(job_id, phase, detail)
        return {"ok": True, "state": updated.state}

    def worker_upload(self, sandbox_id: str, body: dict) -> dict:
        job_id = body.get("job_id", "")
        plan = self._plan_for_sandbox_job(sandbox_id, job_id)
        job = self.scheduler.get_status(job_id)
        owner = job.owner_id
        space = self.store.space_for_owner(owner)
        token = self.store.token_for_owner(owner)

        result_blob = base64.b64decode(body.get("result_envelope_b64", ""))
        destination = next(
            i["destination_ref"] for i in plan["instructions"] if i["op"] == "upload_results"
        )
        self.store.put_object(space.space_id, destination, result_blob, token)

        derived = body.get("derived") or {}
        derived_dataset_id = None
        if derived.get("envelope_b64"):
            derived_dataset_id = new_id128()
            ref = f"datasets/{derived_dataset_id}.env"
            derived_blob = base64.b64decode(derived["envelope_b64"])
            self.store.put_object(space.space_id, ref, derived_blob, token)
            descriptor = DatasetDescriptor(
                dataset_id=derived_dataset_id,
                owner_id=owner,
                name=str(derived.get("name") or f"{job_id}-derived"),
                schema=[(n, t) for n, t in derived.get("schema", [])],
                row_count=int(derived.get("row_count", 0)),
                envelope_ref=ref,
                created_at_ms=now_ms(),
            )
            self.catalogue.register_dataset(descriptor, token)
        self.scheduler.record_result(job_id, destination, derived_dataset_id)
        return {"result_ref": destination, "derived_dataset_id": derived_dataset_id}

    def worker_channel_open(self, sandbox_id: str, token: str, body: dict) -> dict:
        descriptor = next(
            (s for s in self.orchestrator.list_sandboxes() if s.sandbox_id == sandbox_id), None
        )
        if descriptor is None:
            raise UnauthenticatedError("unknown sandbox")
        # the channel peer is the sandbox owner: key release authorizes principals
        return self.worker_channels.open(body["client_pub_b64"], token, descriptor.owner_id)

    def worker_channel_msg(self, body: dict) -> dict:
        principal, record = self.worker_channels.receive(
            body["channel_id"], body["nonce_b64"], body["sealed_b64"]
        )
        reply = self._handle_worker_channel_op(principal, record)
        return self.worker_channels.respond(body["channel_id"], reply)

    def _handle_worker_channel_op(self, principal: str, record: dict) -> dict:
        op = record.get("op")
        if op == "release_key":
            request = KeyReleaseRequest.from_record(record["request"])
            response = self.keysvc.release_key(
                request,
                ChannelContext(peer_id=principal, authenticated=True, confidential=True),
            )
            return {"response": response.to_record()}
        if op == "issue_key":
            job_id = record.get("job_id", "")
            try:
                job = self.scheduler.get_status(job_id)
            except UnknownJobError:
                return {"granted": False, "reason": "unknown job"}
            if job.owner_id != principal:
                return {"granted": False, "reason": "job belongs to another principal"}
            key = self.keysvc.generate_key(principal)
            return {
                "granted": True,
                "key_id": key.key_id.hex(),
                "key_b64": base64.b64encode(key.key_bytes).decode(),
            }
        return {"granted": False, "reason": f"unknown channel op {op!r}"}

    def _plan_for_sandbox_job(self, sandbox_id: str, job_id: str) -> dict:
        job = self.scheduler.get_status(job_id)
        if job.sandbox_id != sandbox_id:
            raise ApiError("access-denied", "job is not assigned to this sandbox", status=403)
        with self._plans_lock:
            plan = self._plans.get(job_id)
        if plan is None:
            raise NotFoundError(f"no plan for job {job_id}")
        return plan


def _paginate(entries: list[dict], cursor: str | None, limit: int) -> dict:
    limit = max(1, min(int(limit or 100), 100))
    offset = 0
    if cursor:
        try:
            offset = int(base64.urlsafe_b64decode(cursor.encode()).decode().split(":", 1)[1])
        except Exception:
            raise ApiError("bad-request", "malformed cursor")
    page = entries[offset : offset + limit]
    next_cursor = None
    if offset + limit < len(entries):
        next_cursor = base64.urlsafe_b64encode(f"offset:{offset + limit}".encode()).decode()
    return {"items": page, "next_cursor": next_cursor}


def main(argv: list[str] | None = None) -> int:
    import argparse

    from .config import load_config

    parser = argparse.ArgumentParser(description="run the coordinator")
    parser.add_argument("--config", required=True, help="path to the platform config JSON")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    config = load_config(args.config)
    coordinator = Coordinator(config)
    coordinator.start()
    print(f"coordinator listening on {coordinator.endpoint}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        coordinator.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
