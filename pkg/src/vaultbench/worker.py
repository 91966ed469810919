"""Sandbox-resident worker agent.

Launched by the orchestrator with its contract in the environment
(coordinator endpoint, sandbox id, scoped root, capability token).  After
registering it heartbeats on an interval and polls the coordinator for
instruction plans — a pull model, so sandboxes accept no inbound
connections.

A plan executes as fetch -> obtain keys -> decrypt -> run -> encrypt
results -> upload.  Keys live in zeroizable buffers and the decrypted
cache exists only under the scoped root; both are destroyed before the
terminal status report, on success and failure alike.
"""

from __future__ import annotations

import base64
import json
import os
import sys
import threading
import time
import urllib.error
import urllib.request

from . import envelope
from .analytics import DataSeries, render_series, run_algorithm
from .errors import VaultbenchError
from .keyservice import KeyReleaseRequest, KeyReleaseResponse
from .prep import run_pipeline
from .securechannel import ChannelClient
from .table import Table, parse_csv, to_csv

_PHASES = ("fetching", "decrypting", "running", "encrypting_results", "uploading")


class WorkerApiError(Exception):
    def __init__(self, code: str, message: str, status: int):
        super().__init__(message)
        self.code = code
        self.status = status


class WorkerClient:
    """Bearer-token JSON client for the coordinator's worker endpoints."""

    def __init__(self, endpoint: str, sandbox_id: str, token: str, timeout_s: float = 10.0):
        self._endpoint = endpoint.rstrip("/")
        self._sandbox_id = sandbox_id
        self._token = token
        self._timeout = timeout_s

    def post(self, path: str, body: dict) -> dict:
        payload = dict(body)
        payload.setdefault("sandbox_id", self._sandbox_id)
        data = json.dumps(payload).encode()
        request = urllib.request.Request(
            self._endpoint + path,
            data=data,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {self._token}",
            },
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self._timeout) as response:
                return json.loads(response.read().decode() or "{}")
        except urllib.error.HTTPError as exc:
            try:
                detail = json.loads(exc.read().decode())
            except Exception:
                detail = {}
            raise WorkerApiError(
                detail.get("code", "http-error"), detail.get("message", str(exc)), exc.code
            ) from exc

    def register(self) -> dict:
        return self.post("/worker/register", {})

    def heartbeat(self) -> None:
        self.post("/worker/heartbeat", {})

    def poll_plan(self) -> dict | None:
        return self.post("/worker/poll-plan", {}).get("plan")

    def fetch_dataset(self, job_id: str, dataset_id: str) -> dict:
        return self.post("/worker/fetch", {"job_id": job_id, "dataset_id": dataset_id})

    def report_progress(self, job_id: str, phase: str, detail: dict | None = None) -> dict:
        return self.post(
            "/worker/progress", {"job_id": job_id, "phase": phase, "detail": detail}
        )

    def upload(self, job_id: str, result_envelope: bytes, derived: dict) -> dict:
        return self.post(
            "/worker/upload",
            {
                "job_id": job_id,
                "result_envelope_b64": base64.b64encode(result_envelope).decode(),
                "derived": derived,
            },
        )

    def open_channel(self) -> ChannelClient:
        return ChannelClient(
            self._token,
            open_fn=lambda body: self.post("/worker/channel/open", body),
            message_fn=lambda body: self.post("/worker/channel/msg", body),
        )


class PlanAborted(Exception):
    """Progress rejected by the coordinator (job cancelled or superseded)."""


class PhaseFailure(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class WorkerSession:
    """Per-job state: zeroizable key ring and the decrypted-cache paths."""

    def __init__(self, job_id: str, scoped_root: str):
        self.job_id = job_id
        self.cache_dir = os.path.join(scoped_root, "cache", job_id)
        os.makedirs(self.cache_dir, exist_ok=True)
        self.keys: dict[str, bytearray] = {}  # key_id hex -> key bytes
        self.tables: dict[str, Table] = {}
        self.dataset_meta: dict[str, dict] = {}
        self.result_payload: bytes | None = None
        self.derived_payload: bytes | None = None
        self.derived_meta: dict | None = None
        self.result_envelope: bytes = b""
        self.derived_envelope: bytes = b""

    def hold_key(self, key_id_hex: str, key_bytes: bytes) -> None:
        self.keys[key_id_hex] = bytearray(key_bytes)

    def wipe(self) -> None:
        """Zeroizes key buffers and destroys the decrypted cache."""
        for buffer in self.keys.values():
            for i in range(len(buffer)):
                buffer[i] = 0
        self.keys.clear()
        self.tables.clear()
        self.result_payload = None
        self.derived_payload = None
        self.result_envelope = b""
        self.derived_envelope = b""
        if os.path.isdir(self.cache_dir):
            for name in os.listdir(self.cache_dir):
                path = os.path.join(self.cache_dir, name)
                try:
                    size = os.path.getsize(path)
                    with open(path, "r+b") as fh:
                        fh.write(b"\x00" * size)
                    os.unlink(path)
                except OSError:
                    pass
            try:
                os.rmdir(self.cache_dir)
            except OSError:
                pass


class WorkerAgent:
    def __init__(
        self,
        endpoint: str,
        sandbox_id: str,
        scoped_root: str,
        token: str,
        heartbeat_s: float = 1.0,
        poll_s: float = 0.15,
    ):
        self.client = WorkerClient(endpoint, sandbox_id, token)
        self.sandbox_id = sandbox_id
        self.scoped_root = scoped_root
        self.heartbeat_s = heartbeat_s
        self.poll_s = poll_s
        self._stop = threading.Event()
        self._hb_failures = 0
        self._run_delay_ms = int(os.environ.get("VAULTBENCH_RUNJOB_DELAY_MS", "0"))

    # -- lifecycle ---------------------------------------------------------------

    def handshake(self, attempts: int = 3, retry_delay_s: float = 1.0) -> None:
        last: Exception | None = None
        for _ in range(attempts):
            try:
                self.client.register()
                return
            except WorkerApiError as exc:
                if exc.status in (401, 403):
                    raise  # bad token: no point retrying
                last = exc
            except (urllib.error.URLError, OSError, TimeoutError) as exc:
                last = exc
            time.sleep(retry_delay_s)
        raise ConnectionError(f"coordinator unreachable after {attempts} attempts: {last}")

    def _heartbeat_loop(self) -> None:
        while not self._stop.is_set():
            try:
                self.client.heartbeat()
                self._hb_failures = 0
            except Exception:
                self._hb_failures += 1
                if self._hb_failures >= 5:
                    self._stop.set()  # coordinator gone; shut down
                    return
            self._stop.wait(self.heartbeat_s)

    def run(self) -> None:
        self.handshake()
        heartbeat = threading.Thread(target=self._heartbeat_loop, daemon=True)
        heartbeat.start()
        while not self._stop.is_set():
            try:
                plan = self.client.poll_plan()
            except Exception:
                self._stop.wait(self.poll_s)
                continue
            if plan:
                self.execute_plan(plan)
            else:
                self._stop.wait(self.poll_s)

    def stop(self) -> None:
        self._stop.set()

    # -- progress -------------------------------------------------------------------

    def _report(self, job_id: str, phase: str, detail: dict | None = None) -> None:
        last: Exception | None = None
        for _ in range(3):
            try:
                self.client.report_progress(job_id, phase, detail)
                return
            except WorkerApiError as exc:
                if exc.code == "rejected-illegal-phase" or exc.code == "illegal-transition":
                    raise PlanAborted(exc.code)
                last = exc
            except Exception as exc:  # transient transport failure: retry
                last = exc
            time.sleep(0.1)
        raise PlanAborted(f"progress delivery failed: {last}")

    # -- plan execution ----------------------------------------------------------------

    @staticmethod
    def _validate_plan(plan: dict) -> None:
        order = {"fetch_dataset": 0, "obtain_key": 1, "decrypt": 2, "run_job": 3,
                 "encrypt_results": 4, "upload_results": 5, "terminate": 6}
        seen_per_dataset: dict[str, int] = {}
        level = 0
        for instruction in plan["instructions"]:
            op = instruction["op"]
            rank = order.get(op)
            if rank is None:
                raise PhaseFailure("job-error", f"unknown instruction {op!r}")
            if op in ("fetch_dataset", "obtain_key", "decrypt"):
                dataset_id = instruction["dataset_id"]
                prev = seen_per_dataset.get(dataset_id, -1)
                if rank <= prev:
                    raise PhaseFailure("job-error", "plan phases out of order for dataset")
                seen_per_dataset[dataset_id] = rank
                if rank < level:
                    raise PhaseFailure("job-error", "plan phases regress")
            else:
                if rank < level:
                    raise PhaseFailure("job-error", "plan phases regress")
                level = rank

    def execute_plan(self, plan: dict) -> None:
        job_id = plan["job_id"]
        session = WorkerSession(job_id, self.scoped_root)
        reported: set[str] = set()

        def report_once(phase: str) -> None:
            if phase not in reported:
                reported.add(phase)
                self._report(job_id, phase)

        try:
            self._validate_plan(plan)
            channel: ChannelClient | None = None
            for instruction in plan["instructions"]:
                op = instruction["op"]
                if op == "fetch_dataset":
                    report_once("fetching")
                    self._do_fetch(session, instruction)
                elif op == "obtain_key":
                    report_once("decrypting")
                    if channel is None:
                        channel = self.client.open_channel()
                    self._do_obtain_key(session, channel, instruction)
                elif op == "decrypt":
                    report_once("decrypting")
                    self._do_decrypt(session, instruction)
                elif op == "run_job":
                    report_once("running")
                    if self._run_delay_ms:
                        time.sleep(self._run_delay_ms / 1000.0)
                    self._do_run(session, plan, instruction)
                elif op == "encrypt_results":
                    report_once("encrypting_results")
                    if channel is None:
                        channel = self.client.open_channel()
                    self._do_encrypt_results(session, channel)
                elif op == "upload_results":
                    report_once("uploading")
                    self._do_upload(session)
                elif op == "terminate":
                    break
            session.wipe()
            self._report(job_id, "completed")
        except PlanAborted:
            session.wipe()
        except PhaseFailure as exc:
            session.wipe()
            try:
                self._report(job_id, "failed", {"code": exc.code, "message": str(exc)})
            except PlanAborted:
                pass
        except Exception as exc:  # defensive: never leave keys behind
            session.wipe()
            try:
                self._report(job_id, "failed", {"code": "job-error", "message": repr(exc)})
            except PlanAborted:
                pass

    # -- instruction handlers --------------------------------------------------------------

    def _do_fetch(self, session: WorkerSession, instruction: dict) -> None:
        dataset_id = instruction["dataset_id"]
        try:
            reply = self.client.fetch_dataset(session.job_id, dataset_id)
        except WorkerApiError as exc:
            raise PhaseFailure("fetch-error", f"fetch {dataset_id}: {exc.code}") from exc
        except Exception as exc:
            raise PhaseFailure("fetch-error", f"fetch {dataset_id}: {exc}") from exc
        blob = base64.b64decode(reply["envelope_b64"])
        path = os.path.join(session.cache_dir, f"{dataset_id}.env")
        with open(path, "wb") as fh:
            fh.write(blob)
        session.dataset_meta[dataset_id] = {
            "schema": [(n, t) for n, t in reply["schema"]],
            "name": reply.get("name", dataset_id),
        }

    def _do_obtain_key(self, session: WorkerSession, channel: ChannelClient, instruction: dict) -> None:
        request = KeyReleaseRequest(
            key_id=bytes.fromhex(instruction["key_id"]),
            requester_id=instruction["requester_id"],
            agreement_id=instruction.get("agreement_id"),
            request_nonce=os.urandom(16),
        )
        try:
            reply = channel.exchange({"op": "release_key", "request": request.to_record()})
        except Exception as exc:
            raise PhaseFailure("key-denied", f"key release transport failed: {exc}") from exc
        response = KeyReleaseResponse.from_record(reply["response"])
        if response.request_nonce != request.request_nonce:
            raise PhaseFailure("key-denied", "release response nonce mismatch")
        if not response.granted:
            raise PhaseFailure("key-denied", response.denial_reason or "denied")
        session.hold_key(instruction["key_id"], response.key_bytes or b"")

    def _do_decrypt(self, session: WorkerSession, instruction: dict) -> None:
        dataset_id = instruction["dataset_id"]
        env_path = os.path.join(session.cache_dir, f"{dataset_id}.env")
        with open(env_path, "rb") as fh:
            blob = fh.read()
        header = envelope.read_header(blob)
        key_hex = header.key_id.hex()
        key = session.keys.get(key_hex)
        if key is None:
            raise PhaseFailure("key-denied", f"no key held for dataset {dataset_id}")
        try:
            plaintext = envelope.unseal(blob, bytes(key), header.key_id)
        except VaultbenchError as exc:
            raise PhaseFailure("integrity-failure", f"decrypt {dataset_id}: {exc.code}") from exc
        # decrypted bytes exist only under the scoped root
        csv_path = os.path.join(session.cache_dir, f"{dataset_id}.csv")
        with open(csv_path, "wb") as fh:
            fh.write(plaintext)
        meta = session.dataset_meta[dataset_id]
        session.tables[dataset_id] = parse_csv(plaintext.decode("utf-8"), schema=meta["schema"])

    def _do_run(self, session: WorkerSession, plan: dict, instruction: dict) -> None:
        pipeline = dict(instruction["pipeline"])
        algorithm = instruction["algorithm"]
        visualization = instruction.get("visualization") or {}
        try:
            prepared = run_pipeline(session.tables, pipeline)
            result = run_algorithm(prepared, algorithm)
            series = self._render(prepared, algorithm, result, visualization)
        except VaultbenchError as exc:
            raise PhaseFailure("job-error", f"{exc.code}: {exc}") from exc
        doc = {
            "job_id": session.job_id,
            "workflow_id": plan.get("workflow_id"),
            "result_set": result.to_doc(),
            "data_series": series.to_doc() if series else None,
        }
        session.result_payload = json.dumps(doc, separators=(",", ":")).encode()
        derived_csv = to_csv(prepared).encode()
        session.derived_payload = derived_csv
        session.derived_meta = {
            "name": f"{plan.get('workflow_name', 'workflow')}-derived",
            "schema": [[n, t] for n, t in prepared.schema],
            "row_count": prepared.nrows,
        }

    @staticmethod
    def _render(prepared: Table, algorithm: dict, result, visualization: dict) -> DataSeries | None:
        if not visualization:
            return None
        series = render_series(prepared, visualization)
        # regression + scatter: overlay the model's fitted values so charts
        # can draw the fit without any client-side recomputation
        if (
            algorithm.get("algorithm") == "linear_regression"
            and visualization.get("chart_type") == "scatter"
        ):
            coef = result.tables["coefficients"]
            weights = dict(zip(coef.columns["term"], coef.columns["weight"]))
            features = list(algorithm.get("features") or [])
            fitted = []
            for i in range(prepared.nrows):
                values = [prepared.columns[f][i] for f in features]
                if any(v is None for v in values):
                    fitted.append(None)
                else:
                    fitted.append(
                        weights["intercept"]
                        + sum(weights[f] * v for f, v in zip(features, values))
                    )
            series.series.append({"name": "fitted", "y": fitted})
        return series

    def _do_encrypt_results(self, session: WorkerSession, channel: ChannelClient) -> None:
        if session.result_payload is None:
            raise PhaseFailure("job-error", "no results to encrypt")

        def issue(purpose: str) -> tuple[str, bytes]:
            reply = channel.exchange(
                {"op": "issue_key", "job_id": session.job_id, "purpose": purpose}
            )
            if not reply.get("granted"):
                raise PhaseFailure("job-error", f"key issuance denied: {reply.get('reason')}")
            return reply["key_id"], base64.b64decode(reply["key_b64"])

        result_key_id, result_key = issue("results")
        session.hold_key(result_key_id, result_key)
        session.result_envelope = envelope.seal(
            result_key, bytes.fromhex(result_key_id), session.result_payload
        )
        derived_key_id, derived_key = issue("derived")
        session.hold_key(derived_key_id, derived_key)
        session.derived_envelope = envelope.seal(
            derived_key, bytes.fromhex(derived_key_id), session.derived_payload or b""
        )

    def _do_upload(self, session: WorkerSession) -> None:
        derived = dict(session.derived_meta or {})
        derived["envelope_b64"] = base64.b64encode(session.derived_envelope).decode()
        try:
            self.client.upload(session.job_id, session.result_envelope, derived)
        except WorkerApiError as exc:
            raise PhaseFailure("upload-error", f"upload rejected: {exc.code}") from exc
        except Exception as exc:
            raise PhaseFailure("upload-error", f"upload failed: {exc}") from exc


def main() -> int:
    endpoint = os.environ.get("VAULTBENCH_COORDINATOR", "")
    sandbox_id = os.environ.get("VAULTBENCH_SANDBOX_ID", "")
    scoped_root = os.environ.get("VAULTBENCH_SCOPED_ROOT", "")
    token = os.environ.get("VAULTBENCH_TOKEN", "")
    if not endpoint or not sandbox_id or not scoped_root or not token:
        print("missing sandbox contract in environment", file=sys.stderr)
        return 2
    agent = WorkerAgent(
        endpoint=endpoint,
        sandbox_id=sandbox_id,
        scoped_root=scoped_root,
        token=token,
        heartbeat_s=float(os.environ.get("VAULTBENCH_HEARTBEAT_S", "1.0")),
        poll_s=float(os.environ.get("VAULTBENCH_POLL_S", "0.15")),
    )
    try:
        agent.run()
    except WorkerApiError as exc:
        print(f"worker rejected: {exc.code}", file=sys.stderr)
        return 2
    except ConnectionError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
