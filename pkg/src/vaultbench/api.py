"""HTTP/1.1 API: the single user-facing surface plus the worker protocol.

JSON request/response bodies; bearer tokens in the Authorization header;
every non-success response carries ``{code, message, correlation_id}``
with a code from the closed error enumeration.
"""

from __future__ import annotations

import json
import logging
import re
import secrets
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .errors import (
    AccessDeniedError,
    AlreadyProvisionedError,
    AlreadyTerminatedError,
    ApiError,
    BudgetExceededError,
    ChannelError,
    DanglingEnvelopeError,
    DuplicateSpaceError,
    IllegalTransitionError,
    InvalidPathError,
    InvalidSchemaError,
    InvalidWorkflowError,
    JobNotFinishedError,
    MissingAgreementError,
    NotActiveError,
    NotAnEnvelopeError,
    NotCancellableError,
    NotFoundError,
    NotOwnerError,
    UnauthenticatedError,
    UnknownJobError,
    UnknownSandboxError,
    VaultbenchError,
)

logger = logging.getLogger(__name__)

_STATUS_BY_TYPE = {
    UnauthenticatedError: 401,
    AccessDeniedError: 403,
    NotOwnerError: 403,
    NotFoundError: 404,
    UnknownJobError: 404,
    UnknownSandboxError: 404,
    NotActiveError: 409,
    NotCancellableError: 409,
    JobNotFinishedError: 409,
    DuplicateSpaceError: 409,
    AlreadyProvisionedError: 409,
    AlreadyTerminatedError: 409,
    BudgetExceededError: 409,
    IllegalTransitionError: 409,
    InvalidWorkflowError: 400,
    MissingAgreementError: 400,
    InvalidSchemaError: 400,
    NotAnEnvelopeError: 400,
    InvalidPathError: 400,
    DanglingEnvelopeError: 400,
    ChannelError: 400,
}


def _status_for(exc: VaultbenchError) -> int:
    if isinstance(exc, ApiError):
        return exc.status
    for kind, status in _STATUS_BY_TYPE.items():
        if isinstance(exc, kind):
            return status
    return 400


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "vaultbench"

    # routes: (method, compiled pattern, handler name, needs_session)
    ROUTES = [
        ("GET", re.compile(r"^/health$"), "_r_health", False),
        ("POST", re.compile(r"^/auth/login$"), "_r_login", False),
        ("POST", re.compile(r"^/channel/open$"), "_r_channel_open", True),
        ("POST", re.compile(r"^/channel/msg$"), "_r_channel_msg", False),
        ("POST", re.compile(r"^/datasets$"), "_r_dataset_upload", True),
        ("GET", re.compile(r"^/datasets$"), "_r_dataset_list", True),
        ("GET", re.compile(r"^/datasets/(?P<dataset_id>[0-9a-f]{32})/schema$"), "_r_dataset_schema", True),
        ("POST", re.compile(r"^/agreements$"), "_r_agreement_grant", True),
        ("POST", re.compile(r"^/agreements/(?P<agreement_id>[0-9a-f]{32})/revoke$"), "_r_agreement_revoke", True),
        ("GET", re.compile(r"^/agreements$"), "_r_agreement_list", True),
        ("POST", re.compile(r"^/workflows$"), "_r_workflow_create", True),
        ("GET", re.compile(r"^/workflows$"), "_r_workflow_list", True),
        ("POST", re.compile(r"^/applications$"), "_r_application_save", True),
        ("POST", re.compile(r"^/applications/(?P<application_id>[0-9a-f]{32})/instantiate$"), "_r_application_instantiate", True),
        ("GET", re.compile(r"^/applications$"), "_r_application_list", True),
        ("POST", re.compile(r"^/jobs$"), "_r_job_submit", True),
        ("GET", re.compile(r"^/jobs$"), "_r_job_list", True),
        ("GET", re.compile(r"^/jobs/(?P<job_id>[0-9a-f]{32})$"), "_r_job_status", True),
        ("POST", re.compile(r"^/jobs/(?P<job_id>[0-9a-f]{32})/cancel$"), "_r_job_cancel", True),
        ("GET", re.compile(r"^/jobs/(?P<job_id>[0-9a-f]{32})/results$"), "_r_job_results", True),
        ("GET", re.compile(r"^/jobs/(?P<job_id>[0-9a-f]{32})/series$"), "_r_job_series", True),
        ("POST", re.compile(r"^/worker/register$"), "_r_worker_register", False),
        ("POST", re.compile(r"^/worker/heartbeat$"), "_r_worker_heartbeat", False),
        ("POST", re.compile(r"^/worker/poll-plan$"), "_r_worker_poll", False),
        ("POST", re.compile(r"^/worker/fetch$"), "_r_worker_fetch", False),
        ("POST", re.compile(r"^/worker/progress$"), "_r_worker_progress", False),
        ("POST", re.compile(r"^/worker/upload$"), "_r_worker_upload", False),
        ("POST", re.compile(r"^/worker/channel/open$"), "_r_worker_channel_open", False),
        ("POST", re.compile(r"^/worker/channel/msg$"), "_r_worker_channel_msg", False),
    ]

    def log_message(self, fmt, *args):  # route HTTP noise into logging
        logger.debug("%s - %s", self.address_string(), fmt % args)

    # -- plumbing -----------------------------------------------------------------

    @property
    def coordinator(self):
        return self.server.coordinator  # type: ignore[attr-defined]

    def _bearer(self) -> str | None:
        header = self.headers.get("Authorization", "")
        if header.startswith("Bearer "):
            return header[len("Bearer "):].strip()
        return None

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        raw = self.rfile.read(length)
        try:
            parsed = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ApiError("bad-request", f"body is not valid JSON: {exc}")
        if not isinstance(parsed, dict):
            raise ApiError("bad-request", "body must be a JSON object")
        return parsed

    def _send(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def do_OPTIONS(self):  # CORS preflight for the browser workbench
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Authorization, Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def _dispatch(self, method: str) -> None:
        parsed = urlparse(self.path)
        correlation_id = secrets.token_hex(8)
        for route_method, pattern, name, needs_session in self.ROUTES:
            if route_method != method:
                continue
            match = pattern.match(parsed.path)
            if not match:
                continue
            try:
                query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
                principal = None
                if needs_session:
                    principal = self.coordinator.sessions.authenticate(self._bearer())
                handler = getattr(self, name)
                status, payload = handler(principal, match.groupdict(), query)
                self._send(status, payload)
            except VaultbenchError as exc:
                body = {"code": exc.code, "message": str(exc), "correlation_id": correlation_id}
                step_index = getattr(exc, "step_index", None)
                if step_index is not None:
                    body["step_index"] = step_index
                self._send(_status_for(exc), body)
            except Exception:
                logger.exception("unhandled error (correlation %s)", correlation_id)
                self._send(
                    500,
                    {
                        "code": "internal-error",
                        "message": "unexpected server error",
                        "correlation_id": correlation_id,
                    },
                )
            return
        self._send(
            404,
            {"code": "not-found", "message": f"no route {method} {parsed.path}",
             "correlation_id": correlation_id},
        )

    # -- user routes ------------------------------------------------------------------

    def _r_health(self, principal, params, query):
        return 200, {"status": "ok"}

    def _r_login(self, principal, params, query):
        body = self._body()
        return 200, self.coordinator.login(body.get("principal_id", ""), body.get("secret", ""))

    def _r_channel_open(self, principal, params, query):
        return 200, self.coordinator.user_channel_open(principal, self._bearer(), self._body())

    def _r_channel_msg(self, principal, params, query):
        return 200, self.coordinator.user_channel_msg(self._body())

    def _r_dataset_upload(self, principal, params, query):
        return 201, self.coordinator.upload_dataset(principal, self._body())

    def _r_dataset_list(self, principal, params, query):
        return 200, self.coordinator.list_datasets(
            query.get("owner"), query.get("cursor"), int(query.get("limit", 100))
        )

    def _r_dataset_schema(self, principal, params, query):
        return 200, self.coordinator.dataset_schema(params["dataset_id"])

    def _r_agreement_grant(self, principal, params, query):
        return 201, self.coordinator.grant_agreement(principal, self._body())

    def _r_agreement_revoke(self, principal, params, query):
        return 200, self.coordinator.revoke_agreement(principal, params["agreement_id"])

    def _r_agreement_list(self, principal, params, query):
        return 200, self.coordinator.list_agreements(
            principal, query.get("cursor"), int(query.get("limit", 100))
        )

    def _r_workflow_create(self, principal, params, query):
        return 201, self.coordinator.create_workflow(principal, self._body())

    def _r_workflow_list(self, principal, params, query):
        return 200, self.coordinator.list_workflows(
            principal, query.get("cursor"), int(query.get("limit", 100))
        )

    def _r_application_save(self, principal, params, query):
        return 201, self.coordinator.save_application(principal, self._body())

    def _r_application_instantiate(self, principal, params, query):
        return 201, self.coordinator.instantiate_application(principal, params["application_id"])

    def _r_application_list(self, principal, params, query):
        return 200, self.coordinator.list_applications(
            principal, query.get("cursor"), int(query.get("limit", 100))
        )

    def _r_job_submit(self, principal, params, query):
        return 201, self.coordinator.submit_job(principal, self._body())

    def _r_job_list(self, principal, params, query):
        return 200, self.coordinator.list_jobs(
            principal, query.get("cursor"), int(query.get("limit", 100))
        )

    def _r_job_status(self, principal, params, query):
        return 200, self.coordinator.job_status(principal, params["job_id"])

    def _r_job_cancel(self, principal, params, query):
        return 200, self.coordinator.cancel_job(principal, params["job_id"])

    def _r_job_results(self, principal, params, query):
        return 200, self.coordinator.job_results(principal, params["job_id"])

    def _r_job_series(self, principal, params, query):
        return 200, self.coordinator.job_series(principal, params["job_id"])

    # -- worker routes --------------------------------------------------------------------

    def _worker_auth(self, body: dict) -> str:
        sandbox_id = body.get("sandbox_id", "")
        return self.coordinator.worker_auth(sandbox_id, self._bearer())

    def _r_worker_register(self, principal, params, query):
        body = self._body()
        sandbox_id = self._worker_auth(body)
        return 200, self.coordinator.worker_register(sandbox_id)

    def _r_worker_heartbeat(self, principal, params, query):
        body = self._body()
        sandbox_id = self._worker_auth(body)
        return 200, self.coordinator.worker_heartbeat(sandbox_id)

    def _r_worker_poll(self, principal, params, query):
        body = self._body()
        sandbox_id = self._worker_auth(body)
        return 200, self.coordinator.worker_poll_plan(sandbox_id)

    def _r_worker_fetch(self, principal, params, query):
        body = self._body()
        sandbox_id = self._worker_auth(body)
        return 200, self.coordinator.worker_fetch(sandbox_id, body)

    def _r_worker_progress(self, principal, params, query):
        body = self._body()
        sandbox_id = self._worker_auth(body)
        try:
            return 200, self.coordinator.worker_progress(sandbox_id, body)
        except IllegalTransitionError as exc:
            raise ApiError("rejected-illegal-phase", str(exc), status=409) from exc

    def _r_worker_upload(self, principal, params, query):
        body = self._body()
        sandbox_id = self._worker_auth(body)
        return 200, self.coordinator.worker_upload(sandbox_id, body)

    def _r_worker_channel_open(self, principal, params, query):
        body = self._body()
        sandbox_id = self._worker_auth(body)
        return 200, self.coordinator.worker_channel_open(sandbox_id, self._bearer(), body)

    def _r_worker_channel_msg(self, principal, params, query):
        body = self._body()
        self._worker_auth(body)
        return 200, self.coordinator.worker_channel_msg(body)


class ApiServer:
    def __init__(self, coordinator, host: str, port: int):
        self._server = ThreadingHTTPServer((host, port), _Handler)
        self._server.daemon_threads = True
        self._server.coordinator = coordinator  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None
        self.port = self._server.server_address[1]

    def start(self) -> None:
        if self._thread is not None:
            return
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        if self._thread is None:
            return
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5.0)
        self._thread = None
