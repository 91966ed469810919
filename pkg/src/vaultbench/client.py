"""User-side HTTP client: session handling, dataset upload with local
encryption, agreements, workflows, jobs, results.

The provider path never sends plaintext to the platform: the CSV is
parsed and encrypted locally, the dataset key arrives over the
authenticated confidential channel, and only the envelope goes up.
"""

from __future__ import annotations

import base64
import json
import time
import urllib.error
import urllib.request

from . import envelope
from .errors import ApiError
from .securechannel import ChannelClient
from .table import Table, parse_csv


class PlatformClient:
    def __init__(self, endpoint: str, principal_id: str, secret: str, timeout_s: float = 15.0):
        self.endpoint = endpoint.rstrip("/")
        self.principal_id = principal_id
        self._secret = secret
        self._timeout = timeout_s
        self._token: str | None = None

    # -- transport ------------------------------------------------------------

    def _request(self, method: str, path: str, body: dict | None = None, auth: bool = True) -> dict:
        data = json.dumps(body).encode() if body is not None else None
        headers = {"Content-Type": "application/json"}
        if auth:
            headers["Authorization"] = f"Bearer {self.token()}"
        request = urllib.request.Request(
            self.endpoint + path, data=data, headers=headers, method=method
        )
        try:
            with urllib.request.urlopen(request, timeout=self._timeout) as response:
                return json.loads(response.read().decode() or "{}")
        except urllib.error.HTTPError as exc:
            try:
                detail = json.loads(exc.read().decode())
            except Exception:
                detail = {}
            raise ApiError(
                detail.get("code", "http-error"),
                detail.get("message", str(exc)),
                detail.get("correlation_id", ""),
                exc.code,
                step_index=detail.get("step_index"),
            ) from exc

    def token(self) -> str:
        if self._token is None:
            reply = self._request(
                "POST",
                "/auth/login",
                {"principal_id": self.principal_id, "secret": self._secret},
                auth=False,
            )
            self._token = reply["token"]
        return self._token

    def health(self) -> dict:
        return self._request("GET", "/health", auth=False)

    # -- secure channel ---------------------------------------------------------

    def _channel(self) -> ChannelClient:
        return ChannelClient(
            self.token(),
            open_fn=lambda body: self._request("POST", "/channel/open", body),
            message_fn=lambda body: self._request("POST", "/channel/msg", body),
        )

    def issue_dataset_key(self) -> tuple[bytes, bytes]:
        """Fresh dataset key delivered in-channel; returns (key_id, key)."""
        reply = self._channel().exchange({"op": "issue_dataset_key"})
        if not reply.get("granted"):
            raise ApiError("key-issue-denied", str(reply.get("reason")))
        return bytes.fromhex(reply["key_id"]), base64.b64decode(reply["key_b64"])

    # -- datasets --------------------------------------------------------------------

    def upload_table(self, table: Table, name: str) -> dict:
        """Encrypts locally under a fresh platform-issued key, uploads the
        envelope plus descriptor metadata."""
        from .table import to_csv

        key_id, key = self.issue_dataset_key()
        plaintext = to_csv(table).encode()
        sealed = envelope.seal(key, key_id, plaintext)
        del key
        return self._request(
            "POST",
            "/datasets",
            {
                "name": name,
                "schema": [[n, t] for n, t in table.schema],
                "row_count": table.nrows,
                "envelope_b64": base64.b64encode(sealed).decode(),
            },
        )

    def upload_csv_text(self, text: str, name: str) -> dict:
        return self.upload_table(parse_csv(text), name)

    def list_datasets(self, owner: str | None = None) -> list[dict]:
        return self._collect("/datasets" + (f"?owner={owner}" if owner else ""))

    def dataset_schema(self, dataset_id: str) -> dict:
        return self._request("GET", f"/datasets/{dataset_id}/schema")

    # -- agreements ---------------------------------------------------------------------

    def grant(self, dataset_id: str, consumer_id: str, ttl_seconds: float = 3600.0) -> dict:
        return self._request(
            "POST",
            "/agreements",
            {"dataset_id": dataset_id, "consumer_id": consumer_id, "ttl_seconds": ttl_seconds},
        )

    def revoke(self, agreement_id: str) -> dict:
        return self._request("POST", f"/agreements/{agreement_id}/revoke", {})

    def list_agreements(self) -> list[dict]:
        return self._collect("/agreements")

    # -- workflows and applications ----------------------------------------------------------

    def create_workflow(self, definition: dict) -> dict:
        return self._request("POST", "/workflows", definition)

    def list_workflows(self) -> list[dict]:
        return self._collect("/workflows")

    def save_application(self, workflow_id: str, name: str) -> dict:
        return self._request("POST", "/applications", {"workflow_id": workflow_id, "name": name})

    def instantiate_application(self, application_id: str) -> dict:
        return self._request("POST", f"/applications/{application_id}/instantiate", {})

    def list_applications(self) -> list[dict]:
        return self._collect("/applications")

    # -- jobs ----------------------------------------------------------------------------------

    def submit_job(self, workflow_id: str, schedule: dict | None = None) -> dict:
        return self._request(
            "POST",
            "/jobs",
            {"workflow_id": workflow_id, "schedule": schedule or {"type": "immediate"}},
        )

    def job_status(self, job_id: str) -> dict:
        return self._request("GET", f"/jobs/{job_id}")

    def cancel_job(self, job_id: str) -> dict:
        return self._request("POST", f"/jobs/{job_id}/cancel", {})

    def job_results(self, job_id: str) -> dict:
        return self._request("GET", f"/jobs/{job_id}/results")

    def job_series(self, job_id: str) -> dict:
        return self._request("GET", f"/jobs/{job_id}/series")

    def wait_for_job(self, job_id: str, timeout_s: float = 30.0, poll_s: float = 0.2) -> dict:
        """Polls status until the job is terminal; raises on timeout."""
        deadline = time.monotonic() + timeout_s
        while True:
            record = self.job_status(job_id)
            if record["state"] in ("completed", "failed", "cancelled"):
                return record
            if time.monotonic() >= deadline:
                raise TimeoutError(f"job {job_id} still {record['state']} after {timeout_s}s")
            time.sleep(poll_s)

    # -- helpers -----------------------------------------------------------------------------------

    def _collect(self, path: str) -> list[dict]:
        items: list[dict] = []
        cursor = None
        while True:
            sep = "&" if "?" in path else "?"
            url = path + (f"{sep}cursor={cursor}" if cursor else "")
            page = self._request("GET", url)
            items.extend(page["items"])
            cursor = page.get("next_cursor")
            if not cursor:
                return items
