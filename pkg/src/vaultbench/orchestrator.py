"""Sandbox lifecycle: provision isolated worker processes, monitor their
heartbeats, and securely tear them down.

Each sandbox is a supervised local worker process with a disjoint
scoped storage root and a fresh 256-bit capability token (passed through
the environment, never argv).  Teardown kills the process, overwrites
every file under the scoped root with zeros, then deletes the tree and
invalidates the token.
"""

from __future__ import annotations

import hmac
import os
import secrets
import shutil
import subprocess
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .config import ResourceBudget
from .errors import (
    AlreadyProvisionedError,
    AlreadyTerminatedError,
    BudgetExceededError,
    HandshakeTimeoutError,
    UnknownSandboxError,
)
from .util import new_id128, now_ms

LIVE_STATES = ("provisioning", "ready", "busy")


@dataclass
class SandboxDescriptor:
    sandbox_id: str
    owner_id: str
    state: str  # provisioning | ready | busy | failed | terminated
    endpoint: str
    scoped_root: str
    capability_token: str = field(repr=False)  # hex; never logged
    started_at_ms: int = 0
    last_heartbeat_ms: int = 0
    current_job_id: Optional[str] = None
    job_started_ms: Optional[int] = None

    def to_public(self) -> dict:
        return {
            "sandbox_id": self.sandbox_id,
            "owner_id": self.owner_id,
            "state": self.state,
            "endpoint": self.endpoint,
            "started_at_ms": self.started_at_ms,
            "last_heartbeat_ms": self.last_heartbeat_ms,
            "current_job_id": self.current_job_id,
        }


def default_worker_launcher(package_env: dict) -> subprocess.Popen:
    """Spawns ``python -m vaultbench.worker`` with the sandbox contract in
    its environment; worker logging stays inside the scoped root."""
    env = os.environ.copy()
    env.update(package_env)
    src_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    env["PYTHONPATH"] = src_dir + os.pathsep + env.get("PYTHONPATH", "")
    log_path = os.path.join(package_env["VAULTBENCH_SCOPED_ROOT"], "_worker.log")
    log_file = open(log_path, "ab")
    try:
        return subprocess.Popen(
            [sys.executable, "-m", "vaultbench.worker"],
            env=env,
            stdout=log_file,
            stderr=log_file,
            stdin=subprocess.DEVNULL,
        )
    finally:
        log_file.close()


class Orchestrator:
    def __init__(
        self,
        data_root: str,
        budget: ResourceBudget,
        coordinator_endpoint: str,
        heartbeat_interval_s: float = 1.0,
        failure_threshold: int = 3,
        worker_poll_s: float = 0.15,
        launcher: Callable[[dict], subprocess.Popen] = default_worker_launcher,
        handshake_timeout_s: float = 15.0,
    ):
        self._lock = threading.RLock()
        self._ready = threading.Condition(self._lock)
        self._budget = budget
        self._endpoint = coordinator_endpoint
        self._heartbeat_s = heartbeat_interval_s
        self._threshold = failure_threshold
        self._worker_poll_s = worker_poll_s
        self._launcher = launcher
        self._handshake_timeout_s = handshake_timeout_s
        self._sandboxes: dict[str, SandboxDescriptor] = {}
        self._processes: dict[str, subprocess.Popen] = {}
        self._root = os.path.join(data_root, "sandboxes")
        self._wipe_stale_roots()
        os.makedirs(self._root, exist_ok=True)

    def _wipe_stale_roots(self) -> None:
        # scoped roots found at startup belong to a previous run whose
        # workers are gone; destroy them before accepting work
        if not os.path.isdir(self._root):
            return
        for name in os.listdir(self._root):
            _secure_delete_tree(os.path.join(self._root, name))

    # -- provisioning -----------------------------------------------------------

    def provision(self, owner_id: str, wait_ready: bool = False) -> SandboxDescriptor:
        """Launches an isolated worker for the owner.

        Returns the descriptor in ``provisioning`` state (or ``ready``
        when ``wait_ready``); the worker handshake flips it to ready.
        """
        with self._lock:
            for sandbox in self._sandboxes.values():
                if sandbox.owner_id == owner_id and sandbox.state in LIVE_STATES:
                    raise AlreadyProvisionedError(f"owner {owner_id!r} already has a live sandbox")
            live = sum(1 for s in self._sandboxes.values() if s.state in LIVE_STATES)
            if live >= self._budget.max_sandboxes:
                raise BudgetExceededError(
                    f"budget allows {self._budget.max_sandboxes} concurrent sandboxes"
                )
            sandbox_id = new_id128()
            scoped_root = os.path.join(self._root, sandbox_id)
            os.makedirs(scoped_root, exist_ok=True)
            token = secrets.token_hex(32)
            descriptor = SandboxDescriptor(
                sandbox_id=sandbox_id,
                owner_id=owner_id,
                state="provisioning",
                endpoint="",
                scoped_root=scoped_root,
                capability_token=token,
                started_at_ms=now_ms(),
                last_heartbeat_ms=now_ms(),
            )
            self._sandboxes[sandbox_id] = descriptor
        process = self._launcher(
            {
                "VAULTBENCH_COORDINATOR": self._endpoint,
                "VAULTBENCH_SANDBOX_ID": sandbox_id,
                "VAULTBENCH_SCOPED_ROOT": scoped_root,
                "VAULTBENCH_TOKEN": token,
                "VAULTBENCH_HEARTBEAT_S": str(self._heartbeat_s),
                "VAULTBENCH_POLL_S": str(self._worker_poll_s),
            }
        )
        with self._lock:
            self._processes[sandbox_id] = process
            descriptor.endpoint = f"process://{process.pid}"
        if wait_ready:
            self.wait_ready(sandbox_id)
        return descriptor

    def wait_ready(self, sandbox_id: str, timeout_s: float | None = None) -> SandboxDescriptor:
        deadline = time.monotonic() + (timeout_s or self._handshake_timeout_s)
        with self._ready:
            while True:
                sandbox = self._sandboxes.get(sandbox_id)
                if sandbox is None:
                    raise UnknownSandboxError(f"unknown sandbox {sandbox_id}")
                if sandbox.state != "provisioning":
                    return sandbox
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                self._ready.wait(remaining)
        self.terminate(sandbox_id)
        raise HandshakeTimeoutError(f"sandbox {sandbox_id} never completed its handshake")

    # -- worker-facing callbacks ---------------------------------------------------

    def validate_token(self, sandbox_id: str, token: str) -> bool:
        with self._lock:
            sandbox = self._sandboxes.get(sandbox_id)
        if sandbox is None or sandbox.state == "terminated":
            return False
        return hmac.compare_digest(sandbox.capability_token, token)

    def register_handshake(self, sandbox_id: str) -> SandboxDescriptor:
        with self._ready:
            sandbox = self._sandboxes.get(sandbox_id)
            if sandbox is None:
                raise UnknownSandboxError(f"unknown sandbox {sandbox_id}")
            if sandbox.state == "provisioning":
                sandbox.state = "ready"
            sandbox.last_heartbeat_ms = now_ms()
            self._ready.notify_all()
            return sandbox

    def heartbeat(self, sandbox_id: str) -> None:
        with self._lock:
            sandbox = self._sandboxes.get(sandbox_id)
            if sandbox is None:
                raise UnknownSandboxError(f"unknown sandbox {sandbox_id}")
            sandbox.last_heartbeat_ms = now_ms()

    # -- scheduling hooks --------------------------------------------------------------

    def sandbox_for_owner(self, owner_id: str) -> Optional[SandboxDescriptor]:
        with self._lock:
            for sandbox in self._sandboxes.values():
                if sandbox.owner_id == owner_id and sandbox.state in LIVE_STATES:
                    return sandbox
            return None

    def mark_busy(self, sandbox_id: str, job_id: str) -> None:
        with self._lock:
            sandbox = self._sandboxes[sandbox_id]
            sandbox.state = "busy"
            sandbox.current_job_id = job_id
            sandbox.job_started_ms = now_ms()

    def release(self, sandbox_id: str) -> None:
        with self._lock:
            sandbox = self._sandboxes.get(sandbox_id)
            if sandbox is not None and sandbox.state == "busy":
                sandbox.state = "ready"
                sandbox.current_job_id = None
                sandbox.job_started_ms = None

    # -- monitoring -----------------------------------------------------------------------

    def monitor(self, sandbox_id: str) -> dict:
        with self._lock:
            sandbox = self._sandboxes.get(sandbox_id)
            if sandbox is None:
                raise UnknownSandboxError(f"unknown sandbox {sandbox_id}")
            return {
                "sandbox_id": sandbox.sandbox_id,
                "state": sandbox.state,
                "heartbeat_age_ms": max(0, now_ms() - sandbox.last_heartbeat_ms),
                "current_job_id": sandbox.current_job_id,
            }

    def sweep(self, job_timeout_s: float | None = None) -> list[tuple[str, Optional[str]]]:
        """Marks sandboxes failed after 3 missed heartbeats (and jobs that
        outlived the wall-clock timeout); returns (sandbox_id, job_id)
        pairs the control plane must fail."""
        now = now_ms()
        cutoff = now - int(self._threshold * self._heartbeat_s * 1000)
        handshake_cutoff = now - int(self._handshake_timeout_s * 1000)
        failed: list[tuple[str, Optional[str]]] = []
        with self._lock:
            for sandbox in self._sandboxes.values():
                if sandbox.state == "provisioning":
                    # worker died (or hung) before its handshake
                    process = self._processes.get(sandbox.sandbox_id)
                    dead = process is not None and process.poll() is not None
                    if dead or sandbox.started_at_ms < handshake_cutoff:
                        sandbox.state = "failed"
                        failed.append((sandbox.sandbox_id, None))
                    continue
                if sandbox.state not in ("ready", "busy"):
                    continue
                expired = sandbox.last_heartbeat_ms < cutoff
                timed_out = (
                    job_timeout_s is not None
                    and sandbox.state == "busy"
                    and sandbox.job_started_ms is not None
                    and now - sandbox.job_started_ms > job_timeout_s * 1000
                )
                if expired or timed_out:
                    sandbox.state = "failed"
                    failed.append((sandbox.sandbox_id, sandbox.current_job_id))
        for sandbox_id, _job in failed:
            self._kill_process(sandbox_id)
        return failed

    # -- teardown ------------------------------------------------------------------------------

    def _kill_process(self, sandbox_id: str) -> None:
        process = self._processes.get(sandbox_id)
        if process is None or process.poll() is not None:
            return
        process.terminate()
        try:
            process.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            process.kill()
            process.wait(timeout=5.0)

    def terminate(self, sandbox_id: str) -> SandboxDescriptor:
        """Stops the worker, zero-overwrites and deletes the scoped root,
        and invalidates the capability token."""
        with self._lock:
            sandbox = self._sandboxes.get(sandbox_id)
            if sandbox is None:
                raise UnknownSandboxError(f"unknown sandbox {sandbox_id}")
            if sandbox.state == "terminated":
                raise AlreadyTerminatedError(f"sandbox {sandbox_id} already terminated")
        self._kill_process(sandbox_id)
        _secure_delete_tree(sandbox.scoped_root)
        with self._lock:
            sandbox.state = "terminated"
            sandbox.current_job_id = None
            sandbox.capability_token = ""
            self._processes.pop(sandbox_id, None)
        return sandbox

    def terminate_all(self) -> None:
        with self._lock:
            ids = [s.sandbox_id for s in self._sandboxes.values() if s.state != "terminated"]
        for sandbox_id in ids:
            try:
                self.terminate(sandbox_id)
            except AlreadyTerminatedError:
                pass

    def kill_all_processes(self) -> None:
        """Crash simulation: stop worker processes without any cleanup."""
        with self._lock:
            ids = list(self._processes)
        for sandbox_id in ids:
            self._kill_process(sandbox_id)

    def list_sandboxes(self) -> list[SandboxDescriptor]:
        with self._lock:
            return list(self._sandboxes.values())

    def process_for(self, sandbox_id: str) -> Optional[subprocess.Popen]:
        with self._lock:
            return self._processes.get(sandbox_id)


def _secure_delete_tree(root: str) -> None:
    """Single-pass zero-overwrite of every file, then tree removal."""
    if not os.path.isdir(root):
        return
    for dirpath, _dirnames, filenames in os.walk(root):
        for name in filenames:
            path = os.path.join(dirpath, name)
            try:
                size = os.path.getsize(path)
                with open(path, "r+b") as fh:
                    fh.write(b"\x00" * size)
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError:
                pass
    shutil.rmtree(root, ignore_errors=True)
