"""Platform configuration: one JSON file drives the coordinator; workers
inherit their settings through the launch environment."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

from .errors import MissingFieldError, OutOfRangeError

logger = logging.getLogger(__name__)

_KNOWN_FIELDS = {
    "data_root",
    "host",
    "port",
    "principals",
    "budget",
    "dispatch_period_s",
    "heartbeat_interval_s",
    "heartbeat_failure_threshold",
    "session_ttl_s",
    "worker_poll_s",
    "demo_seed",
}

_KNOWN_BUDGET_FIELDS = {"max_sandboxes", "memory_mb", "job_timeout_s"}


@dataclass
class ResourceBudget:
    max_sandboxes: int = 8
    memory_mb: int = 512
    job_timeout_s: float = 120.0


@dataclass
class PlatformConfig:
    data_root: str
    host: str = "127.0.0.1"
    port: int = 0  # 0 = pick a free port
    principals: list[dict] = field(default_factory=list)  # [{"id":..., "secret":...}]
    budget: ResourceBudget = field(default_factory=ResourceBudget)
    dispatch_period_s: float = 0.5
    heartbeat_interval_s: float = 1.0
    heartbeat_failure_threshold: int = 3
    session_ttl_s: float = 3600.0
    worker_poll_s: float = 0.15
    demo_seed: int = 42
    warnings: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if not self.data_root:
            raise MissingFieldError("data_root is required", field="data_root")
        positive = {
            "budget.max_sandboxes": self.budget.max_sandboxes,
            "budget.memory_mb": self.budget.memory_mb,
            "budget.job_timeout_s": self.budget.job_timeout_s,
            "dispatch_period_s": self.dispatch_period_s,
            "heartbeat_interval_s": self.heartbeat_interval_s,
            "heartbeat_failure_threshold": self.heartbeat_failure_threshold,
            "session_ttl_s": self.session_ttl_s,
            "worker_poll_s": self.worker_poll_s,
        }
        for name, value in positive.items():
            if value <= 0:
                raise OutOfRangeError(f"{name} must be positive, got {value}", field=name)
        if not (0 <= self.port <= 65535):
            raise OutOfRangeError(f"port out of range: {self.port}", field="port")
        for entry in self.principals:
            if not entry.get("id") or not entry.get("secret"):
                raise MissingFieldError("each principal needs id and secret", field="principals")


def config_from_dict(raw: dict) -> PlatformConfig:
    warnings = [f"unknown config field {name!r} ignored" for name in raw if name not in _KNOWN_FIELDS]
    budget_raw = raw.get("budget", {}) or {}
    warnings += [
        f"unknown budget field {name!r} ignored"
        for name in budget_raw
        if name not in _KNOWN_BUDGET_FIELDS
    ]
    if "data_root" not in raw:
        raise MissingFieldError("data_root is required", field="data_root")
    budget = ResourceBudget(
        max_sandboxes=int(budget_raw.get("max_sandboxes", 8)),
        memory_mb=int(budget_raw.get("memory_mb", 512)),
        job_timeout_s=float(budget_raw.get("job_timeout_s", 120.0)),
    )
    config = PlatformConfig(
        data_root=str(raw["data_root"]),
        host=str(raw.get("host", "127.0.0.1")),
        port=int(raw.get("port", 0)),
        principals=list(raw.get("principals", [])),
        budget=budget,
        dispatch_period_s=float(raw.get("dispatch_period_s", 0.5)),
        heartbeat_interval_s=float(raw.get("heartbeat_interval_s", 1.0)),
        heartbeat_failure_threshold=int(raw.get("heartbeat_failure_threshold", 3)),
        session_ttl_s=float(raw.get("session_ttl_s", 3600.0)),
        worker_poll_s=float(raw.get("worker_poll_s", 0.15)),
        demo_seed=int(raw.get("demo_seed", 42)),
        warnings=warnings,
    )
    config.validate()
    for message in warnings:
        logger.warning(message)
    return config


def load_config(path: str) -> PlatformConfig:
    """Parses, defaults, and validates; unknown fields warn, they never fail."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    config = config_from_dict(raw)
    if not os.path.isabs(config.data_root):
        config.data_root = os.path.join(os.path.dirname(os.path.abspath(path)), config.data_root)
    return config
