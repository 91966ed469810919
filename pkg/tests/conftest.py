"""Shared fixtures: a full in-process coordinator with real worker
subprocesses, plus ready-made clients."""

import pytest


def pytest_terminal_summary(terminalreporter):
    """One visible pass line per acceptance criterion that ran."""
    try:
        from .test_acceptance import PASS_LINES
    except ImportError:
        return
    if PASS_LINES:
        terminalreporter.section("acceptance criteria")
        for line in PASS_LINES:
            terminalreporter.write_line(f"ACCEPTANCE PASS: {line}")

from vaultbench.client import PlatformClient
from vaultbench.config import PlatformConfig, ResourceBudget
from vaultbench.coordinator import Coordinator

PRINCIPALS = [
    {"id": "provider", "secret": "provider-secret"},
    {"id": "consumer", "secret": "consumer-secret"},
    {"id": "outsider", "secret": "outsider-secret"},
]


def fast_config(data_root: str, **overrides) -> PlatformConfig:
    """Test-friendly timing: tight dispatch/heartbeat/poll periods."""
    values = {
        "data_root": data_root,
        "host": "127.0.0.1",
        "port": 0,
        "principals": PRINCIPALS,
        "budget": ResourceBudget(max_sandboxes=6, memory_mb=256, job_timeout_s=60.0),
        "dispatch_period_s": 0.1,
        "heartbeat_interval_s": 0.25,
        "heartbeat_failure_threshold": 3,
        "session_ttl_s": 600.0,
        "worker_poll_s": 0.05,
        "demo_seed": 42,
    }
    values.update(overrides)
    config = PlatformConfig(**values)
    config.validate()
    return config


@pytest.fixture
def platform(tmp_path):
    coordinator = Coordinator(fast_config(str(tmp_path / "data")))
    coordinator.start()
    yield coordinator
    coordinator.stop()


@pytest.fixture
def provider(platform):
    return PlatformClient(platform.endpoint, "provider", "provider-secret")


@pytest.fixture
def consumer(platform):
    return PlatformClient(platform.endpoint, "consumer", "consumer-secret")
