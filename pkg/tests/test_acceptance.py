"""Acceptance gate: one test per criterion, each printing a PASS line with
its measured evidence.  Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import os
import random
import time

import pytest

from vaultbench import envelope
from vaultbench.analytics import kmeans, linear_regression, pearson_correlation, run_algorithm
from vaultbench.client import PlatformClient
from vaultbench.config import ResourceBudget
from vaultbench.coordinator import Coordinator
from vaultbench.errors import IntegrityError
from vaultbench.harness import run_scenario
from vaultbench.keyservice import ChannelContext, KeyReleaseRequest, KeyService
from vaultbench.prep import run_pipeline, validate_pipeline
from vaultbench.table import Table
from vaultbench.util import now_ms

from .analytics_oracles import ols_oracle, pearson_oracle, squared_loss_gradient
from .conftest import fast_config
from .gcm_oracle import gcm_encrypt
from .prep_oracle import assert_table_matches, run_pipeline_oracle
from .prep_rand import random_case


PASS_LINES: list[str] = []  # printed by the terminal-summary hook in conftest


def _ok(line: str) -> None:
    PASS_LINES.append(line)
    print(f"ACCEPTANCE PASS: {line}")


# -- criterion: crypto round-trip ------------------------------------------------


def test_crypto_round_trip_and_tamper_budget():
    rng = random.Random(20240601)
    key, key_id = os.urandom(32), os.urandom(16)
    start = time.monotonic()

    for _ in range(10_000):
        size = rng.randint(0, 1 << 20)
        payload = os.urandom(size)
        sealed = envelope.seal(key, key_id, payload)
        assert envelope.unseal(sealed, key, key_id) == payload

    base_payload = os.urandom(4096)
    sealed = envelope.seal(key, key_id, base_payload)
    mutable_region = len(sealed) - 21  # nonce + ciphertext + tag
    for _ in range(1_000):
        idx = 21 + rng.randrange(mutable_region)
        mutated = bytearray(sealed)
        mutated[idx] ^= 1 + rng.randrange(255)
        with pytest.raises(IntegrityError):
            envelope.unseal(bytes(mutated), key, key_id)

    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"crypto round-trip criterion took {elapsed:.1f}s (budget 60s)"
    _ok(
        "crypto round-trip: 10,000 payloads (0-1 MiB) identity + 1,000 tamper "
        f"mutations rejected in {elapsed:.1f}s (< 60s)"
    )


# -- criterion: known-answer cipher check ------------------------------------------


def test_known_answer_triples_byte_exact():
    triples = [
        (bytes(range(32)), bytes(range(12)), b"flight delay analytics"),
        (bytes.fromhex("ab" * 32), bytes.fromhex("0102030405060708090a0b0c"), b""),
        (
            bytes.fromhex("fedcba9876543210" * 4),
            bytes.fromhex("cafebabefacedbaddecaf888"),
            b"The quick brown fox jumps over the lazy dog. 0123456789 times.",
        ),
        (b"\x11" * 32, b"\x22" * 12, bytes(range(256)) * 2),
    ]
    for key, nonce, plaintext in triples:
        oracle_ct, oracle_tag = gcm_encrypt(key, nonce, plaintext)
        sealed = envelope.seal(key, os.urandom(16), plaintext, nonce=nonce)
        body = envelope.decode(sealed).ciphertext_and_tag
        assert body == oracle_ct + oracle_tag, "envelope disagrees with independent oracle"
    _ok(f"known-answer cipher check: {len(triples)} fixed triples byte-exact vs independent oracle")


# -- criterion: key-release authorization matrix -------------------------------------


def test_key_release_authorization_matrix(tmp_path):
    owners = {"ds": "provider"}
    bound: dict[str, bytes] = {}
    svc = KeyService(str(tmp_path / "keys"), owners.get, bound.get)
    key = svc.generate_key("provider")
    bound["ds"] = key.key_id

    authenticated = ChannelContext("consumer", True, True)
    unauthenticated = ChannelContext(None, False, False)

    def request(agreement_id):
        return KeyReleaseRequest(key.key_id, "consumer", agreement_id, os.urandom(16))

    cases = []  # (label, agreement_id, channel, expect_granted)
    cases.append(("no-agreement", None, authenticated, False))
    cases.append(("no-agreement-unauth", None, unauthenticated, False))

    active = svc.grant_agreement("provider", "consumer", "ds", ttl_ms=600_000)
    cases.append(("active-auth", active.agreement_id, authenticated, True))
    cases.append(("active-unauth", active.agreement_id, unauthenticated, False))

    revoked = svc.grant_agreement("provider", "consumer", "ds", ttl_ms=600_000)
    svc.revoke_agreement(revoked.agreement_id)
    cases.append(("revoked-auth", revoked.agreement_id, authenticated, False))
    cases.append(("revoked-unauth", revoked.agreement_id, unauthenticated, False))

    expired = svc.grant_agreement("provider", "consumer", "ds", ttl_ms=1)
    time.sleep(0.01)
    cases.append(("expired-auth", expired.agreement_id, authenticated, False))
    cases.append(("expired-unauth", expired.agreement_id, unauthenticated, False))

    requests_sent = 0
    for label, agreement_id, channel, expect in cases:
        response = svc.release_key(request(agreement_id), channel)
        requests_sent += 1
        assert response.granted == expect, f"case {label}: granted={response.granted}"
        if not expect:
            assert response.key_bytes is None, f"case {label} leaked key bytes"

    assert len(svc.audit_entries()) == requests_sent
    granted = [e for e in svc.audit_entries() if e.outcome == "granted"]
    assert len(granted) == 1
    _ok(
        "key-release authorization matrix: only (active, authenticated) releases; "
        f"audit entries == {requests_sent} requests"
    )


# -- criterion: data-prep oracle equivalence ---------------------------------------------


def test_dataprep_oracle_equivalence_500_cases():
    checked = 0
    for seed in range(500):
        rng = random.Random(77_000 + seed)
        max_rows = 1000 if seed % 5 == 0 else 200
        tables, pipeline = random_case(rng, max_rows=max_rows)
        engine_out = run_pipeline(tables, pipeline)
        oracle_out = run_pipeline_oracle(tables, pipeline)
        assert_table_matches(engine_out, oracle_out)
        predicted = validate_pipeline({k: list(v.schema) for k, v in tables.items()}, pipeline)
        assert engine_out.schema == predicted
        checked += 1
    assert checked == 500
    _ok("data-prep oracle equivalence: 500/500 random cases cell-for-cell equal")


# -- criterion: analytics correctness ------------------------------------------------------


def test_analytics_correctness():
    rng = random.Random(99)

    # OLS vs normal-equation oracle, coefficient agreement <= 1e-8
    xs = [[rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)] for _ in range(80)]
    ys = [2.0 * a - 0.5 * b + 1.25 * c + 3.0 + rng.gauss(0, 0.3) for a, b, c in xs]
    table = Table(
        schema=[("a", "float64"), ("b", "float64"), ("c", "float64"), ("y", "float64")],
        columns={
            "a": [r[0] for r in xs],
            "b": [r[1] for r in xs],
            "c": [r[2] for r in xs],
            "y": ys,
        },
        nrows=80,
    )
    result = linear_regression(table, "y", ["a", "b", "c"])
    weights = list(result.tables["coefficients"].columns["weight"])
    expected = ols_oracle(xs, ys)
    assert max(abs(g - w) for g, w in zip(weights, expected)) <= 1e-8

    # loss gradient at the solution (finite differences) <= 1e-6 max-norm
    grad = squared_loss_gradient(xs, ys, weights)
    assert max(abs(g) for g in grad) <= 1e-6

    # kmeans: non-increasing inertia, fixed-seed determinism
    points = Table(
        schema=[("x", "float64"), ("y", "float64")],
        columns={
            "x": [rng.uniform(0, 100) for _ in range(300)],
            "y": [rng.uniform(0, 100) for _ in range(300)],
        },
        nrows=300,
    )
    km_a = kmeans(points, k=5, features=["x", "y"], seed=11)
    km_b = kmeans(points, k=5, features=["x", "y"], seed=11)
    history = km_a.tables["inertia_history"].columns["inertia"]
    assert all(later <= earlier + 1e-9 for earlier, later in zip(history, history[1:]))
    assert km_a.tables["labels"].columns["cluster"] == km_b.tables["labels"].columns["cluster"]
    assert km_a.metrics["inertia"] == km_b.metrics["inertia"]

    # pearson vs direct formula <= 1e-12
    px = [rng.uniform(-10, 10) for _ in range(200)]
    py = [0.75 * v + rng.gauss(0, 3) for v in px]
    ptable = Table(
        schema=[("x", "float64"), ("y", "float64")], columns={"x": px, "y": py}, nrows=200
    )
    r = pearson_correlation(ptable, "x", "y").metrics["r"]
    assert abs(r - pearson_oracle(px, py)) <= 1e-12

    # partition invariance across {1, 2, 4, 8}
    specs = [
        {"algorithm": "descriptive_stats", "columns": ["a", "b", "y"]},
        {"algorithm": "linear_regression", "target": "y", "features": ["a", "b", "c"]},
        {"algorithm": "kmeans", "k": 4, "features": ["a", "b"], "seed": 3},
        {"algorithm": "pearson_correlation", "col_a": "a", "col_b": "y"},
    ]
    for spec in specs:
        base = run_algorithm(table, spec, partitions=1)
        for partitions in (2, 4, 8):
            other = run_algorithm(table, spec, partitions=partitions)
            for name, value in base.metrics.items():
                got = other.metrics[name]
                if isinstance(value, float):
                    scale = max(abs(value), 1e-300)
                    assert abs(got - value) / scale <= 1e-12, (spec["algorithm"], name)
                else:
                    assert got == value
            for tname, ttable in base.tables.items():
                for column, dtype in ttable.schema:
                    for x, y in zip(
                        ttable.columns[column], other.tables[tname].columns[column]
                    ):
                        if dtype == "float64" and x is not None:
                            assert abs(y - x) <= 1e-12 * max(abs(x), 1e-300)
                        else:
                            assert x == y
    _ok(
        "analytics correctness: OLS<=1e-8 vs oracle, gradient<=1e-6, kmeans monotone+deterministic, "
        "pearson<=1e-12, partitions {1,2,4,8} agree <=1e-12"
    )


# -- criterion: scheduling ----------------------------------------------------------------------


def test_scheduling_50_jobs_over_10s_window(tmp_path):
    owners = [{"id": f"user{i}", "secret": f"secret{i}"} for i in range(10)]
    # reference heartbeat timing (1s interval, 3 misses): the criterion
    # exercises scheduling latency, not failure detection
    config = fast_config(
        str(tmp_path / "data"),
        principals=owners,
        budget=ResourceBudget(max_sandboxes=12, memory_mb=256, job_timeout_s=60.0),
        heartbeat_interval_s=1.0,
        worker_poll_s=0.1,
    )
    coordinator = Coordinator(config)
    coordinator.start()
    rng = random.Random(5150)
    try:
        clients = {
            o["id"]: PlatformClient(coordinator.endpoint, o["id"], o["secret"]) for o in owners
        }
        workflows = {}
        for owner, client in clients.items():
            dataset = client.upload_csv_text("v\n1\n2\n3\n4\n", f"{owner}-data")
            workflow = client.create_workflow(
                {
                    "name": f"{owner}-flow",
                    "input_dataset_ids": [dataset["dataset_id"]],
                    "pipeline": {"steps": []},
                    "algorithm": {"algorithm": "descriptive_stats", "columns": ["v"]},
                    "visualization": {"chart_type": "histogram", "column": "v"},
                }
            )
            workflows[owner] = workflow["workflow_id"]

        t0 = now_ms()
        submissions = []  # (owner, job_id, at_ms)
        for i in range(50):
            owner = owners[i % len(owners)]["id"]
            at_ms = t0 + 500 + rng.randint(0, 10_000)
            job = clients[owner].submit_job(
                workflows[owner], {"type": "at", "at_ms": at_ms}
            )
            submissions.append((owner, job["job_id"], at_ms))

        deadline = time.monotonic() + (max(s[2] for s in submissions) - now_ms()) / 1000 + 8
        pending = {job_id for _o, job_id, _t in submissions}
        records = {}
        while pending and time.monotonic() < deadline:
            for owner, job_id, _at in submissions:
                if job_id in pending:
                    record = clients[owner].job_status(job_id)
                    if record["state"] in ("completed", "failed", "cancelled"):
                        records[job_id] = record
                        pending.discard(job_id)
            time.sleep(0.1)

        assert not pending, f"{len(pending)} jobs never reached a terminal state"
        late, early = [], []
        for _owner, job_id, at_ms in submissions:
            record = records[job_id]
            assert record["state"] == "completed", (job_id, record.get("error"))
            started = record["timestamps"]["fetching"]
            finished = record["timestamps"]["completed"]
            if started < at_ms:
                early.append((job_id, at_ms - started))
            if finished > at_ms + 5_000:
                late.append((job_id, finished - at_ms))
        assert not early, f"jobs started before their scheduled time: {early}"
        assert not late, f"jobs exceeded the T+5s budget: {late}"
    finally:
        coordinator.stop()
    _ok("scheduling: 50 jobs over a 10s window, none early, all terminal within T+5s")


# -- criterion: leak-freedom end-to-end ------------------------------------------------------------


def test_leak_freedom_happy_path():
    report = run_scenario("happy_path")
    assert report.passed, report.details
    assert report.leak_scan["during_run_hits"] == []
    assert report.leak_scan["after_teardown_hits"] == []
    _ok(
        "leak-freedom: happy path ran with sentinel plaintext; zero sentinel/key-material "
        "hits outside scoped roots during the run and zero anywhere after teardown"
    )


# -- criterion: fault scenarios ---------------------------------------------------------------------


def test_fault_scenarios():
    revocation = run_scenario("revocation_mid_queue")
    assert revocation.passed, revocation.details
    crash = run_scenario("worker_crash")
    assert crash.passed, crash.details
    restart = run_scenario("restart_recovery")
    assert restart.passed, restart.details
    _ok(
        "fault scenarios: revocation-mid-queue -> failed(key-denied); worker kill -> failed "
        "within 3 heartbeat intervals; coordinator restart -> scheduled job recovered and fired"
    )


# -- criterion: suite is frontend-free ---------------------------------------------------------------


def test_primary_suite_has_no_frontend_dependency():
    import sys

    package_dir = os.path.dirname(envelope.__file__)
    for root, _dirs, files in os.walk(package_dir):
        for name in files:
            if name.endswith(".py"):
                with open(os.path.join(root, name), encoding="utf-8") as fh:
                    source = fh.read()
                assert "frontend" not in source, f"{name} references the frontend"
    loaded = [m for m in sys.modules if "frontend" in m.lower()]
    assert not loaded
    _ok("primary suite runs with no secondary component built (no frontend references loaded)")
