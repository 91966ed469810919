"""Job state machine, event-log persistence, dispatch policy (unit level)."""

import pytest

from vaultbench.errors import (
    IllegalTransitionError,
    InvalidWorkflowError,
    MissingAgreementError,
    NotCancellableError,
    UnknownJobError,
)
from vaultbench.scheduler import JobScheduler, ProvisionFailure
from vaultbench.util import now_ms
from vaultbench.workflow import WorkflowDefinition


def _workflow(owner="consumer", datasets=("d1",)):
    return WorkflowDefinition(
        workflow_id="w" * 32,
        owner_id=owner,
        name="test",
        input_dataset_ids=list(datasets),
        pipeline={"steps": []},
        algorithm={"algorithm": "descriptive_stats", "columns": ["x"]},
        visualization={"chart_type": "histogram", "column": "x"},
        created_at_ms=now_ms(),
    )


@pytest.fixture
def sched(tmp_path):
    released = []
    scheduler = JobScheduler(
        str(tmp_path),
        validate_workflow=lambda defn: None,
        has_agreement=lambda owner, ds: ds != "forbidden",
        release_sandbox=released.append,
    )
    scheduler._released = released
    return scheduler


class TestSubmit:
    def test_immediate_starts_queued(self, sched):
        job = sched.submit(_workflow(), {"type": "immediate"})
        assert job.state == "queued"
        assert "queued" in job.timestamps

    def test_at_starts_scheduled(self, sched):
        job = sched.submit(_workflow(), {"type": "at", "at_ms": now_ms() + 60_000})
        assert job.state == "scheduled"

    def test_missing_agreement(self, sched):
        with pytest.raises(MissingAgreementError) as info:
            sched.submit(_workflow(datasets=("forbidden",)), {"type": "immediate"})
        assert info.value.dataset_id == "forbidden"

    def test_invalid_workflow_propagates(self, tmp_path):
        def reject(defn):
            raise InvalidWorkflowError("nope")

        scheduler = JobScheduler(
            str(tmp_path), validate_workflow=reject, has_agreement=lambda o, d: True
        )
        with pytest.raises(InvalidWorkflowError):
            scheduler.submit(_workflow(), {"type": "immediate"})


class TestDispatch:
    def test_not_due_not_dispatched(self, sched):
        at = now_ms() + 10_000
        sched.submit(_workflow(), {"type": "at", "at_ms": at})
        dispatched = sched.dispatch_due(at - 1000, assign=lambda job: "sb1")
        assert dispatched == []

    def test_due_promotes_and_assigns(self, sched):
        at = now_ms() - 1
        job = sched.submit(_workflow(), {"type": "at", "at_ms": at})
        dispatched = sched.dispatch_due(now_ms(), assign=lambda j: "sb1")
        assert [j.job_id for j in dispatched] == [job.job_id]
        assert sched.get_status(job.job_id).sandbox_id == "sb1"

    def test_one_job_per_sandbox_fifo(self, sched):
        first = sched.submit(_workflow(), {"type": "immediate"})
        second = sched.submit(_workflow(), {"type": "immediate"})

        # an owner has one sandbox; it is busy while the first job runs
        busy = {"sb1": None}

        def assign(job):
            if busy["sb1"] is None:
                busy["sb1"] = job.job_id
                return "sb1"
            return None

        dispatched = sched.dispatch_due(now_ms(), assign)
        assert [j.job_id for j in dispatched] == [first.job_id]
        assert sched.dispatch_due(now_ms(), assign) == []

        # drive the first job through its chain to completion
        for state in ("fetching", "decrypting", "running", "encrypting_results", "uploading", "completed"):
            sched.update_state(first.job_id, state)
        assert sched._released == ["sb1"]
        busy["sb1"] = None
        dispatched = sched.dispatch_due(now_ms(), assign)
        assert [j.job_id for j in dispatched] == [second.job_id]

    def test_provision_failure_retries_then_fails(self, sched):
        job = sched.submit(_workflow(), {"type": "immediate"})

        def failing(j):
            raise ProvisionFailure("no capacity")

        t = now_ms()
        sched.dispatch_due(t, failing)
        record = sched.get_status(job.job_id)
        assert record.state == "queued" and record.retry_count == 1
        assert record.next_attempt_ms > t
        # before the backoff expires nothing happens
        sched.dispatch_due(t, failing)
        assert sched.get_status(job.job_id).retry_count == 1
        sched.dispatch_due(record.next_attempt_ms + 1, failing)
        assert sched.get_status(job.job_id).retry_count == 2
        record = sched.get_status(job.job_id)
        sched.dispatch_due(record.next_attempt_ms + 1, failing)
        assert sched.get_status(job.job_id).state == "failed"
        assert sched.get_status(job.job_id).error["code"] == "provision-failure"


class TestStateMachine:
    def _dispatched(self, sched):
        job = sched.submit(_workflow(), {"type": "immediate"})
        sched.dispatch_due(now_ms(), lambda j: "sb1")
        return job

    def test_legal_chain(self, sched):
        job = self._dispatched(sched)
        for state in ("fetching", "decrypting", "running", "encrypting_results", "uploading", "completed"):
            assert sched.update_state(job.job_id, state).state == state

    def test_illegal_transition(self, sched):
        job = self._dispatched(sched)
        for state in ("fetching", "decrypting", "running", "encrypting_results", "uploading", "completed"):
            sched.update_state(job.job_id, state)
        with pytest.raises(IllegalTransitionError):
            sched.update_state(job.job_id, "running")

    def test_skip_ahead_rejected(self, sched):
        job = self._dispatched(sched)
        sched.update_state(job.job_id, "fetching")
        with pytest.raises(IllegalTransitionError):
            sched.update_state(job.job_id, "running")

    def test_fail_from_any_pre_terminal(self, sched):
        job = self._dispatched(sched)
        sched.update_state(job.job_id, "fetching")
        record = sched.update_state(job.job_id, "failed", {"code": "fetch-error", "message": "x"})
        assert record.state == "failed"
        assert record.error["code"] == "fetch-error"

    def test_repeating_a_state_is_illegal(self, sched):
        # deduplication of re-delivered progress reports happens one layer
        # up; the state machine itself stays strict
        job = self._dispatched(sched)
        sched.update_state(job.job_id, "fetching")
        with pytest.raises(IllegalTransitionError):
            sched.update_state(job.job_id, "fetching")

    def test_completed_after_failed_rejected(self, sched):
        job = self._dispatched(sched)
        sched.update_state(job.job_id, "fetching")
        sched.update_state(job.job_id, "failed", {"code": "fetch-error", "message": "x"})
        with pytest.raises(IllegalTransitionError):
            sched.update_state(job.job_id, "completed")


class TestCancel:
    def test_cancel_scheduled(self, sched):
        job = sched.submit(_workflow(), {"type": "at", "at_ms": now_ms() + 60_000})
        assert sched.cancel(job.job_id).state == "cancelled"
        # never dispatched afterwards
        assert sched.dispatch_due(now_ms() + 120_000, lambda j: "sb1") == []

    def test_cancel_running_rejected(self, sched):
        job = sched.submit(_workflow(), {"type": "immediate"})
        sched.dispatch_due(now_ms(), lambda j: "sb1")
        sched.update_state(job.job_id, "fetching")
        with pytest.raises(NotCancellableError):
            sched.cancel(job.job_id)

    def test_unknown_job(self, sched):
        with pytest.raises(UnknownJobError):
            sched.get_status("f" * 32)
        with pytest.raises(UnknownJobError):
            sched.cancel("f" * 32)


class TestPersistence:
    def test_replay_restores_state(self, tmp_path):
        scheduler = JobScheduler(
            str(tmp_path), validate_workflow=lambda d: None, has_agreement=lambda o, d: True
        )
        running = scheduler.submit(_workflow(), {"type": "immediate"})
        scheduler.dispatch_due(now_ms(), lambda j: "sb1")
        scheduler.update_state(running.job_id, "fetching")
        scheduler.update_state(running.job_id, "decrypting")
        future = scheduler.submit(_workflow(), {"type": "at", "at_ms": now_ms() + 50})
        done = scheduler.submit(_workflow(), {"type": "immediate"})
        scheduler.dispatch_due(now_ms(), lambda j: "sb2" if j.job_id == done.job_id else None)
        for state in ("fetching", "decrypting", "running", "encrypting_results", "uploading"):
            scheduler.update_state(done.job_id, state)
        scheduler.record_result(done.job_id, "results/r.env", "d" * 32)
        scheduler.update_state(done.job_id, "completed")

        recovered = JobScheduler(
            str(tmp_path), validate_workflow=lambda d: None, has_agreement=lambda o, d: True
        )
        assert recovered.get_status(running.job_id).state == "decrypting"
        assert recovered.get_status(running.job_id).sandbox_id == "sb1"
        assert recovered.get_status(future.job_id).state == "scheduled"
        assert recovered.get_status(done.job_id).state == "completed"
        assert recovered.get_status(done.job_id).result_envelope_ref == "results/r.env"

        # the recovered scheduled job still fires once due
        dispatched = recovered.dispatch_due(now_ms() + 60_000, lambda j: "sb3")
        assert [j.job_id for j in dispatched] == [future.job_id]
