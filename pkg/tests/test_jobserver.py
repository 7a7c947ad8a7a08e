import csv

import numpy as np
import pytest

from gdraa.errors import InsufficientWorkers, InvalidArgument, MalformedBody, RejectedOversizedDataset, WorkerTimeout
from gdraa.jobserver import (REPORT_HEADER, JobServer, JobSpec, StagingPlan, SyntheticGradientTask, Tier,
                             default_plan, parse_kv, run_loopback_job, run_socket_job)
from gdraa.jobserver.staging import GB, TB
from gdraa.transport import LoopbackFabric

FAST = dict(heartbeat_period=0.05, missed_beats=6)


def recording_run(spec, **kw):
    tasks = {}

    def factory(rank, s, body):
        tasks[rank] = SyntheticGradientTask(rank, s)
        return tasks[rank]

    run = run_loopback_job(spec, task_factory=factory, **(FAST | kw))
    return run, tasks


# -- job descriptions ------------------------------------------------------------

def test_jobspec_file_round_trip(tmp_path):
    path = tmp_path / "job.txt"
    path.write_text("# demo\nn_workers = 4\nbatch=16\nlearning_rate = 0.05\ncheckpoint_every_epoch = no\n"
                    "unknown_key = ignored\n")
    spec = JobSpec.from_file(path)
    assert (spec.n_workers, spec.batch, spec.learning_rate, spec.checkpoint_every_epoch) == (4, 16, 0.05, False)
    assert JobSpec.from_mapping(spec.as_body()) == spec
    with pytest.raises(MalformedBody):
        parse_kv("just words\n")
    with pytest.raises(MalformedBody):
        JobSpec.from_mapping({"batch": "eight"})
    with pytest.raises(InvalidArgument):
        JobSpec(max_iterations=0)
    with pytest.raises(InvalidArgument):
        JobSpec(collective="tree")


def test_default_hyperparameters():
    spec = JobSpec()
    assert (spec.learning_rate, spec.momentum, spec.weight_decay, spec.lr_policy, spec.lr_power) == \
           (0.1, 0.9, 0.001, "poly", 1.0)


@pytest.mark.parametrize("samples,n,b,en", [(100, 2, 8, 40), (64, 4, 4, 10), (1000, 1, 1000, 5), (7, 3, 1, 2)])
def test_checkpoint_cadence(samples, n, b, en):
    spec = JobSpec(n_workers=n, batch=b, dataset_samples=samples, max_iterations=en)
    k = -(-samples // (n * b))
    assert spec.epoch_iterations == k
    assert len(spec.checkpoint_iterations()) == en // k
    assert all(c % k == 0 for c in spec.checkpoint_iterations())


# -- staging ------------------------------------------------------------------------

def test_staging_plan():
    plan = default_plan(500 * GB)
    plan.validate()
    assert plan.staging.capacity_bytes == 2 * TB
    assert plan.staging_time() == pytest.approx(500.0)
    assert plan.checkpoint_time(4 * GB) == pytest.approx(4.0)
    with pytest.raises(RejectedOversizedDataset):
        default_plan(3 * TB).validate()
    with pytest.raises(InvalidArgument):
        StagingPlan((Tier("a", 1, 1),), 0)


def test_oversized_dataset_is_rejected_before_any_worker_runs():
    fab = LoopbackFabric(2)
    server = JobServer(fab.job_server, cluster_size=2)
    with pytest.raises(RejectedOversizedDataset):
        server.submit_job(JobSpec(dataset_bytes=3 * TB))
    assert fab.job_server.counters.control_msgs_sent == 0


def test_too_many_workers():
    server = JobServer(LoopbackFabric(1).job_server, cluster_size=32)
    with pytest.raises(InsufficientWorkers):
        server.submit_job(JobSpec(n_workers=64))


def test_missing_workers_time_out():
    server = JobServer(LoopbackFabric(2).job_server, cluster_size=2)
    with pytest.raises(InsufficientWorkers):
        server.submit_job(JobSpec(n_workers=2), join_timeout=0.1)


# -- orchestration ----------------------------------------------------------------------

def test_two_worker_run_records_every_iteration():
    spec = JobSpec(n_workers=2, max_iterations=10, length=64)
    run, tasks = recording_run(spec)
    report = run.report
    assert report.completed
    for rank in range(2):
        recs = report.records_for(rank)
        assert sorted(r.iteration for r in recs) == list(range(10))
        assert {r.stats.sync_waits for r in recs} == {2}
        assert {r.stats.data_msgs_sent for r in recs} == {2}
    # every rank applied the same averaged gradient each iteration
    for i in range(10):
        assert len({r.digest for r in report.records if r.iteration == i}) == 1
        ref = (tasks[0].compute_gradient(i).astype(np.float64) + tasks[1].compute_gradient(i)) / 2
        assert np.array_equal(tasks[0].results[i], ref.astype(np.float32))
    assert report.server_counters["data_bytes_sent"] == report.server_counters["data_bytes_received"] == 0
    assert report.server_counters["data_msgs_received"] == 0
    assert report.server_counters["control_msgs_received"] > 0
    assert [h.state for h in run.server.monitor_snapshot()] == ["Terminated", "Terminated"]


def test_first_iteration_applies_nothing():
    spec = JobSpec(n_workers=3, max_iterations=1, length=9)
    run, tasks = recording_run(spec)
    assert run.report.completed
    assert all(len(t.results) == 1 for t in tasks.values())


def test_checkpoints_written_each_epoch():
    spec = JobSpec(n_workers=2, batch=4, dataset_samples=24, max_iterations=10, length=8)
    run, tasks = recording_run(spec)
    assert run.report.checkpoints == [3, 6, 9]
    assert tasks[0].checkpoints == [3, 6, 9] and tasks[1].checkpoints == []
    assert run.report.checkpoint_time_s == pytest.approx(3 * 8 * 4 / GB)
    assert run.report.total_time_s >= run.report.train_time_s + run.report.checkpoint_time_s


def test_workers_stay_within_one_iteration():
    spec = JobSpec(n_workers=4, max_iterations=40, length=32)
    run, _ = recording_run(spec)
    drift = [max(s.values()) - min(s.values()) for s in run.report.snapshots if len(s) > 1]
    assert drift and max(drift) <= 1


def test_silent_worker_aborts_the_run():
    spec = JobSpec(n_workers=8, max_iterations=10, length=64)
    run, _ = recording_run(spec, stall={5: 3}, heartbeat_period=0.05, missed_beats=3)
    report = run.report
    assert report.status == "aborted" and report.straggler == 5
    assert "heartbeat" in report.error
    # no iteration past the stall point was completed by anyone
    assert max(r.iteration for r in report.records) < 3
    with pytest.raises(WorkerTimeout) as info:
        run.server.raise_for_status(report)
    assert info.value.rank == 5
    assert all(a.state == "Terminated" for a in run.agents)


def test_failing_task_aborts_and_names_rank():
    class Broken(SyntheticGradientTask):
        def compute_gradient(self, iteration):
            if self.rank == 2 and iteration == 4:
                raise RuntimeError("boom")
            return super().compute_gradient(iteration)

    spec = JobSpec(n_workers=3, max_iterations=8, length=12)
    run = run_loopback_job(spec, task_factory=lambda r, s, b: Broken(r, s), **FAST)
    assert run.report.status == "aborted" and run.report.straggler == 2
    assert "boom" in run.report.error


@pytest.mark.parametrize("collective", ["ring", "ps"])
def test_baseline_collectives_under_the_job_server(collective):
    spec = JobSpec(n_workers=3, max_iterations=5, length=20)
    gd, gd_tasks = recording_run(spec)
    other, other_tasks = recording_run(spec.replace(collective=collective))
    assert other.report.completed
    for i in range(5):
        assert np.allclose(gd_tasks[0].results[i], other_tasks[0].results[i], rtol=1e-6, atol=1e-7)
    assert other.report.server_counters["data_bytes_received"] == 0


def test_loopback_runs_repeat_exactly():
    spec = JobSpec(n_workers=4, max_iterations=6, length=101, seed=3)
    a, _ = recording_run(spec, alpha=1e-6, beta=1e9)
    b, _ = recording_run(spec, alpha=1e-6, beta=1e9)
    key = lambda rep: sorted((r.rank, r.iteration, r.digest, r.stats.sim_time) for r in rep.records)
    assert key(a.report) == key(b.report)
    assert a.fabric.event_log() == b.fabric.event_log()


def test_report_files(tmp_path):
    run, _ = recording_run(JobSpec(n_workers=2, max_iterations=3, length=8))
    run.report.to_csv(tmp_path / "r.csv")
    run.report.write_log(tmp_path / "r.log")
    rows = list(csv.reader((tmp_path / "r.csv").open()))
    assert tuple(rows[0]) == REPORT_HEADER and len(rows) == 1 + 6
    log = (tmp_path / "r.log").read_text()
    assert "submitted" in log and "completed" in log


def test_socket_job_runs_in_separate_processes(tmp_path):
    spec = JobSpec(n_workers=2, max_iterations=3, length=10, output_dir=str(tmp_path), seed=1)
    run = run_socket_job(spec, heartbeat_period=0.2)
    assert run.report.completed
    assert run.report.server_counters["data_bytes_received"] == 0
    ref = [SyntheticGradientTask(r, spec) for r in range(2)]
    for i in range(3):
        mean = (ref[0].compute_gradient(i).astype(np.float64) + ref[1].compute_gradient(i)) / 2
        for r in range(2):
            assert np.array_equal(np.load(tmp_path / f"rank{r}.npy")[i], mean.astype(np.float32))
