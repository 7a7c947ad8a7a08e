"""The job server: schedules, stages, monitors and checkpoints, but never
touches gradient data. It talks to workers through control messages only.
"""
from __future__ import annotations

import csv
import itertools
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..buffers import MAX_WORKERS
from ..collectives.stats import IterationStats
from ..errors import InsufficientWorkers, InvalidArgument, WorkerTimeout
from ..transport.base import Endpoint
from ..transport.messages import ControlKind, ControlMessage
from .jobspec import JobSpec
from .staging import StagingPlan, default_plan

log = logging.getLogger(__name__)

REPORT_HEADER = ("rank", "iteration", "bytes_sent", "bytes_received", "data_msgs_sent", "wire_msgs_sent",
                 "sync_waits", "agg_adds", "agg_muls", "sim_time", "digest")


@dataclass
class WorkerHealth:
    rank: int
    last_heartbeat: float
    iteration: int = 0
    state: str = "Idle"


@dataclass
class IterRecord:
    rank: int
    iteration: int
    stats: IterationStats
    digest: str = ""


@dataclass
class RunReport:
    job_id: int
    n_workers: int
    iterations: int
    status: str = "running"
    straggler: int | None = None
    error: str = ""
    records: list[IterRecord] = field(default_factory=list)
    checkpoints: list[int] = field(default_factory=list)
    staging_time_s: float = 0.0
    checkpoint_time_s: float = 0.0
    train_time_s: float = 0.0
    server_counters: dict = field(default_factory=dict)
    snapshots: list[dict[int, int]] = field(default_factory=list)
    log: list[str] = field(default_factory=list)

    @property
    def total_time_s(self) -> float:
        return self.staging_time_s + self.train_time_s + self.checkpoint_time_s

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def records_for(self, rank: int) -> list[IterRecord]:
        return [r for r in self.records if r.rank == rank]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_HEADER)
            for r in sorted(self.records, key=lambda r: (r.iteration, r.rank)):
                s = r.stats
                writer.writerow([r.rank, r.iteration, s.bytes_sent, s.bytes_received, s.data_msgs_sent,
                                 s.wire_msgs_sent, s.sync_waits, s.agg_adds, s.agg_muls, repr(s.sim_time),
                                 r.digest])

    def write_log(self, path) -> None:
        Path(path).write_text("\n".join(self.log) + "\n")


class _Abort(Exception):
    def __init__(self, rank: int, reason: str):
        self.rank = rank
        self.reason = reason


class JobServer:
    """Control-plane orchestrator for one cluster.

    ``clock`` is injectable so heartbeat expiry can be tested without sleeping.
    """

    def __init__(self, endpoint: Endpoint, cluster_size: int = MAX_WORKERS, heartbeat_period: float = 1.0,
                 missed_beats: int = 3, clock=time.monotonic, poll: float = 0.02):
        self.endpoint = endpoint
        self.cluster_size = cluster_size
        self.heartbeat_timeout = heartbeat_period * missed_beats
        self.clock = clock
        self.poll = poll
        self._ids = itertools.count(1)
        self._jobs: dict[int, tuple[JobSpec, StagingPlan]] = {}
        self._health: dict[int, WorkerHealth] = {}
        self._addresses: dict[int, str] = {}
        self._lock = threading.Lock()
        self._report: RunReport | None = None
        self._ready: dict[int, set[int]] = {}
        self._done: dict[int, set[int]] = {}
        self._checkpoints: set[int] = set()

    # -- bookkeeping ---------------------------------------------------------

    def _say(self, line: str) -> None:
        log.info(line)
        if self._report is not None:
            self._report.log.append(f"{self.clock():.6f} {line}")

    def _handle(self, msg: ControlMessage) -> None:
        now = self.clock()
        rank = msg.sender
        with self._lock:
            h = self._health.get(rank)
            if h is None:
                h = self._health[rank] = WorkerHealth(rank, now)
            h.last_heartbeat = max(h.last_heartbeat, now)
            state = msg.get("state")
            if state:
                h.state = state
            if msg.kind in (ControlKind.WORKER_READY, ControlKind.HEARTBEAT):
                h.iteration = max(h.iteration, msg.iteration)
            if self._report is not None:
                self._report.snapshots.append({r: w.iteration for r, w in self._health.items()
                                               if w.state not in ("Terminated", "Failed")})
        if msg.kind == ControlKind.WORKER_READY:
            if "address" in msg.body:
                self._addresses[rank] = msg.body["address"]
            # Key -1: joined the cluster; 0: job set up; i >= 1: ready for iteration i.
            if msg.get("state") == "Ready":
                key = 0
            else:
                key = msg.iteration if msg.iteration > 0 else -1
            self._ready.setdefault(key, set()).add(rank)
        elif msg.kind == ControlKind.ITER_DONE:
            self._done.setdefault(msg.iteration, set()).add(rank)
            if self._report is not None:
                self._report.records.append(IterRecord(rank, msg.iteration, IterationStats.from_dict(msg.body),
                                                       msg.get("digest", "")))
        elif msg.kind == ControlKind.CHECKPOINT_DONE:
            self._checkpoints.add(msg.get_int("updates"))
            self._say(f"checkpoint after {msg.get('updates')} updates by rank {rank}")
        elif msg.kind == ControlKind.HEARTBEAT and msg.get("state") == "Failed":
            raise _Abort(rank, msg.get("error", "worker failed"))

    def _check_heartbeats(self, ranks) -> None:
        now = self.clock()
        with self._lock:
            for r in ranks:
                h = self._health.get(r)
                if h is not None and h.state != "Terminated" and now - h.last_heartbeat > self.heartbeat_timeout:
                    raise _Abort(r, f"no heartbeat for {now - h.last_heartbeat:.3f}s")

    def _pump(self, done, ranks, deadline: float | None = None) -> None:
        """Process control messages until ``done()`` holds."""
        while not done():
            msg = self.endpoint.recv_control(timeout=self.poll)
            if msg is not None:
                self._handle(msg)
            self._check_heartbeats(ranks)
            if deadline is not None and self.clock() > deadline:
                missing = [r for r in ranks if r not in self._health]
                raise _Abort(missing[0] if missing else -1, "workers did not join in time")

    def _broadcast(self, ranks, kind: ControlKind, iteration: int, **body) -> None:
        for r in ranks:
            self.endpoint.send_control(r, ControlMessage(kind, self.endpoint.node, iteration, body))

    # -- public API ------------------------------------------------------------

    def submit_job(self, spec: JobSpec, staging: StagingPlan | None = None, join_timeout: float = 30.0) -> int:
        """Validate and stage a job, then hand it to the workers.

        Blocks until ``spec.n_workers`` workers have joined.
        """
        if spec.n_workers > self.cluster_size:
            raise InsufficientWorkers(f"job wants {spec.n_workers} workers, cluster has {self.cluster_size}")
        staging = staging or default_plan(spec.dataset_bytes)
        staging.validate()
        job_id = next(self._ids)
        self._jobs[job_id] = (spec, staging)
        ranks = range(spec.n_workers)
        self._report = RunReport(job_id, spec.n_workers, spec.max_iterations)
        self._report.staging_time_s = staging.staging_time()
        try:
            self._pump(lambda: set(ranks) <= self._ready.get(-1, set()), ranks,
                       deadline=self.clock() + join_timeout)
        except _Abort as exc:
            raise InsufficientWorkers(exc.reason) from None
        body = spec.as_body()
        if len(self._addresses) >= spec.n_workers:
            body["peers"] = ",".join(self._addresses[r] for r in ranks)
        self._broadcast(ranks, ControlKind.JOB_SUBMIT, 0, job_id=job_id, **body)
        self._broadcast(ranks, ControlKind.STAGE_DATA, 0, tier=staging.staging.name,
                        bytes=staging.dataset_bytes)
        self._say(f"job {job_id} submitted: {spec.n_workers} workers, {spec.max_iterations} iterations, "
                  f"staging {self._report.staging_time_s:.3f}s")
        return job_id

    def orchestrate(self, job_id: int) -> RunReport:
        """Drive iterations 0..EN-1, then collect the final updates and shut down."""
        spec, staging = self._jobs[job_id]
        report = self._report
        ranks = list(range(spec.n_workers))
        checkpoints = set(spec.checkpoint_iterations())
        everyone = set(ranks)
        start = time.monotonic()
        try:
            self._pump(lambda: everyone <= self._ready.get(0, set()), ranks)
            for i in range(spec.max_iterations + 1):
                final = i == spec.max_iterations
                self._broadcast(ranks, ControlKind.ITER_START, i, final=int(final),
                                checkpoint=int(i in checkpoints))
                if final:
                    self._pump(lambda: everyone <= self._done.get(i - 1, set())
                               and (i not in checkpoints or i in self._checkpoints), ranks)
                else:
                    self._pump(lambda: everyone <= self._ready.get(i + 1, set()), ranks)
            report.status = "completed"
        except _Abort as exc:
            report.status = "aborted"
            report.straggler = exc.rank
            report.error = exc.reason
            self._say(f"abort: rank {exc.rank}: {exc.reason}")
        report.train_time_s = time.monotonic() - start
        report.checkpoints = sorted(self._checkpoints)
        report.checkpoint_time_s = len(report.checkpoints) * staging.checkpoint_time(
            spec.length * spec.element_width)
        self.shutdown(ranks)
        report.server_counters = self.endpoint.counters.as_dict()
        self._say(f"job {job_id} {report.status}: {len(report.records)} iteration records, "
                  f"{len(report.checkpoints)} checkpoints, total {report.total_time_s:.3f}s")
        return report

    def shutdown(self, ranks, timeout: float = 5.0) -> None:
        for r in ranks:
            try:
                self.endpoint.send_control(r, ControlMessage(ControlKind.SHUTDOWN, self.endpoint.node, 0, {}))
            except Exception as exc:
                log.debug("shutdown to %d failed: %s", r, exc)
        deadline = time.monotonic() + timeout

        def all_down() -> bool:
            with self._lock:
                return all(self._health.get(r) is not None and self._health[r].state in ("Terminated", "Failed")
                           for r in ranks)

        while not all_down() and time.monotonic() < deadline:
            msg = self.endpoint.recv_control(timeout=self.poll)
            if msg is not None:
                try:
                    self._handle(msg)
                except _Abort:
                    pass

    def monitor_snapshot(self) -> list[WorkerHealth]:
        with self._lock:
            return [WorkerHealth(h.rank, h.last_heartbeat, h.iteration, h.state)
                    for h in sorted(self._health.values(), key=lambda h: h.rank)]

    def raise_for_status(self, report: RunReport) -> None:
        if report.status == "aborted":
            raise WorkerTimeout(report.straggler)
        if report.status != "completed":
            raise InvalidArgument(f"run ended with status {report.status}")
