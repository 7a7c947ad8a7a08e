"""The per-worker control loop.

The agent reacts to job-server messages and drives one collective per
iteration. For GDRAA the wait for the averaged gradient is deferred: iteration
``i`` ends after this worker's own block has been broadcast, and the wait for
all other blocks happens when IterStart(i+1) arrives, just before the model
update. Nothing is updated at iteration 0.
"""
from __future__ import annotations

import logging
import threading
import traceback

import numpy as np

from ..collectives.baselines import LockstepGroup
from ..collectives.gdraa import DEFAULT_TIMEOUT, GdraaWorker
from ..collectives.stats import IterationStats
from ..errors import Aborted
from ..transport.base import Endpoint
from ..transport.messages import JOB_SERVER, ControlKind, ControlMessage
from .jobspec import JobSpec
from .tasks import TaskFactory, TrainingTask, build_task, digest

log = logging.getLogger(__name__)

IDLE, TRAIN, WAIT, UPDATE, TERMINATED, FAILED = "Idle", "Train", "Wait", "Update", "Terminated", "Failed"


class _GdraaAdapter:
    def __init__(self, worker: GdraaWorker, timeout: float):
        self.worker = worker
        self.timeout = timeout

    def start(self, grad) -> None:
        self.worker.start(grad)
        self.worker.wait_reduce_scatter(self.timeout)

    def finish(self) -> tuple[np.ndarray, IterationStats]:
        return self.worker.finish(self.timeout)


class _LockstepAdapter:
    def __init__(self, group: LockstepGroup, rank: int, abort_check):
        self.group = group
        self.rank = rank
        self.abort_check = abort_check
        self._result = None

    def start(self, grad) -> None:
        self._result = self.group.allreduce(self.rank, grad, self.abort_check)

    def finish(self) -> tuple[np.ndarray, IterationStats]:
        out, stats = self._result
        self._result = None
        return out.copy(), stats


class WorkerAgent:
    """Runs one worker: heartbeats, job setup, and the iteration protocol.

    ``task_factory`` overrides the named-task registry (handy for in-process
    runs). ``lockstep`` supplies the shared group used by the ring and
    parameter-server baselines. ``stall_at`` makes the worker go silent at that
    iteration, for exercising failure detection.
    """

    def __init__(self, endpoint: Endpoint, heartbeat_period: float = 1.0,
                 timeout: float = DEFAULT_TIMEOUT, task_factory: TaskFactory | None = None,
                 lockstep: LockstepGroup | None = None, stall_at: int | None = None):
        self.endpoint = endpoint
        self.rank = endpoint.rank
        self.heartbeat_period = heartbeat_period
        self.timeout = timeout
        self.task_factory = task_factory
        self.lockstep = lockstep
        self.stall_at = stall_at
        self.state = IDLE
        self.iteration = 0
        self.spec: JobSpec | None = None
        self.task: TrainingTask | None = None
        self.collective = None
        self.error: BaseException | None = None
        self._stop = threading.Event()
        self._silent = threading.Event()

    # -- messaging ---------------------------------------------------------

    def _send(self, kind: ControlKind, iteration: int, **body) -> None:
        self.endpoint.send_control(JOB_SERVER, ControlMessage(kind, self.rank, iteration, body))

    def _heartbeat_loop(self) -> None:
        while not self._stop.wait(self.heartbeat_period):
            if self._silent.is_set():
                continue
            try:
                self._send(ControlKind.HEARTBEAT, self.iteration, state=self.state)
            except Exception:
                return

    def _abort_requested(self) -> bool:
        return self.endpoint.shutdown_requested or self.endpoint.closed

    # -- lifecycle -----------------------------------------------------------

    def run(self) -> None:
        join = {"state": IDLE}
        address = getattr(self.endpoint, "address", None)
        if address:
            join["address"] = address
        self._send(ControlKind.WORKER_READY, 0, **join)
        beat = threading.Thread(target=self._heartbeat_loop, daemon=True, name=f"heartbeat-{self.rank}")
        beat.start()
        try:
            self._loop()
        except Aborted:
            log.info("rank %d aborted by job server", self.rank)
        except Exception as exc:
            self.error = exc
            self.state = FAILED
            log.error("rank %d failed: %s", self.rank, exc)
            try:
                self._send(ControlKind.HEARTBEAT, self.iteration, state=FAILED,
                           error=traceback.format_exception_only(type(exc), exc)[-1].strip())
            except Exception:
                pass
        finally:
            self._stop.set()
            if self.task is not None:
                self.task.close()
        if self.state != FAILED:
            self.state = TERMINATED
            try:
                self._send(ControlKind.HEARTBEAT, self.iteration, state=TERMINATED)
            except Exception:
                pass

    def _loop(self) -> None:
        while True:
            msg = self.endpoint.recv_control(timeout=0.1)
            if msg is None:
                if self.endpoint.closed:
                    return
                continue
            if msg.kind == ControlKind.SHUTDOWN:
                return
            if msg.kind == ControlKind.JOB_SUBMIT:
                self._setup(msg)
            elif msg.kind == ControlKind.STAGE_DATA:
                log.debug("rank %d: dataset staged in %s", self.rank, msg.get("tier"))
            elif msg.kind == ControlKind.ITER_START:
                self._iteration(msg)

    def _setup(self, msg: ControlMessage) -> None:
        spec = JobSpec.from_mapping(msg.body)
        self.spec = spec
        peers = msg.get("peers")
        if peers and hasattr(self.endpoint, "connect_mesh"):
            self.endpoint.connect_mesh(peers.split(","))
        factory = self.task_factory or build_task
        self.task = factory(self.rank, spec, msg.body)
        if spec.collective == "gdraa":
            worker = GdraaWorker(self.endpoint, spec.n_workers, spec.length, spec.element_width,
                                 timeout=self.timeout, abort_check=self._abort_requested)
            self.collective = _GdraaAdapter(worker, self.timeout)
        else:
            if self.lockstep is None:
                raise Aborted(f"{spec.collective} needs an in-process lockstep group")
            self.collective = _LockstepAdapter(self.lockstep, self.rank, self._abort_requested)
        self._send(ControlKind.WORKER_READY, 0, state="Ready")

    def _iteration(self, msg: ControlMessage) -> None:
        i = msg.iteration
        self.iteration = i
        if i > 0:
            self.state = WAIT
            averaged, stats = self.collective.finish()
            self.state = UPDATE
            self.task.apply_update(averaged, i - 1)
            self._send(ControlKind.ITER_DONE, i - 1, digest=digest(averaged), **stats.as_dict())
            if msg.get_int("checkpoint", 0) and self.rank == 0:
                self.task.checkpoint(i)
                self._send(ControlKind.CHECKPOINT_DONE, i - 1, updates=i)
        if msg.get_int("final", 0):
            self.state = IDLE
            return
        if self.stall_at is not None and i >= self.stall_at:
            self._silent.set()
            while not self._abort_requested():
                self.endpoint.recv_control(timeout=0.05)
            raise Aborted(f"rank {self.rank} stalled at iteration {i}")
        self.state = TRAIN
        grad = self.task.compute_gradient(i)
        self.state = WAIT
        self.collective.start(grad)
        self.state = IDLE
        self._send(ControlKind.WORKER_READY, i + 1, state=IDLE)
