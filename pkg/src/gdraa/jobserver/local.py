"""Run a whole job on one host: worker threads over loopback, or worker
processes over sockets."""
from __future__ import annotations

import math
import subprocess
import sys
import threading
from dataclasses import dataclass

from ..collectives.baselines import LockstepGroup
from ..collectives.gdraa import DEFAULT_TIMEOUT
from ..transport.loopback import LoopbackFabric
from ..transport.sockets import SocketJobServerEndpoint
from .agent import WorkerAgent
from .jobspec import JobSpec
from .server import JobServer, RunReport
from .staging import StagingPlan
from .tasks import TaskFactory


@dataclass
class LocalRun:
    report: RunReport
    server: JobServer
    agents: list[WorkerAgent]
    fabric: LoopbackFabric | None = None


def run_loopback_job(spec: JobSpec, task_factory: TaskFactory | None = None,
                     staging: StagingPlan | None = None, heartbeat_period: float = 1.0,
                     missed_beats: int = 3, timeout: float = DEFAULT_TIMEOUT,
                     stall: dict[int, int] | None = None, alpha: float = 0.0, beta: float = math.inf,
                     seed: int = 0, cluster_size: int | None = None) -> LocalRun:
    """Job server plus one thread per worker, all sharing a loopback fabric.

    ``stall`` maps rank -> iteration at which that worker goes silent.
    """
    n = spec.n_workers
    fabric = LoopbackFabric(n, alpha=alpha, beta=beta, seed=seed)
    server = JobServer(fabric.job_server, cluster_size=cluster_size or n,
                       heartbeat_period=heartbeat_period, missed_beats=missed_beats)
    lockstep = LockstepGroup(n, spec.collective, spec.element_width) if spec.collective != "gdraa" else None
    stall = stall or {}
    agents = [WorkerAgent(fabric.workers[r], heartbeat_period=heartbeat_period, timeout=timeout,
                          task_factory=task_factory, lockstep=lockstep, stall_at=stall.get(r))
              for r in range(n)]
    threads = [threading.Thread(target=a.run, name=f"worker-{a.rank}", daemon=True) for a in agents]
    for t in threads:
        t.start()
    try:
        job_id = server.submit_job(spec, staging)
        report = server.orchestrate(job_id)
    finally:
        for t in threads:
            t.join(timeout=max(10.0, 3 * heartbeat_period * missed_beats))
    return LocalRun(report, server, agents, fabric)


def run_socket_job(spec: JobSpec, staging: StagingPlan | None = None, heartbeat_period: float = 1.0,
                   missed_beats: int = 3, timeout: float = DEFAULT_TIMEOUT) -> LocalRun:
    """Job server in this process, one spawned process per worker, TCP in between.

    Tasks are built by name inside the workers; set ``spec.output_dir`` to get
    the synthetic task's averaged gradients back as ``rank<k>.npy`` files.
    """
    if spec.collective != "gdraa":
        raise ValueError("the socket transport runs GDRAA only")
    n = spec.n_workers
    endpoint = SocketJobServerEndpoint()
    procs = [subprocess.Popen([sys.executable, "-m", "gdraa.jobserver.worker_process",
                               "--rank", str(r), "--server", endpoint.address,
                               "--heartbeat", repr(heartbeat_period), "--timeout", repr(timeout)])
             for r in range(n)]
    server = JobServer(endpoint, cluster_size=n, heartbeat_period=heartbeat_period, missed_beats=missed_beats)
    try:
        endpoint.accept_workers(n)
        job_id = server.submit_job(spec, staging)
        report = server.orchestrate(job_id)
    finally:
        for p in procs:
            try:
                p.wait(timeout=30)
            except subprocess.TimeoutExpired:
                p.kill()
        endpoint.close()
    return LocalRun(report, server, [])
