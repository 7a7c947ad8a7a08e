"""Synchronous SGD: a serial large-batch oracle and the distributed run it is
checked against.

Both produce a trajectory whose row ``k`` holds the parameters after ``k``
updates. In the distributed run the averaged gradient of iteration ``k`` is
only applied when iteration ``k + 1`` starts (nothing is applied at iteration
0), so update ``k`` lands one iteration late in wall-clock terms but still
uses the same gradient as the serial step ``k``. Rows line up one to one.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DivergenceDetected, InvalidArgument, InvariantViolation
from ..jobserver.jobspec import JobSpec
from ..jobserver.local import run_loopback_job
from ..jobserver.server import RunReport
from .problems import SyntheticProblem, batch_indices, shard

SHARD_MEAN_TOL = 1e-7
TRAINING_HEADER = ("iter", "loss", "lr", "bytes_sent")


@dataclass(frozen=True)
class SsgdConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.001
    policy: str = "poly"
    power: float = 1.0
    max_iter: int = 100
    batch: int = 8                      # per worker

    def __post_init__(self):
        if not self.lr0 > 0:
            raise InvalidArgument("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidArgument("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidArgument("weight_decay must be non-negative")
        if self.policy not in ("constant", "poly"):
            raise InvalidArgument(f"unknown lr policy {self.policy!r}")
        if self.max_iter < 1 or self.batch < 1:
            raise InvalidArgument("max_iter and batch must be >= 1")

    @classmethod
    def from_jobspec(cls, spec: JobSpec) -> SsgdConfig:
        return cls(spec.learning_rate, spec.momentum, spec.weight_decay, spec.lr_policy, spec.lr_power,
                   spec.max_iterations, spec.batch)


def learning_rate(config: SsgdConfig, iteration: int) -> float:
    if config.policy == "constant":
        return config.lr0
    return config.lr0 * (1.0 - iteration / config.max_iter) ** config.power


def sgd_step(w: np.ndarray, grad: np.ndarray, config: SsgdConfig, iteration: int,
             velocity: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """One momentum step; returns ``(w', v')``.

    ``v' = momentum * v + (grad + weight_decay * w)`` and
    ``w' = w - lr(iteration) * v'``. A missing velocity starts at zero.
    """
    v = np.zeros_like(w) if velocity is None else velocity
    v = config.momentum * v + (grad + config.weight_decay * w)
    return w - learning_rate(config, iteration) * v, v


@dataclass
class TrainResult:
    trajectory: np.ndarray                      # (max_iter + 1, d)
    losses: list[float]                         # after each update
    lrs: list[float]
    bytes_sent: list[int]
    optimal_loss: float
    report: RunReport | None = None
    averaged: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def final(self) -> np.ndarray:
        return self.trajectory[-1]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    @property
    def loss_gap(self) -> float:
        return self.final_loss - self.optimal_loss

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRAINING_HEADER)
            for k, (loss, lr, nbytes) in enumerate(zip(self.losses, self.lrs, self.bytes_sent)):
                writer.writerow([k, repr(loss), repr(lr), nbytes])


def _check_loss(loss: float, iteration: int) -> None:
    if not math.isfinite(loss):
        raise DivergenceDetected(f"loss is {loss} after iteration {iteration}")


def train_serial(problem: SyntheticProblem, config: SsgdConfig, global_batch: int,
                 seed: int = 0, w0: np.ndarray | None = None) -> TrainResult:
    """Single-process SGD with batch ``global_batch``; the reference run."""
    w = np.zeros(problem.dimension) if w0 is None else np.array(w0, dtype=np.float64)
    v = np.zeros_like(w)
    trajectory, losses, lrs = [w.copy()], [], []
    for k in range(config.max_iter):
        idx = batch_indices(problem.samples, global_batch, k, seed)
        w, v = sgd_step(w, problem.gradient(w, idx), config, k, v)
        loss = problem.loss(w, weight_decay=config.weight_decay)
        _check_loss(loss, k)
        trajectory.append(w.copy())
        losses.append(loss)
        lrs.append(learning_rate(config, k))
    return TrainResult(np.stack(trajectory), losses, lrs, [0] * config.max_iter,
                       problem.optimal_loss(config.weight_decay))


class SsgdTask:
    """One worker's share of a distributed SSGD run.

    Every worker keeps its own copy of the parameters; they stay identical
    because every worker applies the same averaged gradient.
    """

    def __init__(self, rank: int, n_workers: int, problem: SyntheticProblem, config: SsgdConfig,
                 seed: int = 0, out_dir: str | None = None):
        self.rank = rank
        self.n_workers = n_workers
        self.problem = problem
        self.config = config
        self.seed = seed
        self.out_dir = Path(out_dir) if out_dir else None
        self.w = np.zeros(problem.dimension)
        self.v = np.zeros_like(self.w)
        self.trajectory = [self.w.copy()]
        self.losses: list[float] = []
        self.averaged: list[np.ndarray] = []
        self.snapshots: dict[int, np.ndarray] = {}

    def indices(self, iteration: int) -> np.ndarray:
        idx = batch_indices(self.problem.samples, self.n_workers * self.config.batch, iteration, self.seed)
        return shard(idx, self.rank, self.n_workers)

    def compute_gradient(self, iteration: int) -> np.ndarray:
        return self.problem.gradient(self.w, self.indices(iteration))

    def apply_update(self, averaged: np.ndarray, iteration: int) -> None:
        avg = np.asarray(averaged, dtype=np.float64)
        self.averaged.append(avg.copy())
        self.w, self.v = sgd_step(self.w, avg, self.config, iteration, self.v)
        loss = self.problem.loss(self.w, weight_decay=self.config.weight_decay)
        _check_loss(loss, iteration)
        self.trajectory.append(self.w.copy())
        self.losses.append(loss)

    def checkpoint(self, updates: int) -> None:
        self.snapshots[updates] = self.w.copy()
        if self.out_dir is not None:
            np.save(self.out_dir / f"checkpoint{updates}.npy", self.w)

    def close(self) -> None:
        if self.out_dir is not None and len(self.trajectory) > 1:
            np.save(self.out_dir / f"rank{self.rank}.npy", np.stack(self.trajectory))


def jobspec_for(problem: SyntheticProblem, config: SsgdConfig, n_workers: int, collective: str = "gdraa",
                seed: int = 0, **overrides) -> JobSpec:
    return JobSpec(model_id=f"{problem.kind}-{problem.dimension}", dataset_id=f"synthetic-{problem.seed}",
                   n_workers=n_workers, batch=config.batch, max_iterations=config.max_iter,
                   learning_rate=config.lr0, momentum=config.momentum, weight_decay=config.weight_decay,
                   lr_policy=config.policy, lr_power=config.power, dataset_samples=problem.samples,
                   length=problem.dimension, element_width=8, seed=seed, collective=collective,
                   task=problem.kind, **overrides)


def train_distributed(problem: SyntheticProblem, config: SsgdConfig, n_workers: int,
                      collective: str = "gdraa", seed: int = 0, **run_kwargs) -> TrainResult:
    """Train through the job server with one worker thread per rank.

    Checks, per iteration, that the averaged shard gradients equal the
    full-batch gradient at the same point, and that all ranks hold the same
    parameters at the end.
    """
    spec = jobspec_for(problem, config, n_workers, collective, seed)
    tasks: dict[int, SsgdTask] = {}

    def factory(rank, _spec, _body):
        tasks[rank] = SsgdTask(rank, n_workers, problem, config, seed)
        return tasks[rank]

    run = run_loopback_job(spec, task_factory=factory, **run_kwargs)
    report = run.report
    if not report.completed:
        if "DivergenceDetected" in report.error:
            raise DivergenceDetected(report.error)
        raise InvariantViolation(f"distributed run {report.status}: rank {report.straggler}: {report.error}")

    lead = tasks[0]
    trajectory = np.stack(lead.trajectory)
    for rank, task in tasks.items():
        if not np.array_equal(np.stack(task.trajectory), trajectory):
            raise InvariantViolation(f"rank {rank} parameters diverged from rank 0")
    global_batch = n_workers * config.batch
    for k, avg in enumerate(lead.averaged):
        full = problem.gradient(trajectory[k], batch_indices(problem.samples, global_batch, k, seed))
        gap = float(np.max(np.abs(avg - full)))
        if gap > SHARD_MEAN_TOL * max(1.0, float(np.max(np.abs(full)))):
            raise InvariantViolation(f"iteration {k}: averaged gradient off the full-batch gradient by {gap:g}")

    bytes_sent = [r.stats.bytes_sent for r in sorted(report.records_for(0), key=lambda r: r.iteration)]
    lrs = [learning_rate(config, k) for k in range(config.max_iter)]
    return TrainResult(trajectory, lead.losses, lrs, bytes_sent, problem.optimal_loss(config.weight_decay),
                       report, lead.averaged)
