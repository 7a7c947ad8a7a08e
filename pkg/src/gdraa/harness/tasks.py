"""Builds SSGD tasks from a job description, for worker processes."""
from __future__ import annotations

from ..jobserver.jobspec import JobSpec
from .problems import SyntheticProblem
from .ssgd import SsgdConfig, SsgdTask


def build_task(rank: int, spec: JobSpec, body: dict) -> SsgdTask:
    problem = SyntheticProblem(spec.task, spec.length, spec.dataset_samples, spec.seed,
                               noise=float(body.get("noise", 0.0)))
    return SsgdTask(rank, spec.n_workers, problem, SsgdConfig.from_jobspec(spec), spec.seed,
                    spec.output_dir or None)
