from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

from .costmodel import ClusterSpec, LinearCompute, simulate_iteration

SCALING_HEADER = ("n_workers", "sim_time_s", "speedup", "collective")


@dataclass(frozen=True)
class ScalingRow:
    n_workers: int
    sim_time_s: float
    speedup: float
    collective: str


def iterations_for(n_workers: int, total_iterations: int, weak: bool = True) -> int:
    """Iterations needed at N workers to cover the same samples as the N=1 run."""
    return math.ceil(total_iterations / n_workers) if weak else total_iterations


def scaling_run(spec: ClusterSpec, worker_counts, total_iterations: int, collective: str = "gdraa",
                weak: bool = True) -> list[ScalingRow]:
    """Simulated time to train for ``total_iterations`` single-worker iterations.

    Weak scaling keeps ``spec.batch`` per worker, so N workers need 1/N as many
    iterations. Strong scaling keeps the global batch and splits it across N.
    Speedup is relative to the N=1 run, which is always simulated.
    """
    counts = sorted(set(worker_counts) | {1})
    times = {}
    for n in counts:
        batch = spec.batch if weak else spec.batch / n
        timeline = simulate_iteration(replace(spec, n_workers=n, batch=batch), collective)
        times[n] = iterations_for(n, total_iterations, weak) * timeline.makespan
    base = times[1]
    wanted = set(worker_counts)
    return [ScalingRow(n, times[n], base / times[n] if times[n] > 0 else math.inf, collective)
            for n in counts if n in wanted]


def calibrated_compute(target_seconds: float, total_iterations: int, batch: float) -> LinearCompute:
    """Linear compute model whose single-worker run takes ``target_seconds``."""
    return LinearCompute(per_sample=target_seconds / total_iterations / batch)


def write_scaling_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCALING_HEADER)
        for r in rows:
            writer.writerow([r.n_workers, repr(r.sim_time_s), repr(r.speedup), r.collective])
