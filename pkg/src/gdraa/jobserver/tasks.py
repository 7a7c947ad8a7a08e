"""Training protocols a worker agent can run.

A task turns the job description into gradients and consumes averaged
gradients. Tasks are looked up by name so that worker processes can build
them from a JobSubmit body alone.
"""
from __future__ import annotations

import hashlib
import importlib
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from ..buffers import dtype_for_width
from ..errors import InvalidArgument
from .jobspec import JobSpec


class TrainingTask(Protocol):
    def compute_gradient(self, iteration: int) -> np.ndarray: ...

    def apply_update(self, averaged: np.ndarray, iteration: int) -> None: ...

    def checkpoint(self, updates: int) -> None: ...

    def close(self) -> None: ...


def digest(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


class SyntheticGradientTask:
    """Seeded random gradients; keeps every averaged result it receives."""

    def __init__(self, rank: int, spec: JobSpec, out_dir: str | None = None):
        self.rank = rank
        self.spec = spec
        self.dtype = dtype_for_width(spec.element_width)
        self.out_dir = Path(out_dir) if out_dir else None
        self.results: list[np.ndarray] = []
        self.checkpoints: list[int] = []

    def compute_gradient(self, iteration: int) -> np.ndarray:
        rng = np.random.default_rng([self.spec.seed, self.rank, iteration])
        return rng.standard_normal(self.spec.length).astype(self.dtype)

    def apply_update(self, averaged: np.ndarray, iteration: int) -> None:
        self.results.append(averaged.copy())

    def checkpoint(self, updates: int) -> None:
        self.checkpoints.append(updates)

    def close(self) -> None:
        if self.out_dir is not None and self.results:
            np.save(self.out_dir / f"rank{self.rank}.npy", np.stack(self.results))


TaskFactory = Callable[[int, JobSpec, dict], TrainingTask]

_REGISTRY: dict[str, str | TaskFactory] = {
    "synthetic": lambda rank, spec, body: SyntheticGradientTask(rank, spec, spec.output_dir or None),
    "least-squares": "gdraa.harness.tasks:build_task",
    "logistic": "gdraa.harness.tasks:build_task",
}


def register_task(name: str, factory: TaskFactory) -> None:
    _REGISTRY[name] = factory


def build_task(rank: int, spec: JobSpec, body: dict) -> TrainingTask:
    try:
        factory = _REGISTRY[spec.task]
    except KeyError:
        raise InvalidArgument(f"unknown task {spec.task!r}") from None
    if isinstance(factory, str):
        module, _, attr = factory.partition(":")
        factory = getattr(importlib.import_module(module), attr)
    return factory(rank, spec, body)
