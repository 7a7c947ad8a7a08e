"""Three-tier data staging: archive store, job-server SSD, worker memory.

Nothing is copied; the plan only checks capacities and prices the copies.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import InvalidArgument, RejectedOversizedDataset

TB = 10**12
GB = 10**9


@dataclass(frozen=True)
class Tier:
    name: str
    capacity_bytes: float
    write_bandwidth: float   # bytes/second into this tier


@dataclass(frozen=True)
class StagingPlan:
    tiers: tuple[Tier, ...]
    dataset_bytes: int

    def __post_init__(self):
        if len(self.tiers) != 3:
            raise InvalidArgument("a staging plan has exactly three tiers: archive, staging, worker memory")
        if self.dataset_bytes < 0:
            raise InvalidArgument("dataset size must be >= 0")

    @property
    def archive(self) -> Tier:
        return self.tiers[0]

    @property
    def staging(self) -> Tier:
        return self.tiers[1]

    @property
    def worker_memory(self) -> Tier:
        return self.tiers[2]

    def validate(self) -> None:
        if self.dataset_bytes > self.archive.capacity_bytes:
            raise RejectedOversizedDataset(
                f"dataset of {self.dataset_bytes} B exceeds archive tier {self.archive.name}")
        if self.dataset_bytes > self.staging.capacity_bytes:
            raise RejectedOversizedDataset(
                f"dataset of {self.dataset_bytes} B does not fit staging tier "
                f"{self.staging.name} ({self.staging.capacity_bytes} B)")

    def staging_time(self) -> float:
        """Seconds to copy the dataset from the archive into the staging tier."""
        return self.dataset_bytes / self.staging.write_bandwidth

    def checkpoint_time(self, model_bytes: int) -> float:
        """Seconds for one checkpoint write into the staging tier."""
        return model_bytes / self.staging.write_bandwidth


def default_tiers() -> tuple[Tier, ...]:
    return (
        Tier("storage-node", 120 * TB, 1 * GB),
        Tier("job-server-ssd", 2 * TB, 1 * GB),
        Tier("worker-memory", 16 * 256 * GB, 6 * GB),
    )


def default_plan(dataset_bytes: int) -> StagingPlan:
    return StagingPlan(default_tiers(), dataset_bytes)
