"""Invariant checks on a single AllReduce call, shared by the CLI and tests."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..buffers import dtype_for_width, partition
from ..collectives import allreduce

ORACLE_TOL = 1e-6


def mean_oracle(grads) -> np.ndarray:
    """Elementwise mean computed directly in float64."""
    return np.mean(np.stack([np.asarray(g, dtype=np.float64) for g in grads]), axis=0)


def relative_error(out: np.ndarray, ref: np.ndarray) -> float:
    """Max-norm relative error, ``|out - ref|_inf / |ref|_inf`` (absolute if ref is 0)."""
    out = np.asarray(out, dtype=np.float64)
    scale = float(np.max(np.abs(ref))) if ref.size else 0.0
    err = float(np.max(np.abs(out - ref))) if ref.size else 0.0
    return err / scale if scale > 0 else err


def seeded_grads(n_workers: int, length: int, seed: int = 0, element_width: int = 4) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, n_workers, length])
    dtype = dtype_for_width(element_width)
    return [rng.standard_normal(length).astype(dtype) for _ in range(n_workers)]


def own_block_length(length: int, n_workers: int, rank: int) -> int:
    return partition(length, n_workers)[rank].length


def expected_phase_bytes(length: int, n_workers: int, rank: int, element_width: int = 4) -> tuple[int, int]:
    """GDRAA wire bytes for worker ``rank``: ``(foreign, own)``.

    ``foreign`` is what the worker sends during reduce-scatter and receives
    during broadcast: every block but its own. ``own`` is what it receives
    during reduce-scatter and sends during broadcast: its own block from or to
    each of the other workers. Both equal ``width * L * (1 - 1/N)`` when N
    divides L.
    """
    own = own_block_length(length, n_workers, rank)
    return element_width * (length - own), element_width * (n_workers - 1) * own


@dataclass
class CheckResult:
    collective: str
    n_workers: int
    length: int
    rel_error: float
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_allreduce(grads, collective: str = "gdraa", element_width: int = 4, **kwargs) -> CheckResult:
    """Run one collective and check it against the mean oracle.

    GDRAA runs are also checked for their per-worker byte, message,
    aggregation and synchronization counts.
    """
    n, length = len(grads), len(grads[0])
    outputs, stats = allreduce(grads, collective, element_width, **kwargs)
    ref = mean_oracle(grads)
    err = max(relative_error(o, ref) for o in outputs)
    result = CheckResult(collective, n, length, err)
    if err > ORACLE_TOL:
        result.violations.append(f"relative error {err:.3g} exceeds {ORACLE_TOL:g}")
    if any(not np.array_equal(outputs[0], o) for o in outputs[1:]):
        result.violations.append("workers disagree on the result")
    if collective != "gdraa":
        return result
    for rank, s in enumerate(stats):
        own = own_block_length(length, n, rank)
        foreign, mine = expected_phase_bytes(length, n, rank, element_width)
        measured = (s.rs_bytes_sent, s.bc_bytes_received, s.rs_bytes_received, s.bc_bytes_sent)
        if measured != (foreign, foreign, mine, mine):
            result.violations.append(f"rank {rank}: phase bytes {measured} != {(foreign, foreign, mine, mine)}")
        if s.agg_adds + s.agg_muls != n * own:
            result.violations.append(f"rank {rank}: adds+muls {s.agg_adds + s.agg_muls} != {n * own}")
        if n >= 2 and s.sync_waits != 2:
            result.violations.append(f"rank {rank}: {s.sync_waits} synchronizations")
        if s.data_msgs_sent != 2 * (n - 1):
            result.violations.append(f"rank {rank}: {s.data_msgs_sent} logical messages != {2 * (n - 1)}")
    return result
