"""Comparison collectives: the two-pass ring and a star parameter server.

Both run in lockstep over the whole group's buffers inside one process and
keep the same per-worker counters as GDRAA, so costs can be compared directly.
"""
from __future__ import annotations

import threading
from typing import Callable

import numpy as np

from ..buffers import dtype_for_width, partition
from ..errors import Aborted, InvalidArgument, ShapeMismatch
from .stats import IterationStats


def _as_inputs(grads, element_width: int) -> list[np.ndarray]:
    if len(grads) < 1:
        raise InvalidArgument("need at least one gradient")
    dtype = dtype_for_width(element_width)
    arrs = [np.asarray(g, dtype=dtype) for g in grads]
    length = arrs[0].size
    for a in arrs:
        if a.ndim != 1 or a.size != length:
            raise ShapeMismatch("all workers must contribute the same gradient length")
        if not np.isfinite(a).all():
            raise InvalidArgument("gradient contains NaN or Inf")
    return arrs


def ring_allreduce(grads, element_width: int = 4):
    """Reduce-scatter then allgather around the ring 0 -> 1 -> ... -> N-1 -> 0.

    Returns ``(outputs, stats)``. Each worker performs ``2(N-1)`` steps.
    """
    arrs = _as_inputs(grads, element_width)
    n = len(arrs)
    width = element_width
    chunks = partition(arrs[0].size, n)
    work = [a.copy() for a in arrs]
    stats = [IterationStats(comm_steps=2 * (n - 1)) for _ in range(n)]

    def send(src: int, idx: int, phase: str) -> np.ndarray:
        c = chunks[idx]
        payload = work[src][c.offset:c.stop].copy()
        st = stats[src]
        st.data_msgs_sent += 1
        if c.length:
            st.wire_msgs_sent += 1
        st.bytes_sent += c.length * width
        dst = stats[(src + 1) % n]
        dst.bytes_received += c.length * width
        if phase == "rs":
            st.rs_bytes_sent += c.length * width
            dst.rs_bytes_received += c.length * width
        else:
            st.bc_bytes_sent += c.length * width
            dst.bc_bytes_received += c.length * width
        dst.arrivals += 1
        dst.sync_waits += 1
        return payload

    for step in range(n - 1):
        # All sends of a step read pre-step values, as they would on real links.
        payloads = [(m, (m - step) % n) for m in range(n)]
        sent = [(m, idx, send(m, idx, "rs")) for m, idx in payloads]
        for m, idx, payload in sent:
            dst = (m + 1) % n
            c = chunks[idx]
            work[dst][c.offset:c.stop] += payload
            stats[dst].agg_adds += c.length
    for m in range(n):
        c = chunks[(m + 1) % n]
        work[m][c.offset:c.stop] /= n
        stats[m].agg_muls += c.length
    for step in range(n - 1):
        sent = [(m, (m + 1 - step) % n) for m in range(n)]
        sent = [(m, idx, send(m, idx, "bc")) for m, idx in sent]
        for m, idx, payload in sent:
            c = chunks[idx]
            work[(m + 1) % n][c.offset:c.stop] = payload
    return work, stats


def param_server_allreduce(grads, element_width: int = 4):
    """Every worker ships its full gradient to a dedicated server node and back.

    Returns ``(outputs, worker_stats, server_stats)``.
    """
    arrs = _as_inputs(grads, element_width)
    n = len(arrs)
    nbytes = arrs[0].size * element_width
    server = IterationStats(comm_steps=2)
    acc = arrs[0].astype(np.float64, copy=True)
    for a in arrs[1:]:
        acc += a
    acc /= n
    mean = acc.astype(arrs[0].dtype)
    server.agg_adds = (n - 1) * mean.size
    server.agg_muls = mean.size
    stats = []
    for _ in range(n):
        st = IterationStats(comm_steps=2, data_msgs_sent=1, wire_msgs_sent=1, bytes_sent=nbytes,
                            rs_bytes_sent=nbytes, bytes_received=nbytes, bc_bytes_received=nbytes, arrivals=1, sync_waits=1)
        stats.append(st)
        server.bytes_received += nbytes
        server.rs_bytes_received += nbytes
        server.arrivals += 1
        server.bytes_sent += nbytes
        server.bc_bytes_sent += nbytes
        server.data_msgs_sent += 1
        server.wire_msgs_sent += 1
    server.sync_waits = 1
    return [mean.copy() for _ in range(n)], stats, server


class LockstepGroup:
    """Runs a baseline collective for N worker threads that each hold one input.

    The last arrival computes the collective for everyone; results are kept per
    round so a fast worker entering the next round cannot clobber them.
    """

    def __init__(self, n_workers: int, collective: str, element_width: int = 4):
        if collective not in ("ring", "ps"):
            raise InvalidArgument(f"lockstep group supports ring and ps, not {collective!r}")
        self.n_workers = n_workers
        self.collective = collective
        self.element_width = element_width
        self._cond = threading.Condition()
        self._round = 0
        self._inputs: dict[int, np.ndarray] = {}
        self._results: dict[int, tuple[list, list]] = {}
        self._pending: dict[int, int] = {}

    def allreduce(self, rank: int, grad, abort_check: Callable[[], bool] | None = None,
                  poll: float = 0.05):
        with self._cond:
            rnd = self._round
            self._inputs[rank] = np.asarray(grad)
            if len(self._inputs) == self.n_workers:
                grads = [self._inputs[r] for r in range(self.n_workers)]
                if self.collective == "ring":
                    outs, stats = ring_allreduce(grads, self.element_width)
                else:
                    outs, stats, _server = param_server_allreduce(grads, self.element_width)
                self._results[rnd] = (outs, stats)
                self._pending[rnd] = self.n_workers
                self._inputs = {}
                self._round += 1
                self._cond.notify_all()
            while rnd not in self._results:
                if abort_check is not None and abort_check():
                    raise Aborted(f"rank {rank} aborted in {self.collective} allreduce")
                self._cond.wait(poll)
            outs, stats = self._results[rnd]
            self._pending[rnd] -= 1
            if self._pending[rnd] == 0:
                del self._results[rnd], self._pending[rnd]
            return outs[rank], stats[rank]
