"""GDRAA AllReduce: reduce-scatter into per-sender slots, per-block mean, broadcast.

Each worker ``m`` owns block ``m`` of the gradient. It writes its block ``j``
into worker ``j``'s receive slot ``m``, waits until all N slots for its own
block are filled (the first wait in time), averages them, and writes the
result into block ``m`` of every peer's send buffer. The second wait completes
once every block of the local send buffer holds averaged data. A training loop
can defer that second wait until just before the next model update.
"""
from __future__ import annotations

import enum
import math
import time
from typing import Callable

import numpy as np

from ..buffers import GradientBuffer, RegisteredRegion
from ..errors import Aborted, InvalidArgument, PeerTimeout, ShapeMismatch
from ..transport.base import Endpoint
from ..transport.loopback import LoopbackFabric
from ..transport.messages import CompletionEvent, DataMessage, Phase
from .stats import IterationStats

DEFAULT_TIMEOUT = 30.0
_POLL_SLICE = 0.05


class WorkerPhase(enum.Enum):
    TRAIN = "Train"
    REDUCE_SCATTER_WAIT = "ReduceScatterWait"
    AGGREGATE = "Aggregate"
    BROADCAST_WAIT = "BroadcastWait"
    UPDATE = "Update"


def aggregate_block(slots, n_workers: int, dtype=None):
    """Mean of the received copies of one block, summed in slot order.

    Returns ``(block, adds, muls)``. Summation runs in float64 and the result
    is divided by ``n_workers`` once, then cast back to the element dtype.
    """
    if len(slots) != n_workers:
        raise InvalidArgument(f"expected {n_workers} slots, got {len(slots)}")
    first = np.asarray(slots[0])
    dtype = dtype or first.dtype
    length = first.size
    acc = first.astype(np.float64, copy=True)
    for s in slots[1:]:
        s = np.asarray(s)
        if s.size != length:
            raise ShapeMismatch(f"slot holds {s.size} elements, expected {length}")
        acc += s
    acc /= n_workers
    return acc.astype(dtype, copy=False), (n_workers - 1) * length, length


def _rotation(rank: int, n: int) -> list[int]:
    # Peers in rank+1, rank+2, ... order so no receiver is hit by everyone at once.
    return [(rank + k) % n for k in range(1, n)]


class GdraaWorker:
    """One worker's GDRAA state machine bound to a transport endpoint.

    The machine is non-blocking: :meth:`start` issues the reduce-scatter
    writes, :meth:`deliver` records completions and :meth:`progress` advances
    through aggregation and broadcast whenever a wait is satisfied. The
    blocking helpers (:meth:`wait_reduce_scatter`, :meth:`finish`,
    :meth:`allreduce`) poll the endpoint until the next phase is reached.
    """

    def __init__(self, endpoint: Endpoint, n_workers: int, length: int, element_width: int = 4,
                 timeout: float = DEFAULT_TIMEOUT, abort_check: Callable[[], bool] | None = None):
        self.endpoint = endpoint
        self.rank = endpoint.rank
        self.n_workers = n_workers
        self.region = RegisteredRegion(length, n_workers, element_width)
        endpoint.attach(self.region)
        self.blocks = self.region.blocks
        self.timeout = timeout
        self.abort_check = abort_check
        self.iteration = -1
        self.phase = WorkerPhase.TRAIN
        self.stats = IterationStats()
        # (iteration, phase) -> {sender: (timestamp, nbytes)}; later iterations may arrive early.
        self._arrivals: dict[tuple[int, Phase], dict[int, tuple[float, int]]] = {}
        self._started_at = 0.0

    # -- bookkeeping ---------------------------------------------------------

    def _bitmap(self, iteration: int, phase: Phase) -> dict[int, tuple[float, int]]:
        return self._arrivals.setdefault((iteration, phase), {})

    def _arrive(self, iteration: int, phase: Phase, sender: int, timestamp: float, nbytes: int = 0) -> None:
        bitmap = self._bitmap(iteration, phase)
        if sender in bitmap:
            raise InvalidArgument(f"duplicate {phase.name} arrival from {sender} in iteration {iteration}")
        bitmap[sender] = (timestamp, nbytes)

    def missing(self, phase: Phase) -> list[int]:
        got = self._arrivals.get((self.iteration, phase), {})
        return [k for k in range(self.n_workers) if k not in got]

    def _release(self, phase: Phase) -> None:
        bitmap = self._arrivals.pop((self.iteration, phase))
        self.stats.sync_waits += 1
        self.stats.arrivals += len(bitmap)
        received = sum(nbytes for _ts, nbytes in bitmap.values())
        self.stats.bytes_received += received
        if phase == Phase.REDUCE_SCATTER:
            self.stats.rs_bytes_received += received
        else:
            self.stats.bc_bytes_received += received
        self.endpoint.advance_clock(max(ts for ts, _n in bitmap.values()))

    def _send(self, peer: int, phase: Phase, block_index: int, payload: np.ndarray) -> None:
        receipt = self.endpoint.send_block(peer, DataMessage(self.iteration, phase, self.rank, block_index, payload))
        self.stats.data_msgs_sent += 1
        if not receipt.suppressed:
            self.stats.wire_msgs_sent += 1
        self.stats.bytes_sent += receipt.nbytes
        if phase == Phase.REDUCE_SCATTER:
            self.stats.rs_bytes_sent += receipt.nbytes
        else:
            self.stats.bc_bytes_sent += receipt.nbytes

    # -- phases ----------------------------------------------------------------

    def start(self, grad) -> None:
        """Load ``grad`` into the send buffer and run the reduce-scatter writes."""
        if self.phase not in (WorkerPhase.TRAIN, WorkerPhase.UPDATE):
            raise InvalidArgument(f"cannot start a collective while in {self.phase.value}")
        buf = grad if isinstance(grad, GradientBuffer) else GradientBuffer(
            np.asarray(grad, dtype=self.region.dtype), self.region.element_width, copy=False)
        if len(buf) != self.region.length:
            raise ShapeMismatch(f"gradient has {len(buf)} elements, job expects {self.region.length}")
        buf.check_finite()
        self.iteration += 1
        self.stats = IterationStats(comm_steps=2)
        self._started_at = self.endpoint.clock
        self.region.load(buf)
        now = self.endpoint.clock
        # Empty blocks are never sent, so their arrivals are booked up front.
        for k, blk in enumerate(self.blocks):
            if blk.length == 0 and k != self.rank:
                self._arrive(self.iteration, Phase.BROADCAST, k, now)
        if self.blocks[self.rank].length == 0:
            for k in range(self.n_workers):
                if k != self.rank:
                    self._arrive(self.iteration, Phase.REDUCE_SCATTER, k, now)
        self.phase = WorkerPhase.REDUCE_SCATTER_WAIT
        self.reduce_scatter_phase()

    def reduce_scatter_phase(self) -> None:
        m = self.rank
        for j in _rotation(m, self.n_workers):
            self._send(j, Phase.REDUCE_SCATTER, j, self.region.send_block(j))
        own = self.region.send_block(m)
        self.region.receive_slot(m, own.size)[:] = own
        self._arrive(self.iteration, Phase.REDUCE_SCATTER, m, self.endpoint.clock)

    def aggregate(self) -> np.ndarray:
        m = self.rank
        length = self.blocks[m].length
        slots = [self.region.receive_slot(k, length) for k in range(self.n_workers)]
        block, adds, muls = aggregate_block(slots, self.n_workers, self.region.dtype)
        self.stats.agg_adds += adds
        self.stats.agg_muls += muls
        return block

    def broadcast_phase(self, ag: np.ndarray) -> None:
        m = self.rank
        self.region.send_block(m)[:] = ag
        self._arrive(self.iteration, Phase.BROADCAST, m, self.endpoint.clock)
        for j in _rotation(m, self.n_workers):
            self._send(j, Phase.BROADCAST, m, self.region.send_block(m))

    def deliver(self, events: list[CompletionEvent]) -> None:
        for ev in events:
            if ev.iteration < self.iteration or (ev.iteration == self.iteration and self._is_past(ev.phase)):
                raise InvalidArgument(f"stale completion {ev} at rank {self.rank}")
            self._arrive(ev.iteration, ev.phase, ev.sender, ev.timestamp, ev.nbytes)

    def _is_past(self, phase: Phase) -> bool:
        if phase == Phase.REDUCE_SCATTER:
            return self.phase in (WorkerPhase.BROADCAST_WAIT, WorkerPhase.UPDATE)
        return self.phase == WorkerPhase.UPDATE

    def progress(self) -> bool:
        """Advance past any satisfied wait. Returns True if the phase changed."""
        n = self.n_workers
        if self.phase == WorkerPhase.REDUCE_SCATTER_WAIT:
            if len(self._arrivals.get((self.iteration, Phase.REDUCE_SCATTER), ())) < n:
                return False
            self._release(Phase.REDUCE_SCATTER)
            self.phase = WorkerPhase.AGGREGATE
            ag = self.aggregate()
            self.broadcast_phase(ag)
            self.phase = WorkerPhase.BROADCAST_WAIT
            self.progress()
            return True
        if self.phase == WorkerPhase.BROADCAST_WAIT:
            if len(self._arrivals.get((self.iteration, Phase.BROADCAST), ())) < n:
                return False
            self._release(Phase.BROADCAST)
            self.phase = WorkerPhase.UPDATE
            self.stats.sim_time = self.endpoint.clock - self._started_at
            return True
        return False

    # -- blocking helpers --------------------------------------------------------

    def _wait_until(self, target: WorkerPhase, timeout: float | None) -> None:
        timeout = self.timeout if timeout is None else timeout
        deadline = time.monotonic() + timeout
        self.progress()
        while self.phase not in _AT_OR_AFTER[target]:
            if self.abort_check is not None and self.abort_check():
                raise Aborted(f"rank {self.rank} aborted in {self.phase.value}")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                waiting = (Phase.REDUCE_SCATTER if self.phase == WorkerPhase.REDUCE_SCATTER_WAIT
                           else Phase.BROADCAST)
                raise PeerTimeout(self.phase.value, self.missing(waiting))
            self.deliver(self.endpoint.poll_completions(min(_POLL_SLICE, remaining)))
            self.progress()

    def wait_reduce_scatter(self, timeout: float | None = None) -> None:
        """Block until this worker's block is averaged and broadcast."""
        self._wait_until(WorkerPhase.BROADCAST_WAIT, timeout)

    def finish(self, timeout: float | None = None) -> tuple[np.ndarray, IterationStats]:
        """Block until every block of the send buffer is averaged; return a copy."""
        self._wait_until(WorkerPhase.UPDATE, timeout)
        return self.result()

    def result(self) -> tuple[np.ndarray, IterationStats]:
        if self.phase != WorkerPhase.UPDATE:
            raise InvalidArgument(f"no result while in {self.phase.value}")
        return self.region.send_buffer.elements.copy(), self.stats

    def allreduce(self, grad, timeout: float | None = None) -> tuple[np.ndarray, IterationStats]:
        self.start(grad)
        return self.finish(timeout)


_AT_OR_AFTER = {
    WorkerPhase.BROADCAST_WAIT: {WorkerPhase.BROADCAST_WAIT, WorkerPhase.UPDATE},
    WorkerPhase.UPDATE: {WorkerPhase.UPDATE},
}


def gdraa_allreduce(grads, element_width: int = 4, alpha: float = 0.0, beta: float = math.inf,
                    seed: int = 0, fabric: LoopbackFabric | None = None):
    """Run one GDRAA AllReduce over a loopback fabric, single-threaded.

    Workers are stepped round-robin in rank order, so the run is deterministic.
    Returns ``(outputs, stats, fabric)``.
    """
    n = len(grads)
    if n < 1:
        raise InvalidArgument("need at least one gradient")
    length = len(grads[0])
    if any(len(g) != length for g in grads):
        raise ShapeMismatch("all workers must contribute the same gradient length")
    fabric = fabric or LoopbackFabric(n, alpha=alpha, beta=beta, seed=seed)
    workers = [GdraaWorker(fabric.workers[r], n, length, element_width) for r in range(n)]
    for w, g in zip(workers, grads):
        w.start(g)
    while True:
        moved = False
        for w in workers:
            w.deliver(w.endpoint.poll_completions())
            moved |= w.progress()
        if all(w.phase == WorkerPhase.UPDATE for w in workers):
            break
        if not moved:
            stuck = {w.rank: w.phase.value for w in workers if w.phase != WorkerPhase.UPDATE}
            raise PeerTimeout("loopback", list(stuck))
    outputs, stats = zip(*(w.result() for w in workers))
    return list(outputs), list(stats), fabric
