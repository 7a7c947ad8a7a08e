"""In-memory transport with simulated, deterministic delivery times.

Each endpoint keeps a simulated clock. A send occupies the sender's egress NIC
for ``nbytes / beta`` seconds and lands ``alpha`` seconds (plus optional
seeded jitter) after it leaves the NIC. Because timestamps depend only on the
causal structure of the run, the event log is identical across runs even when
workers are driven by real threads.
"""
from __future__ import annotations

import math
import threading

import numpy as np

from ..errors import ConnectionLost, InvalidArgument
from .base import Endpoint, SendReceipt
from .messages import JOB_SERVER, CompletionEvent, ControlMessage, DataMessage, encode_control


class LoopbackEndpoint(Endpoint):
    def __init__(self, node: int, fabric: LoopbackFabric, rng: np.random.Generator):
        super().__init__(node)
        self._fabric = fabric
        self._rng = rng
        self.nic_free = 0.0

    def send_block(self, peer: int, msg: DataMessage) -> SendReceipt:
        self._validate_send(peer, msg)
        target = self._fabric.endpoint(peer)
        if msg.payload.size == 0:
            return SendReceipt(peer, 0, suppressed=True)
        fab = self._fabric
        with self._send_lock:
            start = max(self.nic_free, self.clock)
            self.nic_free = start + msg.nbytes / fab.beta
            deliver_at = self.nic_free + fab.alpha
            if fab.jitter:
                deliver_at += fab.jitter * float(self._rng.random())
        if target.closed:
            raise ConnectionLost(f"peer {peer} is closed")
        self._count_data_sent(msg.nbytes)
        event = target._deliver_data(msg, deliver_at)
        fab._log(event)
        return SendReceipt(peer, msg.nbytes, suppressed=False, delivered_at=deliver_at)

    def send_control(self, node: int, msg: ControlMessage) -> None:
        if self.closed:
            raise ConnectionLost(f"endpoint {self.node} is closed")
        target = self._fabric.endpoint(node)
        if target.closed:
            raise ConnectionLost(f"node {node} is closed")
        # Round-trip through the wire encoding so both transports see string bodies.
        nbytes = len(encode_control(msg))
        msg = ControlMessage(msg.kind, msg.sender, msg.iteration, dict(msg.body))
        with self._send_lock:
            self._count_control_sent(nbytes)
            target._deliver_control(msg, nbytes)


class LoopbackFabric:
    """N worker endpoints plus a job-server endpoint sharing one process."""

    def __init__(self, n_workers: int, alpha: float = 0.0, beta: float = math.inf,
                 seed: int = 0, jitter: float = 0.0):
        if n_workers < 1:
            raise InvalidArgument("need at least one worker")
        if beta <= 0 or alpha < 0 or jitter < 0:
            raise InvalidArgument("alpha and jitter must be >= 0, beta > 0")
        self.n_workers = n_workers
        self.alpha = alpha
        self.beta = beta
        self.jitter = jitter
        seeds = np.random.SeedSequence(seed).spawn(n_workers + 1)
        self.workers = [LoopbackEndpoint(r, self, np.random.default_rng(seeds[r])) for r in range(n_workers)]
        self.job_server = LoopbackEndpoint(JOB_SERVER, self, np.random.default_rng(seeds[-1]))
        self._events: list[CompletionEvent] = []
        self._lock = threading.Lock()

    def endpoint(self, node: int) -> LoopbackEndpoint:
        if node == JOB_SERVER:
            return self.job_server
        if not 0 <= node < self.n_workers:
            raise ConnectionLost(f"no such node {node}")
        return self.workers[node]

    def _log(self, event: CompletionEvent) -> None:
        with self._lock:
            self._events.append(event)

    def event_log(self) -> list[CompletionEvent]:
        """Every delivery so far in a deterministic total order."""
        with self._lock:
            events = list(self._events)
        return sorted(events, key=lambda e: (e.timestamp, e.receiver, e.sender, e.iteration,
                                             int(e.phase), e.block_index))

    def close(self) -> None:
        for ep in [*self.workers, self.job_server]:
            ep.close()
