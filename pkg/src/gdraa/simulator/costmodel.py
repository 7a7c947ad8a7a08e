"""Alpha-beta timing of one training iteration for each collective.

Network model: one non-blocking switch, each worker's egress NIC sends one
message at a time. A message occupies its sender's NIC for ``size / bw`` and
lands ``alpha`` seconds after it leaves. The parameter server's single link is
also serialized on ingress, which is what makes it the bottleneck.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

from ..buffers import MAX_WORKERS, partition
from ..errors import InvalidArgument
from .engine import EventEngine, EventKind, SimEvent

FDR56_LATENCY = 0.7e-6          # seconds per message
FDR56_BANDWIDTH = 56e9 / 8      # bytes/second per HCA


def zero_compute(batch: float) -> float:
    return 0.0


@dataclass(frozen=True)
class LinearCompute:
    """Compute time ``overhead + per_sample * batch``."""

    per_sample: float
    overhead: float = 0.0

    def __call__(self, batch: float) -> float:
        return self.overhead + self.per_sample * batch


@dataclass(frozen=True)
class ClusterSpec:
    n_workers: int
    length: int
    element_width: int = 4
    alpha: float = FDR56_LATENCY
    beta: float = FDR56_BANDWIDTH
    rails: int = 1
    switch_capacity: float = math.inf
    compute_model: Callable[[float], float] = field(default=zero_compute, compare=False)
    batch: float = 1.0
    agg_rate: float = math.inf   # aggregation ops per second; inf means free

    def __post_init__(self):
        if not 1 <= self.n_workers <= MAX_WORKERS:
            raise InvalidArgument(f"n_workers must be in [1, {MAX_WORKERS}]")
        if self.length < 1 or self.element_width < 1 or self.rails < 1:
            raise InvalidArgument("length, element_width and rails must be positive")
        if self.alpha < 0 or self.beta <= 0 or self.switch_capacity <= 0 or self.agg_rate <= 0:
            raise InvalidArgument("alpha must be >= 0; beta, switch_capacity, agg_rate > 0")

    @property
    def payload_bytes(self) -> int:
        return self.length * self.element_width

    def link_bandwidth(self, concurrent_senders: int = 1) -> float:
        """Per-sender rate: the worker's rails, capped by a fair share of the switch."""
        return min(self.rails * self.beta, self.switch_capacity / max(concurrent_senders, 1))

    def with_workers(self, n: int) -> ClusterSpec:
        return replace(self, n_workers=n)


def message_time(size: int, spec: ClusterSpec, suppressed: bool = False, concurrent_senders: int = 1) -> float:
    """``alpha + size / bw``; a suppressed (never sent) message costs nothing."""
    if size < 0:
        raise InvalidArgument("message size must be >= 0")
    if suppressed:
        return 0.0
    return spec.alpha + size / spec.link_bandwidth(concurrent_senders)


@dataclass
class IterationTimeline:
    collective: str
    compute_time: float
    makespan: float
    finish: list[float]
    events: list[SimEvent]

    @property
    def comm_time(self) -> float:
        return self.makespan - self.compute_time


class _Nic:
    """Serializes one node's outgoing (or incoming) transfers."""

    def __init__(self):
        self.free = 0.0

    def reserve(self, now: float, duration: float) -> tuple[float, float]:
        start = max(self.free, now)
        self.free = start + duration
        return start, self.free


def _gdraa(spec: ClusterSpec, eng: EventEngine, t_compute: float) -> list[float]:
    n = spec.n_workers
    width = spec.element_width
    blocks = partition(spec.length, n)
    bw = spec.link_bandwidth(n)
    nics = [_Nic() for _ in range(n)]
    computed = [False] * n
    rs_got = [0] * n
    bc_got = [0] * n
    own_done = [False] * n
    finish = [math.nan] * n
    rs_need = [(n - 1) if blocks[m].length else 0 for m in range(n)]
    bc_need = [sum(1 for k in range(n) if k != m and blocks[k].length) for m in range(n)]

    def send(src: int, dst: int, phase: int, block: int, on_arrival) -> None:
        size = blocks[block].length * width
        if size == 0:
            return
        start, left = nics[src].reserve(eng.now, size / bw)
        msg = (phase, src, dst, block)
        eng.schedule(start, EventKind.SEND_START, src, msg)
        eng.schedule(left + spec.alpha, EventKind.DELIVERY, dst, msg, on_arrival)

    def try_release_rs(m: int) -> None:
        if computed[m] and rs_got[m] == rs_need[m]:
            rs_got[m] = -1  # released
            eng.schedule(eng.now, EventKind.WAIT_RELEASE, m, (0, m, m, m), on_rs_release)

    def try_release_bc(m: int) -> None:
        if own_done[m] and bc_got[m] == bc_need[m]:
            bc_got[m] = -1
            eng.schedule(eng.now, EventKind.WAIT_RELEASE, m, (1, m, m, m), on_bc_release)

    def on_compute(ev: SimEvent) -> None:
        m = ev.worker
        computed[m] = True
        for j in ((m + k) % n for k in range(1, n)):
            send(m, j, 0, j, on_rs_delivery)
        try_release_rs(m)

    def on_rs_delivery(ev: SimEvent) -> None:
        rs_got[ev.worker] += 1
        try_release_rs(ev.worker)

    def on_rs_release(ev: SimEvent) -> None:
        m = ev.worker
        agg = n * blocks[m].length / spec.agg_rate
        eng.schedule(eng.now + agg, EventKind.COMPUTE_DONE, m, (2, m, m, m), on_aggregated)

    def on_aggregated(ev: SimEvent) -> None:
        m = ev.worker
        own_done[m] = True
        for j in ((m + k) % n for k in range(1, n)):
            send(m, j, 1, m, on_bc_delivery)
        try_release_bc(m)

    def on_bc_delivery(ev: SimEvent) -> None:
        bc_got[ev.worker] += 1
        try_release_bc(ev.worker)

    def on_bc_release(ev: SimEvent) -> None:
        finish[ev.worker] = eng.now

    for m in range(n):
        eng.schedule(t_compute, EventKind.COMPUTE_DONE, m, (-1, m, m, m), on_compute)
    eng.run()
    return finish


def _ring(spec: ClusterSpec, eng: EventEngine, t_compute: float) -> list[float]:
    n = spec.n_workers
    width = spec.element_width
    chunks = partition(spec.length, n)
    bw = spec.link_bandwidth(n)
    nics = [_Nic() for _ in range(n)]
    finish = [math.nan] * n
    last_step = 2 * (n - 1) - 1

    def chunk_for(m: int, step: int) -> int:
        if step < n - 1:
            return (m - step) % n
        return (m + 1 - (step - (n - 1))) % n

    def send(m: int, step: int) -> None:
        c = chunk_for(m, step)
        size = chunks[c].length * width
        dst = (m + 1) % n
        msg = (step, m, dst, c)
        duration = size / bw if size else 0.0
        start, left = nics[m].reserve(eng.now, duration)
        if size:
            eng.schedule(start, EventKind.SEND_START, m, msg)
        arrive = left + spec.alpha if size else start
        eng.schedule(arrive, EventKind.DELIVERY, dst, msg, on_delivery)

    def on_compute(ev: SimEvent) -> None:
        if n == 1:
            finish[ev.worker] = eng.now
            return
        send(ev.worker, 0)

    def on_delivery(ev: SimEvent) -> None:
        step, _src, dst, c = ev.message
        eng.schedule(eng.now, EventKind.WAIT_RELEASE, dst, ev.message, on_release)

    def on_release(ev: SimEvent) -> None:
        step, _src, m, c = ev.message
        if step == last_step:
            finish[m] = eng.now
            return
        delay = 0.0
        if step < n - 1:
            delay = chunks[c].length / spec.agg_rate
        if delay:
            eng.schedule(eng.now + delay, EventKind.COMPUTE_DONE, m, (step, m, m, c),
                         lambda e: send(e.worker, step + 1))
        else:
            send(m, step + 1)

    for m in range(n):
        eng.schedule(t_compute, EventKind.COMPUTE_DONE, m, (-1, m, m, -1), on_compute)
    eng.run()
    return finish


def _param_server(spec: ClusterSpec, eng: EventEngine, t_compute: float) -> list[float]:
    n = spec.n_workers
    server = n
    size = spec.payload_bytes
    bw = spec.link_bandwidth(1)
    ingress = _Nic()
    egress = _Nic()
    finish = [math.nan] * n
    got = [0]

    def on_compute(ev: SimEvent) -> None:
        m = ev.worker
        start, left = ingress.reserve(eng.now, size / bw)
        msg = (0, m, server, 0)
        eng.schedule(start, EventKind.SEND_START, m, msg)
        eng.schedule(left + spec.alpha, EventKind.DELIVERY, server, msg, on_server_delivery)

    def on_server_delivery(ev: SimEvent) -> None:
        got[0] += 1
        if got[0] == n:
            eng.schedule(eng.now, EventKind.WAIT_RELEASE, server, (0, server, server, 0), on_server_release)

    def on_server_release(ev: SimEvent) -> None:
        agg = n * spec.length / spec.agg_rate
        eng.schedule(eng.now + agg, EventKind.COMPUTE_DONE, server, (2, server, server, 0), on_aggregated)

    def on_aggregated(ev: SimEvent) -> None:
        for m in range(n):
            start, left = egress.reserve(eng.now, size / bw)
            msg = (1, server, m, 0)
            eng.schedule(start, EventKind.SEND_START, server, msg)
            eng.schedule(left + spec.alpha, EventKind.DELIVERY, m, msg, on_worker_delivery)

    def on_worker_delivery(ev: SimEvent) -> None:
        finish[ev.worker] = eng.now

    for m in range(n):
        eng.schedule(t_compute, EventKind.COMPUTE_DONE, m, (-1, m, m, 0), on_compute)
    eng.run()
    return finish


_MODELS = {"gdraa": _gdraa, "ring": _ring, "ps": _param_server}


def simulate_iteration(spec: ClusterSpec, collective: str = "gdraa") -> IterationTimeline:
    """Run one iteration (compute, then the collective) through the event engine."""
    try:
        model = _MODELS[collective]
    except KeyError:
        raise InvalidArgument(f"unknown collective {collective!r}") from None
    t_compute = spec.compute_model(spec.batch)
    eng = EventEngine()
    finish = model(spec, eng, t_compute)
    return IterationTimeline(collective, t_compute, max(finish), finish, eng.log)


def closed_form_comm_time(spec: ClusterSpec, collective: str = "gdraa") -> float:
    """Communication time predicted without the event engine.

    Exact when N divides L; otherwise computed with ``ceil(L/N)``-sized blocks,
    which is an upper bound for GDRAA and ring.
    """
    n = spec.n_workers
    if n == 1 and collective != "ps":
        return 0.0
    block = -(-spec.length // n) * spec.element_width
    agg_ops = n * -(-spec.length // n)
    if collective == "gdraa":
        bw = spec.link_bandwidth(n)
        return 2 * (spec.alpha + (n - 1) * block / bw) + agg_ops / spec.agg_rate
    if collective == "ring":
        bw = spec.link_bandwidth(n)
        agg = (n - 1) * -(-spec.length // n) / spec.agg_rate
        return 2 * (n - 1) * (spec.alpha + block / bw) + agg
    if collective == "ps":
        bw = spec.link_bandwidth(1)
        return 2 * (spec.alpha + n * spec.payload_bytes / bw) + n * spec.length / spec.agg_rate
    raise InvalidArgument(f"unknown collective {collective!r}")
