"""Behaviour shared by the loopback and socket endpoints.

An endpoint owns one worker's side of both planes. Data messages are
one-sided writes: the receiver's endpoint copies the payload straight into its
registered region and queues a completion event, without involving the worker
state machine. Control messages land in a FIFO queue.
"""
from __future__ import annotations

import collections
import threading
from dataclasses import dataclass, fields

import numpy as np

from ..buffers import RegisteredRegion
from ..errors import ConnectionLost, InvalidArgument, OutOfBounds, PayloadSizeError
from .messages import CompletionEvent, ControlKind, ControlMessage, DataMessage, Phase


@dataclass
class TransportCounters:
    data_bytes_sent: int = 0
    data_bytes_received: int = 0
    data_msgs_sent: int = 0
    data_msgs_received: int = 0
    control_bytes_sent: int = 0
    control_bytes_received: int = 0
    control_msgs_sent: int = 0
    control_msgs_received: int = 0

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class SendReceipt:
    peer: int
    nbytes: int
    suppressed: bool
    delivered_at: float | None = None


def destination(region: RegisteredRegion, msg_phase: Phase, sender: int, block_index: int) -> np.ndarray:
    """Where a data message lands in the receiver's region.

    Reduce-scatter writes go to receive slot ``sender``; broadcast writes go to
    send-buffer block ``block_index``.
    """
    if not 0 <= block_index < region.n_workers:
        raise OutOfBounds(f"block index {block_index} outside [0, {region.n_workers})")
    if not 0 <= sender < region.n_workers:
        raise OutOfBounds(f"sender {sender} outside [0, {region.n_workers})")
    length = region.blocks[block_index].length
    if msg_phase == Phase.REDUCE_SCATTER:
        return region.receive_slot(sender, length)
    return region.send_block(block_index)


def check_payload(region: RegisteredRegion, msg: DataMessage) -> None:
    if not 0 <= msg.block_index < region.n_workers:
        raise OutOfBounds(f"block index {msg.block_index} outside [0, {region.n_workers})")
    expected = region.blocks[msg.block_index].length
    if msg.payload.ndim != 1 or msg.payload.size != expected:
        raise PayloadSizeError(
            f"block {msg.block_index} holds {expected} elements, payload has {msg.payload.size}")
    if msg.payload.dtype.itemsize != region.element_width:
        raise PayloadSizeError(
            f"payload element width {msg.payload.dtype.itemsize} != region width {region.element_width}")


class Endpoint:
    """Common state of one node's transport endpoint."""

    def __init__(self, node: int):
        self.node = node
        self.region: RegisteredRegion | None = None
        self.counters = TransportCounters()
        self.clock = 0.0
        self.closed = False
        self.shutdown_requested = False
        self._cond = threading.Condition()
        self._completions: list[CompletionEvent] = []
        self._control: collections.deque[ControlMessage] = collections.deque()
        self._send_lock = threading.Lock()

    @property
    def rank(self) -> int:
        return self.node

    def attach(self, region: RegisteredRegion) -> None:
        self.region = region

    def advance_clock(self, t: float) -> None:
        if t > self.clock:
            self.clock = t

    # -- receive side, called by whatever moves bytes --------------------

    def _deliver_data(self, msg: DataMessage, timestamp: float) -> CompletionEvent:
        if self.region is None:
            raise ConnectionLost(f"node {self.node} has no registered region for data")
        check_payload(self.region, msg)
        dest = destination(self.region, msg.phase, msg.sender, msg.block_index)
        dest[:] = msg.payload
        event = CompletionEvent(timestamp, msg.sender, msg.iteration, msg.phase, msg.block_index,
                                receiver=self.node, nbytes=msg.nbytes)
        with self._cond:
            self.counters.data_bytes_received += msg.nbytes
            self.counters.data_msgs_received += 1
            self._completions.append(event)
            self._cond.notify_all()
        return event

    def _deliver_control(self, msg: ControlMessage, nbytes: int) -> None:
        with self._cond:
            self.counters.control_bytes_received += nbytes
            self.counters.control_msgs_received += 1
            self._control.append(msg)
            if msg.kind == ControlKind.SHUTDOWN:
                self.shutdown_requested = True
            self._cond.notify_all()

    def _mark_closed(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()

    # -- consumer side ----------------------------------------------------

    def poll_completions(self, timeout: float = 0.0) -> list[CompletionEvent]:
        """Drain queued completions, ordered by delivery time then sender rank.

        Blocks up to ``timeout`` seconds for the first one; returns ``[]`` when
        nothing arrives.
        """
        with self._cond:
            if not self._completions and timeout > 0:
                self._cond.wait_for(
                    lambda: self._completions or self.closed or self.shutdown_requested, timeout)
            events, self._completions = self._completions, []
        events.sort()
        return events

    def recv_control(self, timeout: float = 0.0) -> ControlMessage | None:
        with self._cond:
            if not self._control and timeout > 0:
                self._cond.wait_for(lambda: self._control or self.closed, timeout)
            return self._control.popleft() if self._control else None

    # -- send side --------------------------------------------------------

    def _validate_send(self, peer: int, msg: DataMessage) -> None:
        if self.closed:
            raise ConnectionLost(f"endpoint {self.node} is closed")
        if peer == self.node:
            raise InvalidArgument("self-delivery is a local copy, not a transport send")
        if msg.sender != self.node:
            raise InvalidArgument(f"message sender {msg.sender} != endpoint rank {self.node}")
        if self.region is None:
            raise ConnectionLost(f"node {self.node} has no registered region for data")
        check_payload(self.region, msg)

    def _count_data_sent(self, nbytes: int) -> None:
        with self._cond:
            self.counters.data_bytes_sent += nbytes
            self.counters.data_msgs_sent += 1

    def _count_control_sent(self, nbytes: int) -> None:
        with self._cond:
            self.counters.control_bytes_sent += nbytes
            self.counters.control_msgs_sent += 1

    def send_block(self, peer: int, msg: DataMessage) -> SendReceipt:
        raise NotImplementedError

    def send_control(self, node: int, msg: ControlMessage) -> None:
        raise NotImplementedError

    def close(self) -> None:
        self._mark_closed()
