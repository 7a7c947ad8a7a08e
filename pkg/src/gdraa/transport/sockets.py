"""TCP transport for multi-process runs on one host.

Workers form a full mesh: rank ``i`` accepts connections from every higher
rank and dials every lower rank. Each worker also keeps one connection to the
job server, which carries control frames only. A reader thread per connection
moves incoming data frames straight into the registered region.
"""
from __future__ import annotations

import logging
import socket
import threading
import time

import numpy as np

from ..errors import ConnectionLost, MalformedBody
from .base import Endpoint, SendReceipt
from .messages import (HEADER_SIZE, JOB_SERVER, MSG_CONTROL, ControlKind, ControlMessage, DataMessage,
                       Phase, decode_control, encode_control, encode_data, unpack_header)

log = logging.getLogger(__name__)

CONNECT_RETRIES = 50
HELLO = "hello"


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    return host or "127.0.0.1", int(port)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            return None
        got += k
    return bytes(buf)


def read_frame(sock: socket.socket):
    """Read one frame; returns ``(header_tuple, payload)`` or None on EOF."""
    raw = _recv_exact(sock, HEADER_SIZE)
    if raw is None:
        return None
    header = unpack_header(raw)
    payload = _recv_exact(sock, header[5]) if header[5] else b""
    if payload is None:
        return None
    return header, payload


def _dial(address: str) -> socket.socket:
    host, port = parse_address(address)
    delay = 0.01
    for _ in range(CONNECT_RETRIES):
        try:
            sock = socket.create_connection((host, port))
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError:
            time.sleep(delay)
            delay = min(delay * 2, 0.5)
    raise ConnectionLost(f"could not connect to {address}")


class _Link:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.lock = threading.Lock()
        self.alive = True

    def send(self, frame: bytes) -> None:
        with self.lock:
            if not self.alive:
                raise ConnectionLost("link is down")
            try:
                self.sock.sendall(frame)
            except OSError as exc:
                self.alive = False
                raise ConnectionLost(str(exc)) from exc

    def close(self) -> None:
        self.alive = False
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class SocketEndpoint(Endpoint):
    """A worker's endpoint: data mesh to peers plus a control link to the job server."""

    def __init__(self, rank: int, host: str = "127.0.0.1"):
        super().__init__(rank)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, 0))
        self._listener.listen(64)
        self.address = f"{host}:{self._listener.getsockname()[1]}"
        self._links: dict[int, _Link] = {}
        self._threads: list[threading.Thread] = []
        self.errors: list[Exception] = []

    # -- setup -------------------------------------------------------------

    def connect_job_server(self, address: str) -> None:
        link = _Link(_dial(address))
        self._links[JOB_SERVER] = link
        self._spawn_reader(JOB_SERVER, link)

    def connect_mesh(self, addresses: list[str]) -> None:
        """Connect to every other rank; ``addresses[k]`` is rank k's listen address."""
        n = len(addresses)
        for peer in range(self.node):
            link = _Link(_dial(addresses[peer]))
            hello = encode_control(ControlMessage(ControlKind.WORKER_READY, self.node, 0, {HELLO: 1}))
            link.send(hello)
            self._count_control_sent(len(hello))
            self._links[peer] = link
            self._spawn_reader(peer, link)
        for _ in range(n - 1 - self.node):
            sock, _addr = self._listener.accept()
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            frame = read_frame(sock)
            if frame is None:
                raise ConnectionLost("peer hung up during handshake")
            header, payload = frame
            msg = decode_control(header, payload)
            with self._cond:
                self.counters.control_bytes_received += HEADER_SIZE + len(payload)
                self.counters.control_msgs_received += 1
            link = _Link(sock)
            self._links[msg.sender] = link
            self._spawn_reader(msg.sender, link)

    def _spawn_reader(self, peer: int, link: _Link) -> None:
        t = threading.Thread(target=self._reader, args=(peer, link), daemon=True,
                             name=f"reader-{self.node}-{peer}")
        t.start()
        self._threads.append(t)

    def _reader(self, peer: int, link: _Link) -> None:
        try:
            while True:
                frame = read_frame(link.sock)
                if frame is None:
                    break
                header, payload = frame
                if header[0] == MSG_CONTROL:
                    self._deliver_control(decode_control(header, payload), HEADER_SIZE + len(payload))
                    continue
                _t, phase, sender, block, iteration, _n = header
                dtype = self.region.dtype.newbyteorder("<") if self.region is not None else np.float32
                elements = np.frombuffer(payload, dtype=dtype)
                msg = DataMessage(iteration, Phase(phase), sender, block, elements)
                try:
                    self._deliver_data(msg, time.monotonic())
                except Exception as exc:  # payload-size mismatch and friends
                    log.error("rank %d dropped frame from %d: %s", self.node, peer, exc)
                    with self._cond:
                        self.errors.append(exc)
                        self._cond.notify_all()
        except (OSError, MalformedBody) as exc:
            if not self.closed:
                log.debug("rank %d link to %s failed: %s", self.node, peer, exc)
        finally:
            link.alive = False
            if peer == JOB_SERVER:
                self._mark_closed()

    # -- sending -----------------------------------------------------------

    def _link(self, node: int) -> _Link:
        link = self._links.get(node)
        if link is None or not link.alive:
            raise ConnectionLost(f"no live connection from {self.node} to {node}")
        return link

    def send_block(self, peer: int, msg: DataMessage) -> SendReceipt:
        self._validate_send(peer, msg)
        if msg.payload.size == 0:
            return SendReceipt(peer, 0, suppressed=True)
        self._link(peer).send(encode_data(msg))
        self._count_data_sent(msg.nbytes)
        return SendReceipt(peer, msg.nbytes, suppressed=False)

    def send_control(self, node: int, msg: ControlMessage) -> None:
        frame = encode_control(msg)
        self._link(node).send(frame)
        self._count_control_sent(len(frame))

    def poll_completions(self, timeout: float = 0.0):
        events = super().poll_completions(timeout)
        if self.errors:
            raise self.errors.pop(0)
        return events

    def close(self) -> None:
        self._mark_closed()
        for link in self._links.values():
            link.close()
        self._listener.close()


class SocketJobServerEndpoint(Endpoint):
    """The job server's endpoint. It has no region; data frames are refused."""

    def __init__(self, host: str = "127.0.0.1"):
        super().__init__(JOB_SERVER)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, 0))
        self._listener.listen(64)
        self.address = f"{host}:{self._listener.getsockname()[1]}"
        self._links: dict[int, _Link] = {}
        self.errors: list[Exception] = []

    def accept_workers(self, n_workers: int, timeout: float = 30.0) -> None:
        """Accept one control connection per worker; each must open with WorkerReady."""
        self._listener.settimeout(timeout)
        while len(self._links) < n_workers:
            try:
                sock, _addr = self._listener.accept()
            except TimeoutError:
                raise ConnectionLost(f"only {len(self._links)} of {n_workers} workers connected") from None
            sock.settimeout(None)
            frame = read_frame(sock)
            if frame is None:
                raise ConnectionLost("worker hung up before identifying itself")
            header, payload = frame
            if header[0] != MSG_CONTROL:
                raise MalformedBody("first frame from a worker must be control")
            msg = decode_control(header, payload)
            link = _Link(sock)
            self._links[msg.sender] = link
            self._deliver_control(msg, HEADER_SIZE + len(payload))
            threading.Thread(target=self._reader, args=(msg.sender, link), daemon=True).start()

    def _reader(self, peer: int, link: _Link) -> None:
        try:
            while True:
                frame = read_frame(link.sock)
                if frame is None:
                    break
                header, payload = frame
                if header[0] != MSG_CONTROL:
                    with self._cond:
                        self.counters.data_bytes_received += len(payload)
                        self.counters.data_msgs_received += 1
                        self.errors.append(MalformedBody(f"data frame from {peer} at job server"))
                    continue
                self._deliver_control(decode_control(header, payload), HEADER_SIZE + len(payload))
        except (OSError, MalformedBody):
            pass
        finally:
            link.alive = False

    def send_block(self, peer: int, msg: DataMessage) -> SendReceipt:
        raise ConnectionLost("the job server has no data plane")

    def send_control(self, node: int, msg: ControlMessage) -> None:
        link = self._links.get(node)
        if link is None or not link.alive:
            raise ConnectionLost(f"no live control link to worker {node}")
        frame = encode_control(msg)
        link.send(frame)
        self._count_control_sent(len(frame))

    def close(self) -> None:
        self._mark_closed()
        for link in self._links.values():
            link.close()
        self._listener.close()
