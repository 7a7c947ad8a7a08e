"""Message types and the little-endian wire format.

Every frame starts with a fixed 32-byte header::

    magic "GDRA" | version u8 | msg_type u8 | phase u8 | reserved u8 |
    sender u32 | block_index u32 | iteration u64 | payload_len u64

Data frames (msg_type 0) carry raw element bytes. Control frames (msg_type 1)
reuse the phase byte for the control kind and carry a UTF-8 body of
``key=value`` lines.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import MalformedBody

MAGIC = b"GDRA"
VERSION = 1
HEADER = struct.Struct("<4sBBBBIIQQ")
HEADER_SIZE = HEADER.size  # 32

MSG_DATA = 0
MSG_CONTROL = 1

JOB_SERVER = 0xFFFFFFFF  # node id of the job server on the control plane


class Phase(enum.IntEnum):
    REDUCE_SCATTER = 0
    BROADCAST = 1


class ControlKind(enum.IntEnum):
    JOB_SUBMIT = 0
    STAGE_DATA = 1
    ITER_START = 2
    WORKER_READY = 3
    ITER_DONE = 4
    HEARTBEAT = 5
    CHECKPOINT_DONE = 6
    SHUTDOWN = 7


@dataclass(frozen=True)
class DataMessage:
    """A one-sided write of one gradient block into a peer's region."""

    iteration: int
    phase: Phase
    sender: int
    block_index: int
    payload: np.ndarray

    @property
    def key(self) -> tuple[int, Phase, int, int]:
        return (self.iteration, self.phase, self.sender, self.block_index)

    @property
    def nbytes(self) -> int:
        return self.payload.nbytes


_SCALARS = (str, int, float, bool, np.integer, np.floating)


def _normalize_body(body: Mapping) -> dict[str, str]:
    out = {}
    for key, value in body.items():
        if not isinstance(key, str) or not key or "=" in key or "\n" in key:
            raise MalformedBody(f"bad control key {key!r}")
        # Element arrays never travel on the control plane.
        if not isinstance(value, _SCALARS):
            raise MalformedBody(f"control value for {key!r} must be a scalar, got {type(value).__name__}")
        text = str(value)
        if "\n" in text:
            raise MalformedBody(f"control value for {key!r} contains a newline")
        out[key] = text
    return out


@dataclass(frozen=True)
class ControlMessage:
    kind: ControlKind
    sender: int
    iteration: int = 0
    body: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ControlKind(self.kind))
        object.__setattr__(self, "body", _normalize_body(self.body))

    def get(self, key: str, default=None):
        return self.body.get(key, default)

    def get_int(self, key: str, default: int | None = None) -> int:
        value = self.body.get(key)
        if value is None:
            if default is None:
                raise MalformedBody(f"{self.kind.name} is missing {key!r}")
            return default
        return int(value)

    def get_float(self, key: str, default: float | None = None) -> float:
        value = self.body.get(key)
        if value is None:
            if default is None:
                raise MalformedBody(f"{self.kind.name} is missing {key!r}")
            return default
        return float(value)


@dataclass(frozen=True, order=True)
class CompletionEvent:
    """Delivery notice for one data message, queued at the receiver."""

    timestamp: float
    sender: int
    iteration: int
    phase: Phase
    block_index: int
    receiver: int = field(compare=False)
    nbytes: int = field(compare=False, default=0)

    @property
    def key(self) -> tuple[int, Phase, int, int]:
        return (self.iteration, self.phase, self.sender, self.block_index)


def encode_body(body: Mapping[str, str]) -> bytes:
    return "".join(f"{k}={v}\n" for k, v in body.items()).encode("utf-8")


def decode_body(raw: bytes) -> dict[str, str]:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedBody("control body is not UTF-8") from exc
    body = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if not sep or not key:
            raise MalformedBody(f"bad control line {line!r}")
        body[key] = value
    return body


def pack_header(msg_type: int, phase: int, sender: int, block_index: int,
                iteration: int, payload_len: int) -> bytes:
    return HEADER.pack(MAGIC, VERSION, msg_type, phase, 0, sender, block_index, iteration, payload_len)


def unpack_header(raw: bytes) -> tuple[int, int, int, int, int, int]:
    """Return ``(msg_type, phase, sender, block_index, iteration, payload_len)``."""
    magic, version, msg_type, phase, _reserved, sender, block_index, iteration, payload_len = HEADER.unpack(raw)
    if magic != MAGIC:
        raise MalformedBody(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedBody(f"unsupported wire version {version}")
    if msg_type not in (MSG_DATA, MSG_CONTROL):
        raise MalformedBody(f"unknown msg_type {msg_type}")
    return msg_type, phase, sender, block_index, iteration, payload_len


def encode_data(msg: DataMessage) -> bytes:
    payload = np.ascontiguousarray(msg.payload)
    if payload.dtype.byteorder == ">":
        payload = payload.astype(payload.dtype.newbyteorder("<"))
    raw = payload.tobytes()
    return pack_header(MSG_DATA, int(msg.phase), msg.sender, msg.block_index, msg.iteration, len(raw)) + raw


def encode_control(msg: ControlMessage) -> bytes:
    body = encode_body(msg.body)
    return pack_header(MSG_CONTROL, int(msg.kind), msg.sender, 0, msg.iteration, len(body)) + body


def decode_control(header: tuple, body: bytes) -> ControlMessage:
    _msg_type, kind, sender, _block, iteration, _len = header
    try:
        kind = ControlKind(kind)
    except ValueError:
        raise MalformedBody(f"unknown control kind {kind}") from None
    return ControlMessage(kind, sender, iteration, decode_body(body))


def decode_frame(raw: bytes, dtype=np.float32):
    """Decode one complete frame into a DataMessage or ControlMessage."""
    header = unpack_header(raw[:HEADER_SIZE])
    msg_type, phase, sender, block_index, iteration, payload_len = header
    payload = raw[HEADER_SIZE:HEADER_SIZE + payload_len]
    if len(payload) != payload_len:
        raise MalformedBody("truncated frame")
    if msg_type == MSG_CONTROL:
        return decode_control(header, payload)
    elements = np.frombuffer(payload, dtype=np.dtype(dtype).newbyteorder("<"))
    return DataMessage(iteration, Phase(phase), sender, block_index, elements)
