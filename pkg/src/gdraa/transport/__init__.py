"""Data-plane and control-plane channels."""
from .base import Endpoint, SendReceipt, TransportCounters
from .loopback import LoopbackEndpoint, LoopbackFabric
from .messages import (HEADER_SIZE, JOB_SERVER, CompletionEvent, ControlKind, ControlMessage, DataMessage,
                       Phase, decode_frame, encode_control, encode_data)
from .sockets import SocketEndpoint, SocketJobServerEndpoint

__all__ = [
    "CompletionEvent", "ControlKind", "ControlMessage", "DataMessage", "Endpoint", "HEADER_SIZE",
    "JOB_SERVER", "LoopbackEndpoint", "LoopbackFabric", "Phase", "SendReceipt", "SocketEndpoint",
    "SocketJobServerEndpoint", "TransportCounters", "decode_frame", "encode_control", "encode_data",
]
