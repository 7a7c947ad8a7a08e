from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass
class IterationStats:
    """Per-worker counters for one collective call.

    ``data_msgs_sent`` counts logical block messages, including zero-length
    ones that never reach the wire; ``wire_msgs_sent`` counts only those that do.
    """

    bytes_sent: int = 0
    bytes_received: int = 0
    rs_bytes_sent: int = 0
    bc_bytes_sent: int = 0
    rs_bytes_received: int = 0
    bc_bytes_received: int = 0
    data_msgs_sent: int = 0
    wire_msgs_sent: int = 0
    arrivals: int = 0
    sync_waits: int = 0
    comm_steps: int = 0
    agg_adds: int = 0
    agg_muls: int = 0
    sim_time: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> IterationStats:
        out = cls()
        for key, value in d.items():
            if hasattr(out, key):
                setattr(out, key, type(getattr(out, key))(value))
        return out
