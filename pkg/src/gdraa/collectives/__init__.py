"""AllReduce implementations behind one interface."""
from __future__ import annotations

from .baselines import LockstepGroup, param_server_allreduce, ring_allreduce
from .gdraa import GdraaWorker, WorkerPhase, aggregate_block, gdraa_allreduce
from .stats import IterationStats

COLLECTIVES = ("gdraa", "ring", "ps")


def allreduce(grads, collective: str = "gdraa", element_width: int = 4, **kwargs):
    """Average ``grads`` (one vector per worker) with the named collective.

    Returns ``(outputs, stats)`` with one entry per worker.
    """
    if collective == "gdraa":
        outputs, stats, _fabric = gdraa_allreduce(grads, element_width, **kwargs)
        return outputs, stats
    if collective == "ring":
        return ring_allreduce(grads, element_width)
    if collective == "ps":
        outputs, stats, _server = param_server_allreduce(grads, element_width)
        return outputs, stats
    raise ValueError(f"unknown collective {collective!r}; choose from {COLLECTIVES}")


__all__ = [
    "COLLECTIVES", "GdraaWorker", "IterationStats", "LockstepGroup", "WorkerPhase", "aggregate_block",
    "allreduce", "gdraa_allreduce", "param_server_allreduce", "ring_allreduce",
]
