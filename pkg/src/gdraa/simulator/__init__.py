"""Discrete-event cost model for comparing collectives across cluster sizes."""
from .costmodel import (FDR56_BANDWIDTH, FDR56_LATENCY, ClusterSpec, IterationTimeline, LinearCompute,
                        closed_form_comm_time, message_time, simulate_iteration, zero_compute)
from .engine import EventEngine, EventKind, SimEvent
from .scaling import SCALING_HEADER, ScalingRow, calibrated_compute, scaling_run, write_scaling_csv

__all__ = [
    "ClusterSpec", "EventEngine", "EventKind", "FDR56_BANDWIDTH", "FDR56_LATENCY", "IterationTimeline",
    "LinearCompute", "SCALING_HEADER", "ScalingRow", "SimEvent", "calibrated_compute",
    "closed_form_comm_time", "message_time", "scaling_run", "simulate_iteration", "write_scaling_csv",
    "zero_compute",
]
