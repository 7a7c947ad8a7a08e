"""Synthetic SSGD training and cost metrics."""
from .metrics import (REFERENCE_PRICE_KUSD, REFERENCE_TIME_MIN, REPORTED_SPEEDUPS, REPORTED_TIMES,
                      SpeedupCheck, check_printed_speedups, compute_pcr, compute_scaling, inconsistent_rows,
                      significant)
from .problems import SyntheticProblem, batch_indices, shard
from .ssgd import (SsgdConfig, SsgdTask, TrainResult, jobspec_for, learning_rate, sgd_step, train_distributed,
                   train_serial)

__all__ = [
    "REFERENCE_PRICE_KUSD", "REFERENCE_TIME_MIN", "REPORTED_SPEEDUPS", "REPORTED_TIMES", "SpeedupCheck",
    "SsgdConfig", "SsgdTask", "SyntheticProblem", "TrainResult", "batch_indices", "check_printed_speedups",
    "compute_pcr", "compute_scaling", "inconsistent_rows", "jobspec_for", "learning_rate", "sgd_step",
    "shard", "significant", "train_distributed", "train_serial",
]
