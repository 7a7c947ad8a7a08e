"""Control-plane orchestration: job server, worker agents and local runners."""
from .agent import WorkerAgent
from .jobspec import JobSpec, parse_kv
from .local import LocalRun, run_loopback_job, run_socket_job
from .server import REPORT_HEADER, IterRecord, JobServer, RunReport, WorkerHealth
from .staging import StagingPlan, Tier, default_plan, default_tiers
from .tasks import SyntheticGradientTask, TrainingTask, build_task, register_task

__all__ = [
    "IterRecord", "JobServer", "JobSpec", "LocalRun", "REPORT_HEADER", "RunReport", "StagingPlan",
    "SyntheticGradientTask", "Tier", "TrainingTask", "WorkerAgent", "WorkerHealth", "build_task",
    "default_plan", "default_tiers", "parse_kv", "register_task", "run_loopback_job", "run_socket_job",
]
