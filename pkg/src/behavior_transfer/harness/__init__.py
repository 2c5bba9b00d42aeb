from .checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from .config import ExperimentConfig, dump_config, load_config, parse_config
from .metrics import EvalRow, RunRecord, emit_metrics
from .runner import evaluate, pretrain_run, run_pretrain, transfer_run

__all__ = [
    "Checkpoint",
    "EvalRow",
    "ExperimentConfig",
    "RunRecord",
    "dump_config",
    "emit_metrics",
    "evaluate",
    "load_config",
    "parse_config",
    "pretrain_run",
    "read_checkpoint",
    "run_pretrain",
    "transfer_run",
    "write_checkpoint",
]
