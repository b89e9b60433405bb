"""Experiment harness: configs, synthetic tasks, training regimes, benchmarks."""

from .bench import mem_bench, time_bench
from .config import REGIMES, STEPS_PER_EPOCH, TrainConfig, load_config, parse_config_text
from .task import SyntheticTask, evaluate, label_agreement, make_task
from .train import (
    MetricsRecord,
    adam_init,
    adam_step,
    cross_entropy,
    finetune,
    pretrain,
    write_metrics_log,
)

__all__ = [
    "REGIMES",
    "STEPS_PER_EPOCH",
    "TrainConfig",
    "load_config",
    "parse_config_text",
    "SyntheticTask",
    "evaluate",
    "label_agreement",
    "make_task",
    "MetricsRecord",
    "adam_init",
    "adam_step",
    "cross_entropy",
    "finetune",
    "pretrain",
    "write_metrics_log",
    "mem_bench",
    "time_bench",
]
