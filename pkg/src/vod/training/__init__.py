"""Round-based training, the synthetic task and query-only distillation."""

from .loop import (
    FROZEN,
    LEARNED,
    MetricsTrace,
    Models,
    RoundCache,
    StepRecord,
    TrainConfig,
    TrainResult,
    evaluate,
    init_models,
    reindex,
    run_training,
    train_step,
)
from .optimizer import AdamHyper, AdamState, optimizer_step
from .schedule import alpha_schedule
from .synthetic import SyntheticConfig, SyntheticTask, generate_task
from .distill import DistillResult, DistillTarget, build_targets, recall_at_1, run_distillation
