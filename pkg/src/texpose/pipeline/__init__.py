from .config import ConfigError, ExperimentConfig, SCHEMA
from .record import RunRecord, StageTimer
from .runs import (
    DATA_FRACTIONS,
    LOSS_VARIANTS,
    evaluate_estimator,
    run_ablation,
    run_baseline,
    run_selfsup,
)
from .seeding import stream
from . import stages
