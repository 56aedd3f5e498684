from .engine import (
    GradCheckReport,
    NonFiniteError,
    ParamSet,
    Tape,
    Tensor,
    backward,
    check_gradients,
    concat,
    forward,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import Adam
from . import functional

__all__ = [
    "Adam",
    "CheckpointError",
    "GradCheckReport",
    "NonFiniteError",
    "ParamSet",
    "Tape",
    "Tensor",
    "backward",
    "check_gradients",
    "concat",
    "forward",
    "functional",
    "load_checkpoint",
    "save_checkpoint",
]
