from .schedule import StageSchedule, lr_at
from .sgd import sgd_step, module_sgd_step, init_velocity
from .state import TrainState, TelemetryWriter, fresh_state, save_state, load_state, stream_seed
from .stages import (
    RunIO,
    advance_stage,
    prepare_training_data,
    run_stage1,
    run_stage2,
    run_stage3,
    run_single_stage,
    train,
)
from .hsi import run_hsi

__all__ = [
    "StageSchedule",
    "lr_at",
    "sgd_step",
    "module_sgd_step",
    "init_velocity",
    "TrainState",
    "TelemetryWriter",
    "fresh_state",
    "save_state",
    "load_state",
    "stream_seed",
    "RunIO",
    "advance_stage",
    "prepare_training_data",
    "run_stage1",
    "run_stage2",
    "run_stage3",
    "run_single_stage",
    "train",
    "run_hsi",
]
