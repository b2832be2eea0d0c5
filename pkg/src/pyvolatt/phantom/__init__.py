"""Synthetic phantoms, the toy model and paired-seed experiments."""

from .generator import (
    Blob,
    PhantomConfig,
    gen_phantom,
    gen_phantoms,
    persistence_classify,
    save_phantom,
)
from .model import ToyModel, ToyModelConfig
from .training import (
    EvalResult,
    TrainConfig,
    TrainResult,
    eval_predictions,
    eval_toy,
    loss_trend_ok,
    train_step,
    train_toy,
)
from .experiment import (
    AXES,
    AblationDeck,
    ExperimentConfig,
    ExperimentResult,
    ablate,
    run_experiment,
    run_seed,
)
