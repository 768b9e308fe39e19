"""Conditional-width feedforward nets with balanced routing and a fused
always-on side block; numba-accelerated kernels with a numpy fallback."""

__version__ = "0.1.0"

from .backend import default_backend
from .data import Dataset, batches, fetch, load, parse_idx, serialize_idx
from .errors import (CheckpointError, ConfigError, DataError, DimensionError,
                     DomainError, FFFError, IntegrityError, NumericError)
from .kernels import Backend, available_backends, get_backend
from .losses import batch_loss, total_loss
from .model import (FFFModel, ParamBundle, VanillaModel, backward,
                    build_vanilla_ff, forward_inference, forward_inference_ml,
                    forward_train, forward_train_ml, inference_cost,
                    mixture_coefficients, training_neuron_count)
from .numeric import make_rng, sigmoid, softmax
from .optim import AdamState, Phase, Schedule, adam_step, early_stop_check
from .trainer import (ExperimentConfig, RunReport, evaluate, run_single,
                      run_sweep)

__all__ = [
    "AdamState", "Backend", "CheckpointError", "ConfigError", "DataError",
    "Dataset", "DimensionError", "DomainError", "ExperimentConfig",
    "FFFError", "FFFModel", "IntegrityError", "NumericError", "ParamBundle",
    "Phase", "RunReport", "Schedule", "VanillaModel", "adam_step",
    "available_backends", "backward", "batch_loss", "batches",
    "build_vanilla_ff", "default_backend", "early_stop_check", "evaluate",
    "fetch", "forward_inference", "forward_inference_ml", "forward_train",
    "forward_train_ml", "get_backend", "inference_cost", "load", "make_rng",
    "mixture_coefficients", "parse_idx", "run_single", "run_sweep",
    "serialize_idx", "sigmoid", "softmax", "total_loss",
    "training_neuron_count", "__version__",
]
