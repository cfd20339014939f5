"""Multi-scale adaptive graph forecasting for multivariate time series."""
from importlib import metadata as _metadata

from .config import ABLATIONS, ModelConfig
from .data import MtsDataset, load_csv, synth_multiscale
from .kernels import BACKEND
from .metrics import EvalResult, corr, rse
from .model import MAGNN, load_checkpoint, save_checkpoint
from .train import TrainConfig, TrainReport, fit

try:
    __version__ = _metadata.version("artifact")
except _metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "BACKEND", "EvalResult", "MAGNN", "ModelConfig", "MtsDataset", "TrainConfig",
    "TrainReport", "corr", "fit", "load_checkpoint", "load_csv", "rse", "save_checkpoint",
    "synth_multiscale",
]
