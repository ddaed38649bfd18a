"""TinyNina spectral super-resolution and a desk-scale NO2 regression pipeline."""
from . import backend
from .autograd import ParamSet, backward, grad_check
from .bands import BAND_ORDER, BandMap, Tile
from .config import TrainConfig
from .errors import (ConfigError, DataError, FormatError, NumericalError, ShapeError,
                     TinyNinaError)
from .fileio import (Checkpoint, Manifest, load_checkpoint, read_manifest, read_tile,
                     save_checkpoint, write_manifest, write_tile)
from .model import TinyNina, TinyNinaConfig, param_count
from .predictor import (Predictor, PredictorConfig, build_predictor, evaluate, predict_no2,
                        train_predictor)
from .split import split_dataset
from .sr import super_resolve, train_sr
from .stats import ChannelStats, compute_channel_stats, denormalize, normalize
from .synth import synth_generate

__version__ = "0.1.0"

__all__ = [
    "BAND_ORDER", "BandMap", "ChannelStats", "Checkpoint", "ConfigError", "DataError",
    "FormatError", "Manifest", "NumericalError", "ParamSet", "Predictor", "PredictorConfig",
    "ShapeError", "Tile", "TinyNina", "TinyNinaConfig", "TinyNinaError", "TrainConfig",
    "backend", "backward", "build_predictor", "compute_channel_stats", "denormalize",
    "evaluate", "grad_check", "load_checkpoint", "normalize", "param_count", "predict_no2",
    "read_manifest", "read_tile", "save_checkpoint", "split_dataset", "super_resolve",
    "synth_generate", "train_predictor", "train_sr", "write_manifest", "write_tile",
]
