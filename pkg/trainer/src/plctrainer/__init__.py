"""Multi-phase trainer for the plc codec's .plcw weight files.

The codec itself never appears as a dependency: the trainer mirrors its
architecture, trains with standard autograd, and emits the weight-file
format directly. The two meet only at the file.
"""

from .config import ConfigError, TrainConfig, load_config
from .data import CorpusError, CropSampler, load_corpus
from .export import export_weights, serialize_weights, weight_blobs
from .model import CodecModel, layer_table
from .train import (
    TrainingError,
    sample_quality,
    train_phase1,
    train_phase2_refine_decoder,
    train_phase3_rems,
)

__version__ = "0.1.0"

__all__ = [
    "CodecModel",
    "ConfigError",
    "CorpusError",
    "CropSampler",
    "TrainConfig",
    "TrainingError",
    "export_weights",
    "layer_table",
    "load_config",
    "load_corpus",
    "sample_quality",
    "serialize_weights",
    "train_phase1",
    "train_phase2_refine_decoder",
    "train_phase3_rems",
    "weight_blobs",
    "__version__",
]
