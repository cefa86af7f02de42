"""Neural compression of sparse time-projection-chamber volumes."""

from .codec import CompressedArtifact, Precision, compress, decompress, deserialize, serialize
from .errors import FormatError, NumericalError, UsageError
from .models import ModelKind, ModelParams, ModelSpec, build_model, eval_model
from .sampling import SamplerSpec, SamplingMethod
from .train import TrainConfig, TrainLog, evaluate_full, train
from .volume import SynthConfig, Volume3D, load_volume, save_volume, synth_tracks

__all__ = [
    "CompressedArtifact",
    "FormatError",
    "ModelKind",
    "ModelParams",
    "ModelSpec",
    "NumericalError",
    "Precision",
    "SamplerSpec",
    "SamplingMethod",
    "SynthConfig",
    "TrainConfig",
    "TrainLog",
    "UsageError",
    "Volume3D",
    "build_model",
    "compress",
    "decompress",
    "deserialize",
    "eval_model",
    "evaluate_full",
    "load_volume",
    "save_volume",
    "serialize",
    "synth_tracks",
    "train",
]
