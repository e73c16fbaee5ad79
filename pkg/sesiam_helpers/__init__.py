from sesiam_helpers.config import ModelConfig, RunConfig, SynthConfig, TrackConfig, TrainConfig
from sesiam_helpers.errors import *
from sesiam_helpers.geometry import BoundingBox, PatchSize, RelativeOffsets
from sesiam_helpers.load_sequences import SequenceRecord, load_got_style, load_sequence

__all__ = [
    "BoundingBox",
    "ModelConfig",
    "PatchSize",
    "RelativeOffsets",
    "RunConfig",
    "SequenceRecord",
    "SynthConfig",
    "TrackConfig",
    "TrainConfig",
    "load_got_style",
    "load_sequence",
]
