"""Joint intent classification and slot labelling with low-rank bilinear fusion."""

from .datapipe import TaggedUtterance, build_vocab, encode_batch, load_dataset, parse_iob
from .fusion import MlbParams, broadcast_intent, dense_add, mlb_fuse
from .model import ModelConfig, build_model, joint_loss, model_forward

__version__ = "0.1.0"

__all__ = [
    "MlbParams", "ModelConfig", "TaggedUtterance", "broadcast_intent", "build_model",
    "build_vocab", "dense_add", "encode_batch", "joint_loss", "load_dataset", "mlb_fuse",
    "model_forward", "parse_iob",
]
