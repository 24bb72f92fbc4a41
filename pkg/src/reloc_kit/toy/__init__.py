"""Desk-scale two-view pose regressor (torch, CPU, float64)."""

from .model import (
    HEAD_MODES,
    PosePrediction,
    TokenSequence,
    ToyModel,
    ToyModelConfig,
    apply_rope,
    clamped_acos,
    decode,
    encode,
    forward_pair,
    forward_pair_tensors,
    parameter_count,
    patchify,
    pose_head,
    pose_head_tensors,
    reseed,
    rope_embed,
    rotation_from_raw,
    shared_vs_asymmetric_counts,
    special_orthogonalize,
)
from .training import (
    TraceRow,
    TrainingPair,
    batch_loss,
    load_checkpoint,
    load_trace,
    make_training_pairs,
    procedural_image,
    save_checkpoint,
    save_trace,
    train_toy,
)

__all__ = [
    "HEAD_MODES",
    "PosePrediction",
    "TokenSequence",
    "ToyModel",
    "ToyModelConfig",
    "TraceRow",
    "TrainingPair",
    "apply_rope",
    "batch_loss",
    "clamped_acos",
    "decode",
    "encode",
    "forward_pair",
    "forward_pair_tensors",
    "load_checkpoint",
    "load_trace",
    "make_training_pairs",
    "parameter_count",
    "patchify",
    "pose_head",
    "pose_head_tensors",
    "procedural_image",
    "reseed",
    "rope_embed",
    "rotation_from_raw",
    "save_checkpoint",
    "save_trace",
    "shared_vs_asymmetric_counts",
    "special_orthogonalize",
    "train_toy",
]
