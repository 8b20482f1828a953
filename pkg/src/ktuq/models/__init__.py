"""Four multiple-choice knowledge-tracing architectures over one autodiff core."""

from .akt import akt_forward, decayed_attention
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (
    ARCHITECTURES,
    DEFAULT_DROPOUT,
    ForwardOutput,
    ModelConfig,
    ModelParams,
    init_params,
    parameter_manifest,
)
from .dkt import dkt_forward
from .llmkt import llmkt_forward, question_feature_matrix
from .predict import predict_logits
from .sakt import sakt_forward

__all__ = [
    "ARCHITECTURES",
    "DEFAULT_DROPOUT",
    "ForwardOutput",
    "ModelConfig",
    "ModelParams",
    "akt_forward",
    "decayed_attention",
    "dkt_forward",
    "init_params",
    "llmkt_forward",
    "load_checkpoint",
    "parameter_manifest",
    "predict_logits",
    "question_feature_matrix",
    "sakt_forward",
    "save_checkpoint",
]
