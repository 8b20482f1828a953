"""Uniform forward entry point used by training, evaluation, and MC passes."""

from __future__ import annotations

from ..validation import ValidationError
from .akt import akt_forward
from .config import ForwardOutput, ModelParams
from .dkt import dkt_forward
from .llmkt import llmkt_forward
from .sakt import sakt_forward


def predict_logits(
    params: ModelParams, batch, dropout_on: bool, rng=None, embeddings=None
) -> ForwardOutput:
    """Dispatch to the architecture named by ``params.architecture``.

    ``embeddings`` is the text-feature matrix (see question_feature_matrix)
    and is required for llmkt, ignored elsewhere.
    """
    tag = params.architecture
    if tag == "dkt":
        return dkt_forward(params, batch, dropout_on, rng)
    if tag == "sakt":
        return sakt_forward(params, batch, dropout_on, rng)
    if tag == "akt":
        return akt_forward(params, batch, dropout_on, rng)
    if tag == "llmkt":
        if embeddings is None:
            raise ValidationError("llmkt forward requires embeddings=<feature matrix>")
        return llmkt_forward(params, batch, embeddings, dropout_on, rng)
    raise ValidationError(f"unknown architecture tag {tag!r}")
