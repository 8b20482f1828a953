"""Knowledge tracer over frozen text-embedding features.

Each question is represented by the concatenation of its text-field vectors
(question text, then construct text), each truncated to a fixed width. The
query/key/value projections read that concatenation directly; a second,
cross-attention block mixes in the student's past option choices.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, ops
from ..data import EmbeddingTable, QuestionBank
from ..validation import DataFormatError, ValidationError
from .config import ForwardOutput, ModelConfig, ModelParams
from .layers import (
    check_length,
    check_tag,
    feed_forward,
    generator_for,
    linear,
    merge_heads,
    positions_block,
    shifted_history,
    split_heads,
)


def _field_keys(text_key: str, construct_id: int, config: ModelConfig) -> list[str]:
    if config.llm_text_fields != 2:
        raise ValidationError(
            "the data model provides exactly two text fields per question "
            f"(question text, construct text); got llm_text_fields={config.llm_text_fields}"
        )
    return [text_key, f"construct:{construct_id}"]


def question_feature_matrix(
    bank: QuestionBank, table: EmbeddingTable, config: ModelConfig
) -> np.ndarray:
    """(n_questions, llm_concat_dim) matrix of per-question text features.

    Row order follows the bank's row order, so ``matrix[batch.question_rows]``
    yields per-position features. Raises DataFormatError when a text key is
    missing or the table is narrower than the truncation width.
    """
    width = config.llm_truncation_dim
    if table.dimension < width:
        raise DataFormatError(
            f"embedding table dimension {table.dimension} is smaller than "
            f"llm_truncation_dim {width}"
        )
    matrix = np.zeros((bank.n_questions, config.llm_concat_dim))
    for row, record in enumerate(bank.records):
        for i, key in enumerate(_field_keys(record.text_key, record.construct_id, config)):
            matrix[row, i * width:(i + 1) * width] = table.vector(key)[:width]
    return matrix


def _gather_features(embeddings, batch, config: ModelConfig) -> np.ndarray:
    if isinstance(embeddings, EmbeddingTable):
        raise ValidationError(
            "pass the precomputed matrix from question_feature_matrix(bank, table, config), "
            "not the raw EmbeddingTable"
        )
    features = np.asarray(embeddings, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != config.llm_concat_dim:
        raise ValidationError(
            f"feature matrix must be (n_questions, {config.llm_concat_dim}); "
            f"got {features.shape}"
        )
    if int(batch.question_rows.max()) >= features.shape[0]:
        raise ValidationError("feature matrix has fewer rows than the batch references")
    return features[batch.question_rows]


def llmkt_forward(
    params: ModelParams, batch, embeddings, dropout_on: bool, rng=None
) -> ForwardOutput:
    check_tag(params, "llmkt")
    cfg, p = params.config, params.tensors
    check_length(batch.length, cfg)
    gen = generator_for(rng, dropout_on)
    t = batch.length

    features = Tensor(_gather_features(embeddings, batch, cfg))
    q_proj = linear(features, p["self_q_weight"], p["self_q_bias"])
    k_proj = linear(features, p["self_k_weight"], p["self_k_bias"])
    v_proj = linear(features, p["self_v_weight"], p["self_v_bias"])
    pos = positions_block(p["pos_table"], t)
    q_proj = ops.add(q_proj, pos)
    k_proj = ops.add(k_proj, pos)

    attended, self_weights = ops.causal_attention(
        split_heads(q_proj, cfg.num_heads),
        split_heads(k_proj, cfg.num_heads),
        split_heads(v_proj, cfg.num_heads),
    )
    mixed = linear(merge_heads(attended), p["self_out_weight"], p["self_out_bias"])
    mixed = ops.dropout(mixed, cfg.dropout_rate, gen, dropout_on)
    x = ops.layer_norm(mixed, p["ln1_gain"], p["ln1_bias"])

    ff = feed_forward(x, p["ffn1_w1"], p["ffn1_b1"], p["ffn1_w2"], p["ffn1_b2"])
    ff = ops.dropout(ff, cfg.dropout_rate, gen, dropout_on)
    x = ops.layer_norm(ops.add(x, ff), p["ln2_gain"], p["ln2_bias"])

    responses = ops.add(
        ops.embedding_lookup(p["option_table"], batch.chosen),
        positions_block(p["response_pos_table"], t),
    )
    history = shifted_history(responses, p["start_token"])
    qc = split_heads(linear(x, p["cross_q_weight"], p["cross_q_bias"]), cfg.num_heads)
    kc = split_heads(linear(history, p["cross_k_weight"], p["cross_k_bias"]), cfg.num_heads)
    vc = split_heads(linear(history, p["cross_v_weight"], p["cross_v_bias"]), cfg.num_heads)
    attended2, cross_weights = ops.causal_attention(qc, kc, vc)

    mixed2 = linear(merge_heads(attended2), p["cross_out_weight"], p["cross_out_bias"])
    mixed2 = ops.dropout(mixed2, cfg.dropout_rate, gen, dropout_on)
    y = ops.layer_norm(ops.add(mixed2, x), p["ln3_gain"], p["ln3_bias"])

    ff2 = feed_forward(y, p["ffn2_w1"], p["ffn2_b1"], p["ffn2_w2"], p["ffn2_b2"])
    ff2 = ops.dropout(ff2, cfg.dropout_rate, gen, dropout_on)
    y = ops.layer_norm(ops.add(y, ff2), p["ln4_gain"], p["ln4_bias"])

    logits = linear(y, p["head_weight"], p["head_bias"])
    return ForwardOutput(
        logits=logits,
        attention_weights={"self_attention": self_weights, "cross_attention": cross_weights},
    )
