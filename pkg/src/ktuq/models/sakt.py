"""Self-attentive knowledge tracer: queries are upcoming questions, keys and
values are position-tagged past interactions."""

from __future__ import annotations

from ..autodiff import ops
from .config import ForwardOutput, ModelParams
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


def sakt_forward(params: ModelParams, batch, dropout_on: bool, rng=None) -> ForwardOutput:
    check_tag(params, "sakt")
    cfg, p = params.config, params.tensors
    check_length(batch.length, cfg)
    gen = generator_for(rng, dropout_on)

    interactions = ops.add(
        ops.embedding_lookup(p["question_in_table"], batch.question_rows),
        ops.embedding_lookup(p["option_table"], batch.chosen),
    )
    history = ops.add(
        shifted_history(interactions, p["start_token"]),
        positions_block(p["pos_table"], batch.length),
    )
    query = ops.embedding_lookup(p["question_query_table"], batch.question_rows)

    q = split_heads(linear(query, p["attn_q_weight"], p["attn_q_bias"]), cfg.num_heads)
    k = split_heads(linear(history, p["attn_k_weight"], p["attn_k_bias"]), cfg.num_heads)
    v = split_heads(linear(history, p["attn_v_weight"], p["attn_v_bias"]), cfg.num_heads)
    attended, weights = ops.causal_attention(q, k, v)

    mixed = linear(merge_heads(attended), p["attn_out_weight"], p["attn_out_bias"])
    mixed = ops.dropout(mixed, cfg.dropout_rate, gen, dropout_on)
    x = ops.layer_norm(ops.add(mixed, query), p["ln1_gain"], p["ln1_bias"])

    ff = feed_forward(x, p["ffn_w1"], p["ffn_b1"], p["ffn_w2"], p["ffn_b2"])
    ff = ops.dropout(ff, cfg.dropout_rate, gen, dropout_on)
    x = ops.layer_norm(ops.add(x, ff), p["ln2_gain"], p["ln2_bias"])

    logits = linear(x, p["head_weight"], p["head_bias"])
    return ForwardOutput(logits=logits, attention_weights={"attention": weights})
