"""Attention-based tracer with a learned forgetting decay.

Attention runs in two stages: content-only weights define how much attended
mass sits between each key and the query ("context distance"); the final
scores are then penalized by -softplus(rho) times that distance, so older
interactions lose weight unless the intervening history is inattentive.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, ops
from ..data import N_OPTIONS
from .config import ForwardOutput, ModelParams
from .layers import (
    check_length,
    check_tag,
    feed_forward,
    generator_for,
    linear,
    merge_heads,
    shifted_history,
    split_heads,
)

_GAP_CACHE: dict[int, np.ndarray] = {}


def _gap_matrix(length: int) -> np.ndarray:
    """(T, T) constant: raw index gap t - j for visible keys, 0 elsewhere."""
    cached = _GAP_CACHE.get(length)
    if cached is None:
        idx = np.arange(length)
        cached = np.maximum(np.subtract.outer(idx, idx), 0).astype(np.float64)
        _GAP_CACHE[length] = cached
    return cached


def decayed_attention(q, k, v, rho):
    """Causal attention whose scores carry a context-weighted distance penalty.

    ``pi`` are the content-only weights; their tail mass beyond each key
    scales the raw index gap, and softplus(rho) (per head) converts that
    distance into a negative score bias. More recent keys with identical
    content therefore never receive less weight than older ones.
    """
    pi = ops.causal_attention_weights(q, k)
    coverage = ops.cumsum(pi, axis=-1)
    tail_mass = ops.add_const(ops.neg(coverage), 1.0)
    distance = ops.mul(tail_mass, Tensor(_gap_matrix(q.data.shape[-2])))
    gamma = ops.reshape(ops.softplus(rho), (rho.data.shape[0], 1, 1))
    bias = ops.neg(ops.mul(gamma, distance))
    return ops.causal_attention(q, k, v, extra_score_bias=bias)


def akt_forward(params: ModelParams, batch, dropout_on: bool, rng=None) -> ForwardOutput:
    check_tag(params, "akt")
    cfg, p = params.config, params.tensors
    check_length(batch.length, cfg)
    gen = generator_for(rng, dropout_on)

    joint_rows = batch.question_rows * N_OPTIONS + batch.chosen
    interactions = ops.embedding_lookup(p["interaction_table"], joint_rows)
    history = shifted_history(interactions, p["start_token"])
    query = ops.embedding_lookup(p["question_query_table"], batch.question_rows)

    if cfg.kq_same:
        q_w, q_b = p["attn_qk_weight"], p["attn_qk_bias"]
        k_w, k_b = q_w, q_b
    else:
        q_w, q_b = p["attn_q_weight"], p["attn_q_bias"]
        k_w, k_b = p["attn_k_weight"], p["attn_k_bias"]
    q = split_heads(linear(query, q_w, q_b), cfg.num_heads)
    k = split_heads(linear(history, k_w, k_b), cfg.num_heads)
    v = split_heads(linear(history, p["attn_v_weight"], p["attn_v_bias"]), cfg.num_heads)
    attended, weights = decayed_attention(q, k, v, p["decay_rho"])

    mixed = linear(merge_heads(attended), p["attn_out_weight"], p["attn_out_bias"])
    mixed = ops.dropout(mixed, cfg.dropout_rate, gen, dropout_on)
    x = ops.layer_norm(ops.add(mixed, query), p["ln1_gain"], p["ln1_bias"])

    ff = feed_forward(x, p["ffn_w1"], p["ffn_b1"], p["ffn_w2"], p["ffn_b2"])
    ff = ops.dropout(ff, cfg.dropout_rate, gen, dropout_on)
    x = ops.layer_norm(ops.add(x, ff), p["ln2_gain"], p["ln2_bias"])

    hidden = ops.relu(linear(ops.concat([x, query], axis=-1), p["head_w1"], p["head_b1"]))
    hidden = ops.relu(linear(hidden, p["head_w2"], p["head_b2"]))
    logits = linear(hidden, p["head_w3"], p["head_b3"])
    return ForwardOutput(logits=logits, attention_weights={"attention": weights})
