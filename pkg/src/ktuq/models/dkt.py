"""Recurrent knowledge tracer: LSTM over past interactions."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, ops
from .config import ForwardOutput, ModelParams
from .layers import broadcast_token, check_length, check_tag, generator_for, linear


def dkt_forward(params: ModelParams, batch, dropout_on: bool, rng=None) -> ForwardOutput:
    """Logits for every position from an LSTM over the shifted history.

    The step-t input is interaction t-1 (the learned start token at t=0), so
    the hidden state at t summarizes strictly-past responses; the head then
    combines it with the upcoming question's own embedding.
    """
    check_tag(params, "dkt")
    cfg, p = params.config, params.tensors
    check_length(batch.length, cfg)
    gen = generator_for(rng, dropout_on)
    b, t, d, h = batch.size, batch.length, cfg.embedding_dim, cfg.hidden_dim

    interactions = ops.add(
        ops.embedding_lookup(p["question_in_table"], batch.question_rows),
        ops.embedding_lookup(p["option_table"], batch.chosen),
    )
    start = ops.add(Tensor(np.zeros((b, d))), ops.reshape(p["start_token"], (1, d)))

    hidden = Tensor(np.zeros((b, h)))
    cell = Tensor(np.zeros((b, h)))
    kept_rows = []
    for step in range(t):
        if step == 0:
            x = start
        else:
            x = ops.reshape(ops.narrow(interactions, 1, step - 1, 1), (b, d))
        hidden, cell = ops.lstm_step(
            x, hidden, cell, p["lstm_w_ih"], p["lstm_w_hh"], p["lstm_bias"]
        )
        dropped = ops.dropout(hidden, cfg.dropout_rate, gen, dropout_on)
        kept_rows.append(ops.reshape(dropped, (b, 1, h)))

    states = ops.concat(kept_rows, axis=1) if t > 1 else kept_rows[0]
    query = ops.embedding_lookup(p["question_query_table"], batch.question_rows)
    logits = linear(ops.concat([states, query], axis=-1), p["head_weight"], p["head_bias"])
    return ForwardOutput(logits=logits, attention_weights=None)
