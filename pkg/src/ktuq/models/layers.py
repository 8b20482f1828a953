"""Shared building blocks for the sequence models."""

from __future__ import annotations

import numpy as np

from ..autodiff import RngStream, Tensor, ops
from ..validation import ValidationError


def generator_for(rng, dropout_on: bool):
    """Resolve the dropout noise source; None is fine when dropout is off."""
    if not dropout_on:
        return None
    if rng is None:
        raise ValidationError("dropout_on=True requires an rng")
    return rng.generator() if isinstance(rng, RngStream) else rng


def check_tag(params, expected: str) -> None:
    if params.architecture != expected:
        raise ValidationError(
            f"params carry architecture {params.architecture!r}, not {expected!r}"
        )


def check_length(length: int, config) -> None:
    if length > config.max_positions:
        raise ValidationError(
            f"sequence length {length} exceeds max_positions {config.max_positions}"
        )


def linear(x, weight, bias) -> Tensor:
    return ops.add(ops.matmul(x, weight), bias)


def feed_forward(x, w1, b1, w2, b2) -> Tensor:
    return linear(ops.relu(linear(x, w1, b1)), w2, b2)


def split_heads(x, num_heads: int) -> Tensor:
    """(B, T, d) -> (B, heads, T, d/heads)."""
    b, t, d = x.data.shape
    per_head = d // num_heads
    return ops.transpose(ops.reshape(x, (b, t, num_heads, per_head)), (0, 2, 1, 3))


def merge_heads(x) -> Tensor:
    """(B, heads, T, d/heads) -> (B, T, d)."""
    b, heads, t, per_head = x.data.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, t, heads * per_head))


def broadcast_token(token, batch_size: int) -> Tensor:
    """Tile a (d,) token to (B, 1, d), keeping the gradient path."""
    d = token.data.shape[0]
    anchor = Tensor(np.zeros((batch_size, 1, d)))
    return ops.add(anchor, ops.reshape(token, (1, 1, d)))


def shifted_history(stream, start_token) -> Tensor:
    """Prepend the start token and drop the last step: key j holds step j-1.

    With the causal mask "j <= t" this exposes exactly the strictly-past
    interactions (plus the start token) to the query at position t.
    """
    b, t, _ = stream.data.shape
    start_block = broadcast_token(start_token, b)
    if t == 1:
        return start_block
    return ops.concat([start_block, ops.narrow(stream, 1, 0, t - 1)], axis=1)


def positions_block(pos_table, length: int) -> Tensor:
    return ops.narrow(pos_table, 0, 0, length)
