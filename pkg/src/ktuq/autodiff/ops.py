"""Differentiable operators.

Exactly the operator set the sequence models need: dense linear algebra,
pointwise nonlinearities, embedding gathers, masked softmax attention, an LSTM
cell, inverted dropout, and the cross-entropy pieces. Every op computes with
numpy float64 and, when a tape is active, records a backward closure; with no
tape the ops are plain numpy and cost nothing extra.

Conventions:
  * masked attention scores use -inf before the row softmax; the softmax here
    max-shifts against the finite row maximum, so masked entries come out as
    exact zeros and never produce NaN,
  * log/clamp paths clamp at ``EPS`` (1e-12),
  * dropout is inverted (survivors scaled by 1/(1-rate)) and its mask depends
    only on the supplied random stream.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..validation import ValidationError, check_finite
from .rng import RngStream
from .tape import Tensor, as_tensor, current_tape

EPS = 1e-12


def _record(out, parents, backward):
    tape = current_tape()
    if tape is not None:
        tape.record(out, parents, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), backward)


def neg(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(-x.data)
    return _record(out, (x,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _record(out, (a, b), backward)


def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    factor = float(factor)
    out = Tensor(x.data * factor)
    return _record(out, (x,), lambda g: (g * factor,))


def add_const(x, constant: np.ndarray) -> Tensor:
    """Add a non-learned array (e.g. a causal mask); no gradient to it."""
    x = as_tensor(x)
    out = Tensor(x.data + constant)
    return _record(out, (x,), lambda g: (_unbroadcast(g, x.data.shape),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValidationError("matmul operands must have ndim >= 2")
    out = Tensor(np.matmul(a.data, b.data))

    def backward(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _record(out, (a, b), backward)


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------

def embedding_lookup(table, indices) -> Tensor:
    """Gather rows of ``table`` (V, d) by an integer index array."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValidationError("embedding indices must be integers")
    n_rows = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ValidationError(
            f"embedding index out of range: table has {n_rows} rows, "
            f"indices span [{idx.min()}, {idx.max()}]"
        )
    out = Tensor(table.data[idx])

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(out, tuple(tensors), backward)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    x = as_tensor(x)
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    if x.data.shape[axis] < start + length:
        raise ValidationError("narrow slice exceeds axis length")
    out = Tensor(x.data[index].copy())

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _record(out, (x,), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.data.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.data.ndim - 2)) + (x.data.ndim - 1, x.data.ndim - 2)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.transpose(x.data, axes))
    return _record(out, (x,), lambda g: (np.transpose(g, inverse),))


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------

def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    return _record(out, (x,), lambda g: (g * (x.data > 0.0),))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.logaddexp(0.0, x.data))
    return _record(out, (x,), lambda g: (g * expit(x.data),))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise ValidationError("log requires strictly positive input")
    out = Tensor(np.log(x.data))
    return _record(out, (x,), lambda g: (g / x.data,))


def sqrt_(x) -> Tensor:
    """Elementwise square root; requires strictly positive input."""
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise ValidationError("sqrt_ requires strictly positive input")
    y = np.sqrt(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * (0.5 / y),))


def reciprocal(x) -> Tensor:
    """Elementwise 1/x; requires nonzero input."""
    x = as_tensor(x)
    if np.any(x.data == 0.0):
        raise ValidationError("reciprocal requires nonzero input")
    y = 1.0 / x.data
    out = Tensor(y)
    return _record(out, (x,), lambda g: (-g * y * y,))


def clamp_min(x, floor: float) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, floor))
    mask = x.data > floor
    return _record(out, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, x.data.shape).copy(),)

    return _record(out, (x,), backward)


def mean_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def cumsum(x, axis: int) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.cumsum(x.data, axis=axis))

    def backward(g):
        flipped = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return (flipped,)

    return _record(out, (x,), backward)


def take_along_last(x, indices) -> Tensor:
    """Pick one entry per row along the last axis (target-prob gather)."""
    x = as_tensor(x)
    idx = np.asarray(indices)
    if idx.shape != x.data.shape[:-1]:
        raise ValidationError(
            f"index shape {idx.shape} must match {x.data.shape[:-1]}"
        )
    k = x.data.shape[-1]
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise ValidationError(f"gather index out of range for last axis of {k}")
    out = Tensor(np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0])

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        return (gx,)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# softmax / losses
# ---------------------------------------------------------------------------

def _softmax_raw(x: Tensor, axis: int) -> Tensor:
    """Max-shifted softmax; tolerates -inf entries (masked positions -> 0)."""
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    weights = exp / exp.sum(axis=axis, keepdims=True)
    out = Tensor(weights)

    def backward(g):
        inner = (g * weights).sum(axis=axis, keepdims=True)
        return (weights * (g - inner),)

    return _record(out, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.data.shape == () or x.data.shape[axis] == 0:
        raise ValidationError("softmax axis must be non-empty")
    check_finite("softmax input", x.data)
    return _softmax_raw(x, axis)


def cross_entropy(probabilities, target: int) -> Tensor:
    """Negative log-probability of ``target`` under a probability vector.

    Probabilities are clamped at EPS before the log, so a zero at the target
    yields -log(EPS) rather than inf.
    """
    p = as_tensor(probabilities)
    if p.data.ndim != 1:
        raise ValidationError("cross_entropy expects a 1-D probability vector")
    check_finite("probabilities", p.data)
    if np.any(p.data < 0.0) or abs(float(p.data.sum()) - 1.0) > 1e-6:
        raise ValidationError("probabilities must be non-negative and sum to 1")
    target = int(target)
    if not 0 <= target < p.data.shape[0]:
        raise ValidationError(f"target {target} out of range")
    pt = max(float(p.data[target]), EPS)
    out = Tensor(-np.log(pt))

    def backward(g):
        gp = np.zeros_like(p.data)
        if p.data[target] > EPS:
            gp[target] = -float(g) / pt
        return (gp,)

    return _record(out, (p,), backward)


def sequence_cross_entropy(logits, targets) -> Tensor:
    """Mean token cross-entropy of a (..., K) logit tensor vs integer targets."""
    logits = as_tensor(logits)
    probs = softmax(logits, axis=-1)
    picked = take_along_last(probs, targets)
    return mean_(neg(log(clamp_min(picked, EPS))))


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------

def dropout(x, rate: float, rng, active: bool) -> Tensor:
    """Inverted per-element dropout.

    Inactive (``active=False`` or ``rate == 0``) returns the input tensor
    unchanged — the exact same object, so the bitwise-identity contract is
    trivially true. ``rng`` may be an :class:`RngStream` (a fresh generator is
    derived, so the same stream always produces the same mask) or an already
    positioned ``numpy.random.Generator`` (consumed in call order, which is how
    a forward pass gives each dropout site its own slice of one stream).
    """
    rate = float(rate)
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not active or rate == 0.0:
        return x
    if isinstance(rng, RngStream):
        gen = rng.generator()
    elif isinstance(rng, np.random.Generator):
        gen = rng
    else:
        raise ValidationError("active dropout needs an RngStream or Generator")
    keep = gen.random(x.data.shape) >= rate
    mask = keep / (1.0 - rate)
    out = Tensor(x.data * mask)
    return _record(out, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# recurrent / attention building blocks
# ---------------------------------------------------------------------------

def lstm_step(x, h_prev, c_prev, w_ih, w_hh, bias, return_gates: bool = False):
    """One standard LSTM cell update.

    Gate layout along the last axis of the projections is [input, forget,
    candidate, output]. Returns ``(h, c)``, or ``(h, c, gates_dict)`` when
    ``return_gates`` is set (used by tests to inspect activations).
    """
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    hidden = h_prev.data.shape[-1]
    if w_hh.data.shape[-1] != 4 * hidden:
        raise ValidationError("LSTM projection width must be 4x hidden size")
    gates = add(add(matmul(x, w_ih), matmul(h_prev, w_hh)), bias)
    i_gate = sigmoid(narrow(gates, -1, 0, hidden))
    f_gate = sigmoid(narrow(gates, -1, hidden, hidden))
    g_cand = tanh(narrow(gates, -1, 2 * hidden, hidden))
    o_gate = sigmoid(narrow(gates, -1, 3 * hidden, hidden))
    c_new = add(mul(f_gate, c_prev), mul(i_gate, g_cand))
    h_new = mul(o_gate, tanh(c_new))
    if return_gates:
        return h_new, c_new, {
            "input": i_gate, "forget": f_gate, "candidate": g_cand, "output": o_gate,
        }
    return h_new, c_new


def layer_norm(x, gain, bias) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.data.shape != x.data.shape[-1:] or bias.data.shape != x.data.shape[-1:]:
        raise ValidationError("layer_norm gain/bias must match the last axis")
    mu = mean_(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    variance = mean_(mul(centered, centered), axis=-1, keepdims=True)
    inv_std = reciprocal(sqrt_(add_const(variance, EPS)))
    return add(mul(mul(centered, inv_std), gain), bias)


_MASK_CACHE: dict[int, np.ndarray] = {}


def causal_mask_bias(length: int) -> np.ndarray:
    """(T, T) additive bias: 0 where key j <= query i, -inf where j > i."""
    cached = _MASK_CACHE.get(length)
    if cached is None:
        cached = np.triu(np.full((length, length), -np.inf), k=1)
        _MASK_CACHE[length] = cached
    return cached


def causal_attention_weights(queries, keys, extra_score_bias=None) -> Tensor:
    """Causally masked attention weights (softmax rows), without the value mix.

    Position i may attend keys j <= i only; weights are exactly zero beyond
    the visible prefix and each visible row sums to 1.
    """
    q, k = as_tensor(queries), as_tensor(keys)
    if q.data.shape[-1] != k.data.shape[-1]:
        raise ValidationError("query/key dims differ")
    t_q, t_k = q.data.shape[-2], k.data.shape[-2]
    if t_q != t_k:
        raise ValidationError(f"query length {t_q} != key length {t_k}")
    dim = q.data.shape[-1]
    scores = scale(matmul(q, transpose(k)), 1.0 / np.sqrt(dim))
    if extra_score_bias is not None:
        scores = add(scores, extra_score_bias)
    masked = add_const(scores, causal_mask_bias(t_q))
    return _softmax_raw(masked, axis=-1)


def causal_attention(queries, keys, values, extra_score_bias=None):
    """Scaled dot-product attention with a strict causal mask.

    Shapes are (..., T, d) with matching leading dims; position i may attend
    keys j <= i only (the stream is pre-shifted by the caller when "past only"
    is required). Returns ``(attended, weights)`` where weights rows sum to 1
    over the visible prefix and are exactly zero beyond it.
    """
    k, v = as_tensor(keys), as_tensor(values)
    if k.data.shape[:-1] != v.data.shape[:-1]:
        raise ValidationError("key/value lengths differ")
    weights = causal_attention_weights(queries, k, extra_score_bias)
    attended = matmul(weights, v)
    return attended, weights
