"""Central-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..validation import ValidationError, check_finite
from .tape import Tape, Tensor


def gradient_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    point: Mapping[str, np.ndarray],
    h: float = 1e-5,
) -> float:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` maps a name->Tensor table to a scalar Tensor and must be a pure
    function of those tensors (fix any random streams before calling). Every
    coordinate of every array in ``point`` is perturbed by ±h, so keep the
    point small. Returns the maximum relative error
    ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`` over all coordinates.
    """
    h = float(h)
    if not 1e-6 <= h <= 1e-3:
        raise ValidationError(f"step h must lie in [1e-6, 1e-3], got {h}")

    tensors = {name: Tensor(np.array(arr, dtype=np.float64), name=name)
               for name, arr in point.items()}
    with Tape() as tape:
        loss = f(tensors)
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ValidationError("gradient_check requires f to return a scalar Tensor")
    check_finite("loss", loss.data)
    analytic = tape.gradients(loss, tensors)

    def value_at() -> float:
        out = f(tensors)  # no tape active: plain evaluation
        return float(out.data)

    worst = 0.0
    for name, tensor in tensors.items():
        flat = tensor.data.reshape(-1)
        g_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            f_plus = value_at()
            flat[i] = original - h
            f_minus = value_at()
            flat[i] = original
            g_fd = (f_plus - f_minus) / (2.0 * h)
            g_ad = g_flat[i]
            err = abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd))
            if err > worst:
                worst = err
    return worst
