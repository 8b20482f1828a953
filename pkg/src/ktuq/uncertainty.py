"""MC-dropout predictive inference.

Dropout stays active at inference; M stochastic passes (one RngStream per
pass index) yield per-position class probabilities. Uncertainty is reported
as the Shannon entropy (nats) of the mean distribution and as the
population standard deviation of each class probability across passes,
averaged over classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import RngStream, ops
from .models import ModelParams, predict_logits
from .validation import ValidationError, check_non_negative_int, check_positive_int

N_CLASSES = 4
MAX_ENTROPY = float(np.log(N_CLASSES))


@dataclass(frozen=True)
class McConfig:
    """Number of stochastic passes and the seed their streams derive from."""

    n_samples: int = 30
    base_seed: int = 0

    def __post_init__(self):
        check_positive_int("n_samples", self.n_samples)
        check_non_negative_int("base_seed", self.base_seed)


@dataclass(frozen=True)
class PredictiveSample:
    """One pass's class distribution at a single position."""

    index: int
    probabilities: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probabilities, dtype=np.float64)
        object.__setattr__(self, "probabilities", probs)
        if probs.ndim != 1:
            raise ValidationError("sample probabilities must be a vector")
        if abs(float(probs.sum()) - 1.0) > 1e-9 or np.any(probs < 0.0):
            raise ValidationError("sample probabilities must form a distribution")


@dataclass(frozen=True)
class PredictiveSummary:
    """Aggregated MC statistics at a single position."""

    mean_probs: np.ndarray
    total_entropy: float
    class_std: np.ndarray
    mean_std: float
    predicted_class: int
    n_samples: int


@dataclass(frozen=True)
class McBatchSummary:
    """Vectorized per-position MC statistics for a whole batch (B, T, ...)."""

    mean_probs: np.ndarray
    total_entropy: np.ndarray
    class_std: np.ndarray
    mean_std: np.ndarray
    predicted_class: np.ndarray
    n_samples: int


def _coerce_samples(samples) -> np.ndarray:
    """Accept a list of PredictiveSample or an (M, K) array; return (M, K)."""
    if isinstance(samples, np.ndarray):
        arr = samples.astype(np.float64, copy=False)
    else:
        rows = list(samples)
        if rows and isinstance(rows[0], PredictiveSample):
            rows = [s.probabilities for s in rows]
        arr = np.asarray(rows, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("at least one predictive sample is required")
    if arr.ndim != 2:
        raise ValidationError(f"samples must form an (M, K) table, got shape {arr.shape}")
    return arr


def _ensemble_mean(probs: np.ndarray) -> np.ndarray:
    """Mean over the leading sample axis, exact where all samples agree.

    A collapsed ensemble (dropout rate 0, or M identical passes) must
    reproduce the single-pass value bitwise — and hence zero spread —
    which naive sum-then-divide can miss by an ulp.
    """
    mean = probs.mean(axis=0)
    constant = (probs == probs[:1]).all(axis=0)
    return np.where(constant, probs[0], mean)


def _entropy_of(dist: np.ndarray) -> np.ndarray:
    """-sum p ln p over the last axis with the 0 ln 0 := 0 convention."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(dist > 0.0, dist * np.log(dist), 0.0)
    return -terms.sum(axis=-1)


def total_entropy(samples) -> float:
    """Entropy (nats) of the across-sample mean distribution."""
    arr = _coerce_samples(samples)
    return float(_entropy_of(_ensemble_mean(arr)))


def prediction_stddev(samples) -> tuple[np.ndarray, float]:
    """Per-class population std across samples, and its mean over classes."""
    arr = _coerce_samples(samples)
    mu = _ensemble_mean(arr)
    class_std = np.sqrt(np.square(arr - mu).mean(axis=0))
    return class_std, float(class_std.mean())


def summarize(samples) -> PredictiveSummary:
    """Bundle mean distribution, entropy, stds, and the argmax prediction.

    Ties in the mean distribution resolve to the lowest class index.
    """
    arr = _coerce_samples(samples)
    mean_probs = _ensemble_mean(arr)
    class_std, mean_std = prediction_stddev(arr)
    return PredictiveSummary(
        mean_probs=mean_probs,
        total_entropy=float(_entropy_of(mean_probs)),
        class_std=class_std,
        mean_std=mean_std,
        predicted_class=int(np.argmax(mean_probs)),
        n_samples=arr.shape[0],
    )


def mc_probabilities(
    params: ModelParams, batch, mc: McConfig, embeddings=None
) -> np.ndarray:
    """(M, B, T, K) class probabilities from M dropout-active passes.

    Pass m uses RngStream(base_seed, m), so runs are reproducible and the
    passes independent; probabilities are the softmax of each pass's logits.
    """
    passes = []
    for m in range(mc.n_samples):
        out = predict_logits(
            params, batch, dropout_on=True,
            rng=RngStream(mc.base_seed, m), embeddings=embeddings,
        )
        passes.append(ops.softmax(out.logits).data)
    return np.stack(passes)


def mc_predict(
    params: ModelParams, batch, mc: McConfig, embeddings=None
) -> list[list[list[PredictiveSample]]]:
    """Per-position MC samples, indexed [student][position][pass]."""
    probs = mc_probabilities(params, batch, mc, embeddings)
    _, n_students, n_positions, _ = probs.shape
    return [
        [
            [PredictiveSample(m, probs[m, b, t]) for m in range(mc.n_samples)]
            for t in range(n_positions)
        ]
        for b in range(n_students)
    ]


def summarize_batch(probabilities: np.ndarray) -> McBatchSummary:
    """Vectorized summarize over an (M, B, T, K) probability stack."""
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.ndim != 4 or probs.shape[0] < 1:
        raise ValidationError(
            f"expected an (M, B, T, K) probability stack, got shape {probs.shape}"
        )
    mean_probs = _ensemble_mean(probs)
    class_std = np.sqrt(np.square(probs - mean_probs).mean(axis=0))
    return McBatchSummary(
        mean_probs=mean_probs,
        total_entropy=_entropy_of(mean_probs),
        class_std=class_std,
        mean_std=class_std.mean(axis=-1),
        predicted_class=np.argmax(mean_probs, axis=-1),
        n_samples=probs.shape[0],
    )
