"""Shared exception types and input-validation helpers.

Every module-boundary check in the package funnels through these so the CLI can
map failures onto its exit-code contract (usage errors vs. data errors).
"""

from __future__ import annotations

import numpy as np


class KtError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(KtError, ValueError):
    """A caller broke an argument contract (bad shape, range, or type)."""


class DataFormatError(KtError, ValueError):
    """An input file is malformed, inconsistent, or references unknown ids."""


class TrainingDivergedError(KtError, RuntimeError):
    """Training hit a non-finite loss or gradient.

    Carries the last epoch that completed cleanly and, when the run writes
    checkpoints, the path of the last good one.
    """

    def __init__(self, message, last_good_epoch=None, last_checkpoint=None):
        super().__init__(message)
        self.last_good_epoch = last_good_epoch
        self.last_checkpoint = last_checkpoint


def check_finite(name: str, array: np.ndarray) -> np.ndarray:
    """Raise ValidationError unless every entry of ``array`` is finite."""
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{name} contains non-finite values")
    return array


def check_probability_vector(name: str, p: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {p.shape}")
    check_finite(name, p)
    if np.any(p < -atol):
        raise ValidationError(f"{name} has negative entries")
    total = float(p.sum())
    if abs(total - 1.0) > max(atol, 1e-6):
        raise ValidationError(f"{name} must sum to 1, got {total!r}")
    return p


def check_option_index(name: str, value: int) -> int:
    value = int(value)
    if not 0 <= value <= 3:
        raise ValidationError(f"{name} must be in 0..3, got {value}")
    return value


def check_fraction(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ValidationError(f"{name} must be strictly between 0 and 1, got {value}")
    return value


def check_positive_int(name: str, value: int) -> int:
    if int(value) != value or int(value) <= 0:
        raise ValidationError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_non_negative_int(name: str, value: int) -> int:
    if int(value) != value or int(value) < 0:
        raise ValidationError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)
