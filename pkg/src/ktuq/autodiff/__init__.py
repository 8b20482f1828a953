"""Minimal reverse-mode autodiff over float64 numpy arrays."""

from .gradcheck import gradient_check
from .rng import ALGORITHM_ID, RngStream
from .tape import Tape, Tensor, as_tensor, current_tape
from . import ops

__all__ = [
    "ALGORITHM_ID",
    "RngStream",
    "Tape",
    "Tensor",
    "as_tensor",
    "current_tape",
    "gradient_check",
    "ops",
]
