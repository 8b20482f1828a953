"""Knowledge-tracing models with Monte-Carlo-dropout uncertainty.

Four next-response predictors over multiple-choice interaction sequences, a
synthetic student simulator, training/evaluation utilities, and plot-ready
uncertainty analyses — all on a small deterministic float64 autodiff core.
"""

from .estimator import KnowledgeTracer

__all__ = ["KnowledgeTracer"]
__version__ = "0.1.0"
