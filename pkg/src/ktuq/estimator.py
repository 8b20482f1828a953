"""Scikit-learn-style facade: fit on student sequences, predict option
probabilities with MC-dropout averaging."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import DatasetSplit, EmbeddingTable, QuestionBank, make_batches
from .models import ModelConfig, question_feature_matrix
from .training import TrainConfig, train
from .uncertainty import McConfig, mc_probabilities, summarize_batch


class KnowledgeTracer(BaseEstimator):
    """Next-response predictor over multiple-choice interaction sequences.

    ``X`` is a list of StudentSequence (all the same length); predictions
    cover every position of every sequence, flattened in sequence order.
    Predicted probabilities are the mean over ``mc_samples`` dropout-active
    passes, so ``predict_proba`` carries the model's uncertainty.
    """

    def __init__(
        self,
        architecture: str = "sakt",
        embedding_dim: int = 128,
        hidden_dim: int = 128,
        num_heads: int = 4,
        dropout_rate: float | None = None,
        max_positions: int = 100,
        llm_truncation_dim: int = 1024,
        llm_text_fields: int = 2,
        learning_rate: float = 3e-4,
        batch_size: int = 64,
        epochs: int = 10,
        warmup_fraction: float = 0.1,
        mc_samples: int = 30,
        seed: int = 0,
    ):
        self.architecture = architecture
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.dropout_rate = dropout_rate
        self.max_positions = max_positions
        self.llm_truncation_dim = llm_truncation_dim
        self.llm_text_fields = llm_text_fields
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.warmup_fraction = warmup_fraction
        self.mc_samples = mc_samples
        self.seed = seed

    def fit(
        self,
        X,
        y=None,
        *,
        bank: QuestionBank,
        table: EmbeddingTable | None = None,
        validation=None,
    ):
        """Train on the sequences in X; returns self.

        Targets live inside the sequences, so ``y`` is ignored. Per-epoch
        validation metrics use ``validation`` when given, else X itself.
        """
        model = ModelConfig(
            architecture=self.architecture,
            n_questions=bank.n_questions,
            embedding_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            dropout_rate=self.dropout_rate,
            max_positions=self.max_positions,
            llm_truncation_dim=self.llm_truncation_dim,
            llm_text_fields=self.llm_text_fields,
        )
        config = TrainConfig(
            model=model,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            warmup_fraction=self.warmup_fraction,
            seed=self.seed,
        )
        split = DatasetSplit(
            train=tuple(X),
            val=tuple(validation) if validation is not None else tuple(X),
        )
        result = train(split, config, bank=bank, table=table)
        self.params_ = result.params
        self.epoch_log_ = result.epoch_log
        self.features_ = (
            question_feature_matrix(bank, table, model)
            if self.architecture == "llmkt"
            else None
        )
        self.classes_ = np.arange(4)
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(
                "this KnowledgeTracer is not fitted yet; call fit first"
            )

    def predict_proba(self, X) -> np.ndarray:
        """MC-mean class probabilities, one row per (sequence, position)."""
        self._check_fitted()
        mc = McConfig(n_samples=self.mc_samples, base_seed=self.seed)
        rows = []
        for batch in make_batches(X, self.batch_size):
            summary = summarize_batch(
                mc_probabilities(self.params_, batch, mc, self.features_)
            )
            rows.append(summary.mean_probs.reshape(-1, summary.mean_probs.shape[-1]))
        return np.concatenate(rows)

    def predict(self, X) -> np.ndarray:
        """Most likely chosen option per position (ties to the lowest index)."""
        return np.argmax(self.predict_proba(X), axis=-1)

    def score(self, X, y=None) -> float:
        """Accuracy against the options recorded in the sequences."""
        predicted = self.predict(X)
        truth = np.concatenate([np.asarray(seq.chosen) for seq in X])
        return float(np.mean(predicted == truth))
