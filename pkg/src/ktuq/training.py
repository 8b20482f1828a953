"""Adam optimization with linear-warmup/cosine decay, plus deterministic
teacher-forced training and dropout-off evaluation.

Single-threaded by design: batches run in a fixed shuffled order and every
reduction (loss averaging, gradient norms, Adam updates) walks parameters in
manifest order, so identical seeds give bitwise-identical runs.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import RngStream, Tape, ops
from .data import DatasetSplit, EmbeddingTable, QuestionBank, make_batches
from .metrics import MetricsReport, metrics_report
from .models import (
    ModelConfig,
    ModelParams,
    init_params,
    predict_logits,
    question_feature_matrix,
    save_checkpoint,
)
from .validation import (
    TrainingDivergedError,
    ValidationError,
    check_non_negative_int,
    check_positive_int,
)

INIT_STREAM = 0
SHUFFLE_STREAM_BASE = 10_000_000
DROPOUT_STREAM_BASE = 20_000_000

LOG_COLUMNS = ("epoch", "train_loss", "val_accuracy", "val_f1", "val_auc")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    learning_rate: float = 3e-4
    batch_size: int = 64
    epochs: int = 100
    warmup_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    max_grad_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0.0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValidationError(
                f"warmup_fraction must lie in [0, 1), got {self.warmup_fraction}"
            )
        check_positive_int("batch_size", self.batch_size)
        check_non_negative_int("epochs", self.epochs)
        check_non_negative_int("seed", self.seed)
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValidationError(f"{name} must lie in [0, 1), got {value}")
        if not self.adam_epsilon > 0.0:
            raise ValidationError("adam_epsilon must be positive")
        if not self.max_grad_norm > 0.0:
            raise ValidationError("max_grad_norm must be positive")


@dataclass(frozen=True)
class LrSchedule:
    peak_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not self.peak_lr > 0.0:
            raise ValidationError(f"peak_lr must be positive, got {self.peak_lr}")
        check_non_negative_int("warmup_steps", self.warmup_steps)
        check_non_negative_int("total_steps", self.total_steps)
        if self.warmup_steps > self.total_steps:
            raise ValidationError("warmup_steps cannot exceed total_steps")


def lr_at_step(schedule: LrSchedule, step: int) -> float:
    """Linear 0 -> peak over warmup, then cosine peak -> 0 at total_steps."""
    if not 0 <= step <= schedule.total_steps:
        raise ValidationError(
            f"step must lie in 0..{schedule.total_steps}, got {step}"
        )
    if step < schedule.warmup_steps:
        return schedule.peak_lr * step / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    if span == 0:
        return schedule.peak_lr
    progress = (step - schedule.warmup_steps) / span
    return schedule.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step: int = 0


def init_optimizer(params: ModelParams) -> OptimizerState:
    return OptimizerState(
        first_moment={n: np.zeros_like(t.data) for n, t in params.tensors.items()},
        second_moment={n: np.zeros_like(t.data) for n, t in params.tensors.items()},
    )


def clip_global_norm(
    grads: dict[str, np.ndarray], order, max_norm: float
) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    The squared-norm accumulation walks ``order`` so the reduction order is
    fixed regardless of dict construction history.
    """
    total = 0.0
    for name in order:
        total += float(np.square(grads[name]).sum())
    norm = math.sqrt(total)
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {name: grads[name] * scale for name in order}, norm


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    *,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, OptimizerState]:
    """One bias-corrected Adam update, applied in manifest order in place."""
    t = state.step + 1
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    for name, tensor in params.tensors.items():
        grad = grads[name]
        if grad.shape != tensor.data.shape:
            raise ValidationError(
                f"gradient shape {grad.shape} does not match parameter "
                f"{name} of shape {tensor.data.shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise TrainingDivergedError(f"non-finite gradient for parameter {name}")
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * np.square(grad)
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        tensor.data = tensor.data - update
    state.step = t
    return params, state


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_accuracy: float
    val_f1: float
    val_auc: float


@dataclass(frozen=True)
class TrainResult:
    params: ModelParams
    epoch_log: list[EpochStats]
    checkpoint_path: str | None


def evaluate(
    params: ModelParams,
    sequences,
    batch_size: int = 64,
    embeddings: np.ndarray | None = None,
) -> MetricsReport:
    """Dropout-off metrics over every position of every sequence."""
    sequences = list(sequences)
    if not sequences:
        raise ValidationError("cannot evaluate on an empty split")
    probs, truth = [], []
    for batch in make_batches(sequences, batch_size):
        out = predict_logits(params, batch, dropout_on=False, embeddings=embeddings)
        probs.append(ops.softmax(out.logits).data.reshape(-1, 4))
        truth.append(batch.chosen.reshape(-1))
    return metrics_report(np.concatenate(probs), np.concatenate(truth))


def _write_epoch_log(path: str, rows: list[EpochStats]) -> None:
    lines = [",".join(LOG_COLUMNS)]
    for row in rows:
        lines.append(
            ",".join(
                [
                    str(row.epoch),
                    repr(row.train_loss),
                    repr(row.val_accuracy),
                    repr(row.val_f1),
                    repr(row.val_auc),
                ]
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def _write_config(path: str, config: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(asdict(config), handle, indent=2, sort_keys=True)
        handle.write("\n")


def train(
    split: DatasetSplit,
    config: TrainConfig,
    *,
    bank: QuestionBank | None = None,
    table: EmbeddingTable | None = None,
    out_dir: str | None = None,
    initial_params: ModelParams | None = None,
    on_epoch=None,
) -> TrainResult:
    """Teacher-forced training with per-epoch validation metrics.

    Writes config.json, epoch_log.csv, a per-epoch latest.ckpt (retained as
    the most recent only), and a final model.ckpt when out_dir is given.
    Divergence raises TrainingDivergedError pointing at the last clean epoch.
    """
    train_seqs = list(split.train)
    if not train_seqs:
        raise ValidationError("training split is empty")
    if not list(split.val):
        raise ValidationError("validation split is empty")

    embeddings = None
    if config.model.architecture == "llmkt":
        if bank is None or table is None:
            raise ValidationError(
                "llmkt training requires the question bank and embedding table"
            )
        embeddings = question_feature_matrix(bank, table, config.model)

    if initial_params is None:
        params = init_params(config.model, RngStream(config.seed, INIT_STREAM))
    else:
        if initial_params.architecture != config.model.architecture:
            raise ValidationError("initial_params architecture does not match config")
        params = initial_params

    latest_path = final_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_config(os.path.join(out_dir, "config.json"), config)
        latest_path = os.path.join(out_dir, "latest.ckpt")
        final_path = os.path.join(out_dir, "model.ckpt")

    n_batches = len(make_batches(train_seqs, config.batch_size))
    total_steps = config.epochs * n_batches
    schedule = None
    if total_steps > 0:
        schedule = LrSchedule(
            peak_lr=config.learning_rate,
            warmup_steps=int(config.warmup_fraction * total_steps),
            total_steps=total_steps,
        )

    state = init_optimizer(params)
    epoch_log: list[EpochStats] = []
    global_step = 0
    for epoch in range(config.epochs):
        order = RngStream(config.seed, SHUFFLE_STREAM_BASE + epoch).generator().permutation(
            len(train_seqs)
        )
        shuffled = [train_seqs[i] for i in order]
        loss_sum = 0.0
        target_count = 0
        for batch in make_batches(shuffled, config.batch_size):
            with Tape() as tape:
                out = predict_logits(
                    params,
                    batch,
                    dropout_on=True,
                    rng=RngStream(config.seed, DROPOUT_STREAM_BASE + global_step),
                    embeddings=embeddings,
                )
                loss = ops.sequence_cross_entropy(out.logits, batch.chosen)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                last_epoch = epoch - 1 if epoch > 0 else None
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, step {global_step}",
                    last_good_epoch=last_epoch,
                    last_checkpoint=latest_path if last_epoch is not None else None,
                )
            grads = tape.gradients(loss, params.tensors)
            try:
                grads, _ = clip_global_norm(grads, params.tensors.keys(), config.max_grad_norm)
                adam_step(
                    params,
                    grads,
                    state,
                    lr_at_step(schedule, global_step),
                    beta1=config.beta1,
                    beta2=config.beta2,
                    eps=config.adam_epsilon,
                )
            except TrainingDivergedError as err:
                err.last_good_epoch = epoch - 1 if epoch > 0 else None
                err.last_checkpoint = latest_path if epoch > 0 else None
                raise
            n_targets = batch.size * batch.length
            loss_sum += loss_value * n_targets
            target_count += n_targets
            global_step += 1

        report = evaluate(params, split.val, config.batch_size, embeddings)
        epoch_log.append(
            EpochStats(
                epoch=epoch,
                train_loss=loss_sum / target_count,
                val_accuracy=report.accuracy,
                val_f1=report.macro_f1,
                val_auc=report.macro_ovr_auc,
            )
        )
        if out_dir is not None:
            save_checkpoint(params, latest_path)
            _write_epoch_log(os.path.join(out_dir, "epoch_log.csv"), epoch_log)
        if on_epoch is not None:
            on_epoch(epoch_log[-1])

    if out_dir is not None:
        save_checkpoint(params, final_path)
        if config.epochs == 0:
            _write_epoch_log(os.path.join(out_dir, "epoch_log.csv"), epoch_log)
    return TrainResult(params=params, epoch_log=epoch_log, checkpoint_path=final_path)
