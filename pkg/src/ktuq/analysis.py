"""Plot-ready uncertainty reports over MC-dropout predictions.

Every analysis is a pure function over collected PredictionRecords — model
forwards happen once, in collect_predictions. Box statistics use
midpoint-interpolated quartiles with Tukey 1.5*IQR whiskers clamped to the
data; CSV floats use the shortest round-trip representation so reruns are
byte-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .data import DatasetSplit, QuestionBank, make_batches, question_difficulty
from .metrics import MetricsReport
from .models import ModelParams
from .training import evaluate
from .uncertainty import McConfig, mc_probabilities, summarize_batch
from .validation import ValidationError

REPORT_FILES = (
    "predictions.csv",
    "entropy_by_model_correctness.csv",
    "entropy_by_student_correctness.csv",
    "std_by_student_correctness.csv",
    "entropy_by_position.csv",
    "std_by_position.csv",
    "difficulty_by_position.csv",
    "entropy_difficulty_correlation.csv",
    "metrics.json",
)

BOX_COLUMNS = ("group", "count", "mean", "median", "q1", "q3", "whisker_low", "whisker_high")


@dataclass(frozen=True)
class PredictionRecord:
    """Everything the analyses need about one (student, position) prediction."""

    student_id: int
    position: int
    quiz_slot: int
    question_id: int
    chosen_option: int
    correct_option: int
    predicted_class: int
    model_correct: bool
    student_correct: bool
    total_entropy: float
    mean_std: float
    mean_probs: tuple[float, float, float, float]


@dataclass(frozen=True)
class AnalysisReport:
    """A small fixed-header table, one analysis per instance."""

    tag: str
    columns: tuple[str, ...]
    rows: list[tuple]


@dataclass(frozen=True)
class CorrelationResult:
    pearson: float
    spearman: float
    report: AnalysisReport


def collect_predictions(
    params: ModelParams,
    sequences,
    bank: QuestionBank,
    mc: McConfig,
    embeddings: np.ndarray | None = None,
    batch_size: int = 64,
) -> list[PredictionRecord]:
    """One record per (student, position): MC summary joined with ground truth.

    The model prediction is the argmax of the MC-mean distribution.
    """
    sequences = list(sequences)
    if not sequences:
        raise ValidationError("cannot collect predictions from an empty split")
    records: list[PredictionRecord] = []
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start : start + batch_size]
        batch = make_batches(chunk, batch_size)[0]
        summary = summarize_batch(mc_probabilities(params, batch, mc, embeddings))
        for i, seq in enumerate(chunk):
            for t in range(len(seq)):
                chosen = int(seq.chosen[t])
                question_id = int(seq.question_ids[t])
                correct = int(bank.record(question_id).correct_option)
                predicted = int(summary.predicted_class[i, t])
                records.append(
                    PredictionRecord(
                        student_id=int(batch.student_ids[i]),
                        position=t,
                        quiz_slot=int(seq.quiz_slots[t]),
                        question_id=question_id,
                        chosen_option=chosen,
                        correct_option=correct,
                        predicted_class=predicted,
                        model_correct=predicted == chosen,
                        student_correct=chosen == correct,
                        total_entropy=float(summary.total_entropy[i, t]),
                        mean_std=float(summary.mean_std[i, t]),
                        mean_probs=tuple(float(p) for p in summary.mean_probs[i, t]),
                    )
                )
    return records


def _box_stats(values: np.ndarray) -> tuple:
    q1 = float(np.percentile(values, 25, method="midpoint"))
    median = float(np.percentile(values, 50, method="midpoint"))
    q3 = float(np.percentile(values, 75, method="midpoint"))
    iqr = q3 - q1
    low_fence = q1 - 1.5 * iqr
    high_fence = q3 + 1.5 * iqr
    whisker_low = float(values[values >= low_fence].min())
    whisker_high = float(values[values <= high_fence].max())
    return (len(values), float(values.mean()), median, q1, q3, whisker_low, whisker_high)


def _grouped_box_report(tag: str, groups: list[tuple[str, np.ndarray]]) -> AnalysisReport:
    rows = []
    for name, values in groups:
        if values.size == 0:
            raise ValidationError(f"group {name} is empty")
        rows.append((name, *_box_stats(values)))
    return AnalysisReport(tag=tag, columns=BOX_COLUMNS, rows=rows)


def _measure_of(records, measure: str) -> np.ndarray:
    if measure == "entropy":
        return np.array([r.total_entropy for r in records])
    if measure == "std":
        return np.array([r.mean_std for r in records])
    raise ValidationError(f"unknown measure {measure!r}; expected 'entropy' or 'std'")


def entropy_by_model_correctness(records) -> AnalysisReport:
    """Entropy distribution split by whether the model predicted the choice."""
    records = list(records)
    flags = np.array([r.model_correct for r in records], dtype=bool)
    entropy = _measure_of(records, "entropy")
    return _grouped_box_report(
        "entropy_by_model_correctness",
        [
            ("model_correct", entropy[flags]),
            ("model_incorrect", entropy[~flags]),
        ],
    )


def uncertainty_by_student_correctness(records, measure: str) -> AnalysisReport:
    """Measure distribution split by whether the student answered correctly."""
    records = list(records)
    flags = np.array([r.student_correct for r in records], dtype=bool)
    values = _measure_of(records, measure)
    return _grouped_box_report(
        f"{measure}_by_student_correctness",
        [
            ("student_correct", values[flags]),
            ("student_incorrect", values[~flags]),
        ],
    )


def uncertainty_by_position(records, measure: str) -> AnalysisReport:
    """Mean and standard error of the measure at each sequence position."""
    records = list(records)
    if not records:
        raise ValidationError("no records to analyze")
    values = _measure_of(records, measure)
    positions = np.array([r.position for r in records])
    slots = {r.position: r.quiz_slot for r in records}
    rows = []
    for position in sorted(slots):
        group = values[positions == position]
        if np.all(group == group[0]):
            # a constant group has mean exactly its value and zero spread;
            # naive summation can miss both by an ulp
            mean, stderr = float(group[0]), 0.0
        else:
            mean = float(group.mean())
            stderr = float(group.std() / np.sqrt(group.size))
        rows.append((position, slots[position], group.size, mean, stderr))
    return AnalysisReport(
        tag=f"{measure}_by_position",
        columns=("position", "quiz_slot", "count", "mean", "stderr"),
        rows=rows,
    )


def difficulty_by_position(split: DatasetSplit, bank: QuestionBank) -> AnalysisReport:
    """Mean train-split difficulty of the question answered at each position.

    Difficulty comes from the training split (empirical error rate); the
    curve averages over the validation sequences, matching the entropy
    curves. Questions unseen in training are skipped.
    """
    if not list(split.val):
        raise ValidationError("validation split is empty")
    difficulty = question_difficulty(split.train, bank)
    per_position: dict[int, list[float]] = {}
    slots: dict[int, int] = {}
    for seq in split.val:
        for t in range(len(seq)):
            qid = int(seq.question_ids[t])
            if qid not in difficulty:
                continue
            per_position.setdefault(t, []).append(difficulty[qid])
            slots[t] = int(seq.quiz_slots[t])
    rows = []
    for position in sorted(per_position):
        group = np.array(per_position[position])
        rows.append((position, slots[position], group.size, float(group.mean())))
    return AnalysisReport(
        tag="difficulty_by_position",
        columns=("position", "quiz_slot", "count", "mean_difficulty"),
        rows=rows,
    )


def pearson_r(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValidationError("correlation needs at least 2 paired points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sqrt(np.square(dx).mean()))
    sy = float(np.sqrt(np.square(dy).mean()))
    if sx == 0.0 or sy == 0.0:
        raise ValidationError("correlation is undefined for a zero-variance variable")
    return float((dx * dy).mean() / (sx * sy))


def entropy_difficulty_correlation(records, difficulty: dict[int, float]) -> CorrelationResult:
    """Per-question mean entropy joined with difficulty, plus Pearson/Spearman."""
    records = list(records)
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for record in records:
        if record.question_id not in difficulty:
            continue
        sums[record.question_id] = sums.get(record.question_id, 0.0) + record.total_entropy
        counts[record.question_id] = counts.get(record.question_id, 0) + 1
    question_ids = sorted(sums)
    if len(question_ids) < 2:
        raise ValidationError(
            "correlation needs at least 2 questions with defined difficulty"
        )
    mean_entropy = np.array([sums[q] / counts[q] for q in question_ids])
    difficulties = np.array([difficulty[q] for q in question_ids])
    pearson = pearson_r(mean_entropy, difficulties)
    spearman = float(spearmanr(mean_entropy, difficulties).statistic)
    rows = [
        (q, counts[q], sums[q] / counts[q], difficulty[q])
        for q in question_ids
    ]
    return CorrelationResult(
        pearson=pearson,
        spearman=spearman,
        report=AnalysisReport(
            tag="entropy_difficulty_correlation",
            columns=("question_id", "count", "mean_entropy", "difficulty"),
            rows=rows,
        ),
    )


def predictions_report(records) -> AnalysisReport:
    columns = (
        "student_id", "position", "quiz_slot", "question_id", "chosen_option",
        "correct_option", "predicted_class", "model_correct", "student_correct",
        "total_entropy", "mean_std",
        "mean_prob_0", "mean_prob_1", "mean_prob_2", "mean_prob_3",
    )
    rows = [
        (
            r.student_id, r.position, r.quiz_slot, r.question_id, r.chosen_option,
            r.correct_option, r.predicted_class, r.model_correct, r.student_correct,
            r.total_entropy, r.mean_std, *r.mean_probs,
        )
        for r in records
    ]
    return AnalysisReport(tag="predictions", columns=columns, rows=rows)


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def report_to_csv(report: AnalysisReport) -> str:
    lines = [",".join(report.columns)]
    for row in report.rows:
        lines.append(",".join(_format_cell(cell) for cell in row))
    return "\n".join(lines) + "\n"


def write_report(report: AnalysisReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(report_to_csv(report))


def _metrics_payload(
    deterministic: MetricsReport, records, correlation: CorrelationResult
) -> dict:
    model_correct = [r.model_correct for r in records]
    return {
        "accuracy": deterministic.accuracy,
        "macro_f1": deterministic.macro_f1,
        "macro_ovr_auc": deterministic.macro_ovr_auc,
        "mc_mean_accuracy": float(np.mean(model_correct)),
        "entropy_difficulty_pearson": correlation.pearson,
        "entropy_difficulty_spearman": correlation.spearman,
        "per_class_precision": [float(p) for p in deterministic.per_class_precision],
        "per_class_recall": [float(r) for r in deterministic.per_class_recall],
        "confusion": [[int(c) for c in row] for row in deterministic.confusion],
        "n_predictions": deterministic.n_predictions,
    }


def write_analysis(
    out_dir: str,
    params: ModelParams,
    bank: QuestionBank,
    split: DatasetSplit,
    mc: McConfig,
    embeddings: np.ndarray | None = None,
    batch_size: int = 64,
) -> dict:
    """Run every analysis on the validation split and write all report files.

    Returns the metrics.json payload.
    """
    os.makedirs(out_dir, exist_ok=True)
    records = collect_predictions(params, split.val, bank, mc, embeddings, batch_size)
    difficulty = question_difficulty(split.train, bank)
    correlation = entropy_difficulty_correlation(records, difficulty)
    deterministic = evaluate(params, split.val, batch_size, embeddings)

    write_report(predictions_report(records), os.path.join(out_dir, "predictions.csv"))
    write_report(
        entropy_by_model_correctness(records),
        os.path.join(out_dir, "entropy_by_model_correctness.csv"),
    )
    write_report(
        uncertainty_by_student_correctness(records, "entropy"),
        os.path.join(out_dir, "entropy_by_student_correctness.csv"),
    )
    write_report(
        uncertainty_by_student_correctness(records, "std"),
        os.path.join(out_dir, "std_by_student_correctness.csv"),
    )
    write_report(
        uncertainty_by_position(records, "entropy"),
        os.path.join(out_dir, "entropy_by_position.csv"),
    )
    write_report(
        uncertainty_by_position(records, "std"),
        os.path.join(out_dir, "std_by_position.csv"),
    )
    write_report(
        difficulty_by_position(split, bank),
        os.path.join(out_dir, "difficulty_by_position.csv"),
    )
    write_report(
        correlation.report, os.path.join(out_dir, "entropy_difficulty_correlation.csv")
    )
    payload = _metrics_payload(deterministic, records, correlation)
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return payload
