"""Command-line entry point: simulate, train, evaluate, analyze, gradcheck.

Exit codes: 0 on success, 1 on usage errors (bad flags, bad argument values,
or a failed gradient check), 2 on data errors (missing or malformed files,
or inconsistencies between a config file and the dataset).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .analysis import write_analysis
from .autodiff import RngStream, gradient_check, ops
from .data import load_sim_dataset, make_batches
from .metrics import MetricsReport
from .models import (
    ARCHITECTURES,
    ModelConfig,
    ModelParams,
    init_params,
    load_checkpoint,
    predict_logits,
    question_feature_matrix,
)
from .simulate import SimConfig, generate_dataset, write_dataset
from .training import TrainConfig, evaluate, train
from .uncertainty import McConfig
from .validation import DataFormatError, TrainingDivergedError, ValidationError

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract reserves 2 for
    data errors, so usage failures are remapped to exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _dataclass_from_json(cls, payload: dict, source: str):
    field_names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - field_names)
    if unknown:
        raise DataFormatError(f"{source} has unknown fields: {', '.join(unknown)}")
    return cls(**payload)


def _load_sim_config(path: str) -> SimConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise DataFormatError(f"{path} must hold a JSON object")
    return _dataclass_from_json(SimConfig, payload, path)


def _cmd_simulate(args) -> int:
    if args.config is not None:
        config = _load_sim_config(args.config)
    else:
        config = SimConfig()
    overrides = {}
    for field in ("seed", "n_students", "n_questions", "sequence_length"):
        value = getattr(args, field)
        if value is not None:
            overrides[field] = value
    if overrides:
        config = dataclasses.replace(config, **overrides)
    bank, split, _ = write_dataset(config, args.out_dir)
    print(
        f"wrote {len(split.train)} train / {len(split.val)} val students, "
        f"{bank.n_questions} questions to {args.out_dir}"
    )
    return 0


def _model_config_from_args(args, n_questions: int) -> ModelConfig:
    return ModelConfig(
        architecture=args.arch,
        n_questions=n_questions,
        embedding_dim=args.embedding_dim,
        hidden_dim=args.hidden_dim,
        num_heads=args.num_heads,
        dropout_rate=args.dropout_rate,
        max_positions=args.max_positions,
        llm_truncation_dim=args.llm_truncation_dim,
        llm_text_fields=args.llm_text_fields,
    )


def _train_config_from_file(path: str, n_questions: int) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or "model" not in payload:
        raise DataFormatError(f"{path} must hold a JSON object with a 'model' entry")
    model = _dataclass_from_json(ModelConfig, payload.pop("model"), f"{path} model")
    if model.n_questions != n_questions:
        raise DataFormatError(
            f"config expects {model.n_questions} questions but the dataset has {n_questions}"
        )
    config = _dataclass_from_json(TrainConfig, payload | {"model": None}, path)
    return dataclasses.replace(config, model=model)


def _cmd_train(args) -> int:
    if args.train_config is None and args.arch is None:
        raise ValidationError("either --arch or --train-config is required")
    bank, split, table = load_sim_dataset(args.data_dir)
    if args.train_config is not None:
        config = _train_config_from_file(args.train_config, bank.n_questions)
    else:
        config = TrainConfig(
            model=_model_config_from_args(args, bank.n_questions),
            learning_rate=args.lr,
            batch_size=args.batch_size,
            epochs=args.epochs,
            warmup_fraction=args.warmup_fraction,
            seed=args.seed,
        )

    def show(stats):
        print(
            f"epoch={stats.epoch} train_loss={stats.train_loss:.6f} "
            f"val_accuracy={stats.val_accuracy:.4f} val_f1={stats.val_f1:.4f} "
            f"val_auc={stats.val_auc:.4f}",
            flush=True,
        )

    result = train(
        split, config, bank=bank, table=table, out_dir=args.out_dir, on_epoch=show
    )
    print(f"checkpoint written to {result.checkpoint_path}")
    return 0


def _load_model(checkpoint: str, bank, table):
    params = load_checkpoint(checkpoint)
    if params.config.n_questions != bank.n_questions:
        raise DataFormatError(
            f"checkpoint expects {params.config.n_questions} questions "
            f"but the dataset has {bank.n_questions}"
        )
    embeddings = None
    if params.architecture == "llmkt":
        embeddings = question_feature_matrix(bank, table, params.config)
    return params, embeddings


def _report_payload(report: MetricsReport) -> dict:
    return {
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "macro_ovr_auc": report.macro_ovr_auc,
        "per_class_precision": [float(p) for p in report.per_class_precision],
        "per_class_recall": [float(r) for r in report.per_class_recall],
        "confusion": [[int(c) for c in row] for row in report.confusion],
        "n_predictions": report.n_predictions,
    }


def _cmd_evaluate(args) -> int:
    bank, split, table = load_sim_dataset(args.data_dir)
    params, embeddings = _load_model(args.checkpoint, bank, table)
    sequences = split.train if args.split == "train" else split.val
    report = evaluate(params, sequences, args.batch_size, embeddings)
    print(json.dumps(_report_payload(report), indent=2, sort_keys=True))
    return 0


def _cmd_analyze(args) -> int:
    bank, split, table = load_sim_dataset(args.data_dir)
    params, embeddings = _load_model(args.checkpoint, bank, table)
    mc = McConfig(n_samples=args.mc_samples, base_seed=args.seed)
    payload = write_analysis(
        args.out_dir, params, bank, split, mc, embeddings, args.batch_size
    )
    print(
        f"wrote reports to {args.out_dir} "
        f"(accuracy={payload['accuracy']:.4f}, "
        f"entropy/difficulty r={payload['entropy_difficulty_pearson']:.4f})"
    )
    return 0


def gradient_check_error(architecture: str, seed: int = 21) -> float:
    """Max relative error between backward and central differences on a
    2-student, 10-position batch.

    The default init seed keeps every relu pre-activation far enough from
    zero that no finite-difference probe crosses a kink.
    """
    bank, split, table = generate_dataset(
        SimConfig(
            n_students=2, n_questions=10, sequence_length=10,
            seed=3, embedding_dim=8, construct_count=3,
        )
    )
    batch = make_batches(split.train + split.val, 2)[0]
    config = ModelConfig(
        architecture=architecture, n_questions=bank.n_questions, embedding_dim=8,
        hidden_dim=8, num_heads=2, max_positions=12, llm_truncation_dim=8,
    )
    params = init_params(config, RngStream(seed, 0))
    features = (
        question_feature_matrix(bank, table, config) if architecture == "llmkt" else None
    )
    point = {name: t.data for name, t in params.tensors.items()}

    def loss_fn(tensors):
        model = ModelParams(architecture, config, dict(tensors))
        out = predict_logits(model, batch, dropout_on=False, embeddings=features)
        return ops.sequence_cross_entropy(out.logits, batch.chosen)

    return float(gradient_check(loss_fn, point))


def _cmd_gradcheck(args) -> int:
    error = gradient_check_error(args.arch, seed=args.seed)
    passed = error < GRADCHECK_TOLERANCE
    print(f"{args.arch} max_relative_error={error:.3e} "
          f"{'PASS' if passed else 'FAIL'} (tolerance {GRADCHECK_TOLERANCE:.0e})")
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ktuq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command", required=True,
                                parser_class=_Parser)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset directory")
    sim.add_argument("--out-dir", required=True)
    sim.add_argument("--config", help="SimConfig JSON file")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--n-students", type=int)
    sim.add_argument("--n-questions", type=int)
    sim.add_argument("--sequence-length", type=int)
    sim.set_defaults(handler=_cmd_simulate)

    tr = sub.add_parser("train", help="train one model on a dataset directory")
    tr.add_argument("--data-dir", required=True)
    tr.add_argument("--out-dir", required=True)
    tr.add_argument("--arch", choices=ARCHITECTURES)
    tr.add_argument("--train-config", help="TrainConfig JSON file (overrides flags)")
    tr.add_argument("--epochs", type=int, default=100)
    tr.add_argument("--batch-size", type=int, default=64)
    tr.add_argument("--lr", type=float, default=3e-4)
    tr.add_argument("--warmup-fraction", type=float, default=0.1)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--embedding-dim", type=int, default=128)
    tr.add_argument("--hidden-dim", type=int, default=128)
    tr.add_argument("--num-heads", type=int, default=4)
    tr.add_argument("--dropout-rate", type=float)
    tr.add_argument("--max-positions", type=int, default=100)
    tr.add_argument("--llm-truncation-dim", type=int, default=1024)
    tr.add_argument("--llm-text-fields", type=int, default=2)
    tr.set_defaults(handler=_cmd_train)

    ev = sub.add_parser("evaluate", help="deterministic metrics for a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data-dir", required=True)
    ev.add_argument("--split", choices=("train", "val"), default="val")
    ev.add_argument("--batch-size", type=int, default=64)
    ev.set_defaults(handler=_cmd_evaluate)

    an = sub.add_parser("analyze", help="write every uncertainty report CSV")
    an.add_argument("--checkpoint", required=True)
    an.add_argument("--data-dir", required=True)
    an.add_argument("--out-dir", required=True)
    an.add_argument("--mc-samples", type=int, default=30)
    an.add_argument("--seed", type=int, default=0)
    an.add_argument("--batch-size", type=int, default=64)
    an.set_defaults(handler=_cmd_analyze)

    gc = sub.add_parser("gradcheck", help="compare backward against central differences")
    gc.add_argument("--arch", choices=ARCHITECTURES, required=True)
    gc.add_argument("--seed", type=int, default=21)
    gc.set_defaults(handler=_cmd_gradcheck)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.handler(args)
    except DataFormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (ValidationError, TrainingDivergedError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(cli_main())
