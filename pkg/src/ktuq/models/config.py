"""Model configuration, parameter initialization, and forward-output types."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..autodiff import RngStream, Tensor
from ..data import N_OPTIONS
from ..validation import ValidationError, check_positive_int

ARCHITECTURES = ("dkt", "sakt", "akt", "llmkt")

DEFAULT_DROPOUT = {"dkt": 0.2, "sakt": 0.5, "akt": 0.2, "llmkt": 0.2}

# softplus(-2) ~= 0.127: a gentle initial forgetting rate for the akt decay
RHO_INIT = -2.0

# width of the akt prediction head's second hidden layer
AKT_HEAD_HIDDEN = 256

# feed-forward expansion factor shared by all attention blocks
FFN_MULTIPLIER = 4


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters shared by all four architectures.

    ``dropout_rate`` left as None resolves to the per-architecture default
    (0.5 for sakt, 0.2 otherwise). ``hidden_dim`` is the LSTM width (dkt
    only); attention models work at ``embedding_dim`` throughout.
    """

    architecture: str
    n_questions: int
    n_constructs: int = 0
    n_options: int = N_OPTIONS
    embedding_dim: int = 128
    hidden_dim: int = 128
    num_layers: int = 1
    num_heads: int = 4
    dropout_rate: Optional[float] = None
    max_positions: int = 100
    llm_truncation_dim: int = 1024
    llm_text_fields: int = 2
    kq_same: bool = True

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValidationError(
                f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}"
            )
        check_positive_int("n_questions", self.n_questions)
        check_positive_int("embedding_dim", self.embedding_dim)
        check_positive_int("hidden_dim", self.hidden_dim)
        check_positive_int("num_heads", self.num_heads)
        check_positive_int("max_positions", self.max_positions)
        check_positive_int("llm_truncation_dim", self.llm_truncation_dim)
        check_positive_int("llm_text_fields", self.llm_text_fields)
        if self.n_constructs < 0:
            raise ValidationError("n_constructs must be non-negative")
        if self.n_options != N_OPTIONS:
            raise ValidationError(f"only {N_OPTIONS}-option questions are supported")
        if self.num_layers != 1:
            raise ValidationError("num_layers is fixed at 1")
        if self.embedding_dim % self.num_heads != 0:
            raise ValidationError(
                f"num_heads {self.num_heads} must divide embedding_dim {self.embedding_dim}"
            )
        if self.dropout_rate is None:
            object.__setattr__(self, "dropout_rate", DEFAULT_DROPOUT[self.architecture])
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValidationError(f"dropout_rate {self.dropout_rate} outside [0, 1)")

    @property
    def llm_concat_dim(self) -> int:
        return self.llm_text_fields * self.llm_truncation_dim


@dataclass
class ModelParams:
    """Named parameter tensors plus the config they were built for."""

    architecture: str
    config: ModelConfig
    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())


@dataclass
class ForwardOutput:
    """Per-position class logits and, where available, attention weights."""

    logits: Tensor
    attention_weights: Optional[dict[str, Tensor]] = None


def _attention_linear(prefix: str, in_dim: int, out_dim: int):
    return [
        (f"{prefix}_weight", (in_dim, out_dim), "matrix"),
        (f"{prefix}_bias", (out_dim,), "bias"),
    ]


def _layer_norm_pair(prefix: str, dim: int):
    return [
        (f"{prefix}_gain", (dim,), "ones"),
        (f"{prefix}_bias", (dim,), "bias"),
    ]


def _ffn_block(prefix: str, dim: int):
    wide = FFN_MULTIPLIER * dim
    return [
        (f"{prefix}_w1", (dim, wide), "matrix"),
        (f"{prefix}_b1", (wide,), "bias"),
        (f"{prefix}_w2", (wide, dim), "matrix"),
        (f"{prefix}_b2", (dim,), "bias"),
    ]


def parameter_manifest(config: ModelConfig) -> list[tuple[str, tuple, str]]:
    """Ordered (name, shape, init-kind) triples defining each architecture."""
    d, h = config.embedding_dim, config.hidden_dim
    n_q = config.n_questions
    if config.architecture == "dkt":
        return [
            ("question_in_table", (n_q, d), "embedding"),
            ("question_query_table", (n_q, d), "embedding"),
            ("option_table", (N_OPTIONS, d), "embedding"),
            ("start_token", (d,), "embedding"),
            ("lstm_w_ih", (d, 4 * h), "matrix"),
            ("lstm_w_hh", (h, 4 * h), "matrix"),
            ("lstm_bias", (4 * h,), "bias"),
            ("head_weight", (h + d, N_OPTIONS), "matrix"),
            ("head_bias", (N_OPTIONS,), "bias"),
        ]
    if config.architecture == "sakt":
        return [
            ("question_in_table", (n_q, d), "embedding"),
            ("question_query_table", (n_q, d), "embedding"),
            ("option_table", (N_OPTIONS, d), "embedding"),
            ("start_token", (d,), "embedding"),
            ("pos_table", (config.max_positions, d), "embedding"),
            *_attention_linear("attn_q", d, d),
            *_attention_linear("attn_k", d, d),
            *_attention_linear("attn_v", d, d),
            *_attention_linear("attn_out", d, d),
            *_layer_norm_pair("ln1", d),
            *_ffn_block("ffn", d),
            *_layer_norm_pair("ln2", d),
            ("head_weight", (d, N_OPTIONS), "matrix"),
            ("head_bias", (N_OPTIONS,), "bias"),
        ]
    if config.architecture == "akt":
        if config.kq_same:
            qk = _attention_linear("attn_qk", d, d)
        else:
            qk = _attention_linear("attn_q", d, d) + _attention_linear("attn_k", d, d)
        return [
            ("question_query_table", (n_q, d), "embedding"),
            ("interaction_table", (N_OPTIONS * n_q, d), "embedding"),
            ("start_token", (d,), "embedding"),
            *qk,
            *_attention_linear("attn_v", d, d),
            *_attention_linear("attn_out", d, d),
            ("decay_rho", (config.num_heads,), "rho"),
            *_layer_norm_pair("ln1", d),
            *_ffn_block("ffn", d),
            *_layer_norm_pair("ln2", d),
            ("head_w1", (2 * d, d), "matrix"),
            ("head_b1", (d,), "bias"),
            ("head_w2", (d, AKT_HEAD_HIDDEN), "matrix"),
            ("head_b2", (AKT_HEAD_HIDDEN,), "bias"),
            ("head_w3", (AKT_HEAD_HIDDEN, N_OPTIONS), "matrix"),
            ("head_b3", (N_OPTIONS,), "bias"),
        ]
    if config.architecture == "llmkt":
        concat = config.llm_concat_dim
        return [
            *_attention_linear("self_q", concat, d),
            *_attention_linear("self_k", concat, d),
            *_attention_linear("self_v", concat, d),
            *_attention_linear("self_out", d, d),
            ("pos_table", (config.max_positions, d), "embedding"),
            *_layer_norm_pair("ln1", d),
            *_ffn_block("ffn1", d),
            *_layer_norm_pair("ln2", d),
            *_attention_linear("cross_q", d, d),
            *_attention_linear("cross_k", d, d),
            *_attention_linear("cross_v", d, d),
            *_attention_linear("cross_out", d, d),
            ("option_table", (N_OPTIONS, d), "embedding"),
            ("response_pos_table", (config.max_positions, d), "embedding"),
            ("start_token", (d,), "embedding"),
            *_layer_norm_pair("ln3", d),
            *_ffn_block("ffn2", d),
            *_layer_norm_pair("ln4", d),
            ("head_weight", (d, N_OPTIONS), "matrix"),
            ("head_bias", (N_OPTIONS,), "bias"),
        ]
    raise ValidationError(f"unknown architecture {config.architecture!r}")


def init_params(config: ModelConfig, rng) -> ModelParams:
    """Fresh parameters: uniform +-1/sqrt(fan_in) matrices, N(0, 0.02)
    embeddings, zero biases; draws are sequential in manifest order."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    tensors: dict[str, Tensor] = {}
    for name, shape, kind in parameter_manifest(config):
        if kind == "matrix":
            bound = 1.0 / np.sqrt(shape[0])
            data = gen.uniform(-bound, bound, size=shape)
        elif kind == "embedding":
            data = gen.normal(0.0, 0.02, size=shape)
        elif kind == "bias":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        elif kind == "rho":
            data = np.full(shape, RHO_INIT)
        else:  # pragma: no cover - manifest kinds are closed
            raise ValidationError(f"unknown init kind {kind!r}")
        tensors[name] = Tensor(np.asarray(data, dtype=np.float64), name=name)
    return ModelParams(config.architecture, config, tensors)
