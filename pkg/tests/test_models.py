"""Contracts shared by the four architectures: shapes, causality,
determinism, attention structure, checkpoints, and gradient accuracy."""

import numpy as np
import pytest

from ktuq.autodiff import RngStream, Tape, gradient_check, ops
from ktuq.data import Batch, make_batches
from ktuq.models import (
    ModelConfig,
    ModelParams,
    decayed_attention,
    init_params,
    load_checkpoint,
    parameter_manifest,
    predict_logits,
    question_feature_matrix,
    save_checkpoint,
)
from ktuq.simulate import SimConfig, generate_dataset
from ktuq.validation import DataFormatError, ValidationError

ALL_ARCHS = ("dkt", "sakt", "akt", "llmkt")


def small_config(arch, n_questions, **overrides):
    base = dict(
        architecture=arch,
        n_questions=n_questions,
        embedding_dim=32,
        hidden_dim=32,
        max_positions=16,
        llm_truncation_dim=64,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def small_data():
    bank, split, table = generate_dataset(
        SimConfig(n_students=8, n_questions=20, sequence_length=10, seed=1)
    )
    batch = make_batches(split.train, 4)[0]
    return bank, table, batch


def build(arch, bank, table, seed=5, **overrides):
    cfg = small_config(arch, bank.n_questions, **overrides)
    params = init_params(cfg, RngStream(seed, 0))
    feats = question_feature_matrix(bank, table, cfg) if arch == "llmkt" else None
    return params, feats


def run(params, batch, feats, dropout_on=False, rng=None):
    out = predict_logits(params, batch, dropout_on=dropout_on, rng=rng, embeddings=feats)
    return out


class TestInit:
    def test_same_seed_is_bitwise_identical(self, small_data):
        bank, table, _ = small_data
        for arch in ALL_ARCHS:
            a, _ = build(arch, bank, table, seed=11)
            b, _ = build(arch, bank, table, seed=11)
            for name in a.tensors:
                np.testing.assert_array_equal(
                    a.tensors[name].data, b.tensors[name].data, err_msg=f"{arch}.{name}"
                )

    def test_biases_zero_and_gains_one(self, small_data):
        bank, table, _ = small_data
        params, _ = build("sakt", bank, table)
        assert np.all(params["attn_q_bias"].data == 0.0)
        assert np.all(params["ln1_gain"].data == 1.0)

    def test_matrix_rows_bounded_by_fan_in(self, small_data):
        bank, table, _ = small_data
        params, _ = build("dkt", bank, table)
        w = params["lstm_w_ih"].data
        assert np.all(np.abs(w) <= 1.0 / np.sqrt(w.shape[0]))


class TestParameterBudgets:
    """Total sizes at the reference configuration (4,257 questions, dim 128)."""

    def test_dkt_near_1_2m(self):
        cfg = ModelConfig(architecture="dkt", n_questions=4257)
        total = sum(int(np.prod(s)) for _, s, _ in parameter_manifest(cfg))
        assert 0.96e6 <= total <= 1.44e6

    def test_akt_near_3_3m(self):
        cfg = ModelConfig(architecture="akt", n_questions=4257)
        total = sum(int(np.prod(s)) for _, s, _ in parameter_manifest(cfg))
        assert 2.64e6 <= total <= 3.96e6

    def test_llmkt_near_2_1m_with_four_text_fields(self):
        cfg = ModelConfig(
            architecture="llmkt", n_questions=4257, llm_text_fields=4,
            llm_truncation_dim=1024,
        )
        total = sum(int(np.prod(s)) for _, s, _ in parameter_manifest(cfg))
        assert 1.68e6 <= total <= 2.52e6

    def test_manifest_matches_init(self, small_data):
        bank, table, _ = small_data
        for arch in ALL_ARCHS:
            params, _ = build(arch, bank, table)
            manifest = parameter_manifest(params.config)
            assert [n for n, _, _ in manifest] == list(params.tensors)
            for name, shape, _ in manifest:
                assert params[name].data.shape == tuple(shape)


class TestForwardContracts:
    @pytest.mark.parametrize("arch", ALL_ARCHS)
    def test_logit_shape_and_finiteness(self, small_data, arch):
        bank, table, batch = small_data
        params, feats = build(arch, bank, table)
        out = run(params, batch, feats)
        assert out.logits.data.shape == (batch.size, batch.length, 4)
        assert np.all(np.isfinite(out.logits.data))

    @pytest.mark.parametrize("arch", ALL_ARCHS)
    def test_dropout_off_is_deterministic(self, small_data, arch):
        bank, table, batch = small_data
        params, feats = build(arch, bank, table)
        a = run(params, batch, feats).logits.data
        b = run(params, batch, feats).logits.data
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("arch", ALL_ARCHS)
    def test_dropout_on_is_repeatable_per_stream(self, small_data, arch):
        bank, table, batch = small_data
        params, feats = build(arch, bank, table)
        a = run(params, batch, feats, dropout_on=True, rng=RngStream(3, 7)).logits.data
        b = run(params, batch, feats, dropout_on=True, rng=RngStream(3, 7)).logits.data
        c = run(params, batch, feats, dropout_on=True, rng=RngStream(3, 8)).logits.data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)
        off = run(params, batch, feats).logits.data
        assert not np.array_equal(a, off)

    @pytest.mark.parametrize("arch", ALL_ARCHS)
    def test_future_perturbation_is_invisible(self, small_data, arch):
        """Positions <= t keep bitwise-identical logits when positions > t change."""
        bank, table, batch = small_data
        params, feats = build(arch, bank, table)
        probe = batch.length // 2
        rows = batch.question_rows.copy()
        ids = batch.question_ids.copy()
        chosen = batch.chosen.copy()
        rows[:, probe + 1:] = (rows[:, probe + 1:] + 3) % bank.n_questions
        ids[:, probe + 1:] = rows[:, probe + 1:]
        chosen[:, probe + 1:] = (chosen[:, probe + 1:] + 1) % 4
        constructs = batch.construct_ids.copy()
        perturbed = Batch(batch.student_ids, ids, rows, constructs, chosen)
        base = run(params, batch, feats).logits.data
        alt = run(params, perturbed, feats).logits.data
        np.testing.assert_array_equal(base[:, :probe + 1], alt[:, :probe + 1])
        assert not np.array_equal(base[:, probe + 1:], alt[:, probe + 1:])

    @pytest.mark.parametrize("arch", ("sakt", "akt", "llmkt"))
    def test_attention_rows_are_distributions(self, small_data, arch):
        bank, table, batch = small_data
        params, feats = build(arch, bank, table)
        out = run(params, batch, feats)
        for name, weights in out.attention_weights.items():
            w = weights.data
            np.testing.assert_allclose(
                w.sum(axis=-1), 1.0, atol=1e-12, err_msg=f"{arch}.{name}"
            )
            assert np.all(w >= 0.0)
            tri = np.triu(np.ones(w.shape[-2:], dtype=bool), k=1)
            assert np.all(w[..., tri] == 0.0), f"{arch}.{name} leaks future weight"

    def test_single_position_batch(self, small_data):
        bank, table, _ = small_data
        batch = Batch(
            student_ids=np.array([0, 1]),
            question_ids=np.array([[3], [7]]),
            question_rows=np.array([[3], [7]]),
            construct_ids=np.array([[0], [1]]),
            chosen=np.array([[2], [0]]),
        )
        for arch in ALL_ARCHS:
            params, feats = build(arch, bank, table)
            out = run(params, batch, feats)
            assert out.logits.data.shape == (2, 1, 4)
            assert np.all(np.isfinite(out.logits.data))

    def test_length_beyond_max_positions_rejected(self, small_data):
        bank, table, batch = small_data
        params, feats = build("sakt", bank, table, max_positions=4)
        with pytest.raises(ValidationError):
            run(params, batch, feats)


class TestDispatch:
    def test_dispatch_matches_direct_forward(self, small_data):
        from ktuq.models import akt_forward, dkt_forward, llmkt_forward, sakt_forward

        bank, table, batch = small_data
        direct = {
            "dkt": lambda p, f: dkt_forward(p, batch, False),
            "sakt": lambda p, f: sakt_forward(p, batch, False),
            "akt": lambda p, f: akt_forward(p, batch, False),
            "llmkt": lambda p, f: llmkt_forward(p, batch, f, False),
        }
        for arch in ALL_ARCHS:
            params, feats = build(arch, bank, table)
            via_dispatch = run(params, batch, feats).logits.data
            via_direct = direct[arch](params, feats).logits.data
            np.testing.assert_array_equal(via_dispatch, via_direct)

    def test_unknown_tag_rejected(self, small_data):
        bank, table, batch = small_data
        params, _ = build("dkt", bank, table)
        params.architecture = "gru"
        with pytest.raises(ValidationError, match="unknown architecture"):
            predict_logits(params, batch, dropout_on=False)

    def test_tag_mismatch_rejected(self, small_data):
        from ktuq.models import sakt_forward

        bank, table, batch = small_data
        params, _ = build("dkt", bank, table)
        with pytest.raises(ValidationError, match="architecture"):
            sakt_forward(params, batch, False)

    def test_llmkt_requires_features(self, small_data):
        bank, table, batch = small_data
        params, _ = build("llmkt", bank, table)
        with pytest.raises(ValidationError, match="embeddings"):
            predict_logits(params, batch, dropout_on=False)


class TestAktSpecifics:
    def test_kq_same_uses_one_shared_projection(self, small_data):
        bank, table, _ = small_data
        shared, _ = build("akt", bank, table)
        assert "attn_qk_weight" in shared.tensors
        assert "attn_q_weight" not in shared.tensors
        split_cfg, _ = build("akt", bank, table, kq_same=False)
        assert "attn_q_weight" in split_cfg.tensors
        assert "attn_k_weight" in split_cfg.tensors

    def test_recent_identical_content_gets_at_least_as_much_weight(self, small_data):
        bank, table, batch = small_data
        params, _ = build("akt", bank, table)
        rows = batch.question_rows.copy()
        chosen = batch.chosen.copy()
        rows[:, 3] = rows[:, 1]
        chosen[:, 3] = chosen[:, 1]
        cloned = Batch(batch.student_ids, rows.copy(), rows, batch.construct_ids, chosen)
        out = run(params, cloned, None)
        w = out.attention_weights["attention"].data
        # keys are shifted: key 2 holds interaction 1, key 4 holds interaction 3
        recent, older = w[:, :, 4, 4], w[:, :, 4, 2]
        assert np.all(recent >= older)
        assert recent.mean() > older.mean()

    def test_underflowed_decay_recovers_plain_attention(self):
        gen = np.random.default_rng(4)
        q = ops.as_tensor(gen.normal(size=(2, 2, 6, 8)))
        k = ops.as_tensor(gen.normal(size=(2, 2, 6, 8)))
        v = ops.as_tensor(gen.normal(size=(2, 2, 6, 8)))
        rho = ops.as_tensor(np.full(2, -750.0))  # softplus underflows to exactly 0
        decayed, w_decayed = decayed_attention(q, k, v, rho)
        plain, w_plain = ops.causal_attention(q, k, v)
        np.testing.assert_array_equal(w_decayed.data, w_plain.data)
        np.testing.assert_array_equal(decayed.data, plain.data)

    def test_decay_shifts_weight_toward_the_newest_key(self):
        gen = np.random.default_rng(4)
        q = ops.as_tensor(gen.normal(size=(1, 1, 8, 4)))
        k = ops.as_tensor(gen.normal(size=(1, 1, 8, 4)))
        v = ops.as_tensor(gen.normal(size=(1, 1, 8, 4)))
        _, w_strong = decayed_attention(q, k, v, ops.as_tensor(np.array([20.0])))
        _, w_plain = ops.causal_attention(q, k, v)
        idx = np.arange(8)
        newest_strong = w_strong.data[0, 0, idx, idx]
        newest_plain = w_plain.data[0, 0, idx, idx]
        # the newest key carries zero distance, so decay can only favor it
        assert np.all(newest_strong >= newest_plain)
        assert np.all(newest_strong[1:] > newest_plain[1:])


class TestLlmktFeatures:
    def test_feature_matrix_layout(self, small_data):
        bank, table, _ = small_data
        cfg = small_config("llmkt", bank.n_questions, llm_truncation_dim=8)
        feats = question_feature_matrix(bank, table, cfg)
        assert feats.shape == (bank.n_questions, 16)
        record = bank.records[5]
        np.testing.assert_array_equal(feats[5, :8], table.vector(record.text_key)[:8])
        np.testing.assert_array_equal(
            feats[5, 8:], table.vector(f"construct:{record.construct_id}")[:8]
        )

    def test_missing_text_key_is_reported(self, small_data):
        from ktuq.data import EmbeddingTable

        bank, table, _ = small_data
        stripped = EmbeddingTable(
            dimension=table.dimension,
            keys=[k for k in table.keys if k != bank.records[0].text_key],
            matrix=table.matrix[[i for i, k in enumerate(table.keys)
                                 if k != bank.records[0].text_key]],
        )
        cfg = small_config("llmkt", bank.n_questions)
        with pytest.raises(DataFormatError, match="question:0"):
            question_feature_matrix(bank, stripped, cfg)

    def test_truncation_wider_than_table_is_reported(self, small_data):
        bank, table, _ = small_data
        cfg = small_config("llmkt", bank.n_questions, llm_truncation_dim=4096)
        with pytest.raises(DataFormatError, match="truncation"):
            question_feature_matrix(bank, table, cfg)

    def test_raw_table_is_rejected_at_forward(self, small_data):
        bank, table, batch = small_data
        params, _ = build("llmkt", bank, table)
        with pytest.raises(ValidationError, match="question_feature_matrix"):
            predict_logits(params, batch, dropout_on=False, embeddings=table)


class TestGradients:
    @pytest.mark.parametrize("arch", ALL_ARCHS)
    def test_end_to_end_gradient_check(self, arch):
        bank, split, table = generate_dataset(
            SimConfig(n_students=2, n_questions=10, sequence_length=10,
                      seed=3, embedding_dim=8, construct_count=3)
        )
        batch = make_batches(split.train + split.val, 2)[0]
        cfg = ModelConfig(
            architecture=arch, n_questions=bank.n_questions, embedding_dim=8,
            hidden_dim=8, num_heads=2, max_positions=12, llm_truncation_dim=8,
        )
        # central differences are only O(h^2) away from the true gradient on
        # smooth paths; this seed keeps every relu pre-activation far enough
        # from zero that no +-h probe crosses a kink
        params = init_params(cfg, RngStream(21, 0))
        feats = question_feature_matrix(bank, table, cfg) if arch == "llmkt" else None
        point = {name: t.data for name, t in params.tensors.items()}

        def loss_fn(tensors):
            model = ModelParams(arch, cfg, dict(tensors))
            out = predict_logits(model, batch, dropout_on=False, embeddings=feats)
            return ops.sequence_cross_entropy(out.logits, batch.chosen)

        assert gradient_check(loss_fn, point) < 1e-4

    @pytest.mark.parametrize("arch", ALL_ARCHS)
    def test_backward_is_bitwise_deterministic(self, small_data, arch):
        bank, table, batch = small_data
        params, feats = build(arch, bank, table)

        def grads_once():
            with Tape() as tape:
                out = predict_logits(
                    params, batch, dropout_on=True, rng=RngStream(2, 2), embeddings=feats
                )
                loss = ops.sequence_cross_entropy(out.logits, batch.chosen)
                return tape.gradients(loss, params.tensors)

        first, second = grads_once(), grads_once()
        for name in first:
            np.testing.assert_array_equal(first[name], second[name], err_msg=name)


class TestCheckpoints:
    @pytest.mark.parametrize("arch", ALL_ARCHS)
    def test_round_trip_is_bit_exact(self, small_data, tmp_path, arch):
        bank, table, _ = small_data
        params, _ = build(arch, bank, table)
        path = tmp_path / f"{arch}.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.architecture == arch
        assert loaded.config == params.config
        assert list(loaded.tensors) == list(params.tensors)
        for name in params.tensors:
            np.testing.assert_array_equal(loaded[name].data, params[name].data)

    def test_save_is_byte_deterministic(self, small_data, tmp_path):
        bank, table, _ = small_data
        params, _ = build("akt", bank, table)
        save_checkpoint(params, tmp_path / "a.ckpt")
        save_checkpoint(params, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataFormatError, match="magic"):
            load_checkpoint(p)

    def test_truncated_blob_rejected(self, small_data, tmp_path):
        bank, table, _ = small_data
        params, _ = build("dkt", bank, table)
        path = tmp_path / "cut.ckpt"
        save_checkpoint(params, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataFormatError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes_rejected(self, small_data, tmp_path):
        bank, table, _ = small_data
        params, _ = build("dkt", bank, table)
        path = tmp_path / "pad.ckpt"
        save_checkpoint(params, path)
        path.write_bytes(path.read_bytes() + b"\x00" * 4)
        with pytest.raises(DataFormatError, match="trailing"):
            load_checkpoint(path)
