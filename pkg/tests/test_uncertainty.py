"""Entropy and stddev aggregation against independent oracles, plus the
reproducibility and degeneracy contracts of the MC-dropout sampler."""

import math

import mpmath
import numpy as np
import pytest

from ktuq.autodiff import RngStream, ops
from ktuq.data import make_batches
from ktuq.models import ModelConfig, init_params, predict_logits, question_feature_matrix
from ktuq.simulate import SimConfig, generate_dataset
from ktuq.uncertainty import (
    MAX_ENTROPY,
    McConfig,
    PredictiveSample,
    mc_predict,
    mc_probabilities,
    prediction_stddev,
    summarize,
    summarize_batch,
    total_entropy,
)
from ktuq.validation import ValidationError


def entropy_oracle(dists):
    """Arbitrary-precision entropy of the across-sample mean distribution."""
    with mpmath.workdps(60):
        n = len(dists)
        k = len(dists[0])
        mean = [mpmath.fsum(mpmath.mpf(float(d[j])) for d in dists) / n for j in range(k)]
        return float(-mpmath.fsum(p * mpmath.log(p) for p in mean if p > 0))


def stddev_oracle(dists):
    """Population std per class via two explicit loops, no vectorization."""
    n = len(dists)
    k = len(dists[0])
    per_class = []
    for j in range(k):
        mu = 0.0
        for i in range(n):
            mu += dists[i][j]
        mu /= n
        acc = 0.0
        for i in range(n):
            acc += (dists[i][j] - mu) ** 2
        per_class.append(math.sqrt(acc / n))
    mean = 0.0
    for j in range(k):
        mean += per_class[j]
    return np.asarray(per_class), mean / k


def random_distributions(rng, n, k=4):
    draws = rng.dirichlet(np.full(k, 0.7), size=n)
    return draws


class TestTotalEntropy:
    def test_uniform_hits_ceiling(self):
        samples = np.full((3, 4), 0.25)
        assert abs(total_entropy(samples) - math.log(4.0)) < 1e-12
        assert abs(MAX_ENTROPY - math.log(4.0)) < 1e-15

    def test_one_hot_is_exactly_zero(self):
        samples = np.array([[0.0, 0.0, 1.0, 0.0]])
        assert total_entropy(samples) == 0.0

    def test_skewed_hand_value(self):
        dist = [0.7, 0.1, 0.1, 0.1]
        h = total_entropy(np.array([dist]))
        assert abs(h - 0.9404479) < 1e-7
        assert abs(h - entropy_oracle([dist])) < 1e-12

    def test_matches_high_precision_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            m = int(rng.integers(1, 9))
            dists = random_distributions(rng, m)
            assert abs(total_entropy(dists) - entropy_oracle(dists)) < 1e-12

    def test_accepts_sample_objects(self):
        rows = [
            PredictiveSample(0, np.array([0.4, 0.3, 0.2, 0.1])),
            PredictiveSample(1, np.array([0.1, 0.2, 0.3, 0.4])),
        ]
        arr = np.array([r.probabilities for r in rows])
        assert total_entropy(rows) == total_entropy(arr)

    def test_mean_entropy_at_least_mean_of_entropies(self):
        # Mixing distributions never reduces entropy below the average.
        rng = np.random.default_rng(3)
        for _ in range(200):
            dists = random_distributions(rng, int(rng.integers(2, 12)))
            per_sample = [total_entropy(d[None, :]) for d in dists]
            assert total_entropy(dists) >= np.mean(per_sample) - 1e-12

    def test_order_invariant(self):
        rng = np.random.default_rng(8)
        dists = random_distributions(rng, 7)
        shuffled = dists[rng.permutation(7)]
        assert abs(total_entropy(dists) - total_entropy(shuffled)) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValidationError, match="at least one"):
            total_entropy([])
        with pytest.raises(ValidationError, match="at least one"):
            total_entropy(np.zeros((0, 4)))


class TestPredictionStddev:
    def test_two_one_hot_samples(self):
        samples = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
        class_std, mean_std = prediction_stddev(samples)
        np.testing.assert_array_equal(class_std, [0.5, 0.5, 0.0, 0.0])
        assert mean_std == 0.25

    def test_small_spread_hand_case(self):
        dists = [[0.6, 0.2, 0.1, 0.1], [0.4, 0.2, 0.2, 0.2]]
        class_std, mean_std = prediction_stddev(np.array(dists))
        oracle_std, oracle_mean = stddev_oracle(dists)
        np.testing.assert_array_equal(class_std, oracle_std)
        assert mean_std == oracle_mean
        np.testing.assert_allclose(class_std, [0.1, 0.0, 0.05, 0.05], atol=1e-15)
        assert abs(mean_std - 0.05) < 1e-15

    def test_identical_samples_have_zero_spread(self):
        samples = np.tile([0.7, 0.1, 0.1, 0.1], (30, 1))
        class_std, mean_std = prediction_stddev(samples)
        np.testing.assert_array_equal(class_std, np.zeros(4))
        assert mean_std == 0.0

    def test_single_sample_has_zero_spread(self):
        class_std, mean_std = prediction_stddev(np.array([[0.4, 0.3, 0.2, 0.1]]))
        np.testing.assert_array_equal(class_std, np.zeros(4))
        assert mean_std == 0.0

    def test_matches_two_loop_oracle(self):
        rng = np.random.default_rng(43)
        for _ in range(1000):
            m = int(rng.integers(1, 9))
            dists = random_distributions(rng, m)
            class_std, mean_std = prediction_stddev(dists)
            oracle_std, oracle_mean = stddev_oracle(dists)
            np.testing.assert_allclose(class_std, oracle_std, atol=1e-12)
            assert abs(mean_std - oracle_mean) < 1e-12

    def test_probability_std_never_exceeds_half(self):
        rng = np.random.default_rng(44)
        for _ in range(200):
            dists = random_distributions(rng, int(rng.integers(2, 40)))
            class_std, _ = prediction_stddev(dists)
            assert class_std.max() <= 0.5 + 1e-12


class TestSummarize:
    def test_fields_are_consistent(self):
        rng = np.random.default_rng(5)
        dists = random_distributions(rng, 6)
        summary = summarize(dists)
        np.testing.assert_array_equal(summary.mean_probs, dists.mean(axis=0))
        assert summary.total_entropy == total_entropy(dists)
        class_std, mean_std = prediction_stddev(dists)
        np.testing.assert_array_equal(summary.class_std, class_std)
        assert summary.mean_std == mean_std
        assert summary.predicted_class == int(np.argmax(summary.mean_probs))
        assert summary.n_samples == 6
        assert 0.0 <= summary.total_entropy <= MAX_ENTROPY + 1e-12

    def test_tie_breaks_to_lowest_class(self):
        samples = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
        assert summarize(samples).predicted_class == 0
        flipped = samples[:, ::-1].copy()
        assert summarize(flipped).predicted_class == 2

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            McConfig(n_samples=0)
        with pytest.raises(ValidationError):
            McConfig(base_seed=-1)
        with pytest.raises(ValidationError, match="distribution"):
            PredictiveSample(0, np.array([0.5, 0.5, 0.5, 0.5]))


@pytest.fixture(scope="module")
def small_data():
    bank, split, table = generate_dataset(
        SimConfig(n_students=8, n_questions=20, sequence_length=10, seed=1)
    )
    batch = make_batches(split.train, 4)[0]
    return bank, table, batch


def build(arch, bank, table, seed=5, **overrides):
    cfg = ModelConfig(
        architecture=arch,
        n_questions=bank.n_questions,
        embedding_dim=32,
        hidden_dim=32,
        max_positions=16,
        llm_truncation_dim=64,
        **overrides,
    )
    params = init_params(cfg, RngStream(seed, 0))
    feats = question_feature_matrix(bank, table, cfg) if arch == "llmkt" else None
    return params, feats


class TestMcPredict:
    def test_samples_are_distributions(self, small_data):
        bank, table, batch = small_data
        params, feats = build("sakt", bank, table)
        probs = mc_probabilities(params, batch, McConfig(n_samples=4, base_seed=9), feats)
        assert probs.shape == (4, batch.size, batch.length, 4)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-9)
        assert probs.min() >= 0.0

    def test_repeat_runs_are_bitwise_identical(self, small_data):
        bank, table, batch = small_data
        for arch in ("dkt", "akt", "llmkt"):
            params, feats = build(arch, bank, table)
            mc = McConfig(n_samples=3, base_seed=2)
            first = mc_probabilities(params, batch, mc, feats)
            second = mc_probabilities(params, batch, mc, feats)
            np.testing.assert_array_equal(first, second, err_msg=arch)

    def test_passes_differ_under_active_dropout(self, small_data):
        bank, table, batch = small_data
        params, feats = build("sakt", bank, table)
        probs = mc_probabilities(params, batch, McConfig(n_samples=2, base_seed=0), feats)
        assert np.abs(probs[0] - probs[1]).max() > 0.0

    def test_single_sample_equals_stream_zero_forward(self, small_data):
        bank, table, batch = small_data
        params, feats = build("dkt", bank, table)
        probs = mc_probabilities(params, batch, McConfig(n_samples=1, base_seed=31), feats)
        out = predict_logits(
            params, batch, dropout_on=True, rng=RngStream(31, 0), embeddings=feats
        )
        np.testing.assert_array_equal(probs[0], ops.softmax(out.logits).data)

    def test_zero_dropout_rate_collapses_the_ensemble(self, small_data):
        bank, table, batch = small_data
        for arch in ("dkt", "sakt"):
            params, feats = build(arch, bank, table, dropout_rate=0.0)
            probs = mc_probabilities(params, batch, McConfig(n_samples=5, base_seed=1), feats)
            for m in range(1, 5):
                np.testing.assert_array_equal(probs[m], probs[0], err_msg=arch)
            summary = summarize_batch(probs)
            np.testing.assert_array_equal(summary.mean_std, np.zeros_like(summary.mean_std))
            off = predict_logits(params, batch, dropout_on=False, embeddings=feats)
            single = ops.softmax(off.logits).data
            with np.errstate(divide="ignore", invalid="ignore"):
                single_entropy = -np.where(
                    single > 0.0, single * np.log(single), 0.0
                ).sum(axis=-1)
            np.testing.assert_array_equal(summary.total_entropy, single_entropy)

    def test_batch_summary_matches_per_position_summaries(self, small_data):
        bank, table, batch = small_data
        params, feats = build("akt", bank, table)
        mc = McConfig(n_samples=6, base_seed=3)
        probs = mc_probabilities(params, batch, mc, feats)
        nested = mc_predict(params, batch, mc, feats)
        assert len(nested) == batch.size
        assert len(nested[0]) == batch.length
        assert [s.index for s in nested[0][0]] == list(range(6))
        summary = summarize_batch(probs)
        for b in (0, batch.size - 1):
            for t in (0, batch.length // 2, batch.length - 1):
                single = summarize(nested[b][t])
                np.testing.assert_array_equal(summary.mean_probs[b, t], single.mean_probs)
                assert summary.total_entropy[b, t] == single.total_entropy
                np.testing.assert_array_equal(summary.class_std[b, t], single.class_std)
                assert summary.mean_std[b, t] == single.mean_std
                assert summary.predicted_class[b, t] == single.predicted_class

    def test_entropies_respect_ceiling(self, small_data):
        bank, table, batch = small_data
        params, feats = build("llmkt", bank, table)
        probs = mc_probabilities(params, batch, McConfig(n_samples=8, base_seed=6), feats)
        summary = summarize_batch(probs)
        assert summary.total_entropy.min() >= 0.0
        assert summary.total_entropy.max() <= MAX_ENTROPY + 1e-12

    def test_bad_stack_shape_rejected(self):
        with pytest.raises(ValidationError, match="probability stack"):
            summarize_batch(np.zeros((2, 3, 4)))
