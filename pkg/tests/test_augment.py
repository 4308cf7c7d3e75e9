import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from cllaug.augment import (DEFAULT_ROUNDS, SoftLabelMatrix, augment, fixed_point,
                            load_soft_labels, oracle_half_unseen, propagate, save_soft_labels,
                            seed_matrix)
from cllaug.dataset import (ComplementaryDataset, LabeledDataset, generate_complementary,
                            generate_gaussian_mixture, uniform_transition)
from cllaug.features import FeatureMatrix
from cllaug.metrics import augmented_noise_rate


def random_stochastic(rng, n, density=0.3):
    w = rng.random((n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(w, 0)
    empty = w.sum(1) == 0
    w[empty, (np.flatnonzero(empty) + 1) % n] = 1.0
    return w / w.sum(1, keepdims=True)


def random_seed(rng, n, k):
    cl = rng.integers(0, k, n)
    return SoftLabelMatrix(np.eye(k)[cl])


def dense_oracle(y, w, alpha, rounds):
    z = y.copy()
    for _ in range(rounds):
        z = alpha * y + (1 - alpha) * w @ z
    return z / z.sum(1, keepdims=True)


class TestSeedMatrix:
    def test_single(self):
        d = ComplementaryDataset.from_single(np.zeros((1, 1)), [2], 4)
        np.testing.assert_array_equal(seed_matrix(d).rows, [[0, 0, 1, 0]])

    def test_set(self):
        d = ComplementaryDataset(np.zeros((1, 1)), ((1, 3),), 4)
        np.testing.assert_array_equal(seed_matrix(d).rows, [[0, 0.5, 0, 0.5]])
        assert seed_matrix(d).scheme_id == "none"


class TestSoftLabelMatrix:
    def test_rejects_bad_rows(self):
        with pytest.raises(ValueError):
            SoftLabelMatrix(np.array([[0.5, 0.4, 0.0]]))
        with pytest.raises(ValueError):
            SoftLabelMatrix(np.array([[1.5, -0.5, 0.0]]))

    def test_rejects_unknown_scheme(self):
        with pytest.raises(ValueError):
            SoftLabelMatrix(np.eye(3), "XYZ")

    def test_file_roundtrip(self, tmp_path):
        z = SoftLabelMatrix(np.array([[0.1, 0.2, 0.7], [1 / 3, 1 / 3, 1 / 3]]))
        save_soft_labels(z, tmp_path / "z.bin")
        back = load_soft_labels(tmp_path / "z.bin")
        np.testing.assert_allclose(back.rows, z.rows, atol=1e-7)
        np.testing.assert_allclose(back.rows.sum(1), 1, atol=1e-12)


class TestPropagate:
    def setup_method(self):
        self.seed = SoftLabelMatrix(np.array([[1.0, 0, 0], [0, 1.0, 0]]))
        self.swap = sp.csr_matrix(np.array([[0.0, 1], [1, 0]]))

    def test_one_round(self):
        z = propagate(self.seed, self.swap, 0.1, 1)
        np.testing.assert_allclose(z.rows[0], [0.1, 0.9, 0], atol=1e-15)

    def test_two_rounds(self):
        z = propagate(self.seed, self.swap, 0.1, 2)
        np.testing.assert_allclose(z.rows[0], [0.91, 0.09, 0], atol=1e-15)

    def test_zero_rounds_returns_seed(self):
        assert propagate(self.seed, self.swap, 0.1, 0) is self.seed

    def test_dense_oracle_n50(self):
        rng = np.random.default_rng(0)
        y = random_seed(rng, 50, 5)
        w = random_stochastic(rng, 50)
        z = propagate(y, sp.csr_matrix(w), 0.1, 100)
        np.testing.assert_allclose(z.rows, dense_oracle(y.rows, w, 0.1, 100), atol=1e-8)
        assert z.rounds == 100 and z.alpha == 0.1

    def test_fixed_point(self):
        rng = np.random.default_rng(1)
        y = random_seed(rng, 80, 6)
        w = random_stochastic(rng, 80)
        z = propagate(y, sp.csr_matrix(w), 0.1, 1000)
        np.testing.assert_allclose(z.rows, fixed_point(y.rows, w, 0.1), atol=1e-6)

    def test_isolated_row_falls_back_to_seed(self):
        w = sp.csr_matrix(np.array([[0.0, 1.0, 0], [1.0, 0, 0], [0, 0, 0]]))
        y = SoftLabelMatrix(np.eye(3))
        z = propagate(y, w, 0.5, 3)
        np.testing.assert_allclose(z.rows[2], [0, 0, 1])

    def test_alpha_one_keeps_seed(self):
        rng = np.random.default_rng(2)
        y = random_seed(rng, 10, 4)
        z = propagate(y, sp.csr_matrix(random_stochastic(rng, 10)), 1.0, 5)
        np.testing.assert_allclose(z.rows, y.rows)

    @pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
    def test_bad_alpha(self, alpha):
        with pytest.raises(ValueError):
            propagate(self.seed, self.swap, alpha, 1)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            propagate(self.seed, sp.eye(3, format="csr"), 0.1, 1)

    def test_negative_rounds(self):
        with pytest.raises(ValueError):
            propagate(self.seed, self.swap, 0.1, -1)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 40), st.integers(3, 8),
           st.floats(0.01, 1.0), st.integers(1, 30))
    def test_simplex_preserved_before_normalisation(self, seed, n, k, alpha, rounds):
        rng = np.random.default_rng(seed)
        y = random_seed(rng, n, k).rows
        w = random_stochastic(rng, n)
        z = y.copy()
        for _ in range(rounds):
            z = alpha * y + (1 - alpha) * w @ z
        np.testing.assert_allclose(z.sum(1), 1, atol=1e-9)
        assert np.all(z >= 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 30), st.floats(0.01, 0.99))
    def test_seed_label_after_one_round(self, seed, n, alpha):
        rng = np.random.default_rng(seed)
        k = 4
        cl = rng.integers(0, k, n)
        y = np.eye(k)[cl]
        w = random_stochastic(rng, n)
        raw = alpha * y + (1 - alpha) * w @ y
        rows = np.arange(n)
        np.testing.assert_allclose(raw[rows, cl], alpha + (1 - alpha) * (w @ y)[rows, cl])
        assert np.all(raw[rows, cl] <= 1 + 1e-12)


class TestAugment:
    def setup_method(self):
        self.truth = generate_gaussian_mixture(4, 3, 30, 4.0, 0)
        self.data = generate_complementary(self.truth, uniform_transition(4), 1, 0)
        self.feats = FeatureMatrix(self.data.features, "identity")

    def test_scheme_default_rounds(self):
        for scheme in ("RSS", "DSS", "RMS", "DMS"):
            z = augment(self.data, self.feats, scheme, 5)
            assert z.rounds == DEFAULT_ROUNDS[scheme]
            assert z.rounds == (1 if scheme.endswith("SS") else 100)
            assert z.scheme_id == scheme

    def test_none_is_seed(self):
        z = augment(self.data, self.feats, "none")
        np.testing.assert_array_equal(z.rows, self.data.label_matrix())

    def test_rounds_zero_equals_none(self):
        a = augment(self.data, self.feats, "RSS", 5, rounds=0)
        np.testing.assert_array_equal(a.rows, augment(self.data, self.feats, "none").rows)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            augment(self.data, self.feats, "XYZ")

    def test_misaligned(self):
        with pytest.raises(ValueError):
            augment(self.data, FeatureMatrix(np.zeros((3, 3)), "x"), "DMS", 2)


class TestOracleHalf:
    def make(self, k, n=200, seed=0):
        truth = generate_gaussian_mixture(k, 2, n // k, 1.0, seed)
        return truth, generate_complementary(truth, uniform_transition(k), 1, seed)

    def test_k10_five_entries(self):
        truth, data = self.make(10)
        z = oracle_half_unseen(data, truth, 0).rows
        assert np.all((z > 0).sum(1) == 5)
        np.testing.assert_allclose(z[z > 0], 0.2)
        rows = np.arange(len(z))
        assert np.all(z[rows, data.single_labels()] == 0.2)
        assert np.all(z[rows, truth.ordinary_labels] == 0)

    def test_k3_is_seed(self):
        truth, data = self.make(3, 30)
        np.testing.assert_array_equal(oracle_half_unseen(data, truth, 0).rows, data.label_matrix())

    def test_odd_unseen_count_floors(self):
        truth, data = self.make(5, 50)
        assert np.all((oracle_half_unseen(data, truth, 0).rows > 0).sum(1) == 2)

    def test_deterministic_and_uniform(self):
        truth, data = self.make(10, 5000)
        a = oracle_half_unseen(data, truth, 3).rows
        np.testing.assert_array_equal(a, oracle_half_unseen(data, truth, 3).rows)
        # every eligible class is included with probability 4/8
        rows = np.arange(len(a))
        eligible = np.ones_like(a, dtype=bool)
        eligible[rows, truth.ordinary_labels] = False
        eligible[rows, data.single_labels()] = False
        for c in range(10):
            m = eligible[:, c]
            rate = np.mean(a[m, c] > 0)
            assert abs(rate - 0.5) < 4 * np.sqrt(0.25 / m.sum())

    def test_misaligned(self):
        truth, data = self.make(4, 40)
        with pytest.raises(ValueError):
            oracle_half_unseen(data, truth.subset(np.arange(10)), 0)


def test_distance_weighting_not_noisier_than_uniform_pooling():
    truth = generate_gaussian_mixture(10, 8, 200, 6.0, 0)
    data = generate_complementary(truth, uniform_transition(10), 1, 0)
    feats = FeatureMatrix(truth.features, "identity")
    dms = augment(data, feats, "DMS", 32)
    pooled = augment(data, feats, "naive", 32, rounds=100)
    assert augmented_noise_rate(dms, truth) <= augmented_noise_rate(pooled, truth)
