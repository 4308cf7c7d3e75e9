import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cllaug.dataset import ComplementaryDataset
from cllaug.errors import FormatError
from cllaug.features import (FeatureMatrix, fit_pca, identity_features, load_embeddings,
                             pca_fit_transform, save_embeddings, standardize)


def fm(x):
    return FeatureMatrix(np.asarray(x, dtype=float), "test")


class TestIdentity:
    def test_bit_for_bit(self):
        x = np.random.default_rng(0).standard_normal((7, 3))
        d = ComplementaryDataset.from_single(x, [0] * 7, 3)
        f = identity_features(d)
        assert f.vectors.tobytes() == x.tobytes()
        assert f.extractor_id == "identity"

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            fm([[np.inf]])


class TestStandardize:
    def test_two_values(self):
        np.testing.assert_allclose(standardize(fm([[1.0], [3.0]])).vectors, [[-1], [1]])

    def test_constant_column(self):
        out = standardize(fm([[5.0, 1.0], [5.0, 2.0]])).vectors
        np.testing.assert_array_equal(out[:, 0], [0, 0])

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            standardize(fm([[1.0, 2.0]]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 5)),
                  elements=st.floats(-1e3, 1e3)))
    def test_idempotent(self, x):
        once = standardize(fm(x))
        twice = standardize(once)
        np.testing.assert_allclose(twice.vectors, once.vectors, atol=1e-9)

    def test_moments(self):
        x = np.random.default_rng(1).normal(3, 5, (200, 4))
        out = standardize(fm(x)).vectors
        np.testing.assert_allclose(out.mean(0), 0, atol=1e-12)
        np.testing.assert_allclose(out.var(0), 1, atol=1e-12)


class TestPca:
    def test_line_keeps_total_variance(self):
        t = np.random.default_rng(2).standard_normal(40)
        x = np.stack([t, 2 * t + 1], axis=1)
        proj = pca_fit_transform(fm(x), 1).vectors
        total = ((x - x.mean(0)) ** 2).sum(1).mean()
        assert abs(proj.var() - total) < 1e-8

    def test_full_basis_reconstructs(self):
        x = np.random.default_rng(3).standard_normal((30, 5))
        model = fit_pca(fm(x), 5)
        recon = model.transform(fm(x)).vectors @ model.components
        np.testing.assert_allclose(recon, x - x.mean(0), atol=1e-6)

    def test_matches_eigh_oracle(self):
        x = np.random.default_rng(4).standard_normal((50, 10))
        proj = pca_fit_transform(fm(x), 3, seed=0).vectors
        c = x - x.mean(0)
        w, v = np.linalg.eigh(c.T @ c / len(x))
        top = v[:, ::-1][:, :3]
        ref = c @ top
        for j in range(3):
            sign = np.sign(ref[:, j] @ proj[:, j])
            np.testing.assert_allclose(proj[:, j], sign * ref[:, j], atol=1e-6)

    def test_sign_convention(self):
        x = np.random.default_rng(5).standard_normal((40, 6))
        comps = fit_pca(fm(x), 4).components
        for row in comps:
            assert row[np.argmax(np.abs(row))] > 0

    def test_variances_descending(self):
        x = np.random.default_rng(6).standard_normal((80, 6)) * np.arange(1, 7)
        model = fit_pca(fm(x), 6)
        assert np.all(np.diff(model.variances) <= 1e-9)
        assert all(1 <= it <= 1000 for it in model.iterations)

    @pytest.mark.parametrize("k", [0, 4])
    def test_component_range(self, k):
        with pytest.raises(ValueError):
            fit_pca(fm(np.zeros((3, 5))), k)

    def test_rank_deficient_data(self):
        # only one non-degenerate direction; extra components stay orthonormal
        x = np.zeros((10, 3))
        x[:, 0] = np.arange(10)
        comps = fit_pca(fm(x), 3).components
        np.testing.assert_allclose(comps @ comps.T, np.eye(3), atol=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(5, 40), st.integers(2, 6))
    def test_projection_covariance_diagonal(self, seed, n, m):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, m)) * rng.uniform(0.5, 3, m)
        k = min(n, m) - 1
        proj = pca_fit_transform(fm(x), k, seed).vectors
        cov = proj.T @ proj / n
        off = cov - np.diag(np.diag(cov))
        assert np.max(np.abs(off)) < 1e-6 * max(1.0, np.abs(cov).max())


class TestEmbeddings:
    def test_header_and_values(self, tmp_path):
        p = tmp_path / "e.bin"
        p.write_bytes(struct.pack("<2I", 2, 3) + np.arange(6, dtype="<f4").tobytes())
        e = load_embeddings(p, 2)
        np.testing.assert_array_equal(e.vectors, np.arange(6).reshape(2, 3))

    def test_row_mismatch(self, tmp_path):
        p = tmp_path / "e.bin"
        p.write_bytes(struct.pack("<2I", 2, 3) + np.arange(6, dtype="<f4").tobytes())
        with pytest.raises(FormatError):
            load_embeddings(p, 5)

    def test_truncated(self, tmp_path):
        p = tmp_path / "e.bin"
        p.write_bytes(struct.pack("<2I", 2, 3) + np.arange(5, dtype="<f4").tobytes())
        with pytest.raises(FormatError):
            load_embeddings(p, 2)

    def test_roundtrip(self, tmp_path):
        v = np.random.default_rng(0).standard_normal((4, 7)).astype(np.float32)
        save_embeddings(v, tmp_path / "e.bin")
        np.testing.assert_array_equal(load_embeddings(tmp_path / "e.bin", 4).vectors, v)
