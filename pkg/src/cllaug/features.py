"""Feature vectors used for neighbour search.

The augmentation only needs *some* space where nearby instances tend to
share a class. At desk scale that is the raw features, a standardised copy,
a PCA projection, or an externally computed embedding file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

PCA_TOL = 1e-10
PCA_MAX_ITER = 1000


@dataclass(frozen=True)
class FeatureMatrix:
    vectors: np.ndarray
    extractor_id: str

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"feature vectors must be 2-d, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature vectors contain non-finite entries")
        object.__setattr__(self, "vectors", v)

    def __len__(self):
        return self.vectors.shape[0]


def identity_features(data) -> FeatureMatrix:
    return FeatureMatrix(data.features, "identity")


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, features: FeatureMatrix) -> FeatureMatrix:
        # zero-variance columns have scale 0 and map to zeros
        safe = np.where(self.scale > 0, self.scale, 1.0)
        out = np.where(self.scale > 0, (features.vectors - self.mean) / safe, 0.0)
        return FeatureMatrix(out, f"standardize({features.extractor_id})")


def fit_standardizer(features: FeatureMatrix) -> Standardizer:
    if len(features) < 2:
        raise ValueError("standardisation needs at least 2 rows")
    v = features.vectors
    # exact test for constant columns; the mean's round-off would leave a tiny spurious std
    constant = v.max(axis=0) == v.min(axis=0)
    return Standardizer(v.mean(axis=0), np.where(constant, 0.0, v.std(axis=0)))


def standardize(features: FeatureMatrix) -> FeatureMatrix:
    """Zero-mean, unit-variance columns; constant columns become zeros."""
    return fit_standardizer(features).transform(features)


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (components, m), rows orthonormal
    variances: np.ndarray
    iterations: tuple

    def transform(self, features: FeatureMatrix) -> FeatureMatrix:
        proj = (features.vectors - self.mean) @ self.components.T
        return FeatureMatrix(proj, f"pca{len(self.components)}({features.extractor_id})")


def _top_direction(cov, previous, rng):
    m = cov.shape[0]
    x = rng.standard_normal(m)
    for _ in range(2):
        for p in previous:
            x -= (p @ x) * p
    norm = np.linalg.norm(x)
    x = x / norm if norm > 0 else x
    for it in range(1, PCA_MAX_ITER + 1):
        y = cov @ x
        # re-orthogonalise against found directions (twice, for round-off)
        for _ in range(2):
            for p in previous:
                y -= (p @ y) * p
        norm = np.linalg.norm(y)
        if norm == 0.0:
            # x spans a null direction of the deflated matrix already
            return x, it
        y /= norm
        if np.linalg.norm(y - x) < PCA_TOL:
            return y, it
        x = y
    return x, PCA_MAX_ITER


def fit_pca(features: FeatureMatrix, components: int, seed: int = 0) -> PcaModel:
    """Principal directions by power iteration with deflation.

    Each direction is iterated until successive estimates differ by less
    than ``1e-10`` or 1000 iterations pass, and is flipped so that its
    largest-magnitude coordinate is positive.
    """
    v = features.vectors
    n, m = v.shape
    if not 1 <= components <= min(n, m):
        raise ValueError(f"components must lie in [1, {min(n, m)}], got {components}")
    mean = v.mean(axis=0)
    centred = v - mean
    cov = centred.T @ centred / n
    rng = np.random.default_rng(seed)
    found, variances, iterations = [], [], []
    deflated = cov.copy()
    for _ in range(components):
        direction, its = _top_direction(deflated, found, rng)
        if direction[np.argmax(np.abs(direction))] < 0:
            direction = -direction
        lam = float(direction @ cov @ direction)
        deflated = deflated - lam * np.outer(direction, direction)
        found.append(direction)
        variances.append(lam)
        iterations.append(its)
    return PcaModel(mean, np.array(found), np.array(variances), tuple(iterations))


def pca_fit_transform(features: FeatureMatrix, components: int, seed: int = 0) -> FeatureMatrix:
    return fit_pca(features, components, seed).transform(features)


# Embedding binary: <u32 N> <u32 m> <f32 values, row-major>

def save_embeddings(vectors, path) -> None:
    v = np.asarray(vectors.vectors if isinstance(vectors, FeatureMatrix) else vectors)
    n, m = v.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<2I", n, m))
        fh.write(v.astype("<f4").tobytes())


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    n, m = struct.unpack_from("<2I", raw, 0)
    expected = 8 + 4 * n * m
    if len(raw) < expected:
        raise FormatError(f"{path}: truncated payload, expected {expected} bytes", offset=len(raw))
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes", offset=expected)
    return np.frombuffer(raw, dtype="<f4", count=n * m, offset=8).reshape(n, m).astype(np.float64)


def load_embeddings(path, expected_n: int) -> FeatureMatrix:
    v = read_matrix(path)
    if v.shape[0] != expected_n:
        raise FormatError(f"{path}: holds {v.shape[0]} rows, expected {expected_n}", offset=0)
    return FeatureMatrix(v, f"embedding:{Path(path).name}")
