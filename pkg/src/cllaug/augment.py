"""Complementary-label augmentation.

Soft complementary labels are built by propagating each instance's
complementary labels to its neighbours over the kNN affinity graph::

    Z <- alpha * Y + (1 - alpha) * W @ Z      (repeated `rounds` times, Z0 = Y)

followed by a row normalisation. The propagation runs once, before training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dataset import ComplementaryDataset, LabeledDataset
from .features import FeatureMatrix, read_matrix, save_embeddings
from .neighbors import (build_affinity_distance, build_affinity_rank, build_affinity_uniform,
                        knn_search)

SCHEMES = ("none", "RSS", "RMS", "DSS", "DMS")
SCHEME_IDS = SCHEMES + ("naive", "oracle", "custom")
DEFAULT_ROUNDS = {"none": 0, "RSS": 1, "DSS": 1, "RMS": 100, "DMS": 100, "naive": 1}
DEFAULT_ALPHA = 0.1
DEFAULT_NEIGHBORS = 64


@dataclass(frozen=True)
class SoftLabelMatrix:
    rows: np.ndarray
    scheme_id: str = "none"
    alpha: float = 1.0
    rounds: int = 0

    def __post_init__(self):
        z = np.asarray(self.rows, dtype=np.float64)
        if z.ndim != 2:
            raise ValueError(f"soft labels must be 2-d, got shape {z.shape}")
        if self.scheme_id not in SCHEME_IDS:
            raise ValueError(f"unknown scheme {self.scheme_id!r}")
        if np.any(z < 0) or np.any(np.abs(z.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("soft-label rows must be non-negative and sum to 1")
        z.setflags(write=False)
        object.__setattr__(self, "rows", z)

    def __len__(self):
        return self.rows.shape[0]

    @property
    def num_classes(self) -> int:
        return self.rows.shape[1]

    def subset(self, indices) -> SoftLabelMatrix:
        return SoftLabelMatrix(self.rows[np.asarray(indices)], self.scheme_id, self.alpha, self.rounds)


def save_soft_labels(z: SoftLabelMatrix, path) -> None:
    """Write Z in the embedding binary layout (u32 N, u32 K, f32 row-major)."""
    save_embeddings(z.rows, path)


def load_soft_labels(path, scheme_id: str = "custom") -> SoftLabelMatrix:
    """Read Z back; rows are renormalised to absorb the f32 rounding."""
    z = read_matrix(path)
    sums = z.sum(axis=1, keepdims=True)
    if np.any(z < 0) or np.any(sums <= 0):
        raise ValueError(f"{path}: soft labels must be non-negative with positive row sums")
    return SoftLabelMatrix(z / sums, scheme_id)


def seed_matrix(data: ComplementaryDataset) -> SoftLabelMatrix:
    """One row per instance, uniform over its complementary labels."""
    return SoftLabelMatrix(data.label_matrix(), "none", 1.0, 0)


def propagate_raw(seed: np.ndarray, affinity, alpha: float, rounds: int) -> np.ndarray:
    """The recurrence alone, without the final normalisation."""
    z = seed
    for _ in range(rounds):
        z = alpha * seed + (1.0 - alpha) * (affinity @ z)
    return z


def propagate(seed: SoftLabelMatrix, affinity, alpha: float = DEFAULT_ALPHA, rounds: int = 1,
              scheme_id: str = "custom") -> SoftLabelMatrix:
    """Run ``rounds`` propagation steps anchored on the seed, then renormalise rows.

    Rows whose mass vanishes (isolated instances in a user-supplied
    affinity) fall back to the seed row. ``rounds=0`` returns the seed.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if rounds < 0:
        raise ValueError(f"rounds must be >= 0, got {rounds}")
    y = seed.rows
    if affinity.shape != (len(y), len(y)):
        raise ValueError(f"affinity is {affinity.shape}, expected {(len(y), len(y))}")
    if rounds == 0:
        return seed
    w = sp.csr_matrix(affinity)
    z = propagate_raw(y, w, alpha, rounds)
    sums = z.sum(axis=1, keepdims=True)
    empty = sums[:, 0] <= 0
    z = np.divide(z, sums, out=np.zeros_like(z), where=sums > 0)
    z[empty] = y[empty]
    return SoftLabelMatrix(z, scheme_id, alpha, rounds)


def fixed_point(seed: np.ndarray, affinity, alpha: float) -> np.ndarray:
    """Row-normalised limit ``alpha (I - (1-alpha) W)^-1 Y`` by a direct dense solve."""
    w = affinity.toarray() if sp.issparse(affinity) else np.asarray(affinity)
    z = alpha * np.linalg.solve(np.eye(len(w)) - (1.0 - alpha) * w, seed)
    return z / z.sum(axis=1, keepdims=True)


def build_affinity(features: FeatureMatrix, scheme: str, num_neighbors: int = DEFAULT_NEIGHBORS,
                   gamma="auto"):
    table = knn_search(features, num_neighbors)
    if scheme in ("RSS", "RMS"):
        return build_affinity_rank(table)
    if scheme in ("DSS", "DMS"):
        return build_affinity_distance(table, gamma)
    if scheme == "naive":
        return build_affinity_uniform(table)
    raise ValueError(f"scheme {scheme!r} has no affinity matrix")


def augment(data: ComplementaryDataset, features: FeatureMatrix, scheme: str = "DMS",
            num_neighbors: int = DEFAULT_NEIGHBORS, alpha: float = DEFAULT_ALPHA,
            rounds: int | None = None, gamma="auto") -> SoftLabelMatrix:
    """Build soft complementary labels with one of the named schemes.

    ``rounds=None`` picks the scheme default: 1 for single-step schemes,
    100 for multi-step ones. ``naive`` is unweighted single-step pooling.
    """
    if scheme not in DEFAULT_ROUNDS:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {sorted(DEFAULT_ROUNDS)}")
    if len(features) != len(data):
        raise ValueError("features and dataset are not aligned")
    seed = seed_matrix(data)
    if rounds is None:
        rounds = DEFAULT_ROUNDS[scheme]
    if scheme == "none" or rounds == 0:
        return seed
    w = build_affinity(features, scheme, num_neighbors, gamma)
    return propagate(seed, w, alpha, rounds, scheme_id=scheme)


def oracle_half_unseen(data: ComplementaryDataset, truth: LabeledDataset, seed: int = 0) -> SoftLabelMatrix:
    """Add a random half of each instance's unseen complementary labels, using the truth.

    Each row becomes uniform over the seen label plus ``floor((K-2)/2)``
    classes drawn from those that are neither the ordinary nor the seen label.
    """
    if len(data) != len(truth) or data.num_classes != truth.num_classes:
        raise ValueError("complementary data and ground truth are not aligned")
    seen = data.single_labels()
    y = truth.ordinary_labels
    n, k = len(data), data.num_classes
    extra = (k - 2) // 2
    rows = np.arange(n)
    keys = np.random.default_rng(seed).random((n, k))
    keys[rows, y] = np.inf
    keys[rows, seen] = np.inf
    chosen = np.argsort(keys, axis=1, kind="stable")[:, :extra]
    mask = np.zeros((n, k))
    mask[rows, seen] = 1.0
    mask[rows[:, None], chosen] = 1.0
    return SoftLabelMatrix(mask / mask.sum(axis=1, keepdims=True), "oracle", 1.0, 0)
