"""Exact k-nearest-neighbour search and kNN affinity matrices."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import FormatError
from .features import FeatureMatrix

# Max float64 entries held by one block of the pairwise difference tensor.
_BLOCK_ELEMS = 1 << 22


@dataclass(frozen=True)
class NeighborTable:
    """Column j holds the (j+1)-th nearest neighbour; distances are squared Euclidean."""

    indices: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        if self.indices.shape != self.distances.shape:
            raise ValueError("indices and distances must have the same shape")

    def __len__(self):
        return self.indices.shape[0]

    @property
    def num_neighbors(self) -> int:
        return self.indices.shape[1]


def _squared_distances(block: np.ndarray, points: np.ndarray) -> np.ndarray:
    diff = block[:, None, :] - points[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _select(dist_row: np.ndarray, k: int) -> np.ndarray:
    # all candidates at or below the k-th smallest value, then (distance, index) order
    kth = np.partition(dist_row, k - 1)[k - 1]
    cand = np.flatnonzero(dist_row <= kth)
    order = np.lexsort((cand, dist_row[cand]))
    return cand[order[:k]]


def query_neighbors(points: np.ndarray, queries: np.ndarray, num_neighbors: int,
                    exclude_self: bool = False) -> NeighborTable:
    """Brute-force kNN of each query among ``points``; ties go to the lower index.

    With ``exclude_self`` the queries must be the points themselves and
    row i never lists i.
    """
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    n = points.shape[0]
    limit = n - 1 if exclude_self else n
    if not 1 <= num_neighbors <= limit:
        raise ValueError(f"num_neighbors must lie in [1, {limit}], got {num_neighbors}")
    q = queries.shape[0]
    indices = np.empty((q, num_neighbors), dtype=np.int64)
    distances = np.empty((q, num_neighbors))
    step = max(1, _BLOCK_ELEMS // max(1, n * points.shape[1]))
    for start in range(0, q, step):
        stop = min(q, start + step)
        d = _squared_distances(queries[start:stop], points)
        if exclude_self:
            d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        for r in range(stop - start):
            sel = _select(d[r], num_neighbors)
            indices[start + r] = sel
            distances[start + r] = d[r, sel]
    return NeighborTable(indices, distances)


def knn_search(features: FeatureMatrix, num_neighbors: int) -> NeighborTable:
    """Exact kNN of every instance among the others (self excluded)."""
    v = features.vectors
    if num_neighbors >= len(v):
        raise ValueError(f"num_neighbors={num_neighbors} must be smaller than N={len(v)}")
    return query_neighbors(v, v, num_neighbors, exclude_self=True)


def _normalized(table: NeighborTable, raw: np.ndarray) -> sp.csr_matrix:
    n, k = table.indices.shape
    sums = raw.sum(axis=1, keepdims=True)
    weights = np.divide(raw, sums, out=np.zeros_like(raw), where=sums > 0)
    indptr = np.arange(0, n * k + 1, k)
    w = sp.csr_matrix((weights.ravel(), table.indices.ravel(), indptr), shape=(n, n))
    w.sort_indices()
    return w


def build_affinity_rank(table: NeighborTable) -> sp.csr_matrix:
    """Weight 1/k on the k-th neighbour, rows normalised to sum to one."""
    n, k = table.indices.shape
    raw = np.broadcast_to(1.0 / np.arange(1, k + 1), (n, k))
    return _normalized(table, np.array(raw))


def build_affinity_uniform(table: NeighborTable) -> sp.csr_matrix:
    """Equal weight on every neighbour (unweighted neighbour pooling)."""
    n, k = table.indices.shape
    return _normalized(table, np.ones((n, k)))


def auto_gamma(table: NeighborTable) -> float:
    """``ln 2`` over the median squared distance to the ceil(N_K/2)-th neighbour.

    Returns 0.0 when that median is zero.
    """
    col = (table.num_neighbors + 1) // 2 - 1
    med = float(np.median(table.distances[:, col]))
    return float(np.log(2.0) / med) if med > 0 else 0.0


def build_affinity_distance(table: NeighborTable, gamma="auto") -> sp.csr_matrix:
    """Weight ``exp(-gamma * d^2)`` on each neighbour, rows normalised.

    ``gamma="auto"`` gives the median neighbour a raw weight of 0.5. If all
    distances are zero the rank weighting is used instead, with a warning.
    """
    if isinstance(gamma, str):
        if gamma != "auto":
            raise ValueError(f"gamma must be a positive number or 'auto', got {gamma!r}")
        gamma = auto_gamma(table)
        if gamma == 0.0:
            warnings.warn("median neighbour distance is zero; falling back to rank weights",
                          RuntimeWarning, stacklevel=2)
            return build_affinity_rank(table)
    elif not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    d = table.distances
    # shifting by the row minimum leaves normalised weights unchanged and avoids underflow
    raw = np.exp(-gamma * (d - d[:, :1]))
    return _normalized(table, raw)


# Sparse triplet binary: <u32 N> <u64 nnz> nnz x <u32 row, u32 col, f32 value>

_TRIPLET = np.dtype([("row", "<u4"), ("col", "<u4"), ("value", "<f4")])


def save_affinity(w: sp.spmatrix, path) -> None:
    coo = sp.coo_matrix(w)
    order = np.lexsort((coo.col, coo.row))
    rec = np.empty(coo.nnz, dtype=_TRIPLET)
    rec["row"], rec["col"], rec["value"] = coo.row[order], coo.col[order], coo.data[order]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IQ", w.shape[0], coo.nnz))
        fh.write(rec.tobytes())


def load_affinity(path) -> sp.csr_matrix:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    n, nnz = struct.unpack_from("<IQ", raw, 0)
    expected = 12 + nnz * _TRIPLET.itemsize
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}", offset=len(raw))
    rec = np.frombuffer(raw, dtype=_TRIPLET, count=nnz, offset=12)
    if nnz and (rec["row"].max() >= n or rec["col"].max() >= n):
        raise FormatError(f"{path}: triplet index out of range for N={n}", offset=12)
    return sp.csr_matrix((rec["value"].astype(np.float64), (rec["row"], rec["col"])), shape=(n, n))
