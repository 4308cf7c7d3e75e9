"""Diagnostics: seen/unseen confidences, sharing efficiency, noise rates, kNN decoding."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import ComplementaryDataset, LabeledDataset
from .features import FeatureMatrix
from .neighbors import knn_search, query_neighbors


@dataclass(frozen=True)
class SharingReport:
    mean_seen_confidence: float
    mean_unseen_confidence: float
    implicit_sharing_efficiency: float
    epoch: int = -1


def _unseen_mass(probs: np.ndarray, truth: LabeledDataset, data: ComplementaryDataset):
    if len(probs) != len(truth) or len(truth) != len(data):
        raise ValueError("probabilities, ground truth and complementary data are not aligned")
    k = data.num_classes
    if k < 3:
        raise ValueError("seen/unseen confidences need at least 3 classes")
    if not data.is_single:
        raise ValueError("confidence reports require a single complementary label per instance")
    rows = np.arange(len(data))
    seen_cl = data.single_labels()
    y = truth.ordinary_labels
    seen = probs[rows, seen_cl]
    unseen = probs.sum(axis=1) - seen - probs[rows, y]
    # a noisy CL equal to y leaves K-1 unseen classes, not K-2
    n_unseen = np.where(seen_cl == y, k - 1, k - 2)
    unseen = np.where(seen_cl == y, probs.sum(axis=1) - seen, unseen)
    return seen, unseen, n_unseen


def confidence_report(probs, truth: LabeledDataset, data: ComplementaryDataset,
                      epoch: int = -1) -> SharingReport:
    """Mean confidence on the seen CL, on the unseen CLs, and the implicit sharing efficiency.

    Efficiency is ``1 - mean_i[(K-1)/(K-2) * sum_{unseen} p_i]``: 0 when
    the unseen CLs keep their no-sharing share ``1/(K-1)``, 1 when they
    receive no mass.
    """
    probs = np.asarray(probs, dtype=np.float64)
    k = data.num_classes
    seen, unseen, n_unseen = _unseen_mass(probs, truth, data)
    mean_unseen = float(np.mean(unseen / n_unseen))
    efficiency = 1.0 - float(np.mean((k - 1) / (k - 2) * unseen))
    return SharingReport(float(np.mean(seen)), mean_unseen, efficiency, epoch)


def efficiency_from_unseen(mean_unseen: float, num_classes: int) -> float:
    """Same quantity from a mean unseen confidence: ``1 - mean / (1/(K-1))``."""
    return 1.0 - mean_unseen * (num_classes - 1)


def _donated_noise(neighbors: np.ndarray, data: ComplementaryDataset, truth: LabeledDataset) -> float:
    y = truth.ordinary_labels
    member = data.label_matrix() > 0  # (N, K) CL membership
    sizes = member.sum(axis=1)
    noisy = member[neighbors, y[:, None]].sum()
    donated = sizes[neighbors].sum()
    return float(noisy / donated)


def neighboring_noise_rate(features: FeatureMatrix, data: ComplementaryDataset,
                           truth: LabeledDataset, num_neighbors: int = 128) -> float:
    """Fraction of CLs donated by each instance's neighbours that equal its ordinary label."""
    if not (len(features) == len(data) == len(truth)):
        raise ValueError("features, complementary data and ground truth are not aligned")
    table = knn_search(features, num_neighbors)
    return _donated_noise(table.indices, data, truth)


def augmented_noise_rate(soft_labels, truth: LabeledDataset) -> float:
    """Average soft-label mass that sits on the ordinary label."""
    z = np.asarray(getattr(soft_labels, "rows", soft_labels))
    if len(z) != len(truth):
        raise ValueError("soft labels and ground truth are not aligned")
    return float(np.mean(z[np.arange(len(z)), truth.ordinary_labels]))


def knn_decode(features: FeatureMatrix, data: ComplementaryDataset, query=None,
               num_neighbors: int = 64) -> np.ndarray:
    """Predict the class that appears least often as a CL among the nearest training instances.

    ``query=None`` decodes the training instances themselves, each
    excluding itself. Ties go to the lowest class id.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    if len(features) != len(data):
        raise ValueError("features and complementary data are not aligned")
    if query is None:
        table = knn_search(features, num_neighbors)
    else:
        q = np.asarray(getattr(query, "vectors", query), dtype=np.float64)
        table = query_neighbors(features.vectors, q, num_neighbors)
    member = data.label_matrix() > 0
    counts = member[table.indices].sum(axis=1)
    return np.argmin(counts, axis=1)


def accuracy(predictions, truth) -> float:
    pred = np.asarray(predictions)
    y = np.asarray(getattr(truth, "ordinary_labels", truth))
    if pred.size == 0:
        raise ValueError("no predictions")
    if pred.shape != y.shape:
        raise ValueError("predictions and labels are not aligned")
    return float(np.mean(pred == y))


def write_report_rows(path, rows) -> None:
    """Write ``(epoch, metric, value)`` rows; accepts SharingReports or tuples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "metric", "value"])
        for row in rows:
            if isinstance(row, SharingReport):
                d = asdict(row)
                epoch = d.pop("epoch")
                for name, value in d.items():
                    w.writerow([epoch, name, repr(value)])
            else:
                w.writerow(list(row))
