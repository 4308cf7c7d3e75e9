"""Datasets with ordinary and complementary labels.

Ordinary labels are the ground truth; they are kept around for label
generation and diagnostics only. Training code only ever sees a
:class:`ComplementaryDataset`, whose labels name classes an instance does
*not* belong to.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, GenerationError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _as_features(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be a 2-d matrix, got shape {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"features must have N >= 1 rows and d >= 1 columns, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite entries")
    x.setflags(write=False)
    return x


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    ordinary_labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        x = _as_features(self.features)
        y = np.asarray(self.ordinary_labels)
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError(f"expected {x.shape[0]} labels, got shape {y.shape}")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValueError("ordinary labels must be integers")
        y = y.astype(np.int64)
        if int(self.num_classes) < 3:
            raise ValueError(f"num_classes must be >= 3, got {self.num_classes}")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"ordinary labels must lie in [0, {self.num_classes})")
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "ordinary_labels", y)
        object.__setattr__(self, "num_classes", int(self.num_classes))

    def __len__(self):
        return self.features.shape[0]

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> LabeledDataset:
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[indices], self.ordinary_labels[indices],
                              self.num_classes, self.name)


@dataclass(frozen=True)
class ComplementaryDataset:
    """Features plus a non-empty set of complementary labels per instance.

    ``complementary_labels`` is normalised to a tuple of sorted tuples.
    """

    features: np.ndarray
    complementary_labels: tuple
    num_classes: int
    _matrix: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = _as_features(self.features)
        k = int(self.num_classes)
        if k < 3:
            raise ValueError(f"num_classes must be >= 3, got {k}")
        if len(self.complementary_labels) != x.shape[0]:
            raise ValueError(
                f"expected {x.shape[0]} complementary-label sets, got {len(self.complementary_labels)}")
        sets = []
        mat = np.zeros((x.shape[0], k))
        for i, labels in enumerate(self.complementary_labels):
            if np.isscalar(labels) or isinstance(labels, np.integer):
                labels = (labels,)
            s = tuple(sorted({int(c) for c in labels}))
            if not s:
                raise ValueError(f"instance {i} has an empty complementary-label set")
            if s[0] < 0 or s[-1] >= k:
                raise ValueError(f"instance {i} has complementary labels outside [0, {k})")
            if len(s) == k:
                raise ValueError(f"instance {i} lists every class as complementary")
            sets.append(s)
            mat[i, list(s)] = 1.0 / len(s)
        mat.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "complementary_labels", tuple(sets))
        object.__setattr__(self, "num_classes", k)
        object.__setattr__(self, "_matrix", mat)

    def __len__(self):
        return self.features.shape[0]

    @classmethod
    def from_single(cls, features, labels, num_classes) -> ComplementaryDataset:
        return cls(features, tuple((int(c),) for c in labels), num_classes)

    @property
    def is_single(self) -> bool:
        return all(len(s) == 1 for s in self.complementary_labels)

    def single_labels(self) -> np.ndarray:
        """Return the complementary labels as an int array; requires one CL per instance."""
        if not self.is_single:
            raise ValueError("dataset has instances with more than one complementary label")
        return np.array([s[0] for s in self.complementary_labels], dtype=np.int64)

    def label_matrix(self) -> np.ndarray:
        """N x K matrix whose rows are uniform over each instance's complementary labels."""
        return self._matrix

    def subset(self, indices) -> ComplementaryDataset:
        indices = np.asarray(indices, dtype=np.int64)
        return ComplementaryDataset(self.features[indices],
                                    tuple(self.complementary_labels[i] for i in indices),
                                    self.num_classes)


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic K x K matrix, ``entries[i, j] = P(cl = j | y = i)``."""

    entries: np.ndarray

    def __post_init__(self):
        t = np.array(self.entries, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError(f"transition matrix must be square, got shape {t.shape}")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise ValueError("transition matrix entries must be finite and non-negative")
        if np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("transition matrix rows must sum to 1")
        t.setflags(write=False)
        object.__setattr__(self, "entries", t)

    @property
    def num_classes(self) -> int:
        return self.entries.shape[0]

    @property
    def noiseless(self) -> bool:
        return bool(np.all(np.diag(self.entries) == 0))


def uniform_transition(num_classes: int) -> TransitionMatrix:
    if num_classes < 3:
        raise ValueError(f"num_classes must be >= 3, got {num_classes}")
    t = np.full((num_classes, num_classes), 1.0 / (num_classes - 1))
    np.fill_diagonal(t, 0.0)
    return TransitionMatrix(t)


def noisy_uniform_transition(num_classes: int, noise: float) -> TransitionMatrix:
    """Uniform generation where the ordinary label itself is drawn with probability ``noise``."""
    if num_classes < 3:
        raise ValueError(f"num_classes must be >= 3, got {num_classes}")
    if not 0.0 <= noise < 1.0:
        raise ValueError(f"noise must lie in [0, 1), got {noise}")
    t = np.full((num_classes, num_classes), (1.0 - noise) / (num_classes - 1))
    np.fill_diagonal(t, noise)
    return TransitionMatrix(t)


def _class_directions(num_classes: int, dims: int) -> np.ndarray:
    # Centres never depend on the sampling seed so that train/test draws share them.
    if num_classes <= dims:
        return np.eye(dims)[:num_classes]
    if dims == 1:
        return np.where(np.arange(num_classes) % 2 == 0, 1.0, -1.0)[:, None]
    if dims == 2:
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    rng = np.random.default_rng([num_classes, dims])
    u = rng.standard_normal((num_classes, dims))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def generate_gaussian_mixture(num_classes: int, dims: int, per_class: int,
                              separation: float, seed: int,
                              name: str = "gaussian") -> LabeledDataset:
    """Isotropic unit-variance Gaussian blobs centred at ``separation * u_c``.

    Class directions ``u_c`` are the standard basis when ``num_classes <= dims``,
    evenly spaced on the circle in 2-d, and otherwise fixed pseudo-random
    unit vectors that depend only on ``(num_classes, dims)``.
    """
    if num_classes < 3:
        raise ValueError(f"num_classes must be >= 3, got {num_classes}")
    if dims < 1 or per_class < 1:
        raise ValueError("dims and per_class must be >= 1")
    if not separation >= 0:
        raise ValueError(f"separation must be non-negative, got {separation}")
    centres = separation * _class_directions(num_classes, dims)
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), per_class)
    features = centres[labels] + rng.standard_normal((labels.size, dims))
    return LabeledDataset(features, labels, num_classes, name)


def _draw_categorical(rng, probs: np.ndarray) -> np.ndarray:
    # Inverse-CDF sampling, one uniform per row.
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    picks = (cdf <= u[:, None]).sum(axis=1)
    # Guard against landing on a zero-probability tail through rounding.
    last_positive = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(picks, last_positive)


def generate_complementary(data: LabeledDataset, transition: TransitionMatrix,
                           labels_per_instance: int = 1, seed: int = 0) -> ComplementaryDataset:
    """Draw complementary labels for each instance from its transition row.

    Multiple labels are drawn without replacement; each draw uses the row
    renormalised over the classes not drawn yet.
    """
    k = data.num_classes
    if transition.num_classes != k:
        raise ValueError(f"transition matrix is {transition.num_classes}x{transition.num_classes}, "
                         f"dataset has {k} classes")
    if not 1 <= labels_per_instance <= k - 1:
        raise ValueError(f"labels_per_instance must lie in [1, {k - 1}], got {labels_per_instance}")
    probs = transition.entries[data.ordinary_labels].copy()
    support = (probs > 0).sum(axis=1)
    short = np.flatnonzero(support < labels_per_instance)
    if short.size:
        i = int(short[0])
        raise GenerationError(
            f"instance {i} (class {data.ordinary_labels[i]}) has only {support[i]} classes with "
            f"positive probability, cannot draw {labels_per_instance}", instance=i)
    rng = np.random.default_rng(seed)
    rows = np.arange(len(data))
    drawn = np.empty((len(data), labels_per_instance), dtype=np.int64)
    for t in range(labels_per_instance):
        picks = _draw_categorical(rng, probs)
        drawn[:, t] = picks
        probs[rows, picks] = 0.0
    return ComplementaryDataset(data.features, tuple(map(tuple, drawn)), k)


def _check_label_range(labels: np.ndarray, num_classes: int | None, source: str) -> int:
    if labels.size and labels.min() < 0:
        raise FormatError(f"{source}: negative class id {labels.min()}")
    if num_classes is None:
        if labels.size and labels.min() >= 1:
            raise FormatError(f"{source}: class ids appear to be 1-based; 0-based ids are required")
        num_classes = int(labels.max()) + 1 if labels.size else 0
        if num_classes < 3:
            raise ValueError(f"{source}: only {num_classes} classes inferred; "
                             "pass num_classes explicitly (at least 3 are required)")
    elif labels.size and labels.max() >= num_classes:
        raise FormatError(f"{source}: class id {labels.max()} >= num_classes={num_classes} "
                          "(1-based ids are not accepted)")
    return num_classes


def _read_idx(path: Path, magic: int) -> tuple[tuple[int, ...], np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    (found,) = struct.unpack_from(">I", raw, 0)
    if found != magic:
        raise FormatError(f"{path}: bad magic number 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header", offset=len(raw))
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + count:
        raise FormatError(f"{path}: truncated data, expected {count} bytes", offset=len(raw))
    return dims, np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)


def load_idx(images_path, labels_path, num_classes: int | None = None,
             name: str | None = None) -> LabeledDataset:
    """Load an MNIST-style IDX image/label pair, scaling pixels to [0, 1]."""
    img_dims, pixels = _read_idx(Path(images_path), IDX_IMAGES_MAGIC)
    (n_labels,), labels = _read_idx(Path(labels_path), IDX_LABELS_MAGIC)
    n_images = img_dims[0]
    if n_images != n_labels:
        raise FormatError(f"{images_path} holds {n_images} images but {labels_path} "
                          f"holds {n_labels} labels", offset=4)
    features = pixels.reshape(n_images, -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    k = _check_label_range(labels, num_classes, str(labels_path))
    return LabeledDataset(features, labels, k, name or Path(images_path).stem)


def load_csv(path, label_column: str, num_classes: int | None = None,
             name: str | None = None) -> LabeledDataset:
    """Load a headed CSV; every non-label column becomes a feature, in header order."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise FormatError(f"{path}: empty file", offset=(0, 0))
        header = [h.strip() for h in header]
        if label_column not in header:
            raise ValueError(f"{path}: no column named {label_column!r}")
        label_at = header.index(label_column)
        rows, labels = [], []
        for r, record in enumerate(reader, start=1):
            if not record:
                continue
            if len(record) != len(header):
                raise FormatError(f"{path}: expected {len(header)} fields, got {len(record)}",
                                  offset=(r, len(record)))
            row = []
            for c, cell in enumerate(record):
                if c == label_at:
                    try:
                        labels.append(int(cell))
                    except ValueError:
                        raise FormatError(f"{path}: non-integer label {cell!r}", offset=(r, c)) from None
                    continue
                try:
                    row.append(float(cell))
                except ValueError:
                    raise FormatError(f"{path}: non-numeric feature {cell!r}", offset=(r, c)) from None
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no data rows", offset=(1, 0))
    labels = np.array(labels, dtype=np.int64)
    k = _check_label_range(labels, num_classes, str(path))
    return LabeledDataset(np.array(rows), labels, k, name or path.stem)


def split_indices(n: int, validation_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < validation_fraction < 1.0:
        raise ValueError(f"validation_fraction must lie in (0, 1), got {validation_fraction}")
    n_val = int(np.floor(validation_fraction * n + 0.5))
    if n_val == 0 or n_val == n:
        raise ValueError(f"validation_fraction={validation_fraction} leaves one side of a "
                         f"{n}-instance split empty")
    perm = np.random.default_rng(seed).permutation(n)
    return perm[n_val:], perm[:n_val]


def split(data: ComplementaryDataset, validation_fraction: float,
          seed: int) -> tuple[ComplementaryDataset, ComplementaryDataset]:
    """Shuffled train/validation split with ``round(fraction * N)`` validation instances."""
    train_idx, val_idx = split_indices(len(data), validation_fraction, seed)
    return data.subset(train_idx), data.subset(val_idx)


# Flat binary cache: <u32 N, d, K> <f32 features row-major> <u16 labels>

def save_cache(data: LabeledDataset, path) -> None:
    if data.num_classes > np.iinfo(np.uint16).max + 1:
        raise ValueError("too many classes for the u16 label cache")
    n, d = data.features.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3I", n, d, data.num_classes))
        fh.write(data.features.astype("<f4").tobytes())
        fh.write(data.ordinary_labels.astype("<u2").tobytes())


def load_cache(path, name: str | None = None) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    n, d, k = struct.unpack_from("<3I", raw, 0)
    expected = 12 + 4 * n * d + 2 * n
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}", offset=len(raw))
    features = np.frombuffer(raw, dtype="<f4", count=n * d, offset=12).reshape(n, d)
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=12 + 4 * n * d)
    return LabeledDataset(features.astype(np.float64), labels.astype(np.int64), k,
                          name or Path(path).stem)


def save_complementary(data: ComplementaryDataset, path) -> None:
    """Write complementary labels as CSV rows ``index,labels`` (labels ';'-separated)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "complementary_labels"])
        for i, s in enumerate(data.complementary_labels):
            w.writerow([i, ";".join(map(str, s))])


def load_complementary(path, features, num_classes: int) -> ComplementaryDataset:
    sets: list[Sequence[int]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for r, record in enumerate(reader, start=1):
            if not record:
                continue
            try:
                sets.append(tuple(int(c) for c in record[1].split(";")))
            except (ValueError, IndexError):
                raise FormatError(f"{path}: malformed complementary labels", offset=(r, 1)) from None
    return ComplementaryDataset(features, tuple(sets), num_classes)
