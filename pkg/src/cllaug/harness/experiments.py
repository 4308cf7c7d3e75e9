"""Experiment pipelines: benchmark, sharing study, efficiency study, N_K ablation, kNN decoding.

Every stage of a run draws its randomness from a seed derived from the run
seed and a stage name, so runs are reproducible and stages independent.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..augment import SoftLabelMatrix, augment, oracle_half_unseen
from ..dataset import (ComplementaryDataset, LabeledDataset, generate_complementary,
                       generate_gaussian_mixture, load_cache, load_csv, load_idx,
                       noisy_uniform_transition, split_indices, uniform_transition)
from ..features import FeatureMatrix, fit_pca, fit_standardizer, load_embeddings, read_matrix
from ..losses import LossKernel, ure_01_validation
from ..metrics import (accuracy, augmented_noise_rate, confidence_report, knn_decode,
                       neighboring_noise_rate)
from ..model import MlpSpec, OptimizerSpec, ScheduleSpec, init_model, train
from .config import ExperimentConfig, derive_seed

NOISE_NEIGHBORS = 128
METRIC_COLUMNS = ("val_score", "train_acc", "test_acc", "efficiency",
                  "augmented_noise", "neighbor_noise")


# -- data preparation -------------------------------------------------------

def load_data(config: ExperimentConfig, seed: int, size: int | None = None):
    """Training pool and test set described by ``config.dataset``.

    ``size`` shrinks the training pool: per-class count for generated data,
    a seeded subsample for files.
    """
    spec = dict(config.dataset)
    kind = spec.pop("kind", "gaussian")
    if kind == "gaussian":
        k = spec.get("num_classes", 10)
        per_class = spec.get("per_class", 500) if size is None else max(1, size // k)
        args = (k, spec.get("dims", 8))
        sep = spec.get("separation", 6.0)
        pool = generate_gaussian_mixture(*args, per_class, sep, derive_seed(seed, "train-data"))
        test = generate_gaussian_mixture(*args, spec.get("test_per_class", 200), sep,
                                         derive_seed(seed, "test-data"), name="gaussian-test")
        return pool, test
    if kind == "idx":
        k = spec.get("num_classes")
        pool = load_idx(spec["images"], spec["labels"], k)
        test = load_idx(spec["test_images"], spec["test_labels"], pool.num_classes)
    elif kind == "csv":
        k = spec.get("num_classes")
        pool = load_csv(spec["path"], spec["label_column"], k)
        test = load_csv(spec["test_path"], spec["label_column"], pool.num_classes)
    elif kind == "cache":
        pool, test = load_cache(spec["path"]), load_cache(spec["test_path"])
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    if test.num_classes != pool.num_classes or test.dims != pool.dims:
        raise ValueError("training and test sets disagree on classes or dimensions")
    if size is not None and size < len(pool):
        keep = np.sort(np.random.default_rng(derive_seed(seed, "subsample")).permutation(len(pool))[:size])
        pool = pool.subset(keep)
    return pool, test


def _transition(config: ExperimentConfig, k: int):
    if config.transition_noise:
        return noisy_uniform_transition(k, config.transition_noise)
    return uniform_transition(k)


def feature_space(config: ExperimentConfig, train_x: np.ndarray, seed: int,
                  train_rows=None, test_x=None):
    """Neighbour-search features for the training rows, and for ``test_x`` if given.

    Transforms are fitted on the training rows only. ``train_rows`` indexes
    an embedding file that covers the whole training pool.
    """
    spec = dict(config.features)
    kind = spec.get("kind", "identity")
    raw = FeatureMatrix(train_x, "identity")
    test = None if test_x is None else FeatureMatrix(test_x, "identity")
    if kind == "identity":
        return raw, test
    if kind == "standardize":
        model = fit_standardizer(raw)
    elif kind == "pca":
        model = fit_pca(raw, int(spec.get("components", 2)), derive_seed(seed, "pca"))
    elif kind == "embedding":
        pool = read_matrix(spec["path"])
        rows = np.arange(len(pool)) if train_rows is None else np.asarray(train_rows)
        if (rows.size and rows.max() >= len(pool)) or (train_rows is None and len(pool) != len(train_x)):
            raise ValueError(f"embedding file has {len(pool)} rows, not aligned with the training data")
        emb = FeatureMatrix(pool[rows], "embedding")
        if test_x is None:
            return emb, None
        if "test_path" not in spec:
            raise ValueError("embedding features need a test_path to embed the test set")
        return emb, load_embeddings(spec["test_path"], len(test_x))
    else:
        raise ValueError(f"unknown feature kind {kind!r}")
    return model.transform(raw), None if test is None else model.transform(test)


@dataclass
class Prepared:
    """One seed's data: training part, validation part and test set."""
    train: LabeledDataset
    train_cl: ComplementaryDataset
    val: LabeledDataset | None
    val_cl: ComplementaryDataset | None
    test: LabeledDataset
    features: FeatureMatrix
    test_features: FeatureMatrix | None = None


def prepare(config: ExperimentConfig, seed: int, size: int | None = None,
            validation: bool = True) -> Prepared:
    pool, test = load_data(config, seed, size)
    cl = generate_complementary(pool, _transition(config, pool.num_classes),
                                config.labels_per_instance, derive_seed(seed, "complementary"))
    if not validation:
        feats, test_feats = feature_space(config, pool.features, seed, None, test.features)
        return Prepared(pool, cl, None, None, test, feats, test_feats)
    tr, va = split_indices(len(pool), config.validation_fraction, derive_seed(seed, "split"))
    train_part = pool.subset(tr)
    feats, test_feats = feature_space(config, train_part.features, seed, tr, test.features)
    return Prepared(train_part, cl.subset(tr), pool.subset(va), cl.subset(va), test,
                    feats, test_feats)


def soft_labels(config: ExperimentConfig, prep: Prepared, num_neighbors: int | None = None,
                scheme: str | None = None, seed: int = 0) -> SoftLabelMatrix:
    scheme = scheme or config.scheme
    if scheme == "oracle":
        # explicit sharing with ground truth: half of each instance's unseen CLs
        return oracle_half_unseen(prep.train_cl, prep.train, derive_seed(seed, "oracle"))
    rounds = config.rounds if scheme == config.scheme else None
    k = config.num_neighbors if num_neighbors is None else num_neighbors
    return augment(prep.train_cl, prep.features, scheme, min(k, len(prep.train) - 1),
                   config.alpha, rounds, config.gamma)


def make_loss(config: ExperimentConfig, num_classes: int) -> tuple[LossKernel, bool]:
    """Loss kernel and gradient-ascent flag; ``URE-GA`` is URE-CE with the ascent policy."""
    if config.kernel == "URE-GA":
        return LossKernel("URE-CE", num_classes), True
    if config.kernel == "FWD":
        return LossKernel("FWD", num_classes, _transition(config, num_classes)), False
    return LossKernel(config.kernel, num_classes), False


def validation_score(config: ExperimentConfig, prep: Prepared):
    """Lower-is-better score for a model: URE of the 0-1 loss on complementary labels."""
    if prep.val is None:
        return None
    k = prep.val.num_classes
    if config.validation_mode == "ordinary":
        return lambda m: 1.0 - accuracy(m.predict(prep.val.features), prep.val)
    if not prep.val_cl.is_single:
        raise ValueError("URE-0-1 validation needs a single complementary label per instance")
    cl = prep.val_cl.single_labels()
    return lambda m: ure_01_validation(m.predict(prep.val.features), cl, k)


def fit(config: ExperimentConfig, prep: Prepared, z: SoftLabelMatrix, seed: int,
        learning_rate: float, weight_decay: float, hidden=None, optimizer: str | None = None,
        hooks=()):
    k = prep.train.num_classes
    widths = (prep.train.dims, *(config.hidden if hidden is None else hidden), k)
    model = init_model(MlpSpec(widths, derive_seed(seed, "init")))
    kernel, ga = make_loss(config, k)
    opt = OptimizerSpec(optimizer or config.optimizer, learning_rate, weight_decay, config.momentum)
    schedule = ScheduleSpec(config.schedule, config.warmup_epochs, max(config.epochs, 1))
    score_fn = validation_score(config, prep)
    selection = config.selection if score_fn is not None else "last"
    return train(model, prep.train.features, z, kernel, opt, schedule, config.batch_size,
                 config.epochs, derive_seed(seed, "shuffle"), ga, hooks, score_fn, selection)


def evaluate(model, prep: Prepared, z: SoftLabelMatrix, score_fn=None) -> dict:
    train_x = prep.train.features
    row = {
        "val_score": None if score_fn is None else float(score_fn(model)),
        "train_acc": accuracy(model.predict(train_x), prep.train),
        "test_acc": accuracy(model.predict(prep.test.features), prep.test),
        "efficiency": None,
        "augmented_noise": augmented_noise_rate(z, prep.train),
        "neighbor_noise": None,
    }
    if prep.train_cl.is_single:
        probs = model.predict_proba(train_x)
        row["efficiency"] = confidence_report(probs, prep.train, prep.train_cl).implicit_sharing_efficiency
    if len(prep.train) > 1:
        space = FeatureMatrix(model.embed(train_x), "penultimate")
        row["neighbor_noise"] = neighboring_noise_rate(
            space, prep.train_cl, prep.train, min(NOISE_NEIGHBORS, len(prep.train) - 1))
    return row


# -- benchmark --------------------------------------------------------------

@dataclass
class ResultTable:
    """Per-seed selected runs, the pooled selection and every grid point."""
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    pooled_rows: list = field(default_factory=list)
    grid_rows: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    def summary(self, rows=None) -> dict:
        """Mean and (population) standard deviation over completed runs."""
        rows = self.rows if rows is None else rows
        ok = [r for r in rows if r["status"] == "ok"]
        out = {"completed": len(ok)}
        for name in METRIC_COLUMNS:
            values = [r[name] for r in ok if r.get(name) is not None]
            out[f"{name}_mean"] = float(np.mean(values)) if values else None
            out[f"{name}_std"] = float(np.std(values)) if values else None
        return out


def _grid(config: ExperimentConfig):
    return [(lr, wd) for lr in config.learning_rates for wd in config.weight_decays]


def _error_row(seed, lr, wd, config, exc) -> dict:
    row = {"seed": seed, "scheme": config.scheme, "kernel": config.kernel,
           "learning_rate": lr, "weight_decay": wd, "status": f"error: {type(exc).__name__}: {exc}"}
    row.update({name: None for name in METRIC_COLUMNS})
    return row


def run_benchmark(config: ExperimentConfig) -> ResultTable:
    """Grid-search every seed, select by validation score per seed and pooled."""
    table = ResultTable(config)
    grid = _grid(config)
    for seed in config.seeds:
        start = time.perf_counter()
        try:
            prep = prepare(config, seed)
            z = soft_labels(config, prep, seed=seed)
        except Exception as exc:  # a broken seed must not take down the others
            table.grid_rows.extend(_error_row(seed, lr, wd, config, exc) for lr, wd in grid)
            table.timings.append({"seed": seed, "stage": "prepare",
                                  "seconds": time.perf_counter() - start})
            continue
        table.timings.append({"seed": seed, "stage": "prepare", "seconds": time.perf_counter() - start})
        for lr, wd in grid:
            start = time.perf_counter()
            try:
                result = fit(config, prep, z, seed, lr, wd)
                row = {"seed": seed, "scheme": config.scheme, "kernel": config.kernel,
                       "learning_rate": lr, "weight_decay": wd, "status": "ok"}
                row.update(evaluate(result.model, prep, z, validation_score(config, prep)))
            except Exception as exc:
                row = _error_row(seed, lr, wd, config, exc)
            table.grid_rows.append(row)
            table.timings.append({"seed": seed, "stage": f"train lr={lr!r} wd={wd!r}",
                                  "seconds": time.perf_counter() - start})

    def score(r):
        return np.inf if r["val_score"] is None else r["val_score"]

    for seed in config.seeds:
        candidates = [r for r in table.grid_rows if r["seed"] == seed]
        ok = [r for r in candidates if r["status"] == "ok"]
        # ties keep the first grid point
        table.rows.append(min(ok, key=score) if ok else candidates[0])

    pooled = []
    for lr, wd in grid:
        runs = [r for r in table.grid_rows if r["learning_rate"] == lr and r["weight_decay"] == wd]
        if all(r["status"] == "ok" for r in runs):
            pooled.append((float(np.mean([score(r) for r in runs])), lr, wd, runs))
    if pooled:
        best = min(pooled, key=lambda p: p[0])
        table.pooled_rows = best[3]
    return table


# -- studies ----------------------------------------------------------------

def run_sharing_study(config: ExperimentConfig) -> list[dict]:
    """Per-epoch seen/unseen confidence and efficiency on the training data.

    Uses the first grid point; no validation split is made.
    """
    lr, wd = config.learning_rates[0], config.weight_decays[0]
    rows = []
    for seed in config.seeds:
        prep = prepare(config, seed, validation=False)
        z = soft_labels(config, prep, seed=seed)

        def hook(model, epoch, prep=prep, seed=seed):
            probs = model.predict_proba(prep.train.features)
            report = confidence_report(probs, prep.train, prep.train_cl, epoch)
            rows.append({"seed": seed, "epoch": epoch,
                         "mean_seen_confidence": report.mean_seen_confidence,
                         "mean_unseen_confidence": report.mean_unseen_confidence,
                         "implicit_sharing_efficiency": report.implicit_sharing_efficiency,
                         "train_acc": accuracy(np.argmax(probs, axis=1), prep.train),
                         "test_acc": accuracy(model.predict(prep.test.features), prep.test)})
            return {}

        fit(config, prep, z, seed, lr, wd, hooks=[hook])
    return rows


DEFAULT_SIZES = (500, 1000, 2000, 5000)
DEFAULT_WIDTHS = ((64,), (256,))
DEFAULT_OPTIMIZERS = (("adamw", 1e-3, 1e-5), ("sgd", 1e-2, 1e-4))


def pearson(x, y) -> float | None:
    """Pearson correlation, or None when undefined (fewer than 2 points or a constant series)."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.size < 2:
        return None
    dx, dy = x - x.mean(), y - y.mean()
    denom = np.sqrt((dx @ dx) * (dy @ dy))
    if denom == 0:
        return None
    return float(dx @ dy / denom)


def run_efficiency_accuracy_study(config: ExperimentConfig, sizes=DEFAULT_SIZES,
                                  widths=DEFAULT_WIDTHS, optimizers=DEFAULT_OPTIMIZERS):
    """One training run per (size, width, optimizer, seed); returns points and r(efficiency, train acc)."""
    if not sizes or not widths or not optimizers:
        raise ValueError("the study grid is empty")
    points = []
    for size in sizes:
        for seed in config.seeds:
            prep = prepare(config, seed, size=size, validation=False)
            z = soft_labels(config, prep, seed=seed)
            for hidden in widths:
                for kind, lr, wd in optimizers:
                    result = fit(config, prep, z, seed, lr, wd, hidden=tuple(hidden), optimizer=kind)
                    model = result.model
                    probs = model.predict_proba(prep.train.features)
                    points.append({
                        "size": len(prep.train), "width": "x".join(map(str, hidden)),
                        "optimizer": kind, "seed": seed,
                        "efficiency": confidence_report(probs, prep.train, prep.train_cl)
                        .implicit_sharing_efficiency,
                        "train_acc": accuracy(np.argmax(probs, axis=1), prep.train),
                        "test_acc": accuracy(model.predict(prep.test.features), prep.test)})
    r = pearson([p["efficiency"] for p in points], [p["train_acc"] for p in points])
    return points, r


DEFAULT_NEIGHBOR_GRID = (4, 8, 16, 32, 64, 128, 256, 512, 1024)


def neighbor_grid(values, n: int) -> list[int]:
    """Sorted, deduplicated N_K values capped at ``n - 1``."""
    if n < 2:
        raise ValueError("need at least 2 training instances")
    grid = sorted({min(int(v), n - 1) for v in values})
    if not grid or grid[0] < 1:
        raise ValueError("neighbour counts must be >= 1")
    return grid


def run_neighbor_ablation(config: ExperimentConfig, grid=DEFAULT_NEIGHBOR_GRID,
                          schemes=("DSS", "DMS")) -> list[dict]:
    """Vary N_K only, with the first grid point's hyperparameters, for each scheme and seed."""
    lr, wd = config.learning_rates[0], config.weight_decays[0]
    rows = []
    for seed in config.seeds:
        prep = prepare(config, seed)
        values = neighbor_grid(grid, len(prep.train))
        for scheme in schemes:
            run_config = replace(config, scheme=scheme, rounds=None)
            for k in values:
                row = {"seed": seed, "scheme": scheme, "num_neighbors": k, "status": "ok"}
                try:
                    z = soft_labels(run_config, prep, num_neighbors=k, seed=seed)
                    result = fit(run_config, prep, z, seed, lr, wd)
                    row.update(evaluate(result.model, prep, z, validation_score(run_config, prep)))
                except Exception as exc:
                    row["status"] = f"error: {type(exc).__name__}: {exc}"
                    row.update({name: None for name in METRIC_COLUMNS})
                rows.append(row)
    return rows


def run_knn_decoding(config: ExperimentConfig, grid=(64,)) -> list[dict]:
    """Training-free baseline: predict the least frequent complementary label among neighbours."""
    rows = []
    for seed in config.seeds:
        prep = prepare(config, seed, validation=False)
        for k in neighbor_grid(grid, len(prep.train)):
            pred = knn_decode(prep.features, prep.train_cl, prep.test_features, k)
            own = knn_decode(prep.features, prep.train_cl, None, k)
            rows.append({"seed": seed, "num_neighbors": k,
                         "train_acc": accuracy(own, prep.train),
                         "test_acc": accuracy(pred, prep.test)})
    return rows


def write_csv(path, rows, columns=None) -> None:
    """Deterministic CSV: floats via ``repr``, None as an empty field."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value
