"""Command-line entry point: ``cllaug <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import platform
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..augment import SCHEMES, augment, load_soft_labels, save_soft_labels
from ..dataset import (generate_complementary, generate_gaussian_mixture, load_cache,
                       load_complementary, noisy_uniform_transition, save_cache,
                       save_complementary, uniform_transition)
from ..features import FeatureMatrix, fit_pca, fit_standardizer, read_matrix, save_embeddings
from ..model import MlpSpec, OptimizerSpec, ScheduleSpec, init_model, save_checkpoint, train
from . import experiments as ex
from .config import CONFIG_SCHEMES, KERNELS, load_config
from .plots import line_chart, scatter_chart


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _ints(text):
    return tuple(int(v) for v in text.split(","))


def write_manifest(out: Path, command: str, config=None, **extra) -> None:
    manifest = {
        "command": command,
        "versions": {"cllaug": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }
    if config is not None:
        manifest["config"] = config.to_dict()
        manifest["seeds"] = list(config.seeds)
        manifest["resolved_rounds"] = config.resolved_rounds
    manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- file-level pipeline steps --------------------------------------------

def cmd_gen_data(args):
    data = generate_gaussian_mixture(args.num_classes, args.dims, args.per_class,
                                     args.separation, args.seed)
    k = data.num_classes
    t = noisy_uniform_transition(k, args.noise) if args.noise else uniform_transition(k)
    cl = generate_complementary(data, t, args.labels_per_instance, args.seed)
    save_cache(data, args.out / "data.bin")
    save_complementary(cl, args.out / "complementary.csv")
    write_manifest(args.out, "gen-data", params=_params(args))


def cmd_make_features(args):
    data = load_cache(args.data)
    raw = FeatureMatrix(data.features, "identity")
    if args.kind == "identity":
        feats = raw
    elif args.kind == "standardize":
        feats = fit_standardizer(raw).transform(raw)
    else:
        feats = fit_pca(raw, args.components, args.seed).transform(raw)
    save_embeddings(feats.vectors, args.out / "features.bin")
    write_manifest(args.out, "make-features", params=_params(args))


def _load_pair(args):
    data = load_cache(args.data)
    cl = load_complementary(args.labels, data.features, data.num_classes)
    return data, cl


def cmd_augment(args):
    data, cl = _load_pair(args)
    feats = (FeatureMatrix(read_matrix(args.features), "embedding") if args.features
             else FeatureMatrix(data.features, "identity"))
    gamma = "auto" if args.gamma == "auto" else float(args.gamma)
    z = augment(cl, feats, args.scheme, args.num_neighbors, args.alpha, args.rounds, gamma)
    save_soft_labels(z, args.out / "soft_labels.bin")
    write_manifest(args.out, "augment", params=_params(args), rounds=z.rounds)


def cmd_train(args):
    data, cl = _load_pair(args)
    z = load_soft_labels(args.soft_labels).rows if args.soft_labels else cl.label_matrix()
    kernel, ga = ex.make_loss(load_config(kernel=args.kernel), data.num_classes)
    model = init_model(MlpSpec((data.dims, *args.hidden, data.num_classes), args.seed))
    opt = OptimizerSpec(args.optimizer, args.lr, args.wd)
    schedule = ScheduleSpec(args.schedule, args.warmup_epochs, max(args.epochs, 1))

    def hook(m, epoch):
        return {"train_acc": float(np.mean(m.predict(data.features) == data.ordinary_labels))}

    result = train(model, data.features, z, kernel, opt, schedule, args.batch_size, args.epochs,
                   args.seed, ga, hooks=[hook])
    save_checkpoint(result.model, args.out / "model.bin")
    rows = [{"epoch": r.epoch, "learning_rate": r.learning_rate, "train_risk": r.train_risk,
             **r.metrics} for r in result.log]
    ex.write_csv(args.out / "epochs.csv", rows)
    write_manifest(args.out, "train", params=_params(args))


# -- experiment commands -----------------------------------------------------

RESULT_COLUMNS = ("table", "seed", "scheme", "kernel", "learning_rate", "weight_decay", "status",
                  *ex.METRIC_COLUMNS)


def cmd_benchmark(args, config):
    table = ex.run_benchmark(config)
    rows = [{"table": "per-seed", **r} for r in table.rows]
    rows += [{"table": "pooled", **r} for r in table.pooled_rows]
    for name, source in (("per-seed", table.rows), ("pooled", table.pooled_rows)):
        summary = table.summary(source)
        rows.append({"table": f"{name}-mean", "status": f"completed={summary['completed']}",
                     **{m: summary[f"{m}_mean"] for m in ex.METRIC_COLUMNS}})
        rows.append({"table": f"{name}-std", "status": f"completed={summary['completed']}",
                     **{m: summary[f"{m}_std"] for m in ex.METRIC_COLUMNS}})
    ex.write_csv(args.out / "results.csv", rows, RESULT_COLUMNS)
    ex.write_csv(args.out / "grid.csv", table.grid_rows, RESULT_COLUMNS[1:])
    ex.write_csv(args.out / "timings.csv", table.timings, ("seed", "stage", "seconds"))
    summary = table.summary()
    print(f"test accuracy {summary['test_acc_mean']} +/- {summary['test_acc_std']} "
          f"over {summary['completed']} seeds")


def cmd_sharing_study(args, config):
    rows = ex.run_sharing_study(config)
    ex.write_csv(args.out / "epochs.csv", rows)
    by_epoch = defaultdict(list)
    for r in rows:
        by_epoch[r["epoch"]].append(r)
    epochs = sorted(by_epoch)
    mean = {name: [float(np.mean([r[name] for r in by_epoch[e]])) for e in epochs]
            for name in ("mean_seen_confidence", "mean_unseen_confidence")}
    line_chart(args.out / "confidence.svg",
               {"seen CL": (epochs, mean["mean_seen_confidence"]),
                "unseen CLs (per class)": (epochs, mean["mean_unseen_confidence"])},
               "complementary-label confidence during training", "epoch", "mean confidence",
               reference=0.0)


def cmd_efficiency_study(args, config):
    optimizers = tuple((kind, lr, wd) for kind, lr, wd in
                       zip(args.optimizers, args.optimizer_lrs, args.optimizer_wds))
    widths = tuple(tuple(int(v) for v in w.split("x")) for w in args.widths)
    points, r = ex.run_efficiency_accuracy_study(config, args.sizes, widths, optimizers)
    ex.write_csv(args.out / "results.csv", points)
    (args.out / "correlation.csv").write_text(f"pearson_r\n{'' if r is None else repr(r)}\n")
    series = defaultdict(lambda: ([], []))
    for p in points:
        s = series[f"{p['optimizer']} {p['width']}"]
        s[0].append(p["efficiency"])
        s[1].append(p["train_acc"])
    scatter_chart(args.out / "efficiency.svg", dict(series),
                  f"efficiency vs train accuracy (r = {'n/a' if r is None else f'{r:.3f}'})",
                  "implicit sharing efficiency", "train accuracy")
    print(f"pearson r = {'' if r is None else r}")


def cmd_ablate_k(args, config):
    rows = ex.run_neighbor_ablation(config, args.grid, args.schemes)
    ex.write_csv(args.out / "results.csv", rows,
                 ("seed", "scheme", "num_neighbors", "status", *ex.METRIC_COLUMNS))
    series = {}
    for scheme in args.schemes:
        ks = sorted({r["num_neighbors"] for r in rows if r["scheme"] == scheme})
        accs = [float(np.mean([r["test_acc"] for r in rows if r["scheme"] == scheme
                               and r["num_neighbors"] == k and r["test_acc"] is not None] or [np.nan]))
                for k in ks]
        series[scheme] = (ks, accs)
    line_chart(args.out / "neighbors.svg", series, "test accuracy vs number of neighbours",
               "N_K", "test accuracy", log_x=True)


def cmd_decode_knn(args, config):
    rows = ex.run_knn_decoding(config, args.grid)
    ex.write_csv(args.out / "results.csv", rows)


# -- parser ----------------------------------------------------------------

def _params(args) -> dict:
    skip = {"func", "out", "config", "experiment"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in skip}


def _experiment_options(p):
    p.add_argument("--config", type=Path, help="JSON config (or a manifest.json from a previous run)")
    p.add_argument("--scheme", choices=CONFIG_SCHEMES)
    p.add_argument("--kernel", choices=KERNELS)
    p.add_argument("--num-neighbors", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--gamma")
    p.add_argument("--hidden", type=_ints)
    p.add_argument("--optimizer", choices=("adamw", "sgd"))
    p.add_argument("--learning-rates", type=_floats)
    p.add_argument("--weight-decays", type=_floats)
    p.add_argument("--schedule", choices=("constant", "warmup-cosine"))
    p.add_argument("--warmup-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seeds", type=_ints)
    p.add_argument("--validation-fraction", type=float)
    p.add_argument("--validation-mode", choices=("ure", "ordinary"))
    p.add_argument("--selection", choices=("last", "best"))


OVERRIDES = ("scheme", "kernel", "num_neighbors", "alpha", "rounds", "gamma", "hidden", "optimizer",
             "learning_rates", "weight_decays", "schedule", "warmup_epochs", "batch_size", "epochs",
             "seeds", "validation_fraction", "validation_mode", "selection")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cllaug", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a Gaussian mixture with complementary labels")
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--dims", type=int, default=8)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--labels-per-instance", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data, experiment=False)

    p = sub.add_parser("make-features", help="write neighbour-search features for a data cache")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--kind", choices=("identity", "standardize", "pca"), default="identity")
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_features, experiment=False)

    p = sub.add_parser("augment", help="build soft complementary labels")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--features", type=Path)
    p.add_argument("--scheme", choices=SCHEMES + ("naive",), default="DMS")
    p.add_argument("--num-neighbors", type=int, default=64)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--rounds", type=int)
    p.add_argument("--gamma", default="auto")
    p.set_defaults(func=cmd_augment, experiment=False)

    p = sub.add_parser("train", help="train an MLP on (soft) complementary labels")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--soft-labels", type=Path)
    p.add_argument("--kernel", choices=KERNELS, default="SCL-NL")
    p.add_argument("--hidden", type=_ints, default=(256,))
    p.add_argument("--optimizer", choices=("adamw", "sgd"), default="adamw")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--wd", type=float, default=1e-5)
    p.add_argument("--schedule", choices=("constant", "warmup-cosine"), default="constant")
    p.add_argument("--warmup-epochs", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train, experiment=False)

    p = sub.add_parser("benchmark", help="grid search with URE-0-1 selection over seeds")
    _experiment_options(p)
    p.set_defaults(func=cmd_benchmark, experiment=True)

    p = sub.add_parser("sharing-study", help="per-epoch seen/unseen confidence")
    _experiment_options(p)
    p.set_defaults(func=cmd_sharing_study, experiment=True)

    p = sub.add_parser("efficiency-study", help="efficiency vs accuracy over sizes, widths, optimizers")
    _experiment_options(p)
    p.add_argument("--sizes", type=_ints, default=ex.DEFAULT_SIZES)
    p.add_argument("--widths", type=lambda s: tuple(s.split(",")), default=("64", "256"),
                   help="comma-separated hidden widths, layers joined by 'x' (e.g. 64,256x256)")
    p.add_argument("--optimizers", type=lambda s: tuple(s.split(",")), default=("adamw", "sgd"))
    p.add_argument("--optimizer-lrs", type=_floats, default=(1e-3, 1e-2))
    p.add_argument("--optimizer-wds", type=_floats, default=(1e-5, 1e-4))
    p.set_defaults(func=cmd_efficiency_study, experiment=True)

    p = sub.add_parser("ablate-k", help="vary the number of neighbours N_K")
    _experiment_options(p)
    p.add_argument("--grid", type=_ints, default=ex.DEFAULT_NEIGHBOR_GRID)
    p.add_argument("--schemes", type=lambda s: tuple(s.split(",")), default=("DSS", "DMS"))
    p.set_defaults(func=cmd_ablate_k, experiment=True)

    p = sub.add_parser("decode-knn", help="training-free kNN decoding baseline")
    _experiment_options(p)
    p.add_argument("--grid", type=_ints, default=(64,))
    p.set_defaults(func=cmd_decode_knn, experiment=True)

    for name, p in sub.choices.items():
        p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        if args.experiment:
            overrides = {name: getattr(args, name) for name in OVERRIDES}
            if overrides["gamma"] not in (None, "auto"):
                overrides["gamma"] = float(overrides["gamma"])
            config = load_config(args.config, **overrides)
            write_manifest(args.out, args.command, config)
            args.func(args, config)
        else:
            args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"cllaug {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
