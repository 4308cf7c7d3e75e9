"""A small ReLU MLP with hand-written backprop, optimisers and a trainer."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import FormatError, StaleCacheError
from .losses import LossKernel, ga_adjusted_gradient, soft_label_risk, softmax


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"need at least an input and an output width, got {widths}")
        object.__setattr__(self, "layer_widths", widths)


@dataclass
class ForwardCache:
    model_id: int
    version: int
    inputs: list  # input to each layer
    pre_activations: list  # hidden pre-activations


class Mlp:
    """Fully connected network ``d -> hidden... -> K`` with ReLU on hidden layers.

    Layer ``l`` computes ``h @ weights[l] + biases[l]``.
    """

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.version = 0

    @property
    def layer_widths(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> Mlp:
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, batch) -> tuple[np.ndarray, ForwardCache]:
        h = np.asarray(batch, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.weights[0].shape[0]:
            raise ValueError(f"batch must be (B, {self.weights[0].shape[0]}), got {h.shape}")
        inputs, pre = [], []
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            a = h @ w + b
            if l < last:
                pre.append(a)
                h = np.maximum(a, 0.0)
            else:
                h = a
        return h, ForwardCache(id(self), self.version, inputs, pre)

    def backward(self, cache: ForwardCache, score_gradient) -> tuple[list, list]:
        """Gradients of ``sum(score_gradient * scores)`` w.r.t. weights and biases."""
        if cache.model_id != id(self) or cache.version != self.version:
            raise StaleCacheError("forward cache does not match the current parameters")
        delta = np.asarray(score_gradient, dtype=np.float64)
        n_layers = len(self.weights)
        dw, db = [None] * n_layers, [None] * n_layers
        for l in range(n_layers - 1, -1, -1):
            dw[l] = cache.inputs[l].T @ delta
            db[l] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ self.weights[l].T) * (cache.pre_activations[l - 1] > 0)
        return dw, db

    def scores(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.scores(x))

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.scores(x), axis=1)

    def embed(self, x) -> np.ndarray:
        """Penultimate-layer activations (the input itself for a linear model)."""
        h = np.asarray(x, dtype=np.float64)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return h


def init_model(spec: MlpSpec) -> Mlp:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(spec.seed)
    widths = spec.layer_widths
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def save_checkpoint(model: Mlp, path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(model.weights)))
        for w, b in zip(model.weights, model.biases):
            fh.write(struct.pack("<2I", *w.shape))
            fh.write(w.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())


def load_checkpoint(path) -> Mlp:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    (layers,) = struct.unpack_from("<I", raw, 0)
    pos, weights, biases = 4, [], []
    for _ in range(layers):
        if len(raw) < pos + 8:
            raise FormatError(f"{path}: truncated layer header", offset=pos)
        rows, cols = struct.unpack_from("<2I", raw, pos)
        pos += 8
        need = 8 * (rows * cols + cols)
        if len(raw) < pos + need:
            raise FormatError(f"{path}: truncated layer data", offset=pos)
        weights.append(np.frombuffer(raw, "<f8", rows * cols, pos).reshape(rows, cols).copy())
        pos += 8 * rows * cols
        biases.append(np.frombuffer(raw, "<f8", cols, pos).copy())
        pos += 8 * cols
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes", offset=pos)
    return Mlp(weights, biases)


# -- optimisers -------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "adamw"
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adamw"):
            raise ValueError(f"optimizer kind must be 'sgd' or 'adamw', got {self.kind!r}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")


class Sgd:
    """SGD with heavy-ball momentum; weight decay is added to the gradient (L2)."""

    def __init__(self, spec: OptimizerSpec):
        self.spec = spec
        self.velocity = None

    def step(self, params, grads, lr):
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        mu, wd = self.spec.momentum, self.spec.weight_decay
        for p, g, v in zip(params, grads, self.velocity):
            if wd:
                g = g + wd * p
            v *= mu
            v += g
            p -= lr * v


class AdamW:
    """Adam with decoupled weight decay: ``p *= 1 - lr * wd`` before the Adam step."""

    def __init__(self, spec: OptimizerSpec):
        self.spec = spec
        self.m = self.v = None
        self.t = 0

    def step(self, params, grads, lr):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        b1, b2 = self.spec.betas
        self.t += 1
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        decay = 1.0 - lr * self.spec.weight_decay
        for p, g, m, v in zip(params, grads, self.m, self.v):
            p *= decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.spec.epsilon)


def make_optimizer(spec: OptimizerSpec):
    return Sgd(spec) if spec.kind == "sgd" else AdamW(spec)


# -- schedule ---------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "constant"
    warmup_epochs: int = 0
    total_epochs: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "warmup-cosine"):
            raise ValueError(f"schedule kind must be 'constant' or 'warmup-cosine', got {self.kind!r}")
        if self.kind == "warmup-cosine" and not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("warmup_epochs must be smaller than total_epochs")

    def learning_rate(self, epoch: int, peak: float) -> float:
        """Rate used during 0-based ``epoch``.

        Linear warmup reaches ``peak`` on the last warmup epoch; the cosine
        phase then decays to 0 on the final epoch.
        """
        if self.kind == "constant":
            return peak
        if epoch < self.warmup_epochs:
            return peak * (epoch + 1) / self.warmup_epochs
        progress = (epoch - self.warmup_epochs + 1) / (self.total_epochs - self.warmup_epochs)
        return peak * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


# -- training ---------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    learning_rate: float
    train_risk: float
    metrics: dict = field(default_factory=dict)


@dataclass
class TrainResult:
    model: Mlp
    log: list
    best_epoch: int | None = None


def batch_risk(model: Mlp, kernel: LossKernel, features, soft_rows, ga: bool = False):
    scores, cache = model.forward(features)
    risk = soft_label_risk(kernel, soft_rows, scores, per_class=ga)
    grad = ga_adjusted_gradient(risk.per_class_risks, risk.per_class_gradients) if ga else risk.gradient
    return risk, grad, cache


def train(model: Mlp, features, soft_labels, kernel: LossKernel, optimizer: OptimizerSpec,
          schedule: ScheduleSpec | None = None, batch_size: int = 256, epochs: int = 100,
          seed: int = 0, ga: bool = False,
          hooks: Sequence[Callable[[Mlp, int], dict]] = (),
          score_fn: Callable[[Mlp], float] | None = None,
          selection: str = "last") -> TrainResult:
    """Minimise the soft-label risk with shuffled mini-batches.

    The input model is not modified. Hooks are called with a copy of the
    model after every epoch, and once before training as epoch 0. With
    ``selection="best"`` the model with the lowest ``score_fn`` (evaluated
    at the same points) is returned instead of the last one.
    """
    if ga and kernel.kind != "URE-CE":
        raise ValueError("the gradient-ascent policy applies to the URE-CE kernel only")
    if selection not in ("last", "best"):
        raise ValueError(f"selection must be 'last' or 'best', got {selection!r}")
    if selection == "best" and score_fn is None:
        raise ValueError("best-epoch selection needs a score_fn")
    x = np.asarray(features, dtype=np.float64)
    z = np.asarray(getattr(soft_labels, "rows", soft_labels), dtype=np.float64)
    if x.shape[0] != z.shape[0]:
        raise ValueError(f"{x.shape[0]} feature rows but {z.shape[0]} soft-label rows")
    if z.shape[1] != model.num_classes or kernel.num_classes != model.num_classes:
        raise ValueError("model, kernel and soft labels disagree on the number of classes")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    schedule = schedule or ScheduleSpec()
    model = model.copy()
    opt = make_optimizer(optimizer)
    rng = np.random.default_rng(seed)
    n = x.shape[0]

    def observe(epoch, lr, risk):
        frozen = model.copy()
        metrics = {}
        for hook in hooks:
            metrics.update(hook(frozen, epoch))
        if score_fn is not None:
            metrics["selection_score"] = float(score_fn(frozen))
        log.append(EpochRecord(epoch, lr, risk, metrics))
        return metrics.get("selection_score")

    log: list[EpochRecord] = []
    initial = soft_label_risk(kernel, z, model.scores(x)).value
    best_score = observe(0, 0.0, initial)
    best_model, best_epoch = model.copy(), 0
    for epoch in range(1, epochs + 1):
        lr = schedule.learning_rate(epoch - 1, optimizer.learning_rate)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            risk, grad, cache = batch_risk(model, kernel, x[idx], z[idx], ga)
            dw, db = model.backward(cache, grad)
            opt.step(model.parameters(), [g for pair in zip(dw, db) for g in pair], lr)
            model.version += 1
            total += risk.value * len(idx)
        score = observe(epoch, lr, total / n)
        if selection == "best" and score < best_score:
            best_score, best_model, best_epoch = score, model.copy(), epoch
    if selection == "best":
        return TrainResult(best_model, log, best_epoch)
    return TrainResult(model, log, epochs)
