"""Complementary-label losses and their closed-form gradients.

Every kernel maps a complementary label ``k`` and a score vector ``g`` to
a scalar. With ``p = softmax(g)`` and ``u_k = 1 - p_k``:

* ``SCL-NL``  ``-log u_k``
* ``PC``      ``sum_{j != k} sigmoid(g_k - g_j)``
* ``URE-CE``  ``sum_j ce_j - (K-1) ce_k`` with ``ce_j = -log p_j``
* ``FWD``     ``-log (T^T p)_k``
* ``L-W``     ``-(1 + u_k / (K-1)) log u_k``

Log arguments are clamped below at ``1e-12``.

Kernels are evaluated for all K labels at once: ``losses`` returns a
``(B, K)`` matrix and ``gradients`` a ``(B, K, K)`` tensor whose
``[b, k, j]`` entry is the derivative of ``loss(k, g_b)`` w.r.t. ``g_bj``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import TransitionMatrix

KINDS = ("PC", "URE-CE", "SCL-NL", "L-W", "FWD")
EPS = 1e-12


def softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _complement_mass(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``p`` and ``1 - p`` with the latter summed from the other classes (no cancellation)."""
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    k = scores.shape[-1]
    total = e.sum(axis=-1, keepdims=True)
    others = e @ (1.0 - np.eye(k))
    return e / total, others / total


def _softmax_jacobian(p: np.ndarray) -> np.ndarray:
    # J[b, k, j] = d p_k / d g_j
    return p[:, :, None] * (np.eye(p.shape[1])[None] - p[:, None, :])


@dataclass(frozen=True)
class LossKernel:
    kind: str
    num_classes: int
    transition: TransitionMatrix | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if self.num_classes < 3:
            raise ValueError(f"num_classes must be >= 3, got {self.num_classes}")
        if self.kind == "FWD":
            if self.transition is None:
                raise ValueError("FWD needs a transition matrix")
            if self.transition.num_classes != self.num_classes:
                raise ValueError("transition matrix size does not match num_classes")

    def _check(self, scores):
        s = np.asarray(scores, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != self.num_classes:
            raise ValueError(f"scores must be (B, {self.num_classes}), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        return s

    def losses(self, scores) -> np.ndarray:
        g = self._check(scores)
        k = self.num_classes
        if self.kind == "SCL-NL":
            _, u = _complement_mass(g)
            return -np.log(np.maximum(u, EPS))
        if self.kind == "L-W":
            _, u = _complement_mass(g)
            u = np.maximum(u, EPS)
            return -(1.0 + u / (k - 1)) * np.log(u)
        if self.kind == "PC":
            s = _sigmoid(g[:, :, None] - g[:, None, :])
            return s.sum(axis=2) - 0.5
        if self.kind == "URE-CE":
            ce = -log_softmax(g)
            return ce.sum(axis=1, keepdims=True) - (k - 1) * ce
        q = softmax(g) @ self.transition.entries
        return -np.log(np.maximum(q, EPS))

    def gradients(self, scores) -> np.ndarray:
        g = self._check(scores)
        k = self.num_classes
        eye = np.eye(k)
        if self.kind in ("SCL-NL", "L-W"):
            p, u = _complement_mass(g)
            u = np.maximum(u, EPS)
            jac = _softmax_jacobian(p)
            if self.kind == "SCL-NL":
                return jac / u[:, :, None]
            dl_du = -np.log(u) / (k - 1) - (1.0 + u / (k - 1)) / u
            return -dl_du[:, :, None] * jac
        if self.kind == "PC":
            s = _sigmoid(g[:, :, None] - g[:, None, :])
            ds = s * (1.0 - s) * (1.0 - eye)[None]
            return eye[None] * ds.sum(axis=2)[:, :, None] - ds
        if self.kind == "URE-CE":
            p = softmax(g)
            base = k * p - 1.0
            return base[:, None, :] - (k - 1) * (p[:, None, :] - eye[None])
        p = softmax(g)
        t = self.transition.entries
        q = p @ t
        # d q_k / d g_m = p_m (T_mk - q_k)
        dq = p[:, None, :] * (t.T[None] - q[:, :, None])
        return -dq / np.maximum(q, EPS)[:, :, None]


def make_kernel(kind: str, num_classes: int, transition: TransitionMatrix | None = None) -> LossKernel:
    return LossKernel(kind, num_classes, transition)


def _check_label(kernel: LossKernel, label) -> int:
    label = int(label)
    if not 0 <= label < kernel.num_classes:
        raise ValueError(f"label {label} outside [0, {kernel.num_classes})")
    return label


def loss_value(kernel: LossKernel, label: int, scores) -> float:
    label = _check_label(kernel, label)
    return float(kernel.losses(np.asarray(scores, dtype=np.float64)[None])[0, label])


def loss_gradient(kernel: LossKernel, label: int, scores) -> np.ndarray:
    label = _check_label(kernel, label)
    return kernel.gradients(np.asarray(scores, dtype=np.float64)[None])[0, label]


@dataclass
class BatchRisk:
    value: float
    gradient: np.ndarray
    per_class_risks: np.ndarray | None = None
    per_class_gradients: np.ndarray | None = None


def _soft_rows(soft_labels, scores) -> np.ndarray:
    z = getattr(soft_labels, "rows", soft_labels)
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        # hard labels
        k = scores.shape[1]
        z = np.eye(k)[z.astype(np.int64)]
    if z.shape != np.shape(scores):
        raise ValueError(f"soft labels {z.shape} do not match scores {np.shape(scores)}")
    return z


def soft_label_risk(kernel: LossKernel, soft_labels, scores, per_class: bool = False) -> BatchRisk:
    """Mean over the batch of ``sum_k z_ik * loss(k, g_i)``, with its score gradient.

    ``per_class`` additionally returns the per-class partial risks and their
    gradients (needed by the gradient-ascent policy).
    """
    scores = np.asarray(scores, dtype=np.float64)
    z = _soft_rows(soft_labels, scores)
    b = scores.shape[0]
    losses = kernel.losses(scores)
    grads = kernel.gradients(scores)
    weighted = z * losses / b
    gradient = np.einsum("bk,bkj->bj", z, grads) / b
    risk = BatchRisk(float(weighted.sum()), gradient)
    if per_class or kernel.kind == "URE-CE":
        risk.per_class_risks = weighted.sum(axis=0)
        if per_class:
            risk.per_class_gradients = np.einsum("bk,bkj->kbj", z, grads) / b
    return risk


def ure_per_class_risks(kernel: LossKernel, soft_labels, scores) -> np.ndarray:
    """Partition of the batch URE by the class carrying the complementary mass."""
    if kernel.kind != "URE-CE":
        raise ValueError(f"per-class risks are defined for URE-CE only, not {kernel.kind}")
    return soft_label_risk(kernel, soft_labels, scores).per_class_risks


def ga_adjusted_gradient(per_class_risks: np.ndarray, per_class_gradients: np.ndarray) -> np.ndarray:
    """Plain summed gradient if every partial risk is non-negative; otherwise
    the negated sum over the negative partial risks only (gradient ascent on them)."""
    risks = np.asarray(per_class_risks)
    grads = np.asarray(per_class_gradients)
    negative = risks < 0
    if not negative.any():
        return grads.sum(axis=0)
    return -grads[negative].sum(axis=0)


def ure_01_validation(predictions, complementary_labels, num_classes: int) -> float:
    """``(K-1) * mean[prediction == cl]``: unbiased 0-1 error under uniform generation."""
    pred = np.asarray(predictions)
    cl = np.asarray(complementary_labels)
    if pred.size == 0:
        raise ValueError("validation set is empty")
    if pred.shape != cl.shape:
        raise ValueError("predictions and complementary labels are not aligned")
    # integer numerator and a single division keep the estimate exact up to one rounding
    return (num_classes - 1) * int(np.count_nonzero(pred == cl)) / pred.size
