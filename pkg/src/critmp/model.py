"""
Training losses for criticality prediction and the tabular predictor.

Prediction tensors hold logits laid out like label tensors: channel 0 scores
the critical-region sigmoid, then one group of ``p`` softmax logits per
non-base joint. Losses are means, so gradients carry a ``1 / count`` factor:
``1 / n_cells`` on channel 0 and ``1 / n_masked_cells`` on joint channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from critmp import criticality as crit

Q_MIN, Q_MAX = 1.0, 100.0
NORM_TOL = 1e-5


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-_softplus(-x))


def _log_softmax(z):
    return z - np.logaddexp.reduce(z, axis=-1, keepdims=True)


def default_q(target) -> float:
    """Positive-class weight: negatives per positive, clamped to [1, 100]."""
    z = np.asarray(target)
    pos = int((z >= 0.5).sum())
    if pos == 0:
        return Q_MAX
    return float(np.clip((z.size - pos) / pos, Q_MIN, Q_MAX))


def loss_cr(logits, target, q: float | None = None) -> float:
    """Mean weighted log loss ``(z - 1) log(1 - s) - q z log(s)`` with ``s = sigmoid(logit)``."""
    x = np.asarray(logits, dtype=float)
    z = np.asarray(target, dtype=float)
    if x.shape != z.shape:
        raise ValueError(f"logits {x.shape} and target {z.shape} differ in shape")
    q = default_q(z) if q is None else q
    if q <= 0:
        raise ValueError("positive weight q must be > 0")
    # log(1 - s) = -softplus(x), log(s) = -softplus(-x)
    per_cell = (1.0 - z) * _softplus(x) + q * z * _softplus(-x)
    return float(per_cell.mean())


def _check_joint(logits, target, mask):
    z = np.asarray(logits, dtype=float)
    t = np.asarray(target, dtype=float)
    if z.shape != t.shape:
        raise ValueError(f"logits {z.shape} and target {t.shape} differ in shape")
    m = np.ones(z.shape[:-1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != z.shape[:-1]:
        raise ValueError("mask must match the cell dimensions")
    sums = t.sum(axis=-1)
    if np.any(np.abs(sums[m] - 1.0) > NORM_TOL):
        raise ValueError("joint targets must sum to 1 on every cell in the mask")
    return z, t, m


def loss_joint(logits, target, mask=None) -> float:
    """Softmax cross-entropy averaged over the cells selected by ``mask``."""
    z, t, m = _check_joint(logits, target, mask)
    count = int(m.sum())
    if count == 0:
        return 0.0
    ce = -(t * _log_softmax(z)).sum(axis=-1)
    return float(ce[m].sum() / count)


def _groups(channels: int, p: int) -> list[slice]:
    if (channels - 1) % p:
        raise ValueError(f"{channels} channels do not split into groups of {p}")
    k = (channels - 1) // p
    return [slice(1 + j * p, 1 + (j + 1) * p) for j in range(k)]


def _check_pair(pred, label):
    x = np.asarray(pred, dtype=float)
    y = np.asarray(label, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"prediction {x.shape} and label {y.shape} differ in shape")
    return x, y


def joint_mask(label) -> np.ndarray:
    """Cells carrying criticality mass; joint labels elsewhere are uninformative."""
    return np.asarray(label)[..., 0] > 0


def loss_total(pred, label, q: float | None = None, p: int = 10) -> float:
    """Critical-region loss plus one softmax cross-entropy per joint group."""
    x, y = _check_pair(pred, label)
    total = loss_cr(x[..., 0], y[..., 0], q)
    mask = joint_mask(y)
    for g in _groups(x.shape[-1], p):
        total += loss_joint(x[..., g], y[..., g], mask)
    return total


def loss_gradients(pred, label, q: float | None = None, p: int = 10) -> np.ndarray:
    """Analytic gradient of ``loss_total`` with respect to every logit."""
    x, y = _check_pair(pred, label)
    grad = np.zeros_like(x)
    z = y[..., 0]
    q = default_q(z) if q is None else q
    s = _sigmoid(x[..., 0])
    grad[..., 0] = ((1.0 - z) * s - q * z * (1.0 - s)) / z.size
    mask = joint_mask(y)
    count = int(mask.sum())
    for g in _groups(x.shape[-1], p):
        _check_joint(x[..., g], y[..., g], mask)
        if count == 0:
            continue
        t = y[..., g]
        soft = np.exp(_log_softmax(x[..., g]))
        grad[..., g] = np.where(mask[..., None], soft * t.sum(axis=-1, keepdims=True) - t, 0.0) / count
    return grad


# ----------------------------------------------------------------------
# Predictors
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class Predictor:
    """Maps an input tensor to a label-shaped probability tensor.

    ``tabular`` payloads are labels computed from demonstrations for this
    very (environment, goal); ``external`` payloads come from any outside
    model writing the same label format and are sanitised on prediction.
    """

    source: str
    payload: np.ndarray
    p: int
    joint_count: int

    def __post_init__(self):
        if self.source not in ("tabular", "external"):
            raise ValueError(f"unknown predictor source {self.source!r}")
        if self.payload.shape[-1] != 1 + self.p * self.joint_count:
            raise ValueError("payload channels do not match p and joint_count")

    @classmethod
    def from_label_file(cls, path, source: str = "tabular") -> "Predictor":
        label, p, k = crit.read_label(path)
        return cls(source, label, p, k)

    @classmethod
    def from_maps(cls, cmap, hists) -> "Predictor":
        from critmp.dataset import encode_label

        return cls("tabular", encode_label(cmap, hists), hists.p, hists.joint_count)


def predict(predictor: Predictor, inp) -> np.ndarray:
    inp = np.asarray(inp)
    n = predictor.payload.shape[0]
    if inp.shape[:2] != (n, n):
        raise ValueError(f"input grid {inp.shape[:2]} does not match predictor grid {n}")
    dof = inp.shape[-1] - 1
    if dof - 2 != predictor.joint_count:
        raise ValueError(f"input describes {dof} dof, predictor has {predictor.joint_count} joints")
    out = predictor.payload.astype(np.float32, copy=True)
    if predictor.source == "external":
        out[..., 0] = np.clip(out[..., 0], 0.0, 1.0)
        for g in _groups(out.shape[-1], predictor.p):
            block = np.clip(out[..., g], 0.0, None)
            sums = block.sum(axis=-1, keepdims=True)
            out[..., g] = np.divide(block, sums, out=np.full_like(block, 1.0 / predictor.p), where=sums > 0)
    return out
