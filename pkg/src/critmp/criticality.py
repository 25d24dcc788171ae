"""
Empirical critical regions from demonstration plans.

A cell's criticality is the fraction of plans whose base trace passes through
it, divided by the cell's measure under a uniform reference density over the
free cells (``1 / free_cell_count``). Per-cell joint histograms record which
joint values those plans used there.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import ndimage

from critmp import workspace as ws

GAUSS_3X3 = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0
REFERENCE_UNIFORM_FREE = "uniform-free-cells"

LABEL_MAGIC = b"CRLB"
INPUT_MAGIC = b"CRIN"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class CriticalityMap:
    scores: np.ndarray
    counts: np.ndarray
    plan_count: int
    free_cells: int
    reference: str = REFERENCE_UNIFORM_FREE
    smoothed: bool = False
    blocked: np.ndarray | None = None

    @property
    def n_d(self) -> int:
        return self.scores.shape[0]

    def fraction(self, row: int, col: int) -> Fraction:
        """Exact fraction of plans through a cell."""
        return Fraction(int(self.counts[row, col]), self.plan_count)

    def exact_score(self, row: int, col: int) -> Fraction:
        """Unsmoothed criticality of a cell as an exact rational."""
        if self.smoothed:
            raise ValueError("smoothed maps have no exact rational scores")
        if self.blocked is not None and self.blocked[row, col]:
            return Fraction(0)
        return self.fraction(row, col) * self.free_cells


@dataclass(frozen=True)
class JointHistograms:
    """``probs[j, row, col, b]``: probability of joint ``j`` in bin ``b`` at a cell.

    Cells never visited by any plan hold the uniform distribution and are
    flagged ``False`` in ``visited``.
    """

    probs: np.ndarray
    visited: np.ndarray
    edges: tuple[np.ndarray, ...]
    joint_names: tuple[str, ...]

    @property
    def p(self) -> int:
        return self.probs.shape[-1]

    @property
    def joint_count(self) -> int:
        return self.probs.shape[0]


def _trace(env: ws.Environment, robot: ws.RobotModel, waypoints) -> np.ndarray:
    """Interpolate a plan so consecutive base positions are <= 1/4 cell diagonal apart."""
    Q = np.asarray(waypoints, dtype=float).reshape(-1, robot.dof)
    spacing = math.hypot(env.width / env.n_d, env.height / env.n_d) / 4.0
    parts = [Q[:1]]
    for a, b in zip(Q, Q[1:]):
        d = ws.difference(robot, a, b)
        n = max(1, math.ceil(math.hypot(d[0], d[1]) / spacing))
        t = np.arange(1, n + 1)[:, None] / n
        seg = a + t * d
        seg[:, robot.wrap_mask] = ws.wrap_angle(seg[:, robot.wrap_mask])
        seg[-1] = b
        parts.append(seg)
    return np.concatenate(parts)


def plan_cells(env: ws.Environment, robot: ws.RobotModel, plan) -> set[tuple[int, int]]:
    """Cells touched by the base-position trace of a plan."""
    waypoints = getattr(plan, "waypoints", plan)
    rows, cols = ws.cells_of(env, _trace(env, robot, waypoints)[:, :2])
    return set(zip(rows.tolist(), cols.tolist()))


def compute_criticality(env: ws.Environment, robot: ws.RobotModel, plans) -> CriticalityMap:
    if len(plans) == 0:
        raise ValueError("criticality needs at least one plan")
    n = env.n_d
    counts = np.zeros((n, n), dtype=np.int64)
    for plan in plans:
        cells = plan_cells(env, robot, plan)
        r, c = zip(*cells)
        counts[list(r), list(c)] += 1
    free = env.free_cell_count
    # f / v = (count / P) / (1 / F): one rounding of the exact rational
    scores = counts * free / len(plans)
    scores[env.blocked] = 0.0
    return CriticalityMap(scores, counts, len(plans), free, blocked=env.blocked)


def gaussian_smooth(cmap: CriticalityMap) -> CriticalityMap:
    """3x3 Gaussian blur with zero padding; blocked cells are zeroed afterwards."""
    out = ndimage.convolve(cmap.scores, GAUSS_3X3, mode="constant", cval=0.0)
    if cmap.blocked is not None:
        out[cmap.blocked] = 0.0
    return replace(cmap, scores=out, smoothed=True)


def bin_index(values, lo: float, hi: float, p: int) -> np.ndarray:
    """Bin of each value among ``p`` equal bins over ``[lo, hi)``; ``hi`` joins the last bin."""
    idx = np.floor((np.asarray(values, dtype=float) - lo) / (hi - lo) * p).astype(np.int64)
    return np.clip(idx, 0, p - 1)


def compute_joint_histograms(env: ws.Environment, robot: ws.RobotModel, plans, p: int = 10) -> JointHistograms:
    if p < 2:
        raise ValueError("need at least two bins")
    n, k, b = env.n_d, robot.joint_count, robot.base_dof_count
    counts = np.zeros((k, n, n, p))
    for plan in plans:
        trace = _trace(env, robot, getattr(plan, "waypoints", plan))
        rows, cols = ws.cells_of(env, trace[:, :2])
        for j, (lo, hi) in enumerate(robot.joint_limits):
            bins = bin_index(trace[:, b + j], lo, hi, p)
            np.add.at(counts[j], (rows, cols, bins), 1.0)
    totals = counts.sum(axis=-1, keepdims=True)
    visited = totals[0, ..., 0] > 0 if k else np.zeros((n, n), dtype=bool)
    probs = np.divide(counts, totals, out=np.full_like(counts, 1.0 / p), where=totals > 0)
    edges = tuple(np.linspace(lo, hi, p + 1) for lo, hi in robot.joint_limits)
    names = robot.dof_names[b:]
    return JointHistograms(probs, visited, edges, names)


# ----------------------------------------------------------------------
# Label files
# ----------------------------------------------------------------------


def write_tensor(path, tensor: np.ndarray, magic: bytes, a: int, b: int) -> None:
    """Little-endian float32 planes, channel-major, after a 16-byte header.

    The header is ``magic, n_d, a, b`` as uint32 where ``(a, b)`` is
    ``(p, joint_count)`` for labels and ``(channels, 0)`` for inputs.
    """
    t = np.asarray(tensor, dtype=np.float32)
    n = t.shape[0]
    planes = np.ascontiguousarray(np.moveaxis(t, -1, 0)).astype("<f4")
    Path(path).write_bytes(_HEADER.pack(magic, n, a, b) + planes.tobytes())


def read_tensor(path, magic: bytes) -> tuple[np.ndarray, tuple[int, int, int]]:
    raw = Path(path).read_bytes()
    got, n, a, b = _HEADER.unpack_from(raw)
    if got != magic:
        raise ValueError(f"{path}: bad magic {got!r}, expected {magic!r}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    channels = data.size // (n * n)
    if channels * n * n != data.size:
        raise ValueError(f"{path}: truncated tensor")
    t = np.moveaxis(data.reshape(channels, n, n), 0, -1).astype(np.float32)
    return t, (n, a, b)


def write_label(path, label: np.ndarray, p: int, joint_count: int, meta: dict | None = None) -> None:
    """Write ``label.bin`` and its JSON sidecar ``label.json`` next to it."""
    if label.shape[-1] != 1 + joint_count * p:
        raise ValueError("label channel count does not match p and joint_count")
    write_tensor(path, label, LABEL_MAGIC, p, joint_count)
    if meta is not None:
        side = Path(path).with_suffix(".json")
        side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_label(path) -> tuple[np.ndarray, int, int]:
    """Returns ``(label, p, joint_count)``."""
    t, (n, p, k) = read_tensor(path, LABEL_MAGIC)
    if t.shape[-1] != 1 + k * p:
        raise ValueError(f"{path}: {t.shape[-1]} channels, header says p={p}, joints={k}")
    return t, p, k
