"""
Planar workspaces, robot kinematics and collision checking.

Everything here is a pure function over immutable inputs. Configurations are
plain 1-D float arrays ordered like ``RobotModel.dof_names``: the first two
entries are the base position in meters, the rest are joint angles in radians.

Collision checking is exact: every robot link is an oriented rectangle and
obstacles are axis-aligned rectangles, so a four-axis separating-axis test
decides overlap. The occupancy grid is only used for learning labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from critmp.errors import EnvironmentInfeasibleError

# Contact within this distance counts as free (a robot may slide along a wall).
CONTACT_EPS = 1e-9
DEFAULT_STEP = 0.05

Rect = tuple[float, float, float, float]


def wrap_angle(a):
    """Wrap angles to the canonical interval [-pi, pi)."""
    r = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi)
    # np.mod can round up to exactly 2*pi for tiny negative inputs
    r = np.where(r >= 2.0 * math.pi, 0.0, r)
    out = r - math.pi
    return float(out) if np.ndim(out) == 0 else out


# ----------------------------------------------------------------------
# Robots
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class RobotModel:
    """Kinematic description of a planar robot built from rectangular links.

    ``links`` holds ``(length, width)`` pairs. ``joint_limits`` and
    ``joint_wraps`` describe the non-base joints only; the base position is
    bounded by the environment it moves in.
    """

    kind: str
    links: tuple[tuple[float, float], ...]
    joint_limits: tuple[tuple[float, float], ...]
    joint_wraps: tuple[bool, ...]
    dof_names: tuple[str, ...]
    base_dof_count: int = 2

    def __post_init__(self):
        if self.kind not in ("se2_rect", "hinged", "planar_arm"):
            raise ValueError(f"unknown robot kind {self.kind!r}")
        k = len(self.joint_limits)
        if len(self.joint_wraps) != k or len(self.dof_names) != self.base_dof_count + k:
            raise ValueError("dof_names, joint_limits and joint_wraps disagree")
        if self.kind == "se2_rect" and (len(self.links) != 1 or k != 1):
            raise ValueError("se2_rect robot has one link and dof (x, y, theta)")
        if self.kind == "hinged" and (len(self.links) != 2 or k != 2):
            raise ValueError("hinged robot has two links and dof (x, y, theta, omega)")
        if self.kind == "planar_arm" and (len(self.links) < 2 or k != len(self.links)):
            raise ValueError("planar_arm needs a >= 2 links, one angle per link")
        for lo, hi in self.joint_limits:
            if not lo < hi:
                raise ValueError(f"empty joint interval [{lo}, {hi}]")
        for length, width in self.links:
            if length <= 0 or width <= 0:
                raise ValueError("link dimensions must be positive")

    @property
    def dof(self) -> int:
        return self.base_dof_count + len(self.joint_limits)

    @property
    def joint_count(self) -> int:
        return len(self.joint_limits)

    @property
    def longest_link(self) -> float:
        return max(length for length, _ in self.links)

    @cached_property
    def metric_weights(self) -> np.ndarray:
        """Per-DOF scale of the C-space metric: angles count as arc length of the longest link."""
        w = np.full(self.dof, self.longest_link)
        w[: self.base_dof_count] = 1.0
        return w

    @cached_property
    def wrap_mask(self) -> np.ndarray:
        return np.array([False] * self.base_dof_count + list(self.joint_wraps))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "links": [list(link) for link in self.links],
            "limits": [list(lim) for lim in self.joint_limits],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RobotModel":
        kind = d["kind"]
        links = [tuple(map(float, link)) for link in d["links"]]
        limits = d.get("limits")
        if kind == "se2_rect":
            robot = se2_rect(*links[0])
        elif kind == "hinged":
            robot = hinged(links[0], links[1])
        elif kind == "planar_arm":
            robot = planar_arm(links)
        else:
            raise ValueError(f"unknown robot kind {kind!r}")
        if limits is not None:
            limits = tuple(tuple(map(float, lim)) for lim in limits)
            if len(limits) != robot.joint_count:
                raise ValueError("limits must list one interval per non-base joint")
            wraps = tuple(
                w and abs((hi - lo) - 2 * math.pi) < 1e-12
                for w, (lo, hi) in zip(robot.joint_wraps, limits)
            )
            robot = RobotModel(robot.kind, robot.links, limits, wraps, robot.dof_names)
        return robot


FULL_TURN = (-math.pi, math.pi)


def se2_rect(length: float = 1.0, width: float = 0.2) -> RobotModel:
    return RobotModel("se2_rect", ((length, width),), (FULL_TURN,), (True,), ("x", "y", "theta"))


def hinged(
    link1: tuple[float, float] = (0.5, 0.1),
    link2: tuple[float, float] = (0.5, 0.1),
    omega_limits: tuple[float, float] = (-math.pi / 2, math.pi / 2),
) -> RobotModel:
    return RobotModel(
        "hinged",
        (tuple(link1), tuple(link2)),
        (FULL_TURN, tuple(omega_limits)),
        (True, False),
        ("x", "y", "theta", "omega"),
    )


def planar_arm(links: Sequence[tuple[float, float]], joint_limits=(-math.pi / 2, math.pi / 2)) -> RobotModel:
    a = len(links)
    return RobotModel(
        "planar_arm",
        tuple(tuple(link) for link in links),
        (FULL_TURN,) + (tuple(joint_limits),) * (a - 1),
        (True,) + (False,) * (a - 1),
        ("x", "y") + tuple(f"theta{i + 1}" for i in range(a)),
    )


# ----------------------------------------------------------------------
# Environments
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class Environment:
    """Rectangular world with axis-aligned rectangular obstacles.

    The label grid is ``n_d x n_d``; row index grows with y, column with x,
    origin at the bottom-left corner.
    """

    width: float
    height: float
    n_d: int
    obstacles: tuple[Rect, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(tuple(map(float, r)) for r in self.obstacles))
        if self.width <= 0 or self.height <= 0 or self.n_d < 1:
            raise ValueError("world extents and n_d must be positive")
        for xmin, ymin, xmax, ymax in self.obstacles:
            if not (xmin < xmax and ymin < ymax):
                raise ValueError(f"degenerate obstacle {(xmin, ymin, xmax, ymax)}")
            if xmin < 0 or ymin < 0 or xmax > self.width or ymax > self.height:
                raise ValueError(f"obstacle {(xmin, ymin, xmax, ymax)} leaves the world")

    @cached_property
    def _obstacle_arrays(self):
        r = np.array(self.obstacles, dtype=float).reshape(-1, 4)
        centers = np.stack([(r[:, 0] + r[:, 2]) / 2, (r[:, 1] + r[:, 3]) / 2], axis=1)
        halves = np.stack([(r[:, 2] - r[:, 0]) / 2, (r[:, 3] - r[:, 1]) / 2], axis=1)
        return centers, halves

    @cached_property
    def x_edges(self) -> np.ndarray:
        return np.arange(self.n_d + 1) * (self.width / self.n_d)

    @cached_property
    def y_edges(self) -> np.ndarray:
        return np.arange(self.n_d + 1) * (self.height / self.n_d)

    @cached_property
    def occupancy(self) -> np.ndarray:
        """Cells whose closed region touches any obstacle."""
        occ = np.zeros((self.n_d, self.n_d), dtype=bool)
        xe, ye = self.x_edges, self.y_edges
        for xmin, ymin, xmax, ymax in self.obstacles:
            cols = (xe[:-1] <= xmax) & (xe[1:] >= xmin)
            rows = (ye[:-1] <= ymax) & (ye[1:] >= ymin)
            occ |= rows[:, None] & cols[None, :]
        occ.setflags(write=False)
        return occ

    @cached_property
    def blocked(self) -> np.ndarray:
        """Cells entirely covered by the union of obstacles (no free area left)."""
        n = self.n_d
        xe, ye = self.x_edges, self.y_edges
        blocked = np.zeros((n, n), dtype=bool)
        overlap_count = np.zeros((n, n), dtype=int)
        for xmin, ymin, xmax, ymax in self.obstacles:
            cols_in = (xe[:-1] >= xmin) & (xe[1:] <= xmax)
            rows_in = (ye[:-1] >= ymin) & (ye[1:] <= ymax)
            blocked |= rows_in[:, None] & cols_in[None, :]
            cols_ov = (xe[:-1] < xmax) & (xe[1:] > xmin)
            rows_ov = (ye[:-1] < ymax) & (ye[1:] > ymin)
            overlap_count += rows_ov[:, None] & cols_ov[None, :]
        for r, c in zip(*np.nonzero(~blocked & (overlap_count >= 2))):
            cell = (xe[c], ye[r], xe[c + 1], ye[r + 1])
            blocked[r, c] = _covered(cell, self.obstacles)
        blocked.setflags(write=False)
        return blocked

    @property
    def free_cell_count(self) -> int:
        return int(self.blocked.size - self.blocked.sum())

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "n_d": self.n_d,
            "obstacles": [dict(zip(("xmin", "ymin", "xmax", "ymax"), r)) for r in self.obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        obstacles = tuple(
            (o["xmin"], o["ymin"], o["xmax"], o["ymax"]) for o in d.get("obstacles", [])
        )
        return cls(float(d["width"]), float(d["height"]), int(d["n_d"]), obstacles)

    def without_obstacles(self, keep: Sequence[int]) -> "Environment":
        return Environment(self.width, self.height, self.n_d, tuple(self.obstacles[i] for i in keep))


def _covered(cell: Rect, rects: Sequence[Rect]) -> bool:
    """Exact test that ``cell`` lies inside the union of ``rects``."""
    cx0, cy0, cx1, cy1 = cell
    clipped = []
    for xmin, ymin, xmax, ymax in rects:
        x0, y0, x1, y1 = max(xmin, cx0), max(ymin, cy0), min(xmax, cx1), min(ymax, cy1)
        if x0 < x1 and y0 < y1:
            clipped.append((x0, y0, x1, y1))
    xs = sorted({cx0, cx1, *(r[0] for r in clipped), *(r[2] for r in clipped)})
    ys = sorted({cy0, cy1, *(r[1] for r in clipped), *(r[3] for r in clipped)})
    for xa, xb in zip(xs, xs[1:]):
        mx = (xa + xb) / 2
        for ya, yb in zip(ys, ys[1:]):
            my = (ya + yb) / 2
            if not any(r[0] <= mx <= r[2] and r[1] <= my <= r[3] for r in clipped):
                return False
    return True


def load_fixture(path) -> tuple[Environment, RobotModel]:
    """Read the canonical environment file (world plus robot)."""
    d = json.loads(Path(path).read_text())
    return Environment.from_dict(d), RobotModel.from_dict(d["robot"])


def fixture_dict(env: Environment, robot: RobotModel) -> dict:
    d = env.to_dict()
    d["robot"] = robot.to_dict()
    return d


def save_fixture(env: Environment, robot: RobotModel, path) -> None:
    Path(path).write_text(json.dumps(fixture_dict(env, robot), indent=2) + "\n")


# ----------------------------------------------------------------------
# Kinematics
# ----------------------------------------------------------------------


def _as_batch(robot: RobotModel, q) -> np.ndarray:
    Q = np.asarray(q, dtype=float)
    if Q.ndim == 1:
        Q = Q[None, :]
    if Q.ndim != 2 or Q.shape[1] != robot.dof:
        raise ValueError(f"configuration has shape {np.shape(q)}, robot has {robot.dof} dof")
    return Q


def link_frames(robot: RobotModel, Q) -> tuple[np.ndarray, np.ndarray]:
    """Centers ``(m, links, 2)`` and absolute orientations ``(m, links)`` for a batch."""
    Q = _as_batch(robot, Q)
    m, n_links = len(Q), len(robot.links)
    centers = np.empty((m, n_links, 2))
    angles = np.empty((m, n_links))
    phi = Q[:, 2].copy()
    center = Q[:, :2].copy()
    for i, (length, _) in enumerate(robot.links):
        if i > 0:
            phi = phi + Q[:, 2 + i]
            center = joint + 0.5 * length * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        centers[:, i] = center
        angles[:, i] = phi
        joint = center + 0.5 * length * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    return centers, angles


def forward_kinematics(robot: RobotModel, q) -> list[np.ndarray]:
    """World-frame footprint of every link as a ``(4, 2)`` counter-clockwise polygon."""
    q = np.asarray(q, dtype=float)
    if q.shape != (robot.dof,):
        raise ValueError(f"configuration has shape {q.shape}, robot has {robot.dof} dof")
    centers, angles = link_frames(robot, q)
    polys = []
    for i, (length, width) in enumerate(robot.links):
        c, s = math.cos(angles[0, i]), math.sin(angles[0, i])
        rot = np.array([[c, -s], [s, c]])
        hl, hw = length / 2, width / 2
        local = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
        polys.append(local @ rot.T + centers[0, i])
    return polys


# ----------------------------------------------------------------------
# Collision checking
# ----------------------------------------------------------------------


def within_limits(robot: RobotModel, Q) -> np.ndarray:
    Q = _as_batch(robot, Q)
    ok = np.ones(len(Q), dtype=bool)
    for j, ((lo, hi), wraps) in enumerate(zip(robot.joint_limits, robot.joint_wraps)):
        if not wraps:
            v = Q[:, robot.base_dof_count + j]
            ok &= (v >= lo - CONTACT_EPS) & (v <= hi + CONTACT_EPS)
    return ok


def collision_free_many(env: Environment, robot: RobotModel, Q) -> np.ndarray:
    """Vectorised validity test for a batch of configurations ``(m, dof)``."""
    Q = _as_batch(robot, Q)
    centers, angles = link_frames(robot, Q)
    dims = np.array(robot.links)
    hx, hy = dims[:, 0] / 2, dims[:, 1] / 2
    ca, sa = np.cos(angles), np.sin(angles)
    aca, asa = np.abs(ca), np.abs(sa)
    ex = aca * hx + asa * hy
    ey = asa * hx + aca * hy
    cx, cy = centers[..., 0], centers[..., 1]
    ok = within_limits(robot, Q)
    inside = (
        (cx - ex >= -CONTACT_EPS)
        & (cx + ex <= env.width + CONTACT_EPS)
        & (cy - ey >= -CONTACT_EPS)
        & (cy + ey <= env.height + CONTACT_EPS)
    )
    ok &= inside.all(axis=1)
    if not env.obstacles:
        return ok
    oc, oh = env._obstacle_arrays
    dx = oc[:, 0] - cx[..., None]
    dy = oc[:, 1] - cy[..., None]
    ca3, sa3, aca3, asa3 = ca[..., None], sa[..., None], aca[..., None], asa[..., None]
    sep = np.abs(dx) >= ex[..., None] + oh[:, 0] - CONTACT_EPS
    sep |= np.abs(dy) >= ey[..., None] + oh[:, 1] - CONTACT_EPS
    du = dx * ca3 + dy * sa3
    sep |= np.abs(du) >= hx[:, None] + aca3 * oh[:, 0] + asa3 * oh[:, 1] - CONTACT_EPS
    dv = dy * ca3 - dx * sa3
    sep |= np.abs(dv) >= hy[:, None] + asa3 * oh[:, 0] + aca3 * oh[:, 1] - CONTACT_EPS
    ok &= sep.all(axis=(1, 2))
    return ok


def is_collision_free(env: Environment, robot: RobotModel, q) -> bool:
    """True iff every link is inside the world and overlaps no obstacle."""
    q = np.asarray(q, dtype=float)
    if q.shape != (robot.dof,):
        raise ValueError(f"configuration has shape {q.shape}, robot has {robot.dof} dof")
    return bool(collision_free_many(env, robot, q)[0])


# ----------------------------------------------------------------------
# Metric, interpolation and steering
# ----------------------------------------------------------------------


def canonical(robot: RobotModel, q) -> np.ndarray:
    """Wrap full-turn angles to [-pi, pi) and clamp bounded joints to their limits."""
    q = np.array(q, dtype=float)
    b = robot.base_dof_count
    for j, ((lo, hi), wraps) in enumerate(zip(robot.joint_limits, robot.joint_wraps)):
        if wraps:
            q[..., b + j] = wrap_angle(q[..., b + j])
        else:
            q[..., b + j] = np.clip(q[..., b + j], lo, hi)
    return q


def difference(robot: RobotModel, a, b) -> np.ndarray:
    """Displacement from ``a`` to ``b``; wrapping angles take the short way round."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    mask = robot.wrap_mask
    if d.ndim == 1:
        d[mask] = wrap_angle(d[mask])
    else:
        d[:, mask] = wrap_angle(d[:, mask])
    return d


def distance(robot: RobotModel, a, b) -> float:
    return float(np.linalg.norm(difference(robot, a, b) * robot.metric_weights))


def distances(robot: RobotModel, Q: np.ndarray, q) -> np.ndarray:
    """Distances from every row of ``Q`` to ``q``."""
    d = np.asarray(q, dtype=float)[None, :] - Q
    mask = robot.wrap_mask
    d[:, mask] = wrap_angle(d[:, mask])
    d *= robot.metric_weights
    return np.sqrt(np.einsum("ij,ij->i", d, d))


def interpolate(robot: RobotModel, a, b, step: float = DEFAULT_STEP) -> np.ndarray:
    """Waypoints from ``a`` to ``b`` spaced at most ``step`` apart, endpoints included.

    The points are computed from the lexicographically smaller endpoint so
    that ``interpolate(a, b)`` is exactly the reverse of ``interpolate(b, a)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    flip = tuple(b) < tuple(a)
    lo, hi = (b, a) if flip else (a, b)
    d = difference(robot, lo, hi)
    dist = float(np.linalg.norm(d * robot.metric_weights))
    if dist == 0.0:
        return a[None, :].copy()
    n = max(1, math.ceil(dist / step))
    t = np.arange(n + 1)[:, None] / n
    pts = lo + t * d
    pts[:, robot.wrap_mask] = wrap_angle(pts[:, robot.wrap_mask])
    pts[0], pts[-1] = lo, hi
    return pts[::-1].copy() if flip else pts


def steer(env: Environment, robot: RobotModel, q_from, q_to, step: float = DEFAULT_STEP):
    """Straight-line local planner; returns the checked waypoints or ``None`` if blocked."""
    pts = interpolate(robot, q_from, q_to, step)
    if not collision_free_many(env, robot, pts).all():
        return None
    return list(pts)


# ----------------------------------------------------------------------
# Grid
# ----------------------------------------------------------------------


def cells_of(env: Environment, xy) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``cell_of`` for an ``(m, 2)`` array of positions."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    x, y = xy[:, 0], xy[:, 1]
    if np.any((x < 0) | (x > env.width) | (y < 0) | (y > env.height)):
        raise ValueError("position outside the world")
    n = env.n_d
    cols = np.minimum(np.searchsorted(env.x_edges, x, side="right") - 1, n - 1)
    rows = np.minimum(np.searchsorted(env.y_edges, y, side="right") - 1, n - 1)
    return rows, cols


def cell_of(env: Environment, position) -> tuple[int, int]:
    """Grid cell ``(row, col)`` of a world position; lower cells own shared edges."""
    rows, cols = cells_of(env, position)
    return int(rows[0]), int(cols[0])


def cell_center(env: Environment, row: int, col: int) -> tuple[float, float]:
    return (
        (env.x_edges[col] + env.x_edges[col + 1]) / 2,
        (env.y_edges[row] + env.y_edges[row + 1]) / 2,
    )


# ----------------------------------------------------------------------
# Uniform sampling over free configurations
# ----------------------------------------------------------------------


def uniform_configurations(env: Environment, robot: RobotModel, rng: np.random.Generator, m: int) -> np.ndarray:
    Q = np.empty((m, robot.dof))
    Q[:, 0] = rng.uniform(0.0, env.width, m)
    Q[:, 1] = rng.uniform(0.0, env.height, m)
    for j, (lo, hi) in enumerate(robot.joint_limits):
        Q[:, robot.base_dof_count + j] = rng.uniform(lo, hi, m)
    return Q


def sample_free(
    env: Environment,
    robot: RobotModel,
    rng: np.random.Generator,
    count: int,
    max_attempts: int = 10**6,
    chunk: int = 256,
) -> tuple[np.ndarray, int]:
    """Uniform rejection sampling; returns ``(configs, attempts)``."""
    out = []
    have = 0
    attempts = 0
    while have < count:
        if attempts >= max_attempts:
            raise EnvironmentInfeasibleError(
                f"found {have}/{count} free configurations in {attempts} attempts"
            )
        Q = uniform_configurations(env, robot, rng, chunk)
        attempts += chunk
        good = Q[collision_free_many(env, robot, Q)]
        out.append(good[: count - have])
        have += len(out[-1])
    return (np.concatenate(out) if out else np.empty((0, robot.dof))), attempts


# ----------------------------------------------------------------------
# Stock environments
# ----------------------------------------------------------------------


def empty_world(size: float = 10.0, n_d: int = 64) -> Environment:
    return Environment(size, size, n_d)


def narrow_passage(
    size: float = 10.0,
    n_d: int = 64,
    wall: tuple[float, float] = (4.25, 5.75),
    gap: tuple[float, float] = (4.84375, 5.15625),
) -> Environment:
    """A wall splitting the world in two, pierced by one straight tunnel."""
    x0, x1 = wall
    g0, g1 = gap
    return Environment(size, size, n_d, ((x0, 0.0, x1, g0), (x0, g1, x1, size)))


def random_world(
    rng: np.random.Generator, size: float = 10.0, n_d: int = 64, count: int = 8,
    min_side: float = 0.5, max_side: float = 2.5,
) -> Environment:
    rects = []
    for _ in range(count):
        w, h = rng.uniform(min_side, max_side, 2)
        x, y = rng.uniform(0, size - w), rng.uniform(0, size - h)
        rects.append((round(x, 3), round(y, 3), round(x + w, 3), round(y + h, 3)))
    return Environment(size, size, n_d, tuple(rects))
