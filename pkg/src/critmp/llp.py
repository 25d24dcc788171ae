"""
Learn-and-Link planning with a criticality-biased sampler.

``BiasedSampler`` draws ``round(alpha * N)`` configurations from a predicted
criticality map (cell by criticality, position uniform in the cell, joints
from the cell's histograms) and the rest uniformly over free space.

``llp_plan`` roots one tree at every sample of the first batch plus the start
and goal, grows the forest toward fresh samples, links trees whose vertices
come within the link radius, and stops as soon as start and goal share a
component; Dijkstra over the merged forest gives the path.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from critmp import workspace as ws
from critmp.planners import (
    MotionPlan,
    MotionQuery,
    PlannerParams,
    Roadmap,
    Space,
    UnionFind,
    VertexSet,
    _same,
    dijkstra,
    prm_build,
    validate_query,
)
from critmp.timing import make_clock

log = logging.getLogger(__name__)

BIN_FLOOR = 1e-6
GUIDE_ACTIVE_SHARE = 0.8
CELL_RETRIES = 32


class BiasedSampler:
    """Alpha-mixture of a criticality-driven distribution and uniform free-space sampling.

    ``prediction`` is an ``(n_d, n_d, 1 + k * p)`` probability tensor: channel
    0 is the per-cell criticality, then ``p`` bin probabilities per joint.
    ``None`` gives a purely uniform sampler.
    """

    def __init__(self, env, robot, prediction=None, alpha: float = 0.25, N: int = 500, seed: int = 0):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if N < 1:
            raise ValueError("batch size N must be positive")
        self.env = env
        self.robot = robot
        self.alpha = alpha
        self.N = N
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.checks = 0
        self.last_biased = 0
        self.starved = False
        n, k = env.n_d, robot.joint_count
        if prediction is None:
            prediction = np.zeros((n, n, 1 + k * 2))
        pred = np.asarray(prediction, dtype=float)
        if pred.shape[:2] != (n, n):
            raise ValueError(f"prediction grid {pred.shape[:2]} does not match n_d={n}")
        extra = pred.shape[-1] - 1
        if k == 0:
            if extra:
                raise ValueError("prediction has joint channels but the robot has no joints")
            self.p = 0
        else:
            if extra <= 0 or extra % k:
                raise ValueError(f"{pred.shape[-1]} channels cannot hold {k} joint histograms")
            self.p = extra // k
        self.prediction = pred
        hist = pred[..., 1:].reshape(n * n, k, self.p) if k else np.zeros((n * n, 0, 0))
        hist = np.maximum(hist, BIN_FLOOR)
        hist /= hist.sum(axis=-1, keepdims=True)
        self._hist_cdf = np.cumsum(hist, axis=-1)
        self._set_weights(np.clip(pred[..., 0], 0.0, None))

    def _set_weights(self, weights: np.ndarray) -> None:
        w = np.asarray(weights, dtype=float).ravel()
        total = w.sum()
        self.fallback = not total > 0
        if self.fallback and self.alpha > 0:
            log.warning("criticality weights are all zero; sampling uniformly")
        self._cell_cdf = np.cumsum(w / total) if total > 0 else None

    def _copy(self, seed: int) -> "BiasedSampler":
        other = object.__new__(BiasedSampler)
        other.__dict__.update(self.__dict__)
        other.seed = seed
        other.rng = np.random.default_rng(seed)
        other.checks = 0
        other.last_biased = 0
        other.starved = False
        return other

    def reseeded(self, seed: int) -> "BiasedSampler":
        return self._copy(seed)

    def with_weights(self, weights: np.ndarray) -> "BiasedSampler":
        """Same sampler and RNG stream, different cell weights for the biased part."""
        other = self._copy(self.seed)
        other.rng = self.rng
        other._set_weights(weights)
        return other

    @property
    def n_biased(self) -> int:
        # Python's round() is round-half-to-even
        return round(self.alpha * self.N)

    def sample_batch(self) -> list[np.ndarray]:
        """``round(alpha * N)`` biased draws followed by uniform draws, all collision-free."""
        nb = 0 if self.fallback else self.n_biased
        biased = self.sample_biased(nb) if nb else np.empty((0, self.robot.dof))
        self.last_biased = len(biased)
        uniform = self.sample_uniform(self.N - len(biased))
        return list(np.concatenate([biased, uniform]))

    def sample_uniform(self, m: int) -> np.ndarray:
        if m == 0:
            return np.empty((0, self.robot.dof))
        Q, attempts = ws.sample_free(self.env, self.robot, self.rng, m)
        self.checks += attempts
        return Q

    def _choose_cells(self, m: int) -> np.ndarray:
        cdf = self._cell_cdf
        cells = np.searchsorted(cdf, self.rng.random(m) * cdf[-1], side="right")
        return np.minimum(cells, self.env.n_d ** 2 - 1)

    def _place(self, cells: np.ndarray) -> np.ndarray:
        """Position uniform inside each cell, joints from the cell's histograms."""
        env, robot, rng = self.env, self.robot, self.rng
        m = len(cells)
        rows, cols = np.divmod(cells, env.n_d)
        Q = np.empty((m, robot.dof))
        xe, ye = env.x_edges, env.y_edges
        Q[:, 0] = xe[cols] + rng.random(m) * (xe[cols + 1] - xe[cols])
        Q[:, 1] = ye[rows] + rng.random(m) * (ye[rows + 1] - ye[rows])
        for j, (lo, hi) in enumerate(robot.joint_limits):
            cdf = self._hist_cdf[cells, j]
            bins = np.minimum((cdf < rng.random(m)[:, None]).sum(axis=1), self.p - 1)
            width = (hi - lo) / self.p
            Q[:, robot.base_dof_count + j] = lo + (bins + rng.random(m)) * width
        return Q

    def draw_biased(self, m: int) -> np.ndarray:
        """Raw biased proposals (not collision-checked)."""
        return self._place(self._choose_cells(m))

    def sample_biased(self, m: int, max_attempts: int = 10**6) -> np.ndarray:
        """Biased free configurations.

        A collision is retried inside the same cell (up to ``CELL_RETRIES``
        times) before the cell is redrawn, so the cell marginal stays
        proportional to criticality even for cells that are mostly blocked.
        """
        out, have, attempts = [], 0, 0
        while have < m and attempts < max_attempts:
            cells = self._choose_cells(m - have)
            for _ in range(CELL_RETRIES):
                Q = self._place(cells)
                attempts += len(cells)
                ok = ws.collision_free_many(self.env, self.robot, Q)
                out.append(Q[ok])
                have += int(ok.sum())
                cells = cells[~ok]
                if len(cells) == 0 or attempts >= max_attempts:
                    break
        self.checks += attempts
        if have < m:
            # critical cells with no free placement: top up uniformly
            self.starved = True
            out.append(self.sample_uniform(m - have))
        return np.concatenate(out)[:m] if out else np.empty((0, self.robot.dof))


def uniform_sampler(env, robot, N: int = 500, seed: int = 0) -> BiasedSampler:
    return BiasedSampler(env, robot, None, alpha=0.0, N=N, seed=seed)


# ----------------------------------------------------------------------
# Learn-and-Link forest
# ----------------------------------------------------------------------


class LinkForest:
    """Undirected exploration graph made of many trees, with union-find connectivity."""

    tries_per_component = 2

    def __init__(self, space: Space):
        self.space = space
        self.V = VertexSet(space.robot, 1024, clock=space.clock)
        self.uf = UnionFind()
        self.adj: dict[int, dict[int, float]] = {}

    def __len__(self):
        return len(self.V)

    def add(self, q) -> int:
        v = self.V.add(q)
        self.uf.add(v)
        self.adj[v] = {}
        return v

    def connect(self, i: int, j: int, cost: float) -> None:
        self.adj[i][j] = cost
        self.adj[j][i] = cost
        self.uf.union(i, j)

    def link(self, v: int, radius: float) -> None:
        """Try to join ``v`` to nearby vertices of other components."""
        d = self.V.distances(self.V[v])
        near = np.nonzero(d <= radius)[0]
        near = near[np.argsort(d[near], kind="stable")]
        tries: dict[int, int] = defaultdict(int)
        for u in near.tolist():
            if u == v:
                continue
            ru = self.uf.find(u)
            if ru == self.uf.find(v) or tries[ru] >= self.tries_per_component:
                continue
            tries[ru] += 1
            if self.space.steer(self.V[u], self.V[v]):
                self.connect(u, v, float(d[u]))

    def connected(self, a: int, b: int) -> bool:
        return self.uf.find(a) == self.uf.find(b)


def _llp_search(query: MotionQuery, sampler: BiasedSampler, params: PlannerParams, on_vertex=None):
    """Core loop shared by LLP and Guided-LLP.

    ``on_vertex(forest, v, s)`` may return a replacement sampler; pending
    samples are then discarded so new draws follow the new weights.
    Returns ``(plan or None, forest)``.
    """
    validate_query(query)
    clock = make_clock(params.clock)
    robot = query.robot
    space = Space(query.env, robot, params, clock)
    start, goal = np.asarray(query.start, float), np.asarray(query.goal, float)
    forest = LinkForest(space)
    budget = query.time_budget
    if clock.elapsed() >= budget:
        return None, forest
    if _same(robot, start, goal):
        forest.add(start)
        return MotionPlan([start.copy()], clock.elapsed(), 1, query.rng_seed), forest
    radius = params.link_r
    s = forest.add(start)
    g = forest.add(goal)
    forest.link(g, radius)

    def finish():
        path, _ = dijkstra(forest.adj, s, g)
        pts = [forest.V[v].copy() for v in path]
        return MotionPlan(pts, clock.elapsed(), len(forest), query.rng_seed)

    def draw(current):
        before = current.checks
        batch = current.sample_batch()
        clock.charge(current.checks - before)
        return batch

    def grew(v):
        nonlocal sampler
        if on_vertex is not None:
            new = on_vertex(forest, v, s)
            if new is not None:
                sampler = new
                queue.clear()

    queue: deque = deque()
    if forest.connected(s, g):
        return finish(), forest
    for q in draw(sampler):
        if clock.elapsed() >= budget:
            return None, forest
        v = forest.add(q)
        forest.link(v, radius)
        grew(v)
        if forest.connected(s, g):
            return finish(), forest
    while clock.elapsed() < budget:
        if not queue:
            queue.extend(draw(sampler))
            continue
        target = queue.popleft()
        i, _ = forest.V.nearest(target)
        new = space.extend(forest.V[i], target)
        if new is None:
            continue
        v = forest.add(new)
        forest.connect(i, v, ws.distance(robot, forest.V[i], new))
        forest.link(v, radius)
        grew(v)
        if forest.connected(s, g):
            return finish(), forest
    return None, forest


def llp_plan(query: MotionQuery, sampler: BiasedSampler, params: PlannerParams | None = None,
             *, return_forest: bool = False):
    """Learn-and-Link planning with trees built on the fly for this query."""
    params = params or PlannerParams()
    plan, forest = _llp_search(query, sampler.reseeded(query.rng_seed), params)
    return (plan, forest) if return_forest else plan


def llrm_build(env, robot, sampler: BiasedSampler, build_budget: float = 1.0,
               params: PlannerParams | None = None) -> Roadmap:
    """Learn-and-Link roadmap mode: a k-nearest roadmap grown from sampler batches."""
    return prm_build(env, robot, sampler, budget_s=build_budget, params=params)


# ----------------------------------------------------------------------
# Region graph and Guided-LLP
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class RegionGraph:
    """Connected blobs of critical cells linked when closer than ``link_distance``."""

    regions: tuple[np.ndarray, ...]
    edges: tuple[tuple[int, int, float], ...]
    labels: np.ndarray
    link_distance: float
    representatives: tuple[np.ndarray, ...] = ()

    def __len__(self):
        return len(self.regions)

    @property
    def adjacency(self) -> dict[int, dict[int, float]]:
        adj = {i: {} for i in range(len(self.regions))}
        for i, j, _ in self.edges:
            adj[i][j] = 1.0
            adj[j][i] = 1.0
        return adj


def _cell_gap(env, ra, ca, rb, cb) -> np.ndarray:
    """Distances between closed cell squares, broadcasting over the inputs."""
    cw, ch = env.width / env.n_d, env.height / env.n_d
    gx = np.maximum(np.abs(ca - cb) - 1, 0) * cw
    gy = np.maximum(np.abs(ra - rb) - 1, 0) * ch
    return np.hypot(gx, gy)


def region_distance(env, a: np.ndarray, b: np.ndarray) -> float:
    d = _cell_gap(env, a[:, None, 0], a[:, None, 1], b[None, :, 0], b[None, :, 1])
    return float(d.min())


def point_region_distance(env, xy, cells: np.ndarray) -> float:
    x0, y0 = env.x_edges[cells[:, 1]], env.y_edges[cells[:, 0]]
    x1, y1 = env.x_edges[cells[:, 1] + 1], env.y_edges[cells[:, 0] + 1]
    dx = np.maximum.reduce([x0 - xy[0], np.zeros_like(x0), xy[0] - x1])
    dy = np.maximum.reduce([y0 - xy[1], np.zeros_like(y0), xy[1] - y1])
    return float(np.hypot(dx, dy).min())


def build_region_graph(prediction, env, robot, threshold: float = 0.3, link_distance: float = 0.2,
                       representatives: int = 4, seed: int = 0) -> RegionGraph:
    """Threshold criticality at ``threshold * max``, group by 4-connectivity, link close regions."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    crit = np.asarray(prediction, dtype=float)[..., 0]
    top = crit.max()
    labels = np.full(crit.shape, -1, dtype=np.int64)
    if not top > 0:
        return RegionGraph((), (), labels, link_distance)
    lab, count = ndimage.label(crit / top >= threshold)
    labels = lab.astype(np.int64) - 1
    regions = tuple(np.argwhere(labels == i) for i in range(count))
    edges = []
    for i in range(count):
        for j in range(i + 1, count):
            d = region_distance(env, regions[i], regions[j])
            if d <= link_distance:
                edges.append((i, j, d))
    reps = ()
    if representatives:
        sampler = BiasedSampler(env, robot, prediction, alpha=1.0, N=1, seed=seed)
        reps_list = []
        for cells in regions:
            w = np.zeros(crit.shape)
            w[cells[:, 0], cells[:, 1]] = crit[cells[:, 0], cells[:, 1]]
            sub = sampler.with_weights(w)
            Q = sub.draw_biased(64 * representatives)
            reps_list.append(Q[ws.collision_free_many(env, robot, Q)][:representatives])
        reps = tuple(reps_list)
    return RegionGraph(regions, tuple(edges), labels, link_distance, reps)


def nearest_region(env, graph: RegionGraph, xy) -> int:
    d = [point_region_distance(env, xy, cells) for cells in graph.regions]
    return int(np.argmin(d))


def region_route(env, graph: RegionGraph, start, goal) -> list[int] | None:
    if len(graph) == 0:
        return None
    a = nearest_region(env, graph, start[:2])
    b = nearest_region(env, graph, goal[:2])
    found = dijkstra(graph.adjacency, a, b)
    return None if found is None else found[0]


def _route_weights(crit: np.ndarray, graph: RegionGraph, route: list[int], step: int) -> np.ndarray:
    active = graph.regions[route[step]]
    rest = [graph.regions[r] for r in route if r != route[step]]
    w = np.zeros(crit.shape)

    def spread(cells, share):
        vals = np.maximum(crit[cells[:, 0], cells[:, 1]], 0.0)
        total = vals.sum()
        if total <= 0:
            vals, total = np.ones(len(cells)), float(len(cells))
        w[cells[:, 0], cells[:, 1]] += share * vals / total

    if rest:
        spread(active, GUIDE_ACTIVE_SHARE)
        spread(np.concatenate(rest), 1.0 - GUIDE_ACTIVE_SHARE)
    else:
        spread(active, 1.0)
    return w


def guided_llp_plan(query: MotionQuery, sampler: BiasedSampler, region_graph: RegionGraph,
                    params: PlannerParams | None = None, *, return_route: bool = False):
    """LLP whose biased draws follow a shortest route through the region graph.

    80% of the biased mass sits on the route's active region and 20% on its
    other regions; the active region advances once the start's tree reaches
    it. Without a route this is plain ``llp_plan``.
    """
    params = params or PlannerParams()
    env = query.env
    route = region_route(env, region_graph, np.asarray(query.start), np.asarray(query.goal))
    if route is None:
        plan = llp_plan(query, sampler, params)
        return (plan, None) if return_route else plan
    crit = sampler.prediction[..., 0]
    base = sampler.reseeded(query.rng_seed)
    step = 0
    members: dict[int, list[int]] = defaultdict(list)
    labels = region_graph.labels

    def on_vertex(forest, v, s):
        nonlocal step
        r, c = ws.cell_of(env, forest.V[v][:2])
        if labels[r, c] >= 0:
            members[int(labels[r, c])].append(v)
        advanced = False
        while step < len(route) - 1 and any(
            forest.connected(u, s) for u in members[route[step]]
        ):
            step += 1
            advanced = True
        return base.with_weights(_route_weights(crit, region_graph, route, step)) if advanced else None

    first = base.with_weights(_route_weights(crit, region_graph, route, 0))
    plan, _ = _llp_search(query, first, params, on_vertex)
    return (plan, route) if return_route else plan
