"""
Baseline sampling-based planners (RRT, BiRRT, PRM) and Dijkstra.

All planners are seeded per query and charge their collision checks to a
clock (see ``critmp.timing``) so a budget can be wall-clock or work based.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from collections.abc import Mapping
from dataclasses import dataclass, field, fields

import numpy as np

from critmp import workspace as ws
from critmp.errors import InvalidQueryError
from critmp.timing import make_clock


@dataclass
class PlannerParams:
    """Tunables shared by every planner; unset radii derive from ``step``."""

    step: float = ws.DEFAULT_STEP
    extend_factor: float = 10.0
    goal_bias: float = 0.05
    k: int = 8
    link_radius: float | None = None
    N: int = 500
    alpha: float = 0.25
    region_threshold: float = 0.3
    link_distance: float = 0.2
    clock: str = "wall"

    @property
    def extend_step(self) -> float:
        return self.step * self.extend_factor

    @property
    def link_r(self) -> float:
        return self.link_radius if self.link_radius is not None else 2.0 * self.extend_step

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerParams":
        d = dict(d)
        if "steer_step" in d:
            d["step"] = d.pop("steer_step")
        d.pop("budget_s", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown planner parameters: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class MotionQuery:
    env: ws.Environment
    robot: ws.RobotModel
    start: np.ndarray
    goal: np.ndarray
    time_budget: float = 5.0
    rng_seed: int = 0


@dataclass
class MotionPlan:
    waypoints: list[np.ndarray]
    solve_time: float
    nodes_expanded: int
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "waypoints": [[float(v) for v in q] for q in self.waypoints],
            "solve_time": float(self.solve_time),
            "nodes_expanded": int(self.nodes_expanded),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MotionPlan":
        return cls(
            [np.array(q, dtype=float) for q in d["waypoints"]],
            float(d["solve_time"]),
            int(d["nodes_expanded"]),
            int(d.get("seed", 0)),
        )


@dataclass
class Roadmap:
    """Undirected roadmap; ``edges`` holds ``(i, j, cost)`` with ``i < j``."""

    vertices: np.ndarray
    edges: list[tuple[int, int, float]]
    build_time: float = 0.0
    adjacency: dict[int, dict[int, float]] = field(init=False, repr=False)

    def __post_init__(self):
        self.adjacency = {i: {} for i in range(len(self.vertices))}
        for i, j, c in self.edges:
            self.adjacency[i][j] = c
            self.adjacency[j][i] = c

    def __len__(self) -> int:
        return len(self.vertices)

    def component_count(self) -> int:
        uf = UnionFind()
        for i in range(len(self.vertices)):
            uf.add(i)
        for i, j, _ in self.edges:
            uf.union(i, j)
        return uf.count


class UnionFind:
    def __init__(self):
        self.parent: list[int] = []
        self.count = 0

    def add(self, i: int) -> None:
        assert i == len(self.parent)
        self.parent.append(i)
        self.count += 1

    def find(self, i: int) -> int:
        p = self.parent
        root = i
        while p[root] != root:
            root = p[root]
        while p[i] != root:
            p[i], i = root, p[i]
        return root

    def union(self, i: int, j: int) -> bool:
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return False
        if ri > rj:
            ri, rj = rj, ri
        self.parent[rj] = ri
        self.count -= 1
        return True


# ----------------------------------------------------------------------
# Dijkstra
# ----------------------------------------------------------------------


def dijkstra(graph, source: int, target: int):
    """Minimum-cost path as ``(path, cost)``, or ``None`` if unreachable.

    ``graph`` is a ``Roadmap`` or an adjacency mapping ``{v: {u: cost}}``.
    Equal-cost paths are ranked by their vertex sequence, so the result is
    the lexicographically smallest optimal path.
    """
    adj = graph.adjacency if isinstance(graph, Roadmap) else graph
    if source not in adj or target not in adj:
        raise ValueError(f"unknown vertex in ({source}, {target})")
    best = {source: (0.0, (source,))}
    heap = [(0.0, (source,))]
    done = set()
    while heap:
        entry = heapq.heappop(heap)
        cost, path = entry
        v = path[-1]
        if v in done or best[v] != entry:
            continue
        if v == target:
            return list(path), cost
        done.add(v)
        for u, w in adj[v].items():
            if u in done:
                continue
            cand = (cost + w, path + (u,))
            old = best.get(u)
            if old is None or cand < old:
                best[u] = cand
                heapq.heappush(heap, cand)
    return None


class _Overlay(Mapping):
    """Adjacency view adding temporary vertices to a base graph without copying it."""

    def __init__(self, base: Mapping, extra: dict[int, dict[int, float]]):
        self.base = base
        self.extra = extra
        self.back: dict[int, dict[int, float]] = {}
        for v, nbrs in extra.items():
            for u, c in nbrs.items():
                if u in base:
                    self.back.setdefault(u, {})[v] = c

    def __getitem__(self, v):
        if v in self.extra:
            return self.extra[v]
        nbrs = self.base[v]
        if v in self.back:
            return {**nbrs, **self.back[v]}
        return nbrs

    def __contains__(self, v):
        return v in self.extra or v in self.base

    def __iter__(self):
        yield from self.base
        yield from self.extra

    def __len__(self):
        return len(self.base) + len(self.extra)


# ----------------------------------------------------------------------
# Shared machinery
# ----------------------------------------------------------------------


class Space:
    """Collision checking and steering bound to one query's clock."""

    def __init__(self, env, robot, params: PlannerParams, clock):
        self.env = env
        self.robot = robot
        self.params = params
        self.clock = clock

    def free_many(self, Q) -> np.ndarray:
        Q = np.atleast_2d(Q)
        self.clock.charge(len(Q))
        return ws.collision_free_many(self.env, self.robot, Q)

    def free(self, q) -> bool:
        return bool(self.free_many(q)[0])

    def steer(self, a, b) -> bool:
        return bool(self.free_many(ws.interpolate(self.robot, a, b, self.params.step)).all())

    def toward(self, near, target, max_dist: float) -> np.ndarray:
        d = ws.difference(self.robot, near, target)
        dist = float(np.linalg.norm(d * self.robot.metric_weights))
        if dist <= max_dist:
            return np.asarray(target, dtype=float).copy()
        return ws.canonical(self.robot, near + d * (max_dist / dist))

    def extend(self, near, target) -> np.ndarray | None:
        new = self.toward(near, target, self.params.extend_step)
        return new if self.steer(near, new) else None

    def random_config(self, rng) -> np.ndarray:
        return ws.uniform_configurations(self.env, self.robot, rng, 1)[0]


class VertexSet:
    """Growable configuration store with brute-force nearest-neighbour queries."""

    def __init__(self, robot, capacity: int = 512, clock=None):
        self.robot = robot
        self.Q = np.empty((capacity, robot.dof))
        self.n = 0
        self.clock = clock

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return self.Q[i]

    def add(self, q) -> int:
        if self.n == len(self.Q):
            self.Q = np.concatenate([self.Q, np.empty_like(self.Q)])
        self.Q[self.n] = q
        self.n += 1
        return self.n - 1

    def distances(self, q) -> np.ndarray:
        if self.clock is not None:
            self.clock.charge_distances(self.n)
        return ws.distances(self.robot, self.Q[: self.n], q)

    def nearest(self, q) -> tuple[int, float]:
        d = self.distances(q)
        i = int(np.argmin(d))
        return i, float(d[i])

    def k_nearest(self, q, k: int) -> np.ndarray:
        d = self.distances(q)
        return np.argsort(d, kind="stable")[:k]


def validate_query(query: MotionQuery) -> None:
    env, robot = query.env, query.robot
    for name in ("start", "goal"):
        q = np.asarray(getattr(query, name), dtype=float)
        if q.shape != (robot.dof,):
            raise InvalidQueryError(f"{name} has shape {q.shape}, robot has {robot.dof} dof")
        if not ws.is_collision_free(env, robot, q):
            raise InvalidQueryError(f"{name} configuration is in collision")
    if query.time_budget < 0:
        raise InvalidQueryError("negative time budget")


def validate_plan(env, robot, plan: MotionPlan, step: float = ws.DEFAULT_STEP) -> bool:
    """Re-check every waypoint and every consecutive steer."""
    Q = np.asarray(plan.waypoints, dtype=float)
    if len(Q) == 0 or not ws.collision_free_many(env, robot, Q).all():
        return False
    return all(ws.steer(env, robot, a, b, step) is not None for a, b in zip(Q, Q[1:]))


def _same(robot, a, b) -> bool:
    return ws.distance(robot, a, b) == 0.0


class UniformSampler:
    """Batches of uniformly distributed free configurations."""

    def __init__(self, env, robot, N: int = 500, seed: int = 0):
        self.env = env
        self.robot = robot
        self.N = N
        self.rng = np.random.default_rng(seed)
        self.checks = 0

    def reseeded(self, seed: int) -> "UniformSampler":
        return UniformSampler(self.env, self.robot, self.N, seed)

    def sample_batch(self) -> list[np.ndarray]:
        Q, attempts = ws.sample_free(self.env, self.robot, self.rng, self.N)
        self.checks += attempts
        return list(Q)


# ----------------------------------------------------------------------
# Tree planners
# ----------------------------------------------------------------------


def _tree_path(parents: list[int], Q: VertexSet, i: int) -> list[np.ndarray]:
    path = []
    while i >= 0:
        path.append(Q[i].copy())
        i = parents[i]
    return path[::-1]


def rrt_plan(query: MotionQuery, params: PlannerParams | None = None) -> MotionPlan | None:
    """Single-tree RRT with goal bias; ``None`` on timeout."""
    params = params or PlannerParams()
    validate_query(query)
    clock = make_clock(params.clock)
    robot = query.robot
    space = Space(query.env, robot, params, clock)
    rng = np.random.default_rng(query.rng_seed)
    start, goal = np.asarray(query.start, float), np.asarray(query.goal, float)
    if clock.elapsed() >= query.time_budget:
        return None
    if _same(robot, start, goal):
        return MotionPlan([start.copy()], clock.elapsed(), 1, query.rng_seed)
    tree = VertexSet(robot, clock=clock)
    parents = [-1]
    tree.add(start)
    while clock.elapsed() < query.time_budget:
        target = goal if rng.random() < params.goal_bias else space.random_config(rng)
        i, _ = tree.nearest(target)
        new = space.extend(tree[i], target)
        if new is None:
            continue
        j = tree.add(new)
        parents.append(i)
        if ws.distance(robot, new, goal) <= params.extend_step and space.steer(new, goal):
            if not _same(robot, new, goal):
                j = tree.add(goal)
                parents.append(j - 1)
            return MotionPlan(_tree_path(parents, tree, j), clock.elapsed(), len(tree), query.rng_seed)
    return None


def birrt_plan(query: MotionQuery, params: PlannerParams | None = None) -> MotionPlan | None:
    """Bidirectional RRT: trees from start and goal, alternately extended.

    After each successful extension the other tree's nearest vertex is
    steered to the new vertex when it lies within the link radius.
    """
    params = params or PlannerParams()
    validate_query(query)
    clock = make_clock(params.clock)
    robot = query.robot
    space = Space(query.env, robot, params, clock)
    rng = np.random.default_rng(query.rng_seed)
    start, goal = np.asarray(query.start, float), np.asarray(query.goal, float)
    if clock.elapsed() >= query.time_budget:
        return None
    if _same(robot, start, goal):
        return MotionPlan([start.copy()], clock.elapsed(), 1, query.rng_seed)
    trees = [VertexSet(robot, clock=clock), VertexSet(robot, clock=clock)]
    parents: list[list[int]] = [[-1], [-1]]
    trees[0].add(start)
    trees[1].add(goal)
    a = 0
    # the roots may already see each other
    if ws.distance(robot, start, goal) <= params.link_r and space.steer(start, goal):
        return MotionPlan([start.copy(), goal.copy()], clock.elapsed(), 2, query.rng_seed)
    while clock.elapsed() < query.time_budget:
        ta, tb = trees[a], trees[1 - a]
        target = space.random_config(rng)
        i, _ = ta.nearest(target)
        new = space.extend(ta[i], target)
        if new is not None:
            ia = ta.add(new)
            parents[a].append(i)
            jb, d = tb.nearest(new)
            if d <= params.link_r and space.steer(tb[jb], new):
                pa = _tree_path(parents[a], ta, ia)
                pb = _tree_path(parents[1 - a], tb, jb)
                if _same(robot, pa[-1], pb[-1]):
                    pb = pb[:-1]
                path = pa + pb[::-1] if a == 0 else pb + pa[::-1]
                return MotionPlan(path, clock.elapsed(), len(ta) + len(tb), query.rng_seed)
        a = 1 - a
    return None


# ----------------------------------------------------------------------
# PRM
# ----------------------------------------------------------------------


def prm_build(
    env,
    robot,
    sampler,
    budget_s: float | None = 1.0,
    max_vertices: int | None = None,
    params: PlannerParams | None = None,
) -> Roadmap:
    """Grow a k-nearest roadmap from ``sampler`` until the time or vertex budget runs out.

    A new vertex is only steered to neighbours outside its current component;
    edges inside a component add no connectivity.
    """
    params = params or PlannerParams()
    if budget_s is None and max_vertices is None:
        raise ValueError("prm_build needs a time budget or a vertex budget")
    budget = math.inf if budget_s is None else budget_s
    cap = math.inf if max_vertices is None else max_vertices
    clock = make_clock(params.clock)
    space = Space(env, robot, params, clock)
    verts = VertexSet(robot, clock=clock)
    uf = UnionFind()
    edges: list[tuple[int, int, float]] = []
    queue: deque = deque()
    charged = sampler.checks
    while len(verts) < cap and clock.elapsed() < budget:
        if not queue:
            queue.extend(sampler.sample_batch())
            clock.charge(sampler.checks - charged)
            charged = sampler.checks
            continue
        q = queue.popleft()
        v = verts.add(q)
        uf.add(v)
        if v == 0:
            continue
        d = verts.distances(q)[:v]
        for u in np.argsort(d, kind="stable")[: params.k]:
            u = int(u)
            if uf.find(u) != uf.find(v) and space.steer(verts[u], q):
                uf.union(u, v)
                edges.append((u, v, float(d[u])))
    return Roadmap(verts.Q[: len(verts)].copy(), edges, clock.elapsed())


def prm_query(roadmap: Roadmap, query: MotionQuery, params: PlannerParams | None = None) -> MotionPlan | None:
    """Attach start and goal to their k nearest reachable vertices and run Dijkstra."""
    params = params or PlannerParams()
    validate_query(query)
    clock = make_clock(params.clock)
    robot = query.robot
    space = Space(query.env, robot, params, clock)
    start, goal = np.asarray(query.start, float), np.asarray(query.goal, float)
    if clock.elapsed() >= query.time_budget:
        return None
    if _same(robot, start, goal):
        return MotionPlan([start.copy()], clock.elapsed(), 1, query.rng_seed)
    n = len(roadmap)
    if n == 0:
        return None
    S, G = n, n + 1
    extra: dict[int, dict[int, float]] = {S: {}, G: {}}
    for node, q in ((S, start), (G, goal)):
        d = ws.distances(robot, roadmap.vertices, q)
        for u in np.argsort(d, kind="stable")[: params.k]:
            if clock.elapsed() >= query.time_budget:
                return None
            if space.steer(roadmap.vertices[u], q):
                extra[node][int(u)] = float(d[u])
    found = dijkstra(_Overlay(roadmap.adjacency, extra), S, G)
    if found is None or clock.elapsed() >= query.time_budget:
        return None
    path, _ = found
    pts = [start.copy()] + [roadmap.vertices[v].copy() for v in path[1:-1]] + [goal.copy()]
    return MotionPlan(pts, clock.elapsed(), len(path), query.rng_seed)
