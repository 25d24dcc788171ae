"""
Benchmark harness: solved-fraction-versus-time curves across planners.

Every planner sees the same tasks with the same per-task seeds. Roadmap
planners (``prm``, ``llrm``) build once per repetition; the build time is
stored next to each record and left out of ``solve_time_s``, so curves can be
drawn with or without it.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from critmp import workspace as ws
from critmp.dataset import query_seed
from critmp.errors import ConfigError
from critmp.llp import BiasedSampler, build_region_graph, guided_llp_plan, llp_plan, llrm_build
from critmp.planners import (
    MotionPlan,
    MotionQuery,
    PlannerParams,
    UniformSampler,
    birrt_plan,
    prm_build,
    prm_query,
    rrt_plan,
)

PLANNERS = ("rrt", "birrt", "prm", "llp", "llp-uniform", "llrm", "guided-llp")
ROADMAP_PLANNERS = ("prm", "llrm")
NEEDS_PREDICTION = ("llp", "llrm", "guided-llp")
CSV_FIELDS = ("planner", "task_id", "rep", "seed", "solved", "solve_time_s", "nodes_expanded", "build_time_s")
# key reserved for roadmap build seeds, outside the task-id range
BUILD_KEY = 2**31 - 1


@dataclass
class BenchmarkSpec:
    """What to run. ``tasks`` may list explicit ``(start, goal)`` pairs;
    otherwise ``task_count`` random free pairs are drawn from ``seed``
    (with ``goal`` fixed if given)."""

    env: ws.Environment
    robot: ws.RobotModel
    planners: list[tuple[str, dict]]
    task_count: int = 100
    budget: float = 10.0
    seed: int = 0
    repetitions: int = 1
    build_budget: float = 1.0
    prediction: np.ndarray | None = None
    goal: np.ndarray | None = None
    tasks: list[tuple[np.ndarray, np.ndarray]] | None = None
    jobs: int = 1
    clock: str = "wall"

    def validate(self) -> None:
        if self.tasks is None and self.task_count < 1:
            raise ConfigError("task count must be at least 1")
        if self.tasks is not None and not self.tasks:
            raise ConfigError("explicit task list is empty")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.budget < 0:
            raise ConfigError("budget must be non-negative")
        names = [name for name, _ in self.planners]
        if not names:
            raise ConfigError("no planners to benchmark")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate planner names in {names}")
        for name, params in self.planners:
            if name not in PLANNERS:
                raise ConfigError(f"unknown planner {name!r}; choose from {', '.join(PLANNERS)}")
            if name in NEEDS_PREDICTION and self.prediction is None:
                raise ConfigError(f"planner {name!r} needs a criticality prediction")
            try:
                self.params_for(params)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from None

    def params_for(self, overrides: dict) -> PlannerParams:
        return PlannerParams.from_dict({"clock": self.clock, **(overrides or {})})

    def task_list(self) -> list[tuple[np.ndarray, np.ndarray]]:
        if self.tasks is not None:
            return [(np.asarray(s, float), np.asarray(g, float)) for s, g in self.tasks]
        rng = np.random.default_rng(self.seed)
        starts, _ = ws.sample_free(self.env, self.robot, rng, self.task_count)
        if self.goal is not None:
            return [(s, np.asarray(self.goal, float)) for s in starts]
        goals, _ = ws.sample_free(self.env, self.robot, rng, self.task_count)
        return list(zip(starts, goals))


@dataclass(frozen=True)
class BenchmarkRecord:
    planner: str
    task_id: int
    rep: int
    seed: int
    solved: bool
    solve_time_s: float
    nodes_expanded: int
    build_time_s: float = 0.0
    # kept in memory for re-validation; not written to CSV
    plan: MotionPlan | None = field(default=None, compare=False, repr=False)

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.planner, self.task_id, self.rep)


@dataclass
class _Job:
    name: str
    params: PlannerParams
    spec: BenchmarkSpec
    rep: int
    tasks: list
    roadmap: object = None
    build_time: float = 0.0
    extra: dict = field(default_factory=dict)


def _solve_one(job: _Job, task_id: int, start, goal):
    spec, params = job.spec, job.params
    seed = query_seed(spec.seed, task_id, job.rep)
    q = MotionQuery(spec.env, spec.robot, start, goal, spec.budget, seed)
    name = job.name
    if name == "rrt":
        plan = rrt_plan(q, params)
    elif name == "birrt":
        plan = birrt_plan(q, params)
    elif name in ROADMAP_PLANNERS:
        plan = prm_query(job.roadmap, q, params)
    elif name in ("llp", "llp-uniform"):
        plan = llp_plan(q, job.extra["sampler"], params)
    else:
        plan = guided_llp_plan(q, job.extra["sampler"], job.extra["graph"], params)
    solved = plan is not None and plan.solve_time <= spec.budget
    return BenchmarkRecord(
        name,
        task_id,
        job.rep,
        seed,
        solved,
        float(plan.solve_time) if solved else float(spec.budget),
        int(plan.nodes_expanded) if solved else 0,
        float(job.build_time),
        plan if solved else None,
    )


def _run_job(job: _Job) -> list[BenchmarkRecord]:
    return [_solve_one(job, i, s, g) for i, (s, g) in enumerate(job.tasks)]


def _prepare(spec: BenchmarkSpec, name: str, params: PlannerParams, rep: int, tasks) -> _Job:
    job = _Job(name, params, spec, rep, tasks)
    env, robot = spec.env, spec.robot
    if name in NEEDS_PREDICTION:
        job.extra["sampler"] = BiasedSampler(env, robot, spec.prediction, params.alpha, params.N, spec.seed)
    elif name == "llp-uniform":
        job.extra["sampler"] = BiasedSampler(env, robot, None, 0.0, params.N, spec.seed)
    if name == "guided-llp":
        job.extra["graph"] = build_region_graph(
            spec.prediction, env, robot, params.region_threshold, params.link_distance, seed=spec.seed
        )
    if name in ROADMAP_PLANNERS:
        build_seed = query_seed(spec.seed, BUILD_KEY, rep)
        if name == "prm":
            roadmap = prm_build(env, robot, UniformSampler(env, robot, params.N, build_seed),
                                spec.build_budget, params=params)
        else:
            sampler = job.extra["sampler"].reseeded(build_seed)
            roadmap = llrm_build(env, robot, sampler, spec.build_budget, params)
        job.roadmap = roadmap
        job.build_time = roadmap.build_time
        job.extra.pop("sampler", None)
    return job


def run_benchmark(spec: BenchmarkSpec) -> list[BenchmarkRecord]:
    """Run every planner on every task and repetition; records sorted by (planner, task, rep)."""
    spec.validate()
    tasks = spec.task_list()
    for start, goal in tasks:
        if not (ws.is_collision_free(spec.env, spec.robot, start) and ws.is_collision_free(spec.env, spec.robot, goal)):
            raise ConfigError("benchmark task with a start or goal in collision")
    jobs = []
    for name, overrides in spec.planners:
        params = spec.params_for(overrides)
        for rep in range(spec.repetitions):
            jobs.append(_prepare(spec, name, params, rep, tasks))
    if spec.jobs > 1:
        # one work item per (planner, rep, task) so the pool stays busy
        items = [(j, i, s, g) for j in jobs for i, (s, g) in enumerate(j.tasks)]
        with ProcessPoolExecutor(spec.jobs) as pool:
            records = list(pool.map(_solve_star, items, chunksize=4))
    else:
        records = [r for j in jobs for r in _run_job(j)]
    return sorted(records, key=lambda r: r.key)


def _solve_star(item):
    return _solve_one(*item)


# ----------------------------------------------------------------------
# CSV and curves
# ----------------------------------------------------------------------


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in records:
        w.writerow([r.planner, r.task_id, r.rep, r.seed, int(r.solved),
                    repr(float(r.solve_time_s)), r.nodes_expanded, repr(float(r.build_time_s))])
    return buf.getvalue()


def records_from_csv(text: str) -> list[BenchmarkRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_FIELDS:
        raise ValueError("not a benchmark CSV: header mismatch")
    out = []
    for row in rows[1:]:
        if not row:
            continue
        p, t, rep, seed, solved, st, nodes, bt = row
        out.append(BenchmarkRecord(p, int(t), int(rep), int(seed), solved == "1", float(st), int(nodes), float(bt)))
    return out


def write_csv(path, records) -> None:
    Path(path).write_text(records_to_csv(records))


def read_csv(path) -> list[BenchmarkRecord]:
    return records_from_csv(Path(path).read_text())


def default_time_grid(budget: float, points: int = 50, lo: float = 0.01) -> list[float]:
    """Log-spaced grid from ``lo`` seconds up to the budget."""
    if budget <= lo:
        return [float(budget)]
    return [float(t) for t in np.geomspace(lo, budget, points)]


def solved_fraction_curve(records, planner: str, time_grid, include_build: bool = False) -> list[tuple[float, float]]:
    """Fraction of this planner's (task, rep) records solved within each grid time."""
    grid = [float(t) for t in time_grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("time grid must be sorted ascending")
    mine = [r for r in records if r.planner == planner]
    if not mine:
        raise ValueError(f"no records for planner {planner!r}")
    times = np.sort([r.solve_time_s + (r.build_time_s if include_build else 0.0) for r in mine if r.solved])
    total = len(mine)
    return [(t, int(np.searchsorted(times, t, side="right")) / total) for t in grid]


def summarize(records, budget: float, time_grid=None) -> dict:
    grid = default_time_grid(budget) if time_grid is None else list(time_grid)
    out = {"time_grid": grid, "planners": {}}
    for name in sorted({r.planner for r in records}):
        mine = [r for r in records if r.planner == name]
        solved = sorted(r.solve_time_s for r in mine if r.solved)
        out["planners"][name] = {
            "records": len(mine),
            "solved": len(solved),
            "median_solve_time_s": float(np.median(solved)) if solved else None,
            "build_time_s": max(r.build_time_s for r in mine),
            "fraction": [f for _, f in solved_fraction_curve(records, name, grid)],
            "fraction_with_build": [f for _, f in solved_fraction_curve(records, name, grid, True)],
        }
    return out


def write_summary(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------------
# SVG
# ----------------------------------------------------------------------

SVG_SCALE = 40.0
HORIZONTAL = "#1f4fd8"
VERTICAL = "#1a9641"
CURVE_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _f(v: float) -> str:
    s = f"{v:.2f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _heading_class(center: float) -> str:
    # diagonal bins count as horizontal; the tolerance absorbs rounding in cos/sin
    return HORIZONTAL if abs(math.cos(center)) + 1e-12 >= abs(math.sin(center)) else VERTICAL


def render_svg(env: ws.Environment, overlays: dict | None = None) -> str:
    """Top-down SVG of a world with optional overlays.

    Recognised overlay keys: ``criticality`` (n_d x n_d scores, red heat),
    ``heading`` (n_d x n_d x p bin probabilities over [-pi, pi) and an
    optional ``heading_mask``; cells are blue when the dominant bin is
    nearer horizontal, green otherwise), ``plan`` (waypoints), ``start`` and
    ``goal`` (configurations).
    """
    ov = dict(overlays or {})
    s = SVG_SCALE
    W, H = env.width * s, env.height * s
    n = env.n_d
    cw, ch = W / n, H / n

    def px(x, y):
        return x * s, H - y * s

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(W)}" height="{_f(H)}" viewBox="0 0 {_f(W)} {_f(H)}">',
        f'<rect x="0" y="0" width="{_f(W)}" height="{_f(H)}" fill="white" stroke="black" stroke-width="1"/>',
    ]
    crit = ov.get("criticality")
    if crit is not None:
        crit = np.asarray(crit, dtype=float)
        if crit.shape != (n, n):
            raise ValueError(f"criticality overlay must be {n}x{n}")
        top = crit.max()
        out.append('<g id="criticality" fill="red">')
        if top > 0:
            for r, c in np.argwhere(crit > 0):
                x, y = px(env.x_edges[c], env.y_edges[r + 1])
                out.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(cw)}" height="{_f(ch)}" '
                           f'fill-opacity="{crit[r, c] / top:.3f}"/>')
        out.append("</g>")
    heading = ov.get("heading")
    if heading is not None:
        heading = np.asarray(heading, dtype=float)
        if heading.shape[:2] != (n, n):
            raise ValueError(f"heading overlay must be {n}x{n}xp")
        p = heading.shape[-1]
        centers = -math.pi + (np.arange(p) + 0.5) * 2 * math.pi / p
        mask = ov.get("heading_mask")
        mask = np.ones((n, n), bool) if mask is None else np.asarray(mask, bool)
        out.append('<g id="heading" fill-opacity="0.5">')
        for r, c in np.argwhere(mask):
            color = _heading_class(centers[int(np.argmax(heading[r, c]))])
            x, y = px(env.x_edges[c], env.y_edges[r + 1])
            out.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(cw)}" height="{_f(ch)}" fill="{color}"/>')
        out.append("</g>")
    out.append('<g id="obstacles" fill="black">')
    for xmin, ymin, xmax, ymax in env.obstacles:
        x, y = px(xmin, ymax)
        out.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f((xmax - xmin) * s)}" height="{_f((ymax - ymin) * s)}"/>')
    out.append("</g>")
    plan = ov.get("plan")
    if plan is not None and len(plan):
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in (px(q[0], q[1]) for q in plan))
        out.append(f'<polyline id="plan" points="{pts}" fill="none" stroke="#ff8c00" stroke-width="2"/>')
    for key, color in (("start", "#00a0ff"), ("goal", "#ff00a0")):
        q = ov.get(key)
        if q is not None:
            x, y = px(q[0], q[1])
            out.append(f'<circle id="{key}" cx="{_f(x)}" cy="{_f(y)}" r="5" fill="{color}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def curves_svg(curves: dict[str, list[tuple[float, float]]], width: int = 480, height: int = 320) -> str:
    """Solved fraction (y) against log time (x), one polyline per planner."""
    m = 40
    times = [t for pts in curves.values() for t, _ in pts if t > 0]
    lo, hi = (min(times), max(times)) if times else (0.01, 1.0)
    if hi <= lo:
        hi = lo * 10
    span = math.log10(hi) - math.log10(lo)

    def px(t, f):
        x = m + (math.log10(max(t, lo)) - math.log10(lo)) / span * (width - 2 * m)
        return x, height - m - f * (height - 2 * m)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 8}" font-size="12" text-anchor="middle">time [s], log scale</text>',
        f'<text x="12" y="{m - 12}" font-size="12">solved fraction</text>',
    ]
    for i, name in enumerate(sorted(curves)):
        color = CURVE_COLORS[i % len(CURVE_COLORS)]
        pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in (px(t, f) for t, f in curves[name]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - m + 4 - 120}" y="{m + 14 * (i + 1)}" font-size="11" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
