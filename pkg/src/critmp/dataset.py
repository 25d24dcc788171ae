"""
Demonstration corpora and the learning tensors derived from them.

Input tensors are ``n_d x n_d x (1 + DOF)``: occupancy, then one constant
plane per goal DOF normalised to [0, 1]. Label tensors are
``n_d x n_d x (1 + k * p)``: max-normalised smoothed criticality, then ``p``
bin probabilities for each of the ``k`` non-base joints.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from critmp import criticality as crit
from critmp import workspace as ws
from critmp.planners import MotionPlan, MotionQuery, PlannerParams, birrt_plan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskSet:
    env: ws.Environment
    robot: ws.RobotModel
    goals: np.ndarray
    starts: np.ndarray
    seed: int

    @property
    def starts_per_goal(self) -> int:
        return self.starts.shape[1]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "goals": self.goals.tolist(),
            "starts": self.starts.tolist(),
        }


def query_seed(base: int, *keys: int) -> int:
    """Stable 63-bit seed for a sub-query."""
    return int(np.random.SeedSequence([base, *keys]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def generate_tasks(env, robot, n_goals: int = 10, starts_per_goal: int = 10, seed: int = 0) -> TaskSet:
    """Random free goals, each with its own random free starts."""
    rng = np.random.default_rng(seed)
    goals, _ = ws.sample_free(env, robot, rng, n_goals)
    starts, _ = ws.sample_free(env, robot, rng, n_goals * starts_per_goal)
    return TaskSet(env, robot, goals, starts.reshape(n_goals, starts_per_goal, robot.dof), seed)


class Demonstrations(dict):
    """``{goal index: [MotionPlan, ...]}`` plus per-goal failure counts."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.failures: dict[int, int] = {}


def _solve(args):
    planner, query, params = args
    return planner(query, params)


def collect_demonstrations(
    tasks: TaskSet,
    planner=birrt_plan,
    per_query_budget: float = 5.0,
    params: PlannerParams | None = None,
    jobs: int = 1,
) -> Demonstrations:
    """Solve every (start, goal) sub-task; unsolved ones are dropped and counted."""
    params = params or PlannerParams()
    work = []
    for g, goal in enumerate(tasks.goals):
        for s, start in enumerate(tasks.starts[g]):
            q = MotionQuery(tasks.env, tasks.robot, start, goal, per_query_budget, query_seed(tasks.seed, g, s))
            work.append((planner, q, params))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_solve, work))
    else:
        results = [_solve(w) for w in work]
    demos = Demonstrations()
    per = tasks.starts_per_goal
    for g in range(len(tasks.goals)):
        chunk = results[g * per:(g + 1) * per]
        demos[g] = [p for p in chunk if p is not None]
        demos.failures[g] = sum(p is None for p in chunk)
        if not demos[g]:
            log.warning("goal %d: no demonstration solved", g)
    return demos


# ----------------------------------------------------------------------
# Tensors
# ----------------------------------------------------------------------


def normalize_goal(env, robot, goal) -> np.ndarray:
    goal = np.asarray(goal, dtype=float)
    out = np.empty(robot.dof)
    out[0] = goal[0] / env.width
    out[1] = goal[1] / env.height
    for j, (lo, hi) in enumerate(robot.joint_limits):
        b = robot.base_dof_count + j
        out[b] = (goal[b] - lo) / (hi - lo)
    return out


def encode_input(env, robot, goal) -> np.ndarray:
    n = env.n_d
    t = np.empty((n, n, 1 + robot.dof), dtype=np.float32)
    t[..., 0] = env.occupancy
    t[..., 1:] = normalize_goal(env, robot, goal).astype(np.float32)
    return t


def encode_label(cmap: crit.CriticalityMap, hists: crit.JointHistograms) -> np.ndarray:
    n = cmap.n_d
    if hists.probs.shape[1:3] != (n, n):
        raise ValueError("criticality map and joint histograms disagree on n_d")
    k, p = hists.joint_count, hists.p
    t = np.empty((n, n, 1 + k * p), dtype=np.float32)
    top = cmap.scores.max()
    t[..., 0] = cmap.scores / top if top > 0 else 0.0
    for j in range(k):
        t[..., 1 + j * p: 1 + (j + 1) * p] = hists.probs[j]
    return t


def build_label(env, robot, plans, p: int = 10) -> tuple[np.ndarray, dict]:
    """Criticality, smoothing and joint histograms for one goal's plans, plus sidecar metadata."""
    raw = crit.compute_criticality(env, robot, plans)
    smooth = crit.gaussian_smooth(raw)
    hists = crit.compute_joint_histograms(env, robot, plans, p)
    meta = {
        "n_d": env.n_d,
        "p": p,
        "joint_count": robot.joint_count,
        "joint_names": list(robot.dof_names[robot.base_dof_count:]),
        "plan_count": raw.plan_count,
        "free_cells": raw.free_cells,
        "reference": raw.reference,
        "mu_max_raw": float(raw.scores.max()),
        "mu_max_smoothed": float(smooth.scores.max()),
        "visited_cells": int(hists.visited.sum()),
    }
    return encode_label(smooth, hists), meta


# ----------------------------------------------------------------------
# Rotation augmentation
# ----------------------------------------------------------------------


def bin_shift(p: int, quarter_turns: int) -> tuple[int, bool]:
    """Cyclic bin shift for a world rotation; ``exact`` is False when rounded."""
    raw = quarter_turns * p / 4
    return round(raw) % p, float(raw).is_integer()


def _rotates_with_world(robot, j: int) -> bool:
    # only the base link's absolute heading turns with the world
    lo, hi = robot.joint_limits[j]
    return j == 0 and robot.joint_wraps[0] and math.isclose(hi - lo, 2 * math.pi)


def rotate_pair(inp: np.ndarray, label: np.ndarray, robot, quarter_turns: int) -> tuple[np.ndarray, np.ndarray]:
    """Rotate an (input, label) pair counter-clockwise in the world frame."""
    t = quarter_turns % 4
    if inp.shape[0] != inp.shape[1] or label.shape[:2] != inp.shape[:2]:
        raise ValueError("augmentation needs square tensors of equal size")
    r_in = np.rot90(inp, k=-t, axes=(0, 1)).copy()
    r_lab = np.rot90(label, k=-t, axes=(0, 1)).copy()
    # goal planes: (x, y) -> (1 - y, x) per quarter turn, heading + 1/4 turn
    x, y = inp[0, 0, 1], inp[0, 0, 2]
    for _ in range(t):
        x, y = np.float32(1.0) - y, x
    r_in[..., 1] = x
    r_in[..., 2] = y
    k = robot.joint_count
    p = (label.shape[-1] - 1) // k if k else 0
    for j in range(k):
        if _rotates_with_world(robot, j):
            b = 1 + robot.base_dof_count + j
            r_in[..., b] = np.float32(math.fmod(float(inp[0, 0, b]) + t / 4, 1.0))
            shift, _ = bin_shift(p, t)
            sl = slice(1 + j * p, 1 + (j + 1) * p)
            r_lab[..., sl] = np.roll(r_lab[..., sl], shift, axis=-1)
    return r_in, r_lab


def augment_rotations(inp: np.ndarray, label: np.ndarray, robot) -> list[tuple[np.ndarray, np.ndarray]]:
    """Identity plus 90, 180 and 270 degree rotations."""
    return [rotate_pair(inp, label, robot, t) for t in range(4)]


# ----------------------------------------------------------------------
# On-disk dataset
# ----------------------------------------------------------------------


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_dataset(out_dir, tasks: TaskSet, demos: Demonstrations, p: int = 10, augment: bool = False) -> list[Path]:
    """Lay out ``env.json`` and one ``goal_XXX`` directory per goal with at least one plan."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env, robot = tasks.env, tasks.robot
    ws.save_fixture(env, robot, out / "env.json")
    written = []
    for g, goal in enumerate(tasks.goals):
        plans = demos.get(g, [])
        stats = {
            "goal": [float(v) for v in goal],
            "solved": len(plans),
            "failed": demos.failures.get(g, 0),
            "seed": tasks.seed,
        }
        d = out / f"goal_{g:03d}"
        d.mkdir(exist_ok=True)
        write_json(d / "stats.json", stats)
        write_json(d / "plans.json", [pl.to_dict() for pl in plans])
        inp = encode_input(env, robot, goal)
        crit.write_tensor(d / "input.bin", inp, crit.INPUT_MAGIC, inp.shape[-1], 0)
        if not plans:
            continue
        label, meta = build_label(env, robot, plans, p)
        crit.write_label(d / "label.bin", label, p, robot.joint_count, meta)
        written.append(d)
        if augment:
            for t, (ri, rl) in enumerate(augment_rotations(inp, label, robot)[1:], start=1):
                rd = out / f"goal_{g:03d}_rot{90 * t}"
                rd.mkdir(exist_ok=True)
                shift, exact = bin_shift(p, t)
                crit.write_tensor(rd / "input.bin", ri, crit.INPUT_MAGIC, ri.shape[-1], 0)
                crit.write_label(rd / "label.bin", rl, p, robot.joint_count,
                                 {**meta, "rotation_deg": 90 * t, "heading_bin_shift": shift,
                                  "heading_shift_exact": exact})
                written.append(rd)
    return written


def load_plans(path) -> list[MotionPlan]:
    return [MotionPlan.from_dict(d) for d in json.loads(Path(path).read_text())]
