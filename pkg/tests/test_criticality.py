import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from critmp import criticality as crit
from critmp import workspace as ws
from critmp.planners import MotionPlan

from conftest import segment_plan


def naive_smooth(field, blocked=None):
    n, m = field.shape
    k = [[1, 2, 1], [2, 4, 2], [1, 2, 1]]
    out = np.zeros_like(field, dtype=float)
    for r in range(n):
        for c in range(m):
            acc = 0.0
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < n and 0 <= cc < m:
                        acc += k[dr + 1][dc + 1] / 16.0 * field[rr, cc]
            out[r, c] = acc
    if blocked is not None:
        out[blocked] = 0.0
    return out


def lattice_walk(env, rng, steps=6):
    """Waypoints at cell centres joined by axis-aligned moves, plus the exact cells crossed."""
    n = env.n_d
    r, c = (int(v) for v in rng.integers(0, n, 2))
    cells = {(r, c)}
    pts = [ws.cell_center(env, r, c)]
    for _ in range(steps):
        if rng.random() < 0.5:
            c2 = int(rng.integers(0, n))
            cells |= {(r, j) for j in range(min(c, c2), max(c, c2) + 1)}
            c = c2
        else:
            r2 = int(rng.integers(0, n))
            cells |= {(i, c) for i in range(min(r, r2), max(r, r2) + 1)}
            r = r2
        pts.append(ws.cell_center(env, r, c))
    theta = float(rng.uniform(-math.pi, math.pi))
    return MotionPlan(segment_plan(pts, theta), 0.0, len(pts)), cells


def rational_criticality(env, incidence, plan_count):
    """f and mu as exact fractions; blocked cells (found by brute force) score zero."""
    n = env.n_d
    blocked = np.zeros((n, n), bool)
    for r in range(n):
        for c in range(n):
            x0, y0 = env.x_edges[c], env.y_edges[r]
            # cell edges align with obstacle edges in these worlds
            blocked[r, c] = any(o[0] <= x0 and x0 + 1 <= o[2] and o[1] <= y0 and y0 + 1 <= o[3]
                                for o in env.obstacles)
    free = int((~blocked).sum())
    f, mu = {}, {}
    for r in range(n):
        for c in range(n):
            count = sum((r, c) in cells for cells in incidence)
            f[r, c] = Fraction(count, plan_count)
            mu[r, c] = Fraction(0) if blocked[r, c] else f[r, c] / Fraction(1, free)
    return f, mu


def aligned_world(rng, n=8):
    rects = []
    for _ in range(int(rng.integers(0, 4))):
        x0, y0 = (int(v) for v in rng.integers(0, n - 1, 2))
        w, h = (int(v) for v in rng.integers(1, 3, 2))
        rects.append((x0, y0, min(n, x0 + w), min(n, y0 + h)))
    return ws.Environment(float(n), float(n), n, tuple(rects))


@pytest.mark.parametrize("seed", range(5))
def test_criticality_matches_rational_oracle(seed):
    rng = np.random.default_rng(seed)
    env = aligned_world(rng)
    robot = ws.se2_rect(0.5, 0.1)
    walks = [lattice_walk(env, rng) for _ in range(20)]
    plans = [p for p, _ in walks]
    cmap = crit.compute_criticality(env, robot, plans)
    f, mu = rational_criticality(env, [cells for _, cells in walks], len(plans))
    for (r, c), fr in f.items():
        assert cmap.fraction(r, c) == fr
        assert cmap.scores[r, c] == float(mu[r, c])


def test_two_by_two_example():
    env = ws.Environment(2, 2, 2)
    robot = ws.se2_rect(0.2, 0.1)
    through = segment_plan([(0.5, 0.5)])
    other = segment_plan([(1.5, 1.5)])
    cmap = crit.compute_criticality(env, robot, [through, through, other, other])
    assert cmap.scores[0, 0] == 2.0
    assert cmap.scores[0, 1] == 0.0


def test_cell_on_every_plan_scores_free_count():
    env = ws.Environment(4, 4, 4, ((0, 0, 1, 1),))
    robot = ws.se2_rect(0.2, 0.1)
    plans = [segment_plan([(2.5, 2.5), (3.5, 2.5)]), segment_plan([(2.5, 2.5)])]
    cmap = crit.compute_criticality(env, robot, plans)
    assert cmap.free_cells == 15
    assert cmap.scores[2, 2] == 15.0


def test_empty_plan_list_rejected():
    with pytest.raises(ValueError):
        crit.compute_criticality(ws.empty_world(), ws.se2_rect(), [])


def test_plan_cells_single_waypoint():
    env = ws.Environment(4, 4, 4)
    assert crit.plan_cells(env, ws.se2_rect(), segment_plan([(2.5, 1.5)])) == {(1, 2)}


def test_plan_cells_horizontal_segment():
    env = ws.Environment(4, 4, 4)
    cells = crit.plan_cells(env, ws.se2_rect(), segment_plan([(0.5, 2.5), (2.5, 2.5)]))
    assert cells == {(2, 0), (2, 1), (2, 2)}


def _dense_raster(env, a, b, samples=10_000):
    t = np.linspace(0, 1, samples)[:, None]
    rows, cols = ws.cells_of(env, np.asarray(a) + t * (np.asarray(b) - np.asarray(a)))
    return set(zip(rows.tolist(), cols.tolist()))


def test_plan_cells_diagonal_matches_dense_raster():
    env = ws.Environment(4, 4, 4)
    got = crit.plan_cells(env, ws.se2_rect(), segment_plan([(0.0, 0.0), (4.0, 4.0)]))
    assert got == _dense_raster(env, (0, 0), (4, 4)) == {(i, i) for i in range(4)}


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 7.95), st.floats(0.05, 7.95), st.floats(0.05, 7.95), st.floats(0.05, 7.95))
def test_plan_cells_within_dense_raster(x0, y0, x1, y1):
    # sparse samples can skip a corner clip but never invent a cell
    env = ws.Environment(8, 8, 8)
    got = crit.plan_cells(env, ws.se2_rect(), segment_plan([(x0, y0), (x1, y1)]))
    dense = _dense_raster(env, (x0, y0), (x1, y1), 20_000)
    assert got <= dense
    assert {ws.cell_of(env, (x0, y0)), ws.cell_of(env, (x1, y1))} <= got


# ---------------------------------------------------------------- properties


def test_duplicating_corpus_leaves_map_unchanged():
    rng = np.random.default_rng(1)
    env = aligned_world(rng)
    robot = ws.se2_rect(0.5, 0.1)
    plans = [lattice_walk(env, rng)[0] for _ in range(7)]
    a = crit.compute_criticality(env, robot, plans)
    b = crit.compute_criticality(env, robot, plans + plans)
    assert np.array_equal(a.scores, b.scores)


def test_adding_plan_through_cell_never_lowers_it():
    rng = np.random.default_rng(2)
    env = ws.Environment(8, 8, 8)
    robot = ws.se2_rect(0.5, 0.1)
    plans = [lattice_walk(env, rng)[0] for _ in range(9)]
    extra, cells = lattice_walk(env, rng)
    a = crit.compute_criticality(env, robot, plans)
    b = crit.compute_criticality(env, robot, plans + [extra])
    for rc in cells:
        assert b.scores[rc] >= a.scores[rc]


# ---------------------------------------------------------------- smoothing


def _map(scores, blocked=None):
    return crit.CriticalityMap(scores, np.zeros(scores.shape, int), 1, scores.size, blocked=blocked)


def test_smooth_impulse():
    s = np.zeros((5, 5))
    s[2, 2] = 1.0
    out = crit.gaussian_smooth(_map(s)).scores
    assert out[2, 2] == 0.25
    assert out[1, 2] == out[3, 2] == out[2, 1] == out[2, 3] == 0.125
    assert out[1, 1] == out[1, 3] == out[3, 1] == out[3, 3] == 0.0625
    assert out.sum() == 1.0


def test_smooth_constant_interior():
    out = crit.gaussian_smooth(_map(np.full((6, 6), 3.0))).scores
    assert np.all(out[1:-1, 1:-1] == 3.0)
    assert out[0, 0] == 3.0 * 9 / 16


@pytest.mark.parametrize("seed", range(10))
def test_smooth_matches_naive_loop(seed):
    rng = np.random.default_rng(seed)
    field = rng.uniform(0, 5, (8, 8))
    blocked = rng.random((8, 8)) < 0.15
    got = crit.gaussian_smooth(_map(field, blocked)).scores
    assert np.max(np.abs(got - naive_smooth(field, blocked))) < 1e-12
    assert np.all(got[blocked] == 0)


def test_smooth_conserves_interior_mass():
    s = np.zeros((10, 10))
    s[3:7, 3:7] = np.arange(16).reshape(4, 4)
    assert crit.gaussian_smooth(_map(s)).scores.sum() == pytest.approx(s.sum(), abs=1e-12)


# ---------------------------------------------------------------- histograms


def test_histogram_constant_heading_one_hot():
    env = ws.Environment(4, 4, 4)
    robot = ws.se2_rect()
    plans = [segment_plan([(0.5, 0.5), (3.5, 0.5), (3.5, 3.5)], 0.0)]
    h = crit.compute_joint_histograms(env, robot, plans, p=10)
    want = np.zeros(10)
    want[5] = 1.0
    for r, c in np.argwhere(h.visited):
        assert np.array_equal(h.probs[0, r, c], want)
    assert not h.visited[3, 0]
    assert np.allclose(h.probs[0, 3, 0], 0.1)


def test_bin_left_edge():
    assert crit.bin_index(-math.pi, -math.pi, math.pi, 10) == 0
    assert crit.bin_index(math.pi, -math.pi, math.pi, 10) == 9


def test_histogram_two_plans_two_bins():
    env = ws.Environment(4, 4, 4)
    plans = [segment_plan([(1.5, 1.5)], 0.0), segment_plan([(1.5, 1.5)], math.pi / 2)]
    h = crit.compute_joint_histograms(env, ws.se2_rect(), plans, p=4)
    assert np.array_equal(h.probs[0, 1, 1], [0, 0, 0.5, 0.5])
    assert np.allclose(h.edges[0], [-math.pi, -math.pi / 2, 0, math.pi / 2, math.pi])


def test_histogram_hinged_normalised():
    rng = np.random.default_rng(4)
    env = ws.Environment(8, 8, 8)
    robot = ws.hinged()
    plans = []
    for _ in range(5):
        pts = rng.uniform(0.5, 7.5, (4, 2))
        angles = np.column_stack([rng.uniform(-3, 3, 4), rng.uniform(-1.5, 1.5, 4)])
        plans.append(list(np.column_stack([pts, angles])))
    h = crit.compute_joint_histograms(env, robot, plans, p=6)
    sums = h.probs.sum(axis=-1)
    assert np.all(np.abs(sums[:, h.visited] - 1) <= 1e-9)
    assert np.all((h.probs >= 0) & (h.probs <= 1))
    assert h.joint_names == ("theta", "omega")


def test_histogram_needs_two_bins():
    with pytest.raises(ValueError):
        crit.compute_joint_histograms(ws.empty_world(), ws.se2_rect(), [], p=1)


# ---------------------------------------------------------------- label files


def test_label_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    label = rng.random((6, 6, 21)).astype(np.float32)
    crit.write_label(tmp_path / "label.bin", label, 10, 2, {"n_d": 6})
    back, p, k = crit.read_label(tmp_path / "label.bin")
    assert (p, k) == (10, 2)
    assert back.tobytes() == label.tobytes()
    raw = (tmp_path / "label.bin").read_bytes()
    assert raw[:4] == b"CRLB"
    # channel-major: the first plane is the criticality channel
    first = np.frombuffer(raw, "<f4", count=36, offset=16).reshape(6, 6)
    assert np.array_equal(first, label[..., 0])
    assert (tmp_path / "label.json").exists()


def test_label_bad_magic(tmp_path):
    crit.write_tensor(tmp_path / "x.bin", np.zeros((2, 2, 3)), crit.INPUT_MAGIC, 3, 0)
    with pytest.raises(ValueError):
        crit.read_label(tmp_path / "x.bin")
