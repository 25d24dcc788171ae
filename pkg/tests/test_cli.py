import json

import numpy as np
import pytest

from critmp import cli
from critmp import workspace as ws
from critmp.planners import MotionPlan, validate_plan


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def narrow(tmp_path):
    path = tmp_path / "env.json"
    assert cli.main(["gen-env", "--kind", "narrow", "--n-d", "16", "--out", str(path)]) == 0
    return path


@pytest.fixture
def open_env(tmp_path):
    path = tmp_path / "open.json"
    assert cli.main(["gen-env", "--kind", "empty", "--n-d", "16", "--out", str(path)]) == 0
    return path


def test_gen_env_round_trip(narrow):
    env, robot = ws.load_fixture(narrow)
    assert env.n_d == 16 and robot.joint_count == 1 and len(env.obstacles) == 2


@pytest.mark.parametrize("robot, joints", [("se2", 1), ("hinged", 2), ("arm", 3)])
def test_gen_env_robots(tmp_path, robot, joints):
    path = tmp_path / "r.json"
    assert cli.main(["gen-env", "--kind", "empty", "--robot", robot, "--out", str(path)]) == 0
    assert ws.load_fixture(path)[1].joint_count == joints


def test_plan_smoke(open_env, tmp_path):
    out = tmp_path / "plan.json"
    rc = cli.main(["plan", "--env", str(open_env), "--start", "1,1,0", "--goal", "9,9,1",
                   "--budget", "2", "--require-solution", "--out", str(out)])
    assert rc == 0
    env, robot = ws.load_fixture(open_env)
    plan = MotionPlan.from_dict(json.loads(out.read_text()))
    assert validate_plan(env, robot, plan)
    assert np.allclose(plan.waypoints[0], [1, 1, 0]) and np.allclose(plan.waypoints[-1], [9, 9, 1])


def test_plan_unsolved_exit_codes(narrow):
    args = ["plan", "--env", str(narrow), "--start", "1,1,0", "--goal", "9,9,0", "--budget", "0"]
    assert cli.main(args + ["--require-solution"]) == 1
    assert cli.main(args) == 0


def test_plan_colliding_start_rejected(narrow):
    assert cli.main(["plan", "--env", str(narrow), "--start", "5,1,0", "--goal", "9,9,0"]) == 2


def test_llp_needs_label(open_env):
    assert cli.main(["plan", "--env", str(open_env), "--planner", "llp", "--start", "1,1,0",
                     "--goal", "9,9,0"]) == 2


@pytest.mark.parametrize("argv", [["bogus"], [], ["plan", "--env"], ["gen-env", "--kind", "moon", "--out", "x"]])
def test_usage_errors(argv):
    assert cli.main(argv) == 2


@pytest.mark.parametrize("command", sorted(cli.COMMANDS))
def test_help_lists_defaults(command, capsys):
    assert cli.main([command, "--help"]) == 0
    text = capsys.readouterr().out
    assert "--seed" in text and "--clock" in text and "(default: 0)" in text


def test_config_merge_flags_win(tmp_path, open_env):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"env": str(open_env), "start": [1, 1, 0], "goal": "9,9,0",
                               "budget": 3.0, "seed": 7, "step": 0.1}))
    args = cli.parse(["plan", "--config", str(cfg), "--seed", "9"])
    assert args.seed == 9 and args.budget == 3.0 and args.step == 0.1
    assert np.allclose(args.start, [1, 1, 0]) and np.allclose(args.goal, [9, 9, 0])
    assert cli.main(["plan", "--config", str(cfg), "--require-solution"]) == 0


def test_config_unknown_key(tmp_path, open_env):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"env": str(open_env), "warp": 9}))
    assert cli.main(["plan", "--config", str(cfg), "--start", "1,1,0", "--goal", "2,2,0"]) == 2


def test_gen_data_deterministic(tmp_path, open_env):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["gen-data", "--env", str(open_env), "--goals", "2", "--starts", "2",
                         "--budget", "1", "--p", "4", "--augment", "--out", str(out)]) == 0
        outs.append(tree_bytes(out))
    assert outs[0] == outs[1]
    assert "tasks.json" in outs[0] and sum(k.endswith("label.bin") for k in outs[0]) == 8


def test_criticality_then_render(tmp_path, open_env):
    plan_path = tmp_path / "plan.json"
    assert cli.main(["plan", "--env", str(open_env), "--start", "1,5,0", "--goal", "9,5,0",
                     "--out", str(plan_path), "--require-solution"]) == 0
    plans = tmp_path / "plans.json"
    plans.write_text(json.dumps([json.loads(plan_path.read_text())]))
    label = tmp_path / "label.bin"
    assert cli.main(["criticality", "--env", str(open_env), "--plans", str(plans), "--p", "4",
                     "--out", str(label)]) == 0
    svg = tmp_path / "r.svg"
    assert cli.main(["render", "--env", str(open_env), "--label", str(label), "--plan", str(plan_path),
                     "--out", str(svg)]) == 0
    doc = svg.read_text()
    assert '<polyline id="plan"' in doc and "fill-opacity" in doc


def test_bench_outputs(tmp_path, open_env):
    out = tmp_path / "b"
    assert cli.main(["bench", "--env", str(open_env), "--planners", "birrt,rrt", "--tasks", "3",
                     "--budget", "0.5", "--out", str(out)]) == 0
    assert (out / "records.csv").read_text().count("\n") == 7
    assert set(json.loads((out / "summary.json").read_text())["planners"]) == {"birrt", "rrt"}
    assert (out / "curves.svg").read_text().startswith("<?xml")
