"""
``critmp`` command line: environments, datasets, labels, planning, benchmarks, rendering.

Exit codes: 0 success, 1 domain failure (for example no plan with
``--require-solution``), 2 usage or configuration error. Progress goes to
stderr; machine outputs go to the files named by the flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from critmp import bench
from critmp import criticality as crit
from critmp import workspace as ws
from critmp.dataset import build_label, collect_demonstrations, generate_tasks, load_plans, write_dataset, write_json
from critmp.errors import ConfigError, EnvironmentInfeasibleError, InvalidQueryError
from critmp.llp import BiasedSampler, build_region_graph, guided_llp_plan, llp_plan, llrm_build
from critmp.planners import (
    MotionQuery,
    PlannerParams,
    UniformSampler,
    birrt_plan,
    prm_build,
    prm_query,
    rrt_plan,
    validate_plan,
)

log = logging.getLogger("critmp")

ROBOTS = ("se2", "hinged", "arm")
WORLDS = ("empty", "narrow", "random")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option defaults; explicit flags win")
    p.add_argument("--seed", type=int, default=0, help="base random seed")
    p.add_argument("--clock", choices=("work", "wall"), default="work",
                   help="budget clock: 'work' counts collision checks and is reproducible, 'wall' is real time")
    p.add_argument("--log-level", default="INFO", help="diagnostic verbosity on stderr")


def _add_planner_params(p: argparse.ArgumentParser) -> None:
    d = PlannerParams()
    g = p.add_argument_group("planner parameters")
    g.add_argument("--step", type=float, default=d.step, help="steer collision-check resolution (m)")
    g.add_argument("--extend-factor", type=float, default=d.extend_factor, help="tree extend step in steer steps")
    g.add_argument("--goal-bias", type=float, default=d.goal_bias, help="RRT goal sampling probability")
    g.add_argument("--k", type=int, default=d.k, help="roadmap nearest neighbours")
    g.add_argument("--link-radius", type=float, default=d.link_radius,
                   help="LLP tree link radius (m); unset means 2 x extend step")
    g.add_argument("--N", type=int, default=d.N, dest="N", help="samples per batch")
    g.add_argument("--alpha", type=float, default=d.alpha, help="biased share of each batch")
    g.add_argument("--region-threshold", type=float, default=d.region_threshold,
                   help="Guided-LLP critical cell threshold relative to the max score")
    g.add_argument("--link-distance", type=float, default=d.link_distance,
                   help="Guided-LLP region link distance (m)")


def _params(args) -> PlannerParams:
    return PlannerParams(args.step, args.extend_factor, args.goal_bias, args.k, args.link_radius,
                         args.N, args.alpha, args.region_threshold, args.link_distance, args.clock)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="critmp", description=__doc__, formatter_class=_Formatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    subs = {}

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=_Formatter)
        _add_common(p)
        subs[name] = p
        return p

    p = add("gen-env", "write an environment file (world plus robot)")
    p.add_argument("--kind", choices=WORLDS, default="narrow", help="world layout")
    p.add_argument("--size", type=float, default=10.0, help="world side length (m)")
    p.add_argument("--n-d", type=int, default=64, help="label grid resolution")
    p.add_argument("--obstacles", type=int, default=8, help="obstacle count for random worlds")
    p.add_argument("--robot", choices=ROBOTS, default="se2", help="robot model")
    p.add_argument("--link-length", type=float, default=0.8, help="length of every link (m)")
    p.add_argument("--link-width", type=float, default=0.2, help="width of every link (m)")
    p.add_argument("--links", type=int, default=3, help="link count for planar arms")
    p.add_argument("--out", required=True, help="output JSON path")

    p = add("gen-data", "solve random sub-tasks and write a learning dataset")
    p.add_argument("--env", required=True, help="environment file")
    p.add_argument("--goals", type=int, default=10, help="goals")
    p.add_argument("--starts", type=int, default=10, help="starts per goal")
    p.add_argument("--planner", choices=("birrt", "rrt"), default="birrt", help="demonstration planner")
    p.add_argument("--budget", type=float, default=5.0, help="seconds per sub-task")
    p.add_argument("--p", type=int, default=10, help="joint histogram bins")
    p.add_argument("--augment", action="store_true", help="also write 90/180/270 degree rotations")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", required=True, help="dataset directory")
    _add_planner_params(p)

    p = add("criticality", "compute a label tensor from a plan file")
    p.add_argument("--env", required=True, help="environment file")
    p.add_argument("--plans", required=True, help="plans.json with one goal's plans")
    p.add_argument("--p", type=int, default=10, help="joint histogram bins")
    p.add_argument("--out", required=True, help="label.bin path; label.json is written beside it")

    p = add("plan", "solve one motion planning query")
    p.add_argument("--env", required=True, help="environment file")
    p.add_argument("--start", type=_floats, required=True, help="start configuration, comma separated")
    p.add_argument("--goal", type=_floats, required=True, help="goal configuration, comma separated")
    p.add_argument("--planner", choices=bench.PLANNERS, default="birrt", help="planner")
    p.add_argument("--budget", type=float, default=5.0, help="query budget (s)")
    p.add_argument("--build-budget", type=float, default=1.0, help="roadmap build budget (s)")
    p.add_argument("--label", help="label.bin used as the criticality prediction")
    p.add_argument("--require-solution", action="store_true", help="exit 1 when no plan is found")
    p.add_argument("--out", help="plan JSON path")
    _add_planner_params(p)

    p = add("bench", "benchmark planners and write records, curves and plots")
    p.add_argument("--env", required=True, help="environment file")
    p.add_argument("--planners", default="birrt,llp", help="comma separated: " + ",".join(bench.PLANNERS))
    p.add_argument("--tasks", type=int, default=100, help="task count")
    p.add_argument("--budget", type=float, default=10.0, help="per-task budget (s)")
    p.add_argument("--reps", type=int, default=1, help="repetitions per task")
    p.add_argument("--build-budget", type=float, default=1.0, help="roadmap build budget (s)")
    p.add_argument("--goal", type=_floats, help="fixed goal for every task; random if unset")
    p.add_argument("--label", help="label.bin used as the criticality prediction")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out", required=True, help="output directory")
    _add_planner_params(p)

    p = add("render", "draw a world with optional label and plan overlays as SVG")
    p.add_argument("--env", required=True, help="environment file")
    p.add_argument("--label", help="label.bin to overlay")
    p.add_argument("--plan", help="plan JSON to overlay")
    p.add_argument("--out", required=True, help="SVG path")
    return parser, subs


def parse(argv) -> argparse.Namespace:
    parser, subs = build_parser()
    argv = list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    early, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    if early.config and command in subs:
        _apply_config(subs[command], early.config)
    return parser.parse_args(argv)


def _apply_config(sp: argparse.ArgumentParser, path: str) -> None:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        sp.error(f"cannot read config: {exc}")
    if not isinstance(cfg, dict):
        sp.error("config must be a JSON object")
    known = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            sp.error(f"unknown config key {key!r}")
        action = known[dest]
        if action.type is _floats and not isinstance(value, str):
            value = np.asarray(value, dtype=float)
        elif action.type is not None and isinstance(value, str):
            value = action.type(value)
        defaults[dest] = value
        # a config value satisfies a required flag
        action.required = False
    sp.set_defaults(**defaults)


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------


def _robot(args) -> ws.RobotModel:
    link = (args.link_length, args.link_width)
    if args.robot == "se2":
        return ws.se2_rect(*link)
    if args.robot == "hinged":
        return ws.hinged(link, link)
    return ws.planar_arm([link] * args.links)


def cmd_gen_env(args) -> int:
    if args.kind == "empty":
        env = ws.empty_world(args.size, args.n_d)
    elif args.kind == "narrow":
        env = ws.narrow_passage(args.size, args.n_d)
    else:
        env = ws.random_world(np.random.default_rng(args.seed), args.size, args.n_d, args.obstacles)
    ws.save_fixture(env, _robot(args), args.out)
    log.info("wrote %s with %d obstacles", args.out, len(env.obstacles))
    return 0


def cmd_gen_data(args) -> int:
    env, robot = ws.load_fixture(args.env)
    tasks = generate_tasks(env, robot, args.goals, args.starts, args.seed)
    planner = birrt_plan if args.planner == "birrt" else rrt_plan
    demos = collect_demonstrations(tasks, planner, args.budget, _params(args), args.jobs)
    written = write_dataset(args.out, tasks, demos, args.p, args.augment)
    write_json(Path(args.out) / "tasks.json", tasks.to_dict())
    solved = sum(len(v) for v in demos.values())
    log.info("solved %d of %d sub-tasks; %d label directories", solved, args.goals * args.starts, len(written))
    return 0


def cmd_criticality(args) -> int:
    env, robot = ws.load_fixture(args.env)
    plans = load_plans(args.plans)
    if not plans:
        raise ConfigError(f"{args.plans} holds no plans")
    label, meta = build_label(env, robot, plans, args.p)
    crit.write_label(args.out, label, args.p, robot.joint_count, meta)
    log.info("label from %d plans written to %s", len(plans), args.out)
    return 0


def _prediction(args, env):
    if not args.label:
        return None
    label, _, _ = crit.read_label(args.label)
    if label.shape[0] != env.n_d:
        raise ConfigError(f"label grid {label.shape[0]} does not match environment n_d={env.n_d}")
    return label


def cmd_plan(args) -> int:
    env, robot = ws.load_fixture(args.env)
    params = _params(args)
    pred = _prediction(args, env)
    if args.planner in bench.NEEDS_PREDICTION and pred is None:
        raise ConfigError(f"planner {args.planner} needs --label")
    query = MotionQuery(env, robot, args.start, args.goal, args.budget, args.seed)
    name = args.planner
    if name == "rrt":
        plan = rrt_plan(query, params)
    elif name == "birrt":
        plan = birrt_plan(query, params)
    elif name == "prm":
        roadmap = prm_build(env, robot, UniformSampler(env, robot, params.N, args.seed), args.build_budget,
                            params=params)
        plan = prm_query(roadmap, query, params)
    else:
        sampler = BiasedSampler(env, robot, pred, params.alpha if pred is not None else 0.0, params.N, args.seed)
        if name == "llrm":
            plan = prm_query(llrm_build(env, robot, sampler, args.build_budget, params), query, params)
        elif name == "guided-llp":
            graph = build_region_graph(pred, env, robot, params.region_threshold, params.link_distance,
                                       seed=args.seed)
            plan = guided_llp_plan(query, sampler, graph, params)
        else:
            plan = llp_plan(query, sampler, params)
    if plan is None:
        log.warning("%s found no plan within %.3g s", name, args.budget)
        return 1 if args.require_solution else 0
    if not validate_plan(env, robot, plan, params.step):
        log.error("plan failed re-validation")
        return 1
    log.info("%s: %d waypoints, %.4f s, %d nodes", name, len(plan.waypoints), plan.solve_time, plan.nodes_expanded)
    if args.out:
        write_json(args.out, plan.to_dict())
    return 0


def cmd_bench(args) -> int:
    env, robot = ws.load_fixture(args.env)
    names = [s.strip() for s in args.planners.split(",") if s.strip()]
    overrides = _params(args).to_dict()
    spec = bench.BenchmarkSpec(
        env, robot, [(n, overrides) for n in names], args.tasks, args.budget, args.seed, args.reps,
        args.build_budget, _prediction(args, env), args.goal, None, args.jobs, args.clock,
    )
    records = bench.run_benchmark(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bench.write_csv(out / "records.csv", records)
    summary = bench.summarize(records, args.budget)
    bench.write_summary(out / "summary.json", summary)
    grid = summary["time_grid"]
    curves = {n: list(zip(grid, s["fraction"])) for n, s in summary["planners"].items()}
    (out / "curves.svg").write_text(bench.curves_svg(curves))
    for n, s in summary["planners"].items():
        log.info("%s: solved %d/%d", n, s["solved"], s["records"])
    return 0


def cmd_render(args) -> int:
    env, robot = ws.load_fixture(args.env)
    overlays = {}
    if args.label:
        label, p, k = crit.read_label(args.label)
        overlays["criticality"] = label[..., 0]
        if k and robot.joint_wraps[0]:
            overlays["heading"] = label[..., 1:1 + p]
            overlays["heading_mask"] = label[..., 0] > 0
    if args.plan:
        wp = json.loads(Path(args.plan).read_text())["waypoints"]
        overlays.update(plan=wp, start=wp[0], goal=wp[-1])
    Path(args.out).write_text(bench.render_svg(env, overlays))
    return 0


COMMANDS = {
    "gen-env": cmd_gen_env,
    "gen-data": cmd_gen_data,
    "criticality": cmd_criticality,
    "plan": cmd_plan,
    "bench": cmd_bench,
    "render": cmd_render,
}


def main(argv=None) -> int:
    try:
        args = parse(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        out = getattr(args, "out", None)
        if out and args.command not in ("gen-data", "bench"):
            Path(out).parent.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except EnvironmentInfeasibleError as exc:
        log.error("%s", exc)
        return 1
    except (ConfigError, InvalidQueryError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
