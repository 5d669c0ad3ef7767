"""Command-line entry point and the run/verify/export harness.

Exit codes: 0 success, 2 validation error, 3 coverage failure,
4 execution failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import config as config_mod
from . import persist
from .config import ConfigError, RunConfig
from .dynamics import Obstacle, obstacle_clear
from .executor import REACHED, run_sequence
from .graph_planner import (
    CoverageGrid,
    GoalSynthesisError,
    NoPathError,
    attach_goal,
    build_edges,
    build_graph,
    coverage_check,
    detach_goal,
    locate_start,
    shortest_path,
    strongly_connected,
)
from .nodes import rollout_validation
from .tree_planner import CoverageError, build_tree, find_parent, prune

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_COVERAGE = 3
EXIT_EXECUTION = 4


def parse_point(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}")
    return parts


def parse_obstacle(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected 'x,y,radius', got {text!r}")
    return parts


def _load_config(args):
    if getattr(args, "config", None):
        cfg = config_mod.from_toml(args.config)
    else:
        cfg = RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "goal", None) is not None:
        cfg.goal = args.goal
    if getattr(args, "start", None) is not None:
        cfg.start = args.start
    if getattr(args, "starts", None):
        cfg.starts = args.starts
    if getattr(args, "obstacle", None):
        cfg.obstacles = [Obstacle((o[0], o[1]), o[2]) for o in args.obstacle]
    if getattr(args, "alpha", None) is not None:
        cfg.sampling.alpha = args.alpha
    if getattr(args, "budget", None) is not None:
        config_mod.scale_budget(cfg, args.budget)
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    out_root = os.environ.get("LYAGRAPH_OUT_ROOT")
    if out_root and not os.path.isabs(cfg.out_dir):
        cfg.out_dir = os.path.join(out_root, cfg.out_dir)
    return cfg.validate()


class _Progress:
    def __init__(self, quiet=False):
        self.accepted = 0
        self.rejected = 0
        self.quiet = quiet

    def __call__(self, node, accepted):
        if accepted:
            self.accepted += 1
            if not self.quiet:
                print(f"  node {node.id} accepted at {node.center.tolist()} "
                      f"eta={node.eta:.2f}", flush=True)
        else:
            self.rejected += 1
            if not self.quiet:
                print("  candidate rejected (eta below lower bound)", flush=True)


def _save_common(run_dir, cfg, nodes, timings, extra):
    os.makedirs(run_dir, exist_ok=True)
    reward_agg = persist.aggregate_curves([n.reward_curve for n in nodes])
    loss_agg = persist.aggregate_curves([n.loss_curve for n in nodes])
    persist.write_csv(
        os.path.join(run_dir, "rewards.csv"),
        ["update_index", "mean_episode_reward"],
        list(enumerate(reward_agg)),
    )
    persist.write_csv(
        os.path.join(run_dir, "lyapunov_loss.csv"),
        ["epoch", "loss"],
        list(enumerate(loss_agg)),
    )
    manifest = {"config": cfg.snapshot(), "timings": timings}
    manifest.update(extra)
    persist.save_manifest(run_dir, manifest)
    return manifest


def cmd_tpc(args):
    cfg = _load_config(args)
    cfg.mode = "tpc"
    rng = np.random.default_rng(cfg.seed)
    world = cfg.world()
    progress = _Progress(quiet=getattr(args, "quiet", False))
    t0 = time.time()
    status = "reached-goal-coverage"
    try:
        tree = build_tree(world, cfg.start, cfg.goal, cfg.synthesis(), rng,
                          progress=progress)
    except CoverageError as e:
        print(f"coverage failure: {e}", file=sys.stderr)
        if e.partial is not None:
            persist.save_tree(cfg.out_dir, e.partial) if hasattr(e.partial, "parent") else None
            _save_common(cfg.out_dir, cfg, e.partial.nodes, {"build_s": time.time() - t0},
                         {"mode": "tpc", "status": "coverage-failure",
                          "node_count": len(e.partial.nodes),
                          "rejected_count": progress.rejected})
        return EXIT_COVERAGE
    t_build = time.time() - t0
    persist.save_tree(cfg.out_dir, tree)
    path = prune(tree, cfg.start)
    persist.write_json(os.path.join(cfg.out_dir, "path.json"),
                       {"node_ids": [n.id for n in path]})
    traj = run_sequence(world, path, cfg.start, switch_tol=cfg.switch_tol)
    persist.save_trajectory(os.path.join(cfg.out_dir, "trajectory.csv"), traj)
    manifest = _save_common(
        cfg.out_dir, cfg, tree.nodes, {"build_s": t_build},
        {
            "mode": "tpc",
            "status": traj.status,
            "node_count": len(tree.nodes),
            "rejected_count": progress.rejected,
            "path": [n.id for n in path],
            "parent": {str(k): v for k, v in tree.parent.items()},
            "nodes": [{"id": n.id, "center": [float(v) for v in n.center],
                       "eta": float(n.eta), "dir": f"nodes/{n.id:03d}"}
                      for n in tree.nodes],
        },
    )
    print(f"TPC: {len(tree.nodes)} nodes, path length {len(path)}, "
          f"trajectory status {traj.status}")
    return EXIT_OK if traj.status == REACHED else EXIT_EXECUTION


def _attach_goal_with_retries(graph, world, goal, cfgs, rng, retries=5):
    last = None
    for _ in range(retries):
        try:
            return attach_goal(graph, world, goal, cfgs, rng.spawn(1)[0])
        except GoalSynthesisError as e:
            last = e
    raise last


def _route_and_run(world, graph, start, goal_id, switch_tol):
    start_id = locate_start(graph, start)
    ids = shortest_path(graph, start_id, goal_id)
    path = [graph.node_by_id(i) for i in ids]
    traj = run_sequence(world, path, start, switch_tol=switch_tol)
    return ids, traj


def cmd_gpc(args):
    cfg = _load_config(args)
    cfg.mode = "gpc"
    rng = np.random.default_rng(cfg.seed)
    world = cfg.world()
    progress = _Progress(quiet=getattr(args, "quiet", False))
    t0 = time.time()
    try:
        graph = build_graph(world, cfg.synthesis(), rng,
                            resolution=cfg.grid_resolution, progress=progress)
    except CoverageError as e:
        print(f"coverage failure: {e}", file=sys.stderr)
        return EXIT_COVERAGE
    t_build = time.time() - t0
    try:
        graph = _attach_goal_with_retries(graph, world, cfg.goal, cfg.synthesis(), rng)
    except GoalSynthesisError as e:
        print(f"goal synthesis failure: {e}", file=sys.stderr)
        return EXIT_EXECUTION
    persist.save_graph(cfg.out_dir, graph)
    starts = cfg.starts or [cfg.start]
    routes = []
    all_reached = True
    for i, start in enumerate(starts):
        try:
            ids, traj = _route_and_run(world, graph, start, graph.goal_node,
                                       cfg.switch_tol)
        except NoPathError as e:
            print(f"routing failure from {start}: {e}", file=sys.stderr)
            return EXIT_EXECUTION
        persist.save_trajectory(
            os.path.join(cfg.out_dir, f"trajectory_{i}.csv"), traj)
        routes.append({"start": list(map(float, start)), "path": ids,
                       "status": traj.status})
        all_reached &= traj.status == REACHED
    manifest = _save_common(
        cfg.out_dir, cfg, graph.nodes, {"build_s": t_build},
        {
            "mode": "gpc",
            "status": "reached" if all_reached else "execution-failure",
            "node_count": len(graph.nodes),
            "rejected_count": progress.rejected,
            "goal_node": graph.goal_node,
            "routes": routes,
            "nodes": [{"id": n.id, "center": [float(v) for v in n.center],
                       "eta": float(n.eta), "dir": f"nodes/{n.id:03d}"}
                      for n in graph.nodes],
        },
    )
    print(f"GPC: {len(graph.nodes)} nodes, {len(routes)} routes, "
          f"all reached: {all_reached}")
    return EXIT_OK if all_reached else EXIT_EXECUTION


def cmd_graph_build(args):
    cfg = _load_config(args)
    cfg.mode = "gpc"
    rng = np.random.default_rng(cfg.seed)
    world = cfg.world()
    progress = _Progress(quiet=getattr(args, "quiet", False))
    t0 = time.time()
    try:
        graph = build_graph(world, cfg.synthesis(), rng,
                            resolution=cfg.grid_resolution, progress=progress)
    except CoverageError as e:
        print(f"coverage failure: {e}", file=sys.stderr)
        return EXIT_COVERAGE
    persist.save_graph(cfg.out_dir, graph)
    _save_common(
        cfg.out_dir, cfg, graph.nodes, {"build_s": time.time() - t0},
        {
            "mode": "gpc",
            "status": "covered",
            "node_count": len(graph.nodes),
            "rejected_count": progress.rejected,
            "goal_node": None,
            "routes": [],
            "nodes": [{"id": n.id, "center": [float(v) for v in n.center],
                       "eta": float(n.eta), "dir": f"nodes/{n.id:03d}"}
                      for n in graph.nodes],
        },
    )
    print(f"graph built: {len(graph.nodes)} nodes")
    return EXIT_OK


def cmd_graph_attach_goal(args):
    run_dir = args.run
    manifest = persist.load_manifest(run_dir)
    cfg = _config_from_manifest(manifest)
    if args.seed is not None:
        cfg.seed = args.seed
    graph = persist.load_graph(run_dir)
    detach_goal(graph)
    world = cfg.world()
    rng = np.random.default_rng(cfg.seed + 7919)  # offset: goal-attach stream
    t0 = time.time()
    try:
        graph = _attach_goal_with_retries(graph, world, args.goal, cfg.synthesis(), rng)
    except GoalSynthesisError as e:
        print(f"goal synthesis failure: {e}", file=sys.stderr)
        return EXIT_EXECUTION
    persist.save_graph(run_dir, graph)
    manifest["goal_node"] = graph.goal_node
    manifest["goal"] = list(map(float, args.goal))
    manifest["goal_attach_trained_nodes"] = 1
    manifest["node_count"] = len(graph.nodes)
    manifest["nodes"] = [
        {"id": n.id, "center": [float(v) for v in n.center],
         "eta": float(n.eta), "dir": f"nodes/{n.id:03d}"}
        for n in graph.nodes
    ]
    manifest.setdefault("timings", {})["attach_s"] = time.time() - t0
    persist.save_manifest(run_dir, manifest)
    print(f"goal node {graph.goal_node} attached at {args.goal}")
    return EXIT_OK


def cmd_graph_route(args):
    run_dir = args.run
    manifest = persist.load_manifest(run_dir)
    cfg = _config_from_manifest(manifest)
    graph = persist.load_graph(run_dir)
    if graph.goal_node is None:
        print("no goal node attached; run 'graph attach-goal' first", file=sys.stderr)
        return EXIT_VALIDATION
    world = cfg.world()
    try:
        ids, traj = _route_and_run(world, graph, args.start, graph.goal_node,
                                   cfg.switch_tol)
    except NoPathError as e:
        print(f"routing failure: {e}", file=sys.stderr)
        return EXIT_EXECUTION
    out = args.out or os.path.join(run_dir, "route_trajectory.csv")
    persist.save_trajectory(out, traj)
    print(f"route {ids} status {traj.status}; trajectory written to {out}")
    return EXIT_OK if traj.status == REACHED else EXIT_EXECUTION


def cmd_simulate(args):
    run_dir = args.run
    manifest = persist.load_manifest(run_dir)
    cfg = _config_from_manifest(manifest)
    world = cfg.world()
    start = args.start or cfg.start
    if os.path.exists(os.path.join(run_dir, "tree.json")):
        tree = persist.load_tree(run_dir)
        path = prune(tree, start)
    else:
        graph = persist.load_graph(run_dir)
        ids = shortest_path(graph, locate_start(graph, start), graph.goal_node)
        path = [graph.node_by_id(i) for i in ids]
    traj = run_sequence(world, path, start, switch_tol=cfg.switch_tol)
    out = args.out or os.path.join(run_dir, "simulate_trajectory.csv")
    persist.save_trajectory(out, traj)
    print(f"status {traj.status}; trajectory written to {out}")
    return EXIT_OK if traj.status == REACHED else EXIT_EXECUTION


def _config_from_manifest(manifest):
    snap = dict(manifest["config"])
    data = {
        "seed": snap["seed"],
        "mode": snap["mode"],
        "start": snap["start"],
        "goal": snap["goal"],
        "system": {
            "terms": [{"alpha": t[0], "mu": t[1], "sigma": t[2]}
                      for t in snap["system"]["terms"]],
            "state_bounds": {"low": snap["system"]["bounds"][0],
                             "high": snap["system"]["bounds"][1]},
            "u_max": snap["system"]["u_max"],
            "dt": snap["system"]["dt"],
            "integrator": snap["system"]["integrator"],
        },
        "obstacles": [{"center": ob[0], "radius": ob[1]} for ob in snap["obstacles"]],
        "ppo": snap["ppo"],
        "lyapunov": snap["lyapunov"],
        "roa": snap["roa"],
        "sampling": snap["sampling"],
        "horizon": snap["horizon"],
        "reward_coeffs": snap["reward_coeffs"],
        "reward_frame": snap["reward_frame"],
        "switch_tol": snap["switch_tol"],
        "edge_weight": snap["edge_weight"],
        "grid_resolution": snap["grid_resolution"],
    }
    if snap.get("starts"):
        data["starts"] = snap["starts"]
    return config_mod.from_dict(data)


def verify_run(run_dir, rollouts=200, rollout_threshold=0.95, seed=0):
    """Re-check every persisted planner invariant; returns (checks, ok)."""
    manifest = persist.load_manifest(run_dir)
    cfg = _config_from_manifest(manifest)
    world = cfg.world()
    checks = []

    def check(name, ok, detail=""):
        checks.append((name, bool(ok), detail))

    is_tree = os.path.exists(os.path.join(run_dir, "tree.json"))
    if is_tree:
        tree = persist.load_tree(run_dir)
        nodes = tree.nodes
    else:
        graph = persist.load_graph(run_dir)
        nodes = graph.nodes

    eta_ok = all(
        cfg.roa.eta_lb < n.eta <= cfg.roa.eta_ub + 1e-9
        and abs(n.eta / cfg.roa.delta_eta - round(n.eta / cfg.roa.delta_eta)) < 1e-9
        for n in nodes
    )
    check("eta-bounds-and-granularity", eta_ok)

    sampled = [n for n in nodes
               if is_tree or n.id != getattr(graph, "goal_node", None)]
    sep_ok = all(
        np.linalg.norm(a.center - b.center) >= world.sampling.rho - 1e-9
        for i, a in enumerate(sampled) for b in sampled[i + 1:]
    )
    check("center-separation", sep_ok)

    if world.obstacles:
        clear_ok = all(
            obstacle_clear(n.center, world.obstacles, world.sampling.alpha)
            for n in nodes
        )
        check("obstacle-clearance", clear_ok)

    if is_tree:
        containment_ok = all(
            tree.parent[n.id] is None
            or np.linalg.norm(n.center - tree.node_by_id(tree.parent[n.id]).center)
            <= tree.node_by_id(tree.parent[n.id]).eta + 1e-9
            for n in nodes
        )
        check("parent-containment", containment_ok)
        roots = [i for i, p in tree.parent.items() if p is None]
        check("single-root", len(roots) == 1)
    else:
        recomputed = build_edges(nodes)
        check("edge-rule", recomputed == graph.edges,
              f"{len(graph.edges)} stored vs {len(recomputed)} recomputed")
        check("strong-connectivity", strongly_connected(graph))
        grid = CoverageGrid(world.bounds, world.obstacles, world.sampling.alpha,
                            cfg.roa.eta_ub, cfg.grid_resolution)
        covered, frac = coverage_check(grid, nodes)
        check("coverage", covered or frac < 0.01, f"uncovered fraction {frac:.4f}")

    if rollouts > 0:
        rng = np.random.default_rng(seed)
        fracs = [rollout_validation(world, n, rng, n_rollouts=rollouts)
                 for n in nodes]
        roa_ok = all(f >= rollout_threshold for f in fracs)
        check("roa-rollout-validation", roa_ok,
              f"min success fraction {min(fracs):.3f}" if fracs else "")
    ok = all(c[1] for c in checks)
    return checks, ok


def cmd_verify(args):
    checks, ok = verify_run(args.run, rollouts=args.rollouts, seed=args.seed or 0)
    for name, passed, detail in checks:
        print(f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    return EXIT_OK if ok else EXIT_VALIDATION


def cmd_export(args):
    run_dir = args.run
    manifest = persist.load_manifest(run_dir)
    nodes = manifest.get("nodes", [])
    persist.write_csv(
        os.path.join(run_dir, "nodes.csv"),
        ["id", "x1", "x2", "eta"],
        [(n["id"], float(n["center"][0]), float(n["center"][1]), float(n["eta"]))
         for n in nodes],
    )
    if os.path.exists(os.path.join(run_dir, "graph.json")):
        graph = persist.load_graph(run_dir)
        persist.write_csv(
            os.path.join(run_dir, "edges.csv"),
            ["from", "to", "weight"],
            [(i, j, w) for (i, j), w in sorted(graph.edges.items())],
        )
    elif os.path.exists(os.path.join(run_dir, "tree.json")):
        tree = persist.load_tree(run_dir)
        persist.write_csv(
            os.path.join(run_dir, "edges.csv"),
            ["child", "parent"],
            [(k, v) for k, v in sorted(tree.parent.items()) if v is not None],
        )
    print(f"plot data written to {run_dir}/nodes.csv and {run_dir}/edges.csv")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="lyagraph",
                                description="Sequential RL controllers with "
                                            "neural Lyapunov certificates")
    sub = p.add_subparsers(dest="command", required=True)

    def add_run_opts(sp, starts=False):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--goal", type=parse_point)
        sp.add_argument("--start", type=parse_point)
        if starts:
            sp.add_argument("--starts", type=parse_point, action="append",
                            help="start state x,y (repeatable); use "
                                 "--starts=-4,-4 for negative coordinates")
        sp.add_argument("--obstacle", type=parse_obstacle, action="append",
                        help="x,y,radius (repeatable)")
        sp.add_argument("--alpha", type=float, help="obstacle clearance")
        sp.add_argument("--budget", type=int, help="PPO timesteps per node")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, default=1,
                        help="1 forces the deterministic single-threaded mode")
        sp.add_argument("--quiet", action="store_true")

    sp = sub.add_parser("tpc", help="build a tree, prune, execute")
    add_run_opts(sp)
    sp.set_defaults(func=cmd_tpc)

    sp = sub.add_parser("gpc", help="build a graph, attach goal, route, execute")
    add_run_opts(sp, starts=True)
    sp.set_defaults(func=cmd_gpc)

    gp = sub.add_parser("graph", help="graph sub-operations")
    gsub = gp.add_subparsers(dest="graph_command", required=True)
    sp = gsub.add_parser("build", help="cover the region with nodes")
    add_run_opts(sp)
    sp.set_defaults(func=cmd_graph_build)
    sp = gsub.add_parser("attach-goal", help="train and attach the goal node")
    sp.add_argument("--run", required=True)
    sp.add_argument("--goal", type=parse_point, required=True)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_graph_attach_goal)
    sp = gsub.add_parser("route", help="route and execute from a start state")
    sp.add_argument("--run", required=True)
    sp.add_argument("--start", type=parse_point, required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_graph_route)

    sp = sub.add_parser("simulate", help="re-execute a persisted run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--start", type=parse_point)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("verify", help="re-check persisted invariants")
    sp.add_argument("--run", required=True)
    sp.add_argument("--rollouts", type=int, default=200)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("export", help="emit plot-data CSVs")
    sp.add_argument("--run", required=True)
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except CoverageError as e:
        print(f"coverage failure: {e}", file=sys.stderr)
        return EXIT_COVERAGE
    except (NoPathError, GoalSynthesisError) as e:
        print(f"execution failure: {e}", file=sys.stderr)
        return EXIT_EXECUTION
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
