"""Artifact layout: per-node directories, tree/graph JSON, manifests, CSV."""

from __future__ import annotations

import json
import os

import numpy as np

from . import nn_core
from .graph_planner import ControllerGraph
from .lyapunov import LyapunovNet
from .nodes import NodeController
from .ppo import GaussianPolicy
from .tree_planner import ControllerTree


def _f(v):
    return float(f"{float(v):.17g}")


def _vec(x):
    return [_f(v) for v in np.asarray(x, float).ravel()]


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


def read_json(path):
    with open(path) as f:
        return json.load(f)


def save_node(node_dir, node):
    os.makedirs(node_dir, exist_ok=True)
    write_json(
        os.path.join(node_dir, "policy.json"),
        {"mean_net": nn_core.net_to_dict(node.policy.mean_net),
         "log_std": _vec(node.policy.log_std)},
    )
    write_json(
        os.path.join(node_dir, "lyapunov.json"),
        {"net": nn_core.net_to_dict(node.lyapunov.net),
         "center": _vec(node.lyapunov.center)},
    )
    write_json(
        os.path.join(node_dir, "meta.json"),
        {
            "id": int(node.id),
            "center": _vec(node.center),
            "eta": _f(node.eta),
            "seed": node.seed,
            "reward_curve": [_f(v) if np.isfinite(v) else None for v in node.reward_curve],
            "loss_curve": [_f(v) for v in node.loss_curve],
        },
    )
    write_csv(
        os.path.join(node_dir, "rewards.csv"),
        ["update_index", "mean_episode_reward"],
        [(i, v) for i, v in enumerate(node.reward_curve)],
    )
    write_csv(
        os.path.join(node_dir, "lyapunov_loss.csv"),
        ["epoch", "loss"],
        [(i, v) for i, v in enumerate(node.loss_curve)],
    )


def load_node(node_dir):
    meta = read_json(os.path.join(node_dir, "meta.json"))
    pol = read_json(os.path.join(node_dir, "policy.json"))
    lya = read_json(os.path.join(node_dir, "lyapunov.json"))
    policy = GaussianPolicy(
        nn_core.net_from_dict(pol["mean_net"]), np.asarray(pol["log_std"], float)
    )
    lyap = LyapunovNet(
        nn_core.net_from_dict(lya["net"]), np.asarray(lya["center"], float)
    )
    return NodeController(
        id=int(meta["id"]),
        center=np.asarray(meta["center"], float),
        policy=policy,
        lyapunov=lyap,
        eta=float(meta["eta"]),
        reward_curve=[float("nan") if v is None else v for v in meta["reward_curve"]],
        loss_curve=list(meta["loss_curve"]),
        seed=meta.get("seed"),
    )


def save_nodes(run_dir, nodes):
    index = []
    for node in nodes:
        rel = os.path.join("nodes", f"{node.id:03d}")
        save_node(os.path.join(run_dir, rel), node)
        index.append({"id": int(node.id), "dir": rel,
                      "center": _vec(node.center), "eta": _f(node.eta)})
    return index


def load_nodes(run_dir, index):
    return [load_node(os.path.join(run_dir, entry["dir"])) for entry in index]


def save_tree(run_dir, tree):
    index = save_nodes(run_dir, tree.nodes)
    write_json(
        os.path.join(run_dir, "tree.json"),
        {
            "goal": _vec(tree.goal),
            "start": _vec(tree.start),
            "nodes": index,
            "parent": {str(k): v for k, v in tree.parent.items()},
        },
    )


def load_tree(run_dir):
    d = read_json(os.path.join(run_dir, "tree.json"))
    return ControllerTree(
        nodes=load_nodes(run_dir, d["nodes"]),
        parent={int(k): v for k, v in d["parent"].items()},
        goal=np.asarray(d["goal"], float),
        start=np.asarray(d["start"], float),
    )


def save_graph(run_dir, graph):
    index = save_nodes(run_dir, graph.nodes)
    write_json(
        os.path.join(run_dir, "graph.json"),
        {
            "nodes": index,
            "edges": [[int(i), int(j), _f(w)] for (i, j), w in sorted(graph.edges.items())],
            "goal_node": graph.goal_node,
        },
    )


def load_graph(run_dir):
    d = read_json(os.path.join(run_dir, "graph.json"))
    return ControllerGraph(
        nodes=load_nodes(run_dir, d["nodes"]),
        edges={(int(i), int(j)): float(w) for i, j, w in d["edges"]},
        goal_node=d["goal_node"],
    )


def write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join("" if v is None else f"{v:.17g}" if isinstance(v, float) else str(v)
                             for v in row) + "\n")


def save_trajectory(path, traj):
    rows = [
        (t, s[0], s[1], u[0], u[1], int(i))
        for t, s, u, i in zip(traj.times, traj.states, traj.controls, traj.node_ids)
    ]
    write_csv(path, ["t", "x1", "x2", "u1", "u2", "node_id"], rows)


def aggregate_curves(curves):
    """Mean across nodes per index, ignoring nan; ragged curves allowed."""
    if not curves:
        return []
    length = max(len(c) for c in curves)
    out = []
    for i in range(length):
        vals = [c[i] for c in curves if i < len(c) and np.isfinite(c[i])]
        out.append(float(np.mean(vals)) if vals else float("nan"))
    return out


def save_manifest(run_dir, manifest):
    write_json(os.path.join(run_dir, "manifest.json"), manifest)


def load_manifest(run_dir):
    return read_json(os.path.join(run_dir, "manifest.json"))


def manifest_core(manifest):
    """Manifest without the timing fields, for byte-stable comparison."""
    return {k: v for k, v in manifest.items() if k != "timings"}
