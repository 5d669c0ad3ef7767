"""Release acceptance suite: one test per numbered criterion.

Each test prints a single "[criterion NN] ... PASS/FAIL" line on the real
stdout (bypassing capture) so the gate is readable from any pytest log.
Criteria 3-6 and 9 train real controllers and are marked slow; the
end-to-end runs are shared between criteria through module-scoped fixtures.
"""

import itertools
import json
import math
import os
import sys
import time
from types import SimpleNamespace

import numpy as np
import pytest

from lyagraph import nn_core, persist
from lyagraph.cli import EXIT_OK, _config_from_manifest, main
from lyagraph.dynamics import MdpEnv, SystemConfig, potential, vector_field
from lyagraph.graph_planner import NoPathError, build_edges, shortest_path
from lyagraph.lyapunov import lie_derivative_fd, lyapunov_risk, validate_roa
from lyagraph.ppo import PpoConfig, train_policy

# Per-node PPO budget for the desk-scale end-to-end runs.  Below ~4e5 steps
# the trained policies can stall in small limit cycles around the target that
# sit inside the innermost (untested) certification disk, producing certified
# nodes that fail rollout validation; 4e5 is the smallest budget observed to
# give only sound certificates.
DESK_BUDGET = 400_000


# One line per criterion; echoed by the conftest terminal-summary hook so
# the report survives pytest's output capture.
CRITERION_RESULTS = []


def _report(num, name, ok, detail=""):
    line = f"[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    CRITERION_RESULTS.append(line)
    print(line, file=sys.__stdout__, flush=True)
    print(line)
    assert ok, line


def _kink_free_point(net, rng, margin=1e-3):
    """Random input whose pre-activations stay clear of activation kinks."""
    for _ in range(200):
        x = rng.normal(size=net.input_dim)
        _, (pre, _) = nn_core.forward_cache(net, x[None, :])
        if all(np.min(np.abs(z)) > margin for z in pre):
            return x
    raise AssertionError("could not find a kink-free test point")


# ---------------------------------------------------------------- criterion 1


def test_c01_network_gradients_match_finite_differences():
    shapes = [
        ([2, 128, 64, 2], ["leaky_relu", "leaky_relu", "identity"]),
        ([2, 128, 64, 1], ["leaky_relu", "leaky_relu", "identity"]),
        ([2, 100, 100, 1], ["relu", "relu", "gelu"]),
    ]
    t0 = time.time()
    rng = np.random.default_rng(11)
    worst = 0.0
    h = 1e-5
    for dims, acts in shapes:
        net = nn_core.init_network(dims, acts, rng)
        for _ in range(100):
            x = _kink_free_point(net, rng)
            upstream = rng.normal(size=dims[-1])
            g = nn_core.backward(net, x, upstream)
            # input gradient, every component
            for k in range(dims[0]):
                xp, xm = x.copy(), x.copy()
                xp[k] += h
                xm[k] -= h
                fd = (
                    float(np.dot(upstream, nn_core.forward(net, xp)))
                    - float(np.dot(upstream, nn_core.forward(net, xm)))
                ) / (2 * h)
                rel = abs(fd - g.d_input[k]) / max(abs(fd), abs(g.d_input[k]), 1e-6)
                worst = max(worst, rel)
            # spot-check random weight entries
            for _ in range(5):
                l = int(rng.integers(len(net.weights)))
                i = int(rng.integers(net.weights[l].shape[0]))
                j = int(rng.integers(net.weights[l].shape[1]))
                net.weights[l][i, j] += h
                fp = float(np.dot(upstream, nn_core.forward(net, x)))
                net.weights[l][i, j] -= 2 * h
                fm = float(np.dot(upstream, nn_core.forward(net, x)))
                net.weights[l][i, j] += h
                fd = (fp - fm) / (2 * h)
                an = g.d_weights[l][i, j]
                rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
                worst = max(worst, rel)
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 10.0
    _report(1, "analytic gradients vs finite differences", ok,
            f"max rel err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 2


def test_c02_vector_field_matches_potential_gradient():
    cfg = SystemConfig()
    rng = np.random.default_rng(2)
    pts = rng.uniform(-5.0, 5.0, size=(1000, 2))
    t0 = time.time()
    an = vector_field(cfg, pts)
    # fourth-order central differences of the potential
    h = 1e-3
    fd = np.zeros_like(pts)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd[:, i] = (
            -potential(cfg, pts + 2 * e)
            + 8 * potential(cfg, pts + e)
            - 8 * potential(cfg, pts - e)
            + potential(cfg, pts - 2 * e)
        ) / (12 * h)
    err = np.linalg.norm(fd - an, axis=1) / np.maximum(
        np.linalg.norm(an, axis=1), 1e-12
    )
    elapsed = time.time() - t0
    ok = float(np.max(err)) < 1e-8 and elapsed < 1.0
    _report(2, "vector field vs potential finite differences", ok,
            f"max rel err {np.max(err):.2e}, {elapsed:.2f}s")


# ---------------------------------------------------------------- criterion 3


@pytest.mark.slow
def test_c03_ppo_reward_saturation_full_budget():
    target = np.array([4.0, 4.0])
    system = SystemConfig()

    def env_factory():
        return MdpEnv(system=system, target=target, horizon=300)

    rng = np.random.default_rng(0)
    policy, curve = train_policy(env_factory, target, PpoConfig(), rng)
    arr = np.asarray(curve, float)
    finite = arr[np.isfinite(arr)]
    first = float(finite[0])
    tail = float(np.nanmean(arr[-20:]))
    ok = (first < -10.0) and (-7.0 <= tail <= -3.0)
    _report(3, "PPO reward saturation (full budget)", ok,
            f"first update {first:.1f}, last-20 mean {tail:.2f}")


@pytest.mark.slow
def test_c03b_ppo_desk_budget_regulates_locally():
    target = np.array([4.0, 4.0])
    system = SystemConfig()

    def env_factory():
        return MdpEnv(system=system, target=target, horizon=300)

    rng = np.random.default_rng(0)
    policy, _ = train_policy(
        env_factory, target, PpoConfig(total_timesteps=200_000), rng
    )
    frac = validate_roa(
        system, policy, target, 0.5 * 1.6, 50, np.random.default_rng(1),
        tol_norm=0.1,
    )
    ok = frac >= 0.90
    _report(3, "PPO desk-budget local convergence", ok,
            f"{frac:.0%} of 50 rollouts converged")


# ------------------------------------------------- shared end-to-end fixtures


@pytest.fixture(scope="module")
def tpc_free(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("acc_tpc_free") / "run")
    rc = main(["tpc", "--seed", "0", "--budget", str(DESK_BUDGET),
               "--out", out, "--quiet"])
    assert rc == EXIT_OK, f"obstacle-free tree build exited with {rc}"
    return out


@pytest.fixture(scope="module")
def tpc_obstacle(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("acc_tpc_obs") / "run")
    rc = main(["tpc", "--seed", "1", "--budget", str(DESK_BUDGET),
               "--out", out, "--quiet", "--obstacle", "2,0,1"])
    assert rc == EXIT_OK, f"obstacle tree build exited with {rc}"
    return out


@pytest.fixture(scope="module")
def gpc_full(tmp_path_factory):
    """Full graph scenario: build + first goal with three starts, then a
    goal change with three new starts.  Returns everything later criteria
    need, captured at each stage."""
    out = str(tmp_path_factory.mktemp("acc_gpc") / "run")
    rc = main([
        "gpc", "--seed", "0", "--budget", str(DESK_BUDGET), "--out", out,
        "--quiet", "--goal", "4,4",
        "--starts=-4,-4", "--starts=-3.5,2.25", "--starts=4.5,-3",
    ])
    result = {"out": out, "rc1": rc}
    if rc != EXIT_OK:
        return result
    graph1 = persist.load_graph(out)
    result["manifest1"] = persist.load_manifest(out)
    result["ids1"] = sorted(n.id for n in graph1.nodes)
    result["edges1"] = dict(graph1.edges)
    result["goal1"] = graph1.goal_node
    result["rc2"] = main(["graph", "attach-goal", "--run", out,
                          "--goal=-0.75,-1"])
    result["manifest2"] = persist.load_manifest(out)
    graph2 = persist.load_graph(out)
    result["ids2"] = sorted(n.id for n in graph2.nodes)
    result["edges2"] = dict(graph2.edges)
    result["goal2"] = graph2.goal_node
    result["route_rcs"] = [
        main(["graph", "route", "--run", out, f"--start={s}"])
        for s in ("3.75,4", "3,-3.75", "-4,-3.5")
    ]
    return result


def _manifest_nodes(run_dir):
    return persist.load_manifest(run_dir)["nodes"]


def _trajectory_states(path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return rows[:, 1:3]


def _strongly_connected(ids, edges):
    """Independent reachability oracle: BFS forward and backward."""
    def sweep(adj):
        seen, stack = {ids[0]}, [ids[0]]
        while stack:
            u = stack.pop()
            for v in adj.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    fwd, rev = {}, {}
    for (i, j) in edges:
        fwd.setdefault(i, []).append(j)
        rev.setdefault(j, []).append(i)
    return len(sweep(fwd)) == len(ids) and len(sweep(rev)) == len(ids)


# ---------------------------------------------------------------- criterion 4


@pytest.mark.slow
def test_c04_certified_nodes_pass_rollout_validation(tpc_free, tpc_obstacle,
                                                     gpc_full):
    assert gpc_full["rc1"] == EXIT_OK
    results = []
    for run_dir in (tpc_free, tpc_obstacle, gpc_full["out"]):
        cfg = _config_from_manifest(persist.load_manifest(run_dir))
        world = cfg.world()
        for entry in _manifest_nodes(run_dir):
            node = persist.load_node(os.path.join(run_dir, entry["dir"]))
            frac = validate_roa(
                world.system, node.policy, node.center, 0.9 * node.eta,
                200, np.random.default_rng(1000 + node.id),
            )
            results.append((run_dir, node.id, frac))
    worst = min(r[2] for r in results)
    ok = worst >= 0.95
    _report(4, "certificate soundness on every accepted node", ok,
            f"{len(results)} nodes, worst rollout success {worst:.1%}")


# ---------------------------------------------------------------- criterion 5


@pytest.mark.slow
def test_c05_tree_end_to_end_both_scenarios(tpc_free, tpc_obstacle):
    details = []
    ok = True
    for run_dir, with_obstacle in ((tpc_free, False), (tpc_obstacle, True)):
        m = persist.load_manifest(run_dir)
        start = np.asarray(m["config"]["start"], float)
        covered = any(
            np.linalg.norm(start - np.asarray(n["center"])) <= n["eta"]
            for n in m["nodes"]
        )
        checks = [
            covered,
            10 <= m["node_count"] <= 60,
            4 <= len(m["path"]) <= 20,
            m["status"] == "reached",
        ]
        if with_obstacle:
            states = _trajectory_states(os.path.join(run_dir, "trajectory.csv"))
            d = float(np.min(np.linalg.norm(states - np.array([2.0, 0.0]), axis=1)))
            checks.append(d > 1.0)
            details.append(f"obstacle: {m['node_count']} nodes, "
                           f"path {len(m['path'])}, min obstacle dist {d:.2f}")
        else:
            details.append(f"free: {m['node_count']} nodes, path {len(m['path'])}")
        ok = ok and all(checks)
    _report(5, "tree planner end to end", ok, "; ".join(details))


# ---------------------------------------------------------------- criterion 6


@pytest.mark.slow
def test_c06_graph_end_to_end_with_goal_change(gpc_full):
    g = gpc_full
    checks = {"build": g["rc1"] == EXIT_OK}
    if checks["build"]:
        m1 = g["manifest1"]
        checks["node-count"] = 20 <= m1["node_count"] <= 80
        checks["strong-1"] = _strongly_connected(g["ids1"], g["edges1"])
        checks["routes-1"] = all(r["status"] == "reached" for r in m1["routes"])
        checks["goal-change"] = (
            g["rc2"] == EXIT_OK
            and g["manifest2"]["goal_attach_trained_nodes"] == 1
            and sorted(set(g["ids1"]) - {g["goal1"]})
            == sorted(set(g["ids2"]) - {g["goal2"]})
        )
        checks["strong-2"] = _strongly_connected(g["ids2"], g["edges2"])
        checks["routes-2"] = all(rc == EXIT_OK for rc in g["route_rcs"])
    ok = all(checks.values())
    detail = ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items())
    _report(6, "graph planner end to end with goal change", ok, detail)


# ---------------------------------------------------------------- criterion 7


def _enumerate_cheapest(ids, edges, start, goal):
    """Minimum cost over all simple paths, by depth-first enumeration."""
    adj = {}
    for (i, j), w in edges.items():
        adj.setdefault(i, []).append((j, w))
    best = [None]

    def dfs(u, cost, seen):
        if u == goal:
            if best[0] is None or cost < best[0]:
                best[0] = cost
            return
        for v, w in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                dfs(v, cost + w, seen)
                seen.remove(v)

    dfs(start, 0.0, {start})
    return best[0]


def test_c07_dijkstra_matches_exhaustive_enumeration():
    rng = np.random.default_rng(7)
    t0 = time.time()
    compared = 0
    ok = True
    for _ in range(200):
        n = int(rng.integers(2, 9))
        ids = list(range(n))
        edges = {}
        for i in ids:
            for j in ids:
                if i != j and rng.uniform() < 0.35:
                    edges[(i, j)] = float(rng.integers(1, 10))
        graph = SimpleNamespace(
            nodes=[SimpleNamespace(id=i) for i in ids], edges=edges
        )
        start, goal = 0, n - 1
        expected = _enumerate_cheapest(ids, edges, start, goal)
        try:
            path = shortest_path(graph, start, goal)
            cost = sum(edges[(a, b)] for a, b in zip(path, path[1:]))
        except NoPathError:
            cost = None
        if cost != expected:
            ok = False
            break
        compared += 1
    elapsed = time.time() - t0
    ok = ok and elapsed < 10.0
    _report(7, "shortest path vs exhaustive enumeration", ok,
            f"{compared}/200 graphs agree, {elapsed:.1f}s")


# ---------------------------------------------------------------- criterion 8


def test_c08_edge_rule_matches_brute_force():
    rng = np.random.default_rng(8)
    ok = True
    for _ in range(100):
        n = int(rng.integers(2, 30))
        nodes = [
            SimpleNamespace(
                id=i,
                center=rng.uniform(-5.0, 5.0, size=2),
                eta=float(rng.uniform(0.3, 1.6)),
            )
            for i in range(n)
        ]
        got = build_edges(nodes)
        expected = {}
        for a in nodes:
            for b in nodes:
                if a.id == b.id:
                    continue
                # same scalar distance primitive as the implementation
                # (sqrt of the dot product); the pairing and threshold
                # logic under test is recomputed independently
                diff = a.center - b.center
                d = math.sqrt(float(np.dot(diff, diff)))
                if d <= b.eta:
                    expected[(a.id, b.id)] = d
        if got != expected:
            ok = False
            break
    _report(8, "edge rule vs brute force", ok, "100 layouts, exact match")


# ---------------------------------------------------------------- criterion 9


@pytest.mark.slow
def test_c09_identical_seed_runs_are_byte_identical(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc_det")
    args = ["tpc", "--seed", "5", "--budget", str(DESK_BUDGET),
            "--start", "3.5,3.5", "--goal", "4,4", "--quiet"]
    outs = []
    for name in ("a", "b"):
        out = str(root / name)
        rc = main(args + ["--out", out])
        assert rc == EXIT_OK
        outs.append(out)
    a = persist.manifest_core(persist.load_manifest(outs[0]))
    b = persist.manifest_core(persist.load_manifest(outs[1]))
    bytes_equal = json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    same_params = all(
        open(os.path.join(outs[0], "nodes", "000", f)).read()
        == open(os.path.join(outs[1], "nodes", "000", f)).read()
        for f in ("policy.json", "lyapunov.json", "meta.json")
    )
    ok = bytes_equal and same_params
    _report(9, "identical seed runs byte-identical", ok,
            f"manifest match {bytes_equal}, node artifacts match {same_params}")


# --------------------------------------------------------------- criterion 10


def test_c10_lyapunov_unit_identities():
    # quadratic V(x) = x1^2 + x2^2 as a callable: the forward difference at
    # x=(1,0) with xdot=(-1,0) is exactly -(2 + h)
    quad = lambda p: np.asarray(p, float)[..., 0] ** 2 + np.asarray(p, float)[..., 1] ** 2
    h = 1e-3
    lie = lie_derivative_fd(quad, np.array([1.0, 0.0]), np.array([-1.0, 0.0]), h)
    ok1 = abs(lie - (-(2.0 + h))) < 1e-10

    # l1-norm network |x|_1 built from paired ReLU units
    w1 = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    w2 = np.ones((1, 4))
    net = nn_core.NetworkParams(
        [2, 4, 1], [w1, w2], [np.zeros(4), np.zeros(1)], ["relu", "identity"]
    )
    x = np.array([[0.3, -0.2], [0.1, 0.4]])
    xdot = np.array([[-0.3, 0.2], [1.0, 0.0]])
    # lie per point: sum_i sign(x_i) * xdot_i  ->  -0.5 and +1.0
    lie2 = lie_derivative_fd(net, x, xdot, h)
    ok2 = np.all(np.abs(lie2 - np.array([-0.5, 1.0])) < 1e-10)

    # risk without margins: mean(max(0,-V) + max(0,lie)) + V(0)^2
    #   = mean(0 + 0, 0 + 1) = 0.5
    r0 = lyapunov_risk(net, x, xdot, h)
    ok3 = abs(r0 - 0.5) < 1e-10
    # risk with margins m_v=0.7, m_d=0.1:
    #   point 1: max(0, 0.7-0.5) + max(0, -0.5+0.1) = 0.2
    #   point 2: max(0, 0.7-0.5) + max(0,  1.0+0.1) = 1.3  -> mean 0.75
    r1 = lyapunov_risk(net, x, xdot, h, m_v=0.7, m_d=0.1)
    ok4 = abs(r1 - 0.75) < 1e-10

    ok = ok1 and ok2 and ok3 and ok4
    _report(10, "Lyapunov risk and Lie derivative hand identities", ok,
            f"lie {lie:.6f}, risks {r0:.4f}/{r1:.4f}")
