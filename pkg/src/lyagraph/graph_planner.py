"""Space-covering directed graph of node controllers routed with Dijkstra (GPC)."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .dynamics import obstacle_clear
from .nodes import RejectSet, RoaUnion, node_controller, sample_candidate
from .tree_planner import CoverageError


class NoPathError(RuntimeError):
    pass


@dataclass
class ControllerGraph:
    nodes: list = field(default_factory=list)
    edges: dict = field(default_factory=dict)   # (i, j) -> weight, directed i->j
    goal_node: int = None

    def node_by_id(self, node_id):
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"no node with id {node_id}")

    def region(self):
        return RoaUnion(self.nodes)

    def successors(self, i):
        return [(j, w) for (a, j), w in self.edges.items() if a == i]


def build_edges(nodes, weight="distance"):
    """Directed edge i->j iff center i lies inside node j's RoA ball.

    Weight is the Euclidean center distance (or 1.0 for hop counting).
    """
    edges = {}
    for a in nodes:
        for b in nodes:
            if a.id == b.id:
                continue
            d = float(np.linalg.norm(a.center - b.center))
            if d <= b.eta:
                edges[(a.id, b.id)] = d if weight == "distance" else 1.0
    return edges


class CoverageGrid:
    """Regular grid over the bounded region used as the coverage predicate.

    Grid points that can never be covered are exempt: points strictly
    inside an obstacle disk, and points closer to an obstacle center than
    alpha - eta_ub (no admissible node center can reach them).
    """

    def __init__(self, bounds, obstacles=(), alpha=0.0, eta_ub=0.0, resolution=101):
        lo, hi = bounds.arrays()
        xs = np.linspace(lo[0], hi[0], resolution)
        ys = np.linspace(lo[1], hi[1], resolution)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        eligible = np.ones(len(pts), dtype=bool)
        for ob in obstacles:
            exempt_r = max(ob.radius, alpha - eta_ub)
            eligible &= np.linalg.norm(pts - np.asarray(ob.center, float), axis=1) >= exempt_r
        self.points = pts[eligible]


def coverage_check(grid, nodes):
    """(fully covered?, uncovered fraction) of the grid's eligible points."""
    if not nodes:
        return False, 1.0
    if len(grid.points) == 0:
        return True, 0.0
    covered = np.zeros(len(grid.points), dtype=bool)
    for n in nodes:
        covered |= np.linalg.norm(grid.points - n.center, axis=1) <= n.eta
    frac = float(np.mean(~covered))
    return bool(frac == 0.0), frac


def build_graph(world, cfgs, rng, resolution=101, progress=None):
    """Cover the bounded region with certified nodes and build the edges.

    Terminates when the coverage grid is fully covered or when candidate
    sampling is exhausted; raises CoverageError (carrying the partial graph
    and uncovered fraction) if the iteration cap runs out first.
    """
    scfg = world.sampling
    grid = CoverageGrid(
        world.bounds, world.obstacles, scfg.alpha, cfgs.roa.eta_ub, resolution
    )
    graph = ControllerGraph()
    region = RoaUnion()
    rejects = RejectSet()
    next_id = 0
    covered = False
    for _ in range(scfg.max_iters):
        covered, _ = coverage_check(grid, graph.nodes)
        if covered:
            break
        cand = sample_candidate(
            world, [n.center for n in graph.nodes], region, rejects, scfg, rng,
            require_connected=bool(graph.nodes),
        )
        if cand is None:
            # no valid candidate remains; treat as effective coverage
            break
        node = node_controller(
            world, cand, cfgs, rng.spawn(1)[0], node_id=next_id, rejects=rejects
        )
        if progress:
            progress(node, accepted=node is not None)
        if node is None:
            continue
        graph.nodes.append(node)
        region.add(node)
        next_id += 1
    else:
        covered, frac = coverage_check(grid, graph.nodes)
        if not covered:
            err = CoverageError(
                f"iteration cap K={scfg.max_iters} reached with uncovered "
                f"fraction {frac:.3f}",
                partial=graph,
            )
            err.uncovered_fraction = frac
            raise err
    graph.edges = build_edges(graph.nodes)
    return graph


class GoalSynthesisError(RuntimeError):
    """The goal node failed the eta_lb gate; retry with a new seed."""


def attach_goal(graph, world, x_goal, cfgs, rng):
    """Synthesize one node at the goal state and rebuild its incident edges."""
    x_goal = np.asarray(x_goal, float)
    lo, hi = world.bounds.arrays()
    if np.any(x_goal < lo) or np.any(x_goal > hi):
        raise ValueError(f"goal {x_goal.tolist()} outside the bounded region")
    if world.obstacles and not obstacle_clear(x_goal, world.obstacles, world.sampling.alpha):
        raise ValueError(f"goal {x_goal.tolist()} violates obstacle clearance")
    next_id = max((n.id for n in graph.nodes), default=-1) + 1
    node = node_controller(world, x_goal, cfgs, rng, node_id=next_id)
    if node is None:
        raise GoalSynthesisError(
            f"goal node at {x_goal.tolist()} did not certify above eta_lb; "
            "retrain with a new seed"
        )
    graph.nodes.append(node)
    graph.goal_node = node.id
    graph.edges = build_edges(graph.nodes)
    return graph


def detach_goal(graph):
    """Remove the current goal node and its incident edges, if any."""
    if graph.goal_node is None:
        return graph
    gid = graph.goal_node
    graph.nodes = [n for n in graph.nodes if n.id != gid]
    graph.edges = {e: w for e, w in graph.edges.items() if gid not in e}
    graph.goal_node = None
    return graph


def shortest_path(graph, start_node, goal_node):
    """Dijkstra over the directed weighted edges; list of node ids."""
    ids = {n.id for n in graph.nodes}
    if start_node not in ids or goal_node not in ids:
        raise KeyError("start or goal node not in graph")
    adj = {i: [] for i in ids}
    for (i, j), w in graph.edges.items():
        adj[i].append((j, w))
    dist = {start_node: 0.0}
    prev = {}
    heap = [(0.0, start_node)]
    visited = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in visited:
            continue
        visited.add(u)
        if u == goal_node:
            break
        for v, w in sorted(adj[u]):
            nd = d + w
            if nd < dist.get(v, float("inf")):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if goal_node not in visited:
        raise NoPathError(f"node {goal_node} unreachable from node {start_node}")
    path = [goal_node]
    while path[-1] != start_node:
        path.append(prev[path[-1]])
    return list(reversed(path))


def locate_start(graph, x_start):
    """Closest node whose RoA contains x_start; ties go to the lowest id."""
    x_start = np.asarray(x_start, float)
    best = None
    for n in sorted(graph.nodes, key=lambda n: n.id):
        d = np.linalg.norm(x_start - n.center)
        if d <= n.eta and (best is None or d < best[0]):
            best = (d, n.id)
    if best is None:
        raise NoPathError(f"start state {x_start.tolist()} is not covered by any node")
    return best[1]


def strongly_connected(graph):
    """True iff every node reaches every other node along directed edges."""
    if not graph.nodes:
        return True
    ids = [n.id for n in graph.nodes]
    fwd = {i: set() for i in ids}
    rev = {i: set() for i in ids}
    for (i, j) in graph.edges:
        fwd[i].add(j)
        rev[j].add(i)

    def sweep(adj, root):
        seen = {root}
        stack = [root]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    root = ids[0]
    return len(sweep(fwd, root)) == len(ids) and len(sweep(rev, root)) == len(ids)
