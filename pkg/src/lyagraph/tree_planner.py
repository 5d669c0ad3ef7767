"""Backward tree of node controllers from the goal toward the start (TPC)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import obstacle_clear
from .nodes import RejectSet, RoaUnion, node_controller, sample_candidate


class CoverageError(RuntimeError):
    """Planner terminated without covering the required state.

    Carries the partial result in .partial.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass
class ControllerTree:
    nodes: list = field(default_factory=list)
    parent: dict = field(default_factory=dict)   # node id -> parent id (root: None)
    goal: np.ndarray = None
    start: np.ndarray = None

    @property
    def root_id(self):
        return next(i for i, p in self.parent.items() if p is None)

    def node_by_id(self, node_id):
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(f"no node with id {node_id}")

    def region(self):
        return RoaUnion(self.nodes)


def find_parent(tree, x_k):
    """Closest node whose RoA ball contains x_k; ties go to the lowest id."""
    x_k = np.asarray(x_k, float)
    best = None
    for n in sorted(tree.nodes, key=lambda n: n.id):
        d = np.linalg.norm(x_k - n.center)
        if d <= n.eta and (best is None or d < best[0]):
            best = (d, n.id)
    if best is None:
        raise CoverageError(f"no tree node contains {x_k.tolist()}", partial=tree)
    return best[1]


def _synthesize_goal(world, x_goal, cfgs, rng, retries=3):
    for _ in range(retries):
        node = node_controller(world, x_goal, cfgs, rng.spawn(1)[0], node_id=0)
        if node is not None:
            return node
    raise CoverageError(
        f"goal node at {np.asarray(x_goal).tolist()} failed certification "
        f"after {retries} seeds"
    )


def build_tree(world, x_start, x_goal, cfgs, rng, progress=None):
    """Grow a backward tree from the goal until the start state is covered.

    Raises CoverageError (carrying the partial tree) if the iteration cap
    is hit or candidate sampling is exhausted before the start is covered.
    """
    x_start = np.asarray(x_start, float)
    x_goal = np.asarray(x_goal, float)
    lo, hi = world.bounds.arrays()
    scfg = world.sampling
    for name, x in (("start", x_start), ("goal", x_goal)):
        if np.any(x < lo) or np.any(x > hi):
            raise ValueError(f"{name} state {x.tolist()} outside the bounded region")
        if world.obstacles and not obstacle_clear(x, world.obstacles, scfg.alpha):
            raise ValueError(f"{name} state {x.tolist()} violates obstacle clearance")

    tree = ControllerTree(goal=x_goal, start=x_start)
    root = _synthesize_goal(world, x_goal, cfgs, rng)
    tree.nodes.append(root)
    tree.parent[root.id] = None
    if progress:
        progress(root, accepted=True)

    region = RoaUnion([root])
    rejects = RejectSet()
    next_id = 1
    for _ in range(scfg.max_iters):
        if region.contains(x_start):
            return tree
        cand = sample_candidate(
            world, [n.center for n in tree.nodes], region, rejects, scfg, rng,
            require_connected=True,
        )
        if cand is None:
            raise CoverageError(
                "candidate sampling exhausted before the start was covered",
                partial=tree,
            )
        node = node_controller(
            world, cand, cfgs, rng.spawn(1)[0], node_id=next_id, rejects=rejects
        )
        if progress:
            progress(node, accepted=node is not None)
        if node is None:
            continue
        parent_id = find_parent(tree, node.center)
        tree.nodes.append(node)
        tree.parent[node.id] = parent_id
        region.add(node)
        next_id += 1
    if region.contains(x_start):
        return tree
    raise CoverageError(
        f"iteration cap K={scfg.max_iters} reached before the start was covered",
        partial=tree,
    )


def prune(tree, x_start):
    """Ordered chain of nodes from the start's entry node to the root."""
    entry = find_parent(tree, x_start)
    path = []
    node_id = entry
    while node_id is not None:
        path.append(tree.node_by_id(node_id))
        node_id = tree.parent[node_id]
    return path
