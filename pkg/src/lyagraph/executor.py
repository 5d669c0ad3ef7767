"""Closed-loop execution through an ordered controller sequence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import clip_to_bounds, in_obstacle, integrate, normalize, saturate
from .ppo import mean_action

REACHED = "reached"
TIMEOUT = "timeout"
OBSTACLE_HIT = "obstacle-hit"


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray       # original coordinates
    controls: np.ndarray     # applied (saturated) controls
    node_ids: np.ndarray     # active node per step
    status: str

    def __len__(self):
        return len(self.times)


def run_sequence(world, path, x0, switch_tol=0.01, max_steps=None):
    """Drive the system through the node sequence with the switching rule.

    The active node's deterministic policy is applied each step; control
    hands over to the next node once the normalized distance to the active
    center drops below switch_tol.  Status is "reached" within switch_tol
    of the final center, "timeout" after max_steps (default 300 per node),
    or "obstacle-hit" if the state enters an obstacle disk.
    """
    if not path:
        raise ValueError("empty controller path")
    x0 = np.asarray(x0, float)
    if np.linalg.norm(x0 - path[0].center) > path[0].eta:
        raise ValueError(
            f"initial state {x0.tolist()} outside the first node's region of attraction"
        )
    if max_steps is None:
        max_steps = 300 * len(path)
    system = world.system
    b = system.state_bounds
    dt = system.dt

    times, states, controls, node_ids = [], [], [], []
    x = x0.copy()
    active = 0
    status = TIMEOUT
    for step in range(max_steps):
        # advance through all centers already within switching distance
        while (
            np.linalg.norm(normalize(x, b) - normalize(path[active].center, b))
            < switch_tol
        ):
            if active == len(path) - 1:
                status = REACHED
                break
            active += 1
        if status == REACHED:
            break
        node = path[active]
        obs = normalize(x, b) - normalize(node.center, b)
        u = saturate(mean_action(node.policy, obs), system.u_max)
        times.append(step * dt)
        states.append(x.copy())
        controls.append(u)
        node_ids.append(node.id)
        x = clip_to_bounds(integrate(system, x, u), b)
        if world.obstacles and in_obstacle(x, world.obstacles):
            status = OBSTACLE_HIT
            break
    return Trajectory(
        times=np.asarray(times, float),
        states=np.asarray(states, float).reshape(-1, 2),
        controls=np.asarray(controls, float).reshape(-1, 2),
        node_ids=np.asarray(node_ids, dtype=int),
        status=status,
    )
