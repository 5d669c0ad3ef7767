"""Node candidate sampling and the per-node controller synthesis pipeline.

A node is accepted when its trained policy certifies a region-of-attraction
radius strictly above eta_lb and the certificate survives empirical rollout
validation; failed candidates are remembered so sampling avoids their
vicinity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import MdpEnv, obstacle_clear
from .lyapunov import certify_radius, train_lyapunov, validate_roa
from .ppo import train_policy


@dataclass
class SamplingConfig:
    rho: float = 0.9              # minimum center separation
    alpha: float = 2.5            # obstacle clearance (used when obstacles exist)
    max_iters: int = 500          # planner iteration cap K
    reject_radius: float = 0.9    # exclusion radius around failed candidates
    max_draws: int = 500          # consecutive failed draws before giving up

    def validate(self, roa_cfg, obstacles):
        if not roa_cfg.eta_ub / 2.0 < self.rho < roa_cfg.eta_lb:
            raise ValueError(
                f"rho={self.rho} must satisfy eta_ub/2 < rho < eta_lb "
                f"({roa_cfg.eta_ub / 2.0} < rho < {roa_cfg.eta_lb})"
            )
        if obstacles:
            r_max = max(ob.radius for ob in obstacles)
            if self.alpha <= roa_cfg.eta_ub / 2.0 + r_max:
                raise ValueError(
                    f"alpha={self.alpha} must exceed eta_ub/2 + max obstacle "
                    f"radius = {roa_cfg.eta_ub / 2.0 + r_max}"
                )


@dataclass
class PlannerWorld:
    system: object
    obstacles: list = field(default_factory=list)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    @property
    def bounds(self):
        return self.system.state_bounds


@dataclass
class SynthesisConfigs:
    """Per-node training budgets bundled for the planners."""

    ppo: object
    lyapunov: object
    roa: object
    horizon: int = 300
    reward_coeffs: tuple = (0.01, 0.01)
    reward_frame: str = "raw"


@dataclass
class NodeController:
    id: int
    center: np.ndarray
    policy: object
    lyapunov: object
    eta: float
    reward_curve: list = field(default_factory=list)
    loss_curve: list = field(default_factory=list)
    seed: int = None

    def __post_init__(self):
        self.center = np.asarray(self.center, float)

    def contains(self, x):
        return np.linalg.norm(np.asarray(x, float) - self.center) <= self.eta


class RejectSet:
    """Centers of previously invalidated candidates."""

    def __init__(self):
        self.centers = []

    def add(self, x):
        self.centers.append(np.asarray(x, float))

    def too_close(self, x, radius):
        x = np.asarray(x, float)
        return any(np.linalg.norm(x - c) < radius for c in self.centers)

    def __len__(self):
        return len(self.centers)


class RoaUnion:
    """Union of RoA balls; the planners' coverage region R_k."""

    def __init__(self, nodes=()):
        self.nodes = list(nodes)

    def add(self, node):
        self.nodes.append(node)

    def contains(self, x):
        return any(n.contains(x) for n in self.nodes)


def sample_candidate(world, existing_centers, coverage_region, rejects, cfg, rng,
                     require_connected=True):
    """Draw a node-center candidate satisfying the acceptance condition.

    Conditions: inside the bounded region; at least rho from every existing
    center; at least alpha from every obstacle center; away from rejected
    candidates; and, when require_connected, inside the current coverage
    region.  Returns None after cfg.max_draws failed draws.
    """
    lo, hi = world.bounds.arrays()
    for _ in range(cfg.max_draws):
        x = rng.uniform(lo, hi)
        if existing_centers and any(
            np.linalg.norm(x - np.asarray(c, float)) < cfg.rho for c in existing_centers
        ):
            continue
        if world.obstacles and not obstacle_clear(x, world.obstacles, cfg.alpha):
            continue
        if rejects is not None and rejects.too_close(x, cfg.reject_radius):
            continue
        if require_connected and coverage_region is not None and not coverage_region.contains(x):
            continue
        return x
    return None


def node_controller(world, x_k, cfgs, rng, node_id=0, rejects=None):
    """Full synthesis pipeline at x_k: train policy, fit Lyapunov net,
    certify the radius, and back the certificate with rollout validation.
    Returns a NodeController, or None (recording x_k in the reject set)
    when the certified radius does not exceed eta_lb or the validation
    rollouts fall below the configured success threshold.

    Training episodes reset inside the certification ball (radius eta_ub)
    so the policy concentrates on fine regulation there.  Certification
    samples annuli outward from the center but never the innermost shell,
    so a policy whose closed-loop equilibrium sits slightly off-center can
    certify yet fail to regulate within the executor's switching tolerance;
    the empirical rollout gate catches exactly that case.
    """
    x_k = np.asarray(x_k, float)

    def env_factory():
        return MdpEnv(
            system=world.system,
            target=x_k,
            horizon=cfgs.horizon,
            reward_coeffs=cfgs.reward_coeffs,
            reward_frame=cfgs.reward_frame,
        )

    policy, reward_curve = train_policy(
        env_factory, x_k, cfgs.ppo, rng, reset_radius=cfgs.roa.eta_ub
    )
    lyap, loss_curve = train_lyapunov(world.system, policy, x_k, cfgs.lyapunov, rng)
    eta = certify_radius(
        world.system, policy, lyap, x_k, cfgs.roa, rng, h=cfgs.lyapunov.fd_step
    )
    if eta <= cfgs.roa.eta_lb:
        if rejects is not None:
            rejects.add(x_k)
        return None
    if cfgs.roa.validation_rollouts > 0:
        frac = validate_roa(
            world.system, policy, x_k, 0.9 * eta,
            cfgs.roa.validation_rollouts, rng, max_steps=3 * cfgs.horizon,
        )
        if frac < cfgs.roa.validation_threshold:
            if rejects is not None:
                rejects.add(x_k)
            return None
    return NodeController(
        id=node_id,
        center=x_k,
        policy=policy,
        lyapunov=lyap,
        eta=eta,
        reward_curve=reward_curve,
        loss_curve=loss_curve,
    )


def rollout_validation(world, node, rng, n_rollouts=200, frac_radius=0.9,
                       tol_norm=0.01, max_steps=900):
    """Empirical soundness check of a certified node: fraction of rollouts
    from within frac_radius*eta that pass near the center."""
    return validate_roa(
        world.system, node.policy, node.center, frac_radius * node.eta,
        n_rollouts, rng, tol_norm=tol_norm, max_steps=max_steps,
    )
