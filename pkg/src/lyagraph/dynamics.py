"""Benchmark 2D first-order system, its MDP wrapper and obstacle geometry.

The plant is xdot = grad h(x) + u where h is a three-term sum of Gaussians.
The exponent of each Gaussian is negative (the standard bell shape); a
positive exponent would diverge and contradict a bounded potential.
All public functions are batched: state arguments may be (2,) or (B, 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GaussianTerm:
    alpha: float
    mu: tuple
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")


# Built-in potential parameters (alpha, (mu1, mu2), sigma).
DEFAULT_TERMS = (
    GaussianTerm(-0.1, (-1.4, 2.5), 1.8),
    GaussianTerm(0.2, (1.3, 2.2), 1.5),
    GaussianTerm(0.3, (-3.4, -2.5), 2.0),
)


@dataclass(frozen=True)
class Box:
    low: tuple = (-5.0, -5.0)
    high: tuple = (5.0, 5.0)

    def __post_init__(self):
        lo, hi = np.asarray(self.low, float), np.asarray(self.high, float)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("degenerate box: high must exceed low on every axis")

    def arrays(self):
        return np.asarray(self.low, float), np.asarray(self.high, float)


@dataclass
class SystemConfig:
    terms: tuple = DEFAULT_TERMS
    state_bounds: Box = field(default_factory=Box)
    u_max: float = 0.5
    dt: float = 0.1
    integrator: str = "rk4"

    def __post_init__(self):
        if self.u_max <= 0.0 or self.dt <= 0.0:
            raise ValueError("u_max and dt must be positive")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError("integrator must be 'euler' or 'rk4'")


@dataclass(frozen=True)
class Obstacle:
    center: tuple
    radius: float

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("obstacle radius must be positive")


def potential(cfg, x):
    """h(x) = sum_i alpha_i * exp(-|x - mu_i|^2 / (2 sigma_i^2))."""
    x = np.asarray(x, float)
    sq = lambda t: np.sum((x - np.asarray(t.mu)) ** 2, axis=-1)
    return sum(t.alpha * np.exp(-sq(t) / (2.0 * t.sigma**2)) for t in cfg.terms)


def vector_field(cfg, x):
    """Analytic gradient of the potential, f_i = dh/dx_i."""
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    for t in cfg.terms:
        d = x - np.asarray(t.mu)
        e = np.exp(-np.sum(d**2, axis=-1) / (2.0 * t.sigma**2))
        out = out + t.alpha * e[..., None] * (-d / t.sigma**2)
    return out


def saturate(u, u_max):
    return np.clip(np.asarray(u, float), -u_max, u_max)


def integrate(cfg, x, u):
    """Advance xdot = f(x) + u by one dt (u held constant over the step)."""
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    dt = cfg.dt
    if cfg.integrator == "euler":
        return x + dt * (vector_field(cfg, x) + u)
    k1 = vector_field(cfg, x) + u
    k2 = vector_field(cfg, x + 0.5 * dt * k1) + u
    k3 = vector_field(cfg, x + 0.5 * dt * k2) + u
    k4 = vector_field(cfg, x + dt * k3) + u
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def clip_to_bounds(x, bounds):
    lo, hi = bounds.arrays()
    return np.clip(x, lo, hi)


def normalize(x, bounds):
    """Affine map of the bounding box onto [-1, 1]^n."""
    lo, hi = bounds.arrays()
    return 2.0 * (np.asarray(x, float) - lo) / (hi - lo) - 1.0


def denormalize(x, bounds):
    lo, hi = bounds.arrays()
    return lo + (np.asarray(x, float) + 1.0) * (hi - lo) / 2.0


def obstacle_clear(x, obstacles, alpha):
    """True iff x keeps distance >= alpha from every obstacle center."""
    if alpha < 0.0:
        raise ValueError("alpha must be nonnegative")
    x = np.asarray(x, float)
    return all(
        np.linalg.norm(x - np.asarray(ob.center, float)) >= alpha for ob in obstacles
    )


def in_obstacle(x, obstacles):
    """True iff x lies strictly inside any obstacle disk."""
    x = np.asarray(x, float)
    return any(
        np.linalg.norm(x - np.asarray(ob.center, float)) < ob.radius for ob in obstacles
    )


def reward(x, u_applied, target, bounds, coeffs, frame="raw"):
    """R(x, u) = -c1 * e^T e - c2 * u^T u with e = x - x*.

    frame selects whether the state error is measured in raw or normalized
    coordinates; the control term always uses the raw saturated control.
    """
    x = np.asarray(x, float)
    if frame == "normalized":
        e = normalize(x, bounds) - normalize(target, bounds)
    else:
        e = x - np.asarray(target, float)
    c1, c2 = coeffs
    return -c1 * np.sum(e**2, axis=-1) - c2 * np.sum(np.asarray(u_applied) ** 2, axis=-1)


@dataclass
class MdpEnv:
    """Single-owner MDP wrapper around the system for one target state."""

    system: SystemConfig
    target: np.ndarray
    horizon: int = 300
    reward_coeffs: tuple = (0.01, 0.01)
    reward_frame: str = "raw"
    state: np.ndarray = None
    steps_taken: int = 0

    def __post_init__(self):
        self.target = np.asarray(self.target, float)
        if self.state is None:
            self.state = self.target.copy()
        self.state = clip_to_bounds(np.asarray(self.state, float), self.system.state_bounds)

    def observe(self):
        """Normalized state relative to the target, the policy's input."""
        b = self.system.state_bounds
        return normalize(self.state, b) - normalize(self.target, b)

    def reset(self, rng, radius):
        """Uniform state within the given ball of the target, inside bounds."""
        lo, hi = self.system.state_bounds.arrays()
        while True:
            r = radius * np.sqrt(rng.uniform())
            th = rng.uniform(0.0, 2.0 * np.pi)
            x = self.target + r * np.array([np.cos(th), np.sin(th)])
            if np.all(x >= lo) and np.all(x <= hi):
                break
        self.state = x
        self.steps_taken = 0
        return self.state.copy()

    def step(self, u):
        u = np.asarray(u, float)
        if not np.all(np.isfinite(u)):
            raise ValueError("non-finite control input")
        us = saturate(u, self.system.u_max)
        r = reward(
            self.state, us, self.target, self.system.state_bounds,
            self.reward_coeffs, self.reward_frame,
        )
        nxt = integrate(self.system, self.state, us)
        nxt = clip_to_bounds(nxt, self.system.state_bounds)
        self.state = nxt
        self.steps_taken += 1
        done = self.steps_taken >= self.horizon
        return nxt.copy(), float(r), done
