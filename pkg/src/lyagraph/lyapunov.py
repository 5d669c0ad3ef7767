"""Neural Lyapunov training and sampling-based region-of-attraction radius.

The Lyapunov network takes the normalized offset from its node center,
so V(center) corresponds to the origin of the input space.  The Lie
derivative is approximated by per-coordinate forward differences; all
radii (eta, delta_eta) are measured in original state coordinates and
converted internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn_core
from .dynamics import clip_to_bounds, integrate, normalize, saturate, vector_field
from .ppo import mean_action


@dataclass
class LyapunovConfig:
    net_dims: tuple = (2, 100, 100, 1)
    activations: tuple = ("relu", "relu", "gelu")
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 50
    n_train_points: int = 10_000
    fd_step: float = 1e-3
    margin_v: float = 1e-3   # training-only hinge margins; certification
    margin_d: float = 1e-3   # uses the strict criterion with zero margins
    sample_radius: float = 1.6

    def __post_init__(self):
        if self.fd_step <= 0.0:
            raise ValueError("fd_step must be positive")
        if min(self.epochs, self.batch_size, self.n_train_points) < 0:
            raise ValueError("epochs, batch_size, n_train_points must be nonnegative")


@dataclass
class RoaConfig:
    eta_lb: float = 1.0
    eta_ub: float = 1.6
    delta_eta: float = 0.1
    n_test_points: int = 1000
    # Empirical acceptance gate backing the certificate: fraction of
    # validation rollouts from 0.9*eta that must reach the center.
    # 0 rollouts disables the gate.
    validation_rollouts: int = 200
    validation_threshold: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.eta_lb < self.eta_ub:
            raise ValueError("need 0 < eta_lb < eta_ub")
        if self.delta_eta <= 0.0:
            raise ValueError("delta_eta must be positive")
        if self.validation_rollouts < 0:
            raise ValueError("validation_rollouts must be nonnegative")
        if not 0.0 <= self.validation_threshold <= 1.0:
            raise ValueError("validation_threshold must lie in [0, 1]")


@dataclass
class LyapunovNet:
    """Scalar network evaluated on normalized offsets from its center."""

    net: nn_core.NetworkParams
    center: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        if self.net.output_dim != 1:
            raise ValueError("Lyapunov network output must be scalar")

    def inputs(self, x, bounds):
        """Map raw states to the network's input space."""
        return normalize(x, bounds) - normalize(self.center, bounds)

    def value(self, x, bounds):
        out = nn_core.forward(self.net, self.inputs(x, bounds))
        return out[..., 0]


def closed_loop_derivative(system, policy, target, x):
    """xdot = f(x) + saturate(pi_mean(x)) in raw coordinates; batched.

    The policy observes the normalized offset of x from `target`, matching
    how it was trained.
    """
    return make_closed_loop(system, policy, target)(x)


def make_closed_loop(system, policy, target):
    """Returns xdot(x) for the deterministic closed loop around `target`."""
    b = system.state_bounds
    t_norm = normalize(np.asarray(target, float), b)

    def xdot(x):
        x = np.asarray(x, float)
        obs = normalize(x, b) - t_norm
        u = saturate(mean_action(policy, obs), system.u_max)
        return vector_field(system, x) + u

    return xdot


def lie_derivative_fd(V, x, xdot, h):
    """Forward-difference Lie derivative sum_i (V(x+h*e_i)-V(x))/h * xdot_i.

    V may be a scalar-output NetworkParams or any callable mapping points
    (or batches of points) to scalars; x and xdot share V's input frame.
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    fn = (lambda p: nn_core.forward(V, p)[..., 0]) if isinstance(V, nn_core.NetworkParams) else V
    x = np.asarray(x, float)
    xdot = np.asarray(xdot, float)
    v0 = fn(x)
    total = 0.0
    for i in range(x.shape[-1]):
        xp = x.copy()
        xp[..., i] += h
        total = total + (fn(xp) - v0) / h * xdot[..., i]
    return total


def lyapunov_risk(V, x, xdot, h, m_v=0.0, m_d=0.0):
    """Mean hinge loss max(0, m_v - V) + max(0, lie + m_d), plus V(0)^2.

    Points are given in V's input frame (the origin is the node center);
    with m_v = m_d = 0 this is the plain empirical Lyapunov risk.
    """
    x = np.asarray(x, float)
    if x.size == 0:
        raise ValueError("empty batch")
    fn = (lambda p: nn_core.forward(V, p)[..., 0]) if isinstance(V, nn_core.NetworkParams) else V
    vals = fn(x)
    lie = lie_derivative_fd(fn, x, xdot, h)
    center_val = fn(np.zeros((1, x.shape[-1])))[0] if x.ndim > 1 else fn(np.zeros(x.shape[-1]))
    hinge = np.maximum(0.0, m_v - vals) + np.maximum(0.0, lie + m_d)
    return float(np.mean(hinge) + center_val**2)


def _sample_ball(rng, n, radius):
    """n points uniform (in area) in the disk of the given radius, as offsets."""
    u = rng.uniform(size=(n, 2))
    r = radius * np.sqrt(u[:, 0])
    th = 2.0 * np.pi * u[:, 1]
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


def _risk_minibatch_grads(net, z, zdot, h, m_v, m_d):
    """Loss and parameter gradients of the margined risk on one minibatch."""
    B = z.shape[0]
    stacked = np.concatenate(
        [z, z + np.array([h, 0.0]), z + np.array([0.0, h]), np.zeros((1, 2))]
    )
    out, cache = nn_core.forward_cache(net, stacked)
    out = out[:, 0]
    v0, v1, v2, vc = out[:B], out[B : 2 * B], out[2 * B : 3 * B], out[-1]
    lie = (v1 - v0) / h * zdot[:, 0] + (v2 - v0) / h * zdot[:, 1]
    loss = float(np.mean(np.maximum(0.0, m_v - v0) + np.maximum(0.0, lie + m_d)) + vc**2)
    pos_act = (m_v - v0 > 0.0).astype(float)
    lie_act = (lie + m_d > 0.0).astype(float)
    up = np.zeros(3 * B + 1)
    up[:B] = (-pos_act + lie_act * (-(zdot[:, 0] + zdot[:, 1]) / h)) / B
    up[B : 2 * B] = lie_act * zdot[:, 0] / h / B
    up[2 * B : 3 * B] = lie_act * zdot[:, 1] / h / B
    up[-1] = 2.0 * vc
    grads = nn_core.backward_from_cache(net, cache, up[:, None])
    return loss, grads


def train_lyapunov(system, policy, x_k, cfg, rng):
    """Fit a Lyapunov net to closed-loop data around x_k; returns (net, curve).

    Training states are uniform in the ball of radius cfg.sample_radius
    around x_k (original coordinates); their time derivatives are
    precomputed once from the deterministic closed loop.
    """
    x_k = np.asarray(x_k, float)
    b = system.state_bounds
    lo, hi = b.arrays()
    scale = 2.0 / (hi - lo)
    net = nn_core.init_network(list(cfg.net_dims), list(cfg.activations), rng)
    if cfg.epochs == 0 or cfg.n_train_points == 0:
        return LyapunovNet(net, x_k), []

    offsets = _sample_ball(rng, int(cfg.n_train_points), cfg.sample_radius)
    states = x_k + offsets
    xdot = make_closed_loop(system, policy, x_k)(states)
    z = offsets * scale
    zdot = xdot * scale

    adam = nn_core.adam_state_for(net, cfg.learning_rate)
    n = z.shape[0]
    curve = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = _risk_minibatch_grads(
                net, z[idx], zdot[idx], cfg.fd_step, cfg.margin_v, cfg.margin_d
            )
            net, adam = nn_core.adam_step(net, grads, adam)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return LyapunovNet(net, x_k), curve


def certify_radius(system, policy, V, x_k, cfg, rng, h=1e-3):
    """Largest radius (multiple of delta_eta, up to eta_ub) whose annuli all
    satisfy the strict Lyapunov criterion V > 0 and lie derivative < 0.

    The radius grows by delta_eta before each annulus is sampled, so the
    first tested shell is [delta_eta, 2*delta_eta]; the innermost disk is
    vacuously accepted (V(x_k) = 0 there by construction, so the strict
    inequalities cannot hold arbitrarily close to the equilibrium).
    Annulus samples are uniform in area; each annulus draws from its own
    spawned generator so enlarging n_test_points extends (never reshuffles)
    the sample set.
    """
    x_k = np.asarray(x_k, float)
    b = system.state_bounds
    lo_b, hi_b = b.arrays()
    scale = 2.0 / (hi_b - lo_b)
    xdot_fn = make_closed_loop(system, policy, x_k)

    n_annuli = int(np.ceil(cfg.eta_ub / cfg.delta_eta - 1e-12)) - 1
    children = rng.spawn(max(n_annuli, 1))
    eta = 0.0
    for i in range(n_annuli):
        lo = (i + 1) * cfg.delta_eta
        hi = min(lo + cfg.delta_eta, cfg.eta_ub)
        u = children[i].uniform(size=(int(cfg.n_test_points), 2))
        r = np.sqrt(lo**2 + (hi**2 - lo**2) * u[:, 0])
        th = 2.0 * np.pi * u[:, 1]
        offsets = np.stack([r * np.cos(th), r * np.sin(th)], axis=1)
        states = x_k + offsets
        z = offsets * scale
        vals = nn_core.forward(V.net, z)[:, 0]
        if np.any(vals <= 0.0):
            break
        zdot = xdot_fn(states) * scale
        lie = lie_derivative_fd(V.net, z, zdot, h)
        if np.any(lie >= 0.0):
            break
        eta = hi
    return float(eta)


def validate_roa(system, policy, center, radius, n_rollouts, rng,
                 tol_norm=0.01, max_steps=900):
    """Fraction of closed-loop rollouts from the ball that pass within
    tol_norm (normalized distance) of the center within max_steps."""
    center = np.asarray(center, float)
    b = system.state_bounds
    starts = center + _sample_ball(rng, int(n_rollouts), radius)
    lo, hi = b.arrays()
    states = np.clip(starts, lo, hi)
    t_norm = normalize(center, b)
    reached = np.zeros(n_rollouts, dtype=bool)
    for _ in range(max_steps):
        dist = np.linalg.norm(normalize(states, b) - t_norm, axis=1)
        reached |= dist < tol_norm
        if np.all(reached):
            break
        obs = normalize(states, b) - t_norm
        u = saturate(mean_action(policy, obs), system.u_max)
        states = clip_to_bounds(integrate(system, states, u), b)
    dist = np.linalg.norm(normalize(states, b) - t_norm, axis=1)
    reached |= dist < tol_norm
    return float(np.mean(reached))
