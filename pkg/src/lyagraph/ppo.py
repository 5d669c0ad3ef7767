"""Proximal policy optimization for local stabilizing node controllers.

A diagonal-Gaussian policy (state-independent log-std) and a value network
are trained on rollouts from a batch of independent environments.  The
implementation is fully vectorized numpy and single-threaded, so training
is bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn_core
from .dynamics import (
    clip_to_bounds,
    integrate,
    normalize,
    reward,
    saturate,
)

LOG_STD_MIN, LOG_STD_MAX = -10.0, 2.0
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PpoConfig:
    gamma: float = 0.99
    clip_eps: float = 0.2
    epochs_per_update: int = 10
    minibatch_size: int = 256
    learning_rate: float = 3e-4
    vf_coef: float = 0.5
    n_envs: int = 8
    total_timesteps: int = 1_000_000
    rollout_len: int = 256
    gae_lambda: float = 0.95
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    reset_radius: float = 6.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.clip_eps <= 0.0:
            raise ValueError("clip_eps must be positive")
        if self.reset_radius <= 0.0:
            raise ValueError("reset_radius must be positive")
        for name in ("epochs_per_update", "minibatch_size", "n_envs", "rollout_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class GaussianPolicy:
    mean_net: nn_core.NetworkParams
    log_std: np.ndarray

    def __post_init__(self):
        self.log_std = np.asarray(self.log_std, float)
        if not np.all(np.isfinite(self.log_std)):
            raise ValueError("log_std must be finite")
        if self.log_std.shape != (self.mean_net.output_dim,):
            raise ValueError("log_std length must match the action dimension")


def init_policy(obs_dim, act_dim, rng, log_std_init=math.log(0.5)):
    net = nn_core.init_network(
        [obs_dim, 128, 64, act_dim], ["leaky_relu", "leaky_relu", "identity"], rng
    )
    return GaussianPolicy(net, np.full(act_dim, log_std_init))


def init_value_net(obs_dim, rng):
    return nn_core.init_network(
        [obs_dim, 128, 64, 1], ["leaky_relu", "leaky_relu", "identity"], rng
    )


def mean_action(policy, obs):
    """Deterministic (execution-time) action: the Gaussian mean."""
    return nn_core.forward(policy.mean_net, obs)


def log_prob(policy, obs, action):
    """Exact diagonal-Gaussian log density of the given actions."""
    mu = nn_core.forward(policy.mean_net, obs)
    ls = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(ls)
    z = (np.asarray(action, float) - mu) / std
    return np.sum(-0.5 * z**2 - ls - 0.5 * _LOG_2PI, axis=-1)


def sample_action(policy, obs, rng):
    """Draw action ~ N(mean_net(obs), exp(log_std)^2); returns (action, log_prob)."""
    mu = nn_core.forward(policy.mean_net, obs)
    ls = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(ls)
    noise = rng.standard_normal(mu.shape)
    action = mu + std * noise
    lp = np.sum(-0.5 * noise**2 - ls - 0.5 * _LOG_2PI, axis=-1)
    return action, lp


@dataclass
class RolloutBuffer:
    """Arrays shaped (T, n_envs, ...) collected from vectorized rollouts."""

    states: np.ndarray       # observations fed to the nets
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    value_estimates: np.ndarray
    dones: np.ndarray        # True when the episode ended at this step
    final_states: np.ndarray  # observation after the last step, per env
    advantages: np.ndarray = None
    returns: np.ndarray = None

    def __len__(self):
        return self.states.shape[0] * self.states.shape[1]


def compute_advantages(buffer, value_net, gamma, lam):
    """Generalized advantage estimation; fills advantages and raw returns.

    Advantages are additionally normalized to zero mean / unit variance
    across the whole update batch (the normalized copy is what ppo_update
    consumes; returns use the unnormalized advantages).
    """
    if buffer.states.size == 0:
        raise ValueError("empty rollout buffer")
    T, B = buffer.rewards.shape
    values = buffer.value_estimates
    last_v = nn_core.forward(value_net, buffer.final_states)[:, 0]
    adv = np.zeros((T, B))
    gae = np.zeros(B)
    for t in range(T - 1, -1, -1):
        next_v = last_v if t == T - 1 else values[t + 1]
        not_done = 1.0 - buffer.dones[t]
        delta = buffer.rewards[t] + gamma * next_v * not_done - values[t]
        gae = delta + gamma * lam * not_done * gae
        adv[t] = gae
    buffer.returns = adv + values
    std = adv.std()
    buffer.advantages = (adv - adv.mean()) / (std + 1e-8)
    return buffer


def clipped_surrogate(ratio, advantage, eps):
    """min(r*A, clip(r, 1-eps, 1+eps)*A); the pessimistic PPO objective."""
    ratio = np.asarray(ratio, float)
    advantage = np.asarray(advantage, float)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)


@dataclass
class _TrainState:
    policy: GaussianPolicy
    value_net: nn_core.NetworkParams
    policy_adam: nn_core.AdamState
    value_adam: nn_core.AdamState


def _init_train_state(policy, value_net, cfg):
    p_params = policy.mean_net.weights + policy.mean_net.biases + [policy.log_std]
    return _TrainState(
        policy=policy,
        value_net=value_net,
        policy_adam=nn_core.adam_init(p_params, cfg.learning_rate),
        value_adam=nn_core.adam_state_for(value_net, cfg.learning_rate),
    )


def _policy_minibatch_grads(policy, obs, actions, old_logp, adv, cfg):
    """Loss and gradients of the clipped surrogate (+entropy) minibatch."""
    B = obs.shape[0]
    mu, cache = nn_core.forward_cache(policy.mean_net, obs)
    ls = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(ls)
    z = (actions - mu) / std
    logp = np.sum(-0.5 * z**2 - ls - 0.5 * _LOG_2PI, axis=-1)
    ratio = np.exp(logp - old_logp)
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv
    pg_loss = -np.mean(np.minimum(s1, s2))
    # gradient flows only where the unclipped branch attains the min
    active = (s1 <= s2).astype(float)
    dlogp = -(adv * ratio * active) / B
    up_mu = dlogp[:, None] * z / std
    g_logstd = np.sum(dlogp[:, None] * (z**2 - 1.0), axis=0)
    entropy = float(np.sum(ls + 0.5 * (1.0 + _LOG_2PI)))
    g_logstd -= cfg.entropy_coef * np.ones_like(g_logstd)
    grads = nn_core.backward_from_cache(policy.mean_net, cache, up_mu)
    glist = grads.d_weights + grads.d_biases + [g_logstd]
    diag = {
        "pg_loss": float(pg_loss),
        "entropy": entropy,
        "clip_frac": float(np.mean(s1 > s2)),
    }
    return glist, diag


def _value_minibatch_grads(value_net, obs, returns, cfg):
    B = obs.shape[0]
    v, cache = nn_core.forward_cache(value_net, obs)
    err = v[:, 0] - returns
    v_loss = cfg.vf_coef * float(np.mean(err**2))
    upstream = (cfg.vf_coef * 2.0 * err / B)[:, None]
    grads = nn_core.backward_from_cache(value_net, cache, upstream)
    return grads.d_weights + grads.d_biases, v_loss


def ppo_update(state, buffer, cfg, rng):
    """Run epochs_per_update passes of minibatch SGA; returns diagnostics."""
    if buffer.advantages is None:
        raise ValueError("advantages must be computed before ppo_update")
    T, B = buffer.rewards.shape
    n = T * B
    obs = buffer.states.reshape(n, -1)
    actions = buffer.actions.reshape(n, -1)
    old_logp = buffer.log_probs.reshape(n)
    adv = buffer.advantages.reshape(n)
    returns = buffer.returns.reshape(n)
    diag = {}
    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            glist, pdiag = _policy_minibatch_grads(
                state.policy, obs[idx], actions[idx], old_logp[idx], adv[idx], cfg
            )
            vglist, v_loss = _value_minibatch_grads(state.value_net, obs[idx], returns[idx], cfg)
            loss = pdiag["pg_loss"] + v_loss - cfg.entropy_coef * pdiag["entropy"]
            if not math.isfinite(loss):
                raise RuntimeError(f"non-finite PPO loss: pg={pdiag['pg_loss']} vf={v_loss}")
            glist = nn_core.clip_grads(glist, cfg.max_grad_norm)
            vglist = nn_core.clip_grads(vglist, cfg.max_grad_norm)

            p_params = (
                state.policy.mean_net.weights
                + state.policy.mean_net.biases
                + [state.policy.log_std]
            )
            new_p, state.policy_adam = nn_core.adam_apply(p_params, glist, state.policy_adam)
            nw = len(state.policy.mean_net.weights)
            mean_net = nn_core.NetworkParams(
                list(state.policy.mean_net.layer_dims),
                new_p[:nw],
                new_p[nw : 2 * nw],
                list(state.policy.mean_net.activations),
            )
            state.policy = GaussianPolicy(mean_net, new_p[-1])

            v_params = state.value_net.weights + state.value_net.biases
            new_v, state.value_adam = nn_core.adam_apply(v_params, vglist, state.value_adam)
            state.value_net = nn_core.NetworkParams(
                list(state.value_net.layer_dims),
                new_v[:nw],
                new_v[nw:],
                list(state.value_net.activations),
            )
            diag = {**pdiag, "v_loss": v_loss, "loss": loss}
    return diag


class _VecEnvs:
    """Batch of independent fixed-horizon MDPs stepped with one numpy call."""

    def __init__(self, system, target, n_envs, horizon, reward_coeffs, reward_frame,
                 reset_radius, rng):
        self.system = system
        self.target = np.asarray(target, float)
        self.n = n_envs
        self.horizon = horizon
        self.reward_coeffs = reward_coeffs
        self.reward_frame = reward_frame
        self.reset_radius = reset_radius
        self.states = np.zeros((n_envs, 2))
        self.steps = np.zeros(n_envs, dtype=int)
        for i in range(n_envs):
            self.states[i] = self._draw_reset(rng)

    def _draw_reset(self, rng):
        lo, hi = self.system.state_bounds.arrays()
        while True:
            r = self.reset_radius * np.sqrt(rng.uniform())
            th = rng.uniform(0.0, 2.0 * np.pi)
            x = self.target + r * np.array([np.cos(th), np.sin(th)])
            if np.all(x >= lo) and np.all(x <= hi):
                return x

    def observe(self):
        b = self.system.state_bounds
        return normalize(self.states, b) - normalize(self.target, b)

    def step(self, u, rng):
        us = saturate(u, self.system.u_max)
        r = reward(self.states, us, self.target, self.system.state_bounds,
                   self.reward_coeffs, self.reward_frame)
        nxt = clip_to_bounds(integrate(self.system, self.states, us), self.system.state_bounds)
        self.states = nxt
        self.steps += 1
        dones = self.steps >= self.horizon
        for i in np.flatnonzero(dones):
            self.states[i] = self._draw_reset(rng)
            self.steps[i] = 0
        return r, dones


def train_policy(env_factory, target, cfg, rng, reset_radius=None):
    """Train a node policy at the given target; returns (policy, reward_curve).

    env_factory() must return a fresh MdpEnv for the target; its system,
    horizon and reward settings parameterize the vectorized rollouts.
    Episodes start uniformly in the disk of reset_radius around the target
    (default cfg.reset_radius), clipped to the state bounds; a wide disk
    forces the policy to learn long approaches, not just local regulation.
    reward_curve holds the mean total reward of the episodes completed
    during each update (nan for updates where none finished).
    """
    proto = env_factory()
    obs_dim = act_dim = 2
    policy = init_policy(obs_dim, act_dim, rng)
    value_net = init_value_net(obs_dim, rng)
    steps_per_update = cfg.n_envs * cfg.rollout_len
    n_updates = int(cfg.total_timesteps) // steps_per_update
    if cfg.total_timesteps > 0 and n_updates == 0:
        raise ValueError(
            f"total_timesteps={cfg.total_timesteps} is below one rollout "
            f"({steps_per_update} steps)"
        )
    if n_updates == 0:
        return policy, []

    if reset_radius is None:
        reset_radius = cfg.reset_radius
    envs = _VecEnvs(
        proto.system, target, cfg.n_envs, proto.horizon, proto.reward_coeffs,
        proto.reward_frame, reset_radius, rng,
    )
    state = _init_train_state(policy, value_net, cfg)
    reward_curve = []
    ep_return = np.zeros(cfg.n_envs)
    T, B = cfg.rollout_len, cfg.n_envs
    for _ in range(n_updates):
        obs_buf = np.zeros((T, B, obs_dim))
        act_buf = np.zeros((T, B, act_dim))
        logp_buf = np.zeros((T, B))
        rew_buf = np.zeros((T, B))
        done_buf = np.zeros((T, B))
        finished = []
        for t in range(T):
            obs = envs.observe()
            act, logp = sample_action(state.policy, obs, rng)
            r, dones = envs.step(act, rng)
            obs_buf[t] = obs
            act_buf[t] = act
            logp_buf[t] = logp
            rew_buf[t] = r
            done_buf[t] = dones
            ep_return += r
            for i in np.flatnonzero(dones):
                finished.append(ep_return[i])
                ep_return[i] = 0.0
        values = nn_core.forward(state.value_net, obs_buf.reshape(T * B, -1))
        buffer = RolloutBuffer(
            states=obs_buf,
            actions=act_buf,
            log_probs=logp_buf,
            rewards=rew_buf,
            value_estimates=values.reshape(T, B),
            dones=done_buf,
            final_states=envs.observe(),
        )
        compute_advantages(buffer, state.value_net, cfg.gamma, cfg.gae_lambda)
        ppo_update(state, buffer, cfg, rng)
        reward_curve.append(float(np.mean(finished)) if finished else float("nan"))
    return state.policy, reward_curve
