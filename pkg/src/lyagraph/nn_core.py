"""Minimal feed-forward networks with analytic gradients and Adam.

All three network families used by the toolkit (policy mean, value and
Lyapunov networks) are small fully-connected stacks, so the whole module is
plain numpy in float64.  Gradients are exact (no autodiff framework), which
keeps training deterministic and lets tests compare against central finite
differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

ACTIVATIONS = ("leaky_relu", "relu", "gelu", "tanh", "identity")

LEAKY_SLOPE = 0.01
_GELU_C = math.sqrt(2.0 / math.pi)


class ShapeError(ValueError):
    """Input or gradient shapes do not match the network."""


def _act(name, z):
    if name == "leaky_relu":
        return np.where(z > 0.0, z, LEAKY_SLOPE * z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "gelu":
        # tanh approximation: 0.5*z*(1 + tanh(sqrt(2/pi)*(z + 0.044715*z^3)))
        return 0.5 * z * (1.0 + np.tanh(_GELU_C * (z + 0.044715 * z**3)))
    if name == "tanh":
        return np.tanh(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, z):
    # At z == 0 the kinked activations use the negative-side slope.
    if name == "leaky_relu":
        return np.where(z > 0.0, 1.0, LEAKY_SLOPE)
    if name == "relu":
        return np.where(z > 0.0, 1.0, 0.0)
    if name == "gelu":
        inner = _GELU_C * (z + 0.044715 * z**3)
        t = np.tanh(inner)
        dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * z**2)
        return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t**2) * dinner
    if name == "tanh":
        return 1.0 - np.tanh(z) ** 2
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class NetworkParams:
    """Weights, biases and per-layer activation tags of an MLP.

    weights[l] has shape (layer_dims[l+1], layer_dims[l]); biases[l] has
    shape (layer_dims[l+1],).  len(activations) == number of layers.
    """

    layer_dims: list
    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        n_layers = len(self.layer_dims) - 1
        if not (len(self.weights) == len(self.biases) == len(self.activations) == n_layers):
            raise ShapeError("layer count mismatch between dims, weights, biases, activations")
        for l in range(n_layers):
            d_out, d_in = self.layer_dims[l + 1], self.layer_dims[l]
            if self.weights[l].shape != (d_out, d_in):
                raise ShapeError(f"weights[{l}] shape {self.weights[l].shape} != ({d_out}, {d_in})")
            if self.biases[l].shape != (d_out,):
                raise ShapeError(f"biases[{l}] shape {self.biases[l].shape} != ({d_out},)")
            if self.activations[l] not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activations[l]!r}")
            if not (np.all(np.isfinite(self.weights[l])) and np.all(np.isfinite(self.biases[l]))):
                raise ValueError(f"non-finite parameters in layer {l}")

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def output_dim(self):
        return self.layer_dims[-1]

    def copy(self):
        return NetworkParams(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


@dataclass
class GradientBundle:
    """Per-parameter gradients shape-matching a NetworkParams.

    d_input carries the gradient of the scalar upstream.output with respect
    to the network input (summed over the batch when x was 2-D).
    """

    d_weights: list
    d_biases: list
    d_input: np.ndarray = None


def init_network(layer_dims, activations, rng):
    """Fan-in-scaled uniform weights, zero biases, reproducible from rng."""
    if not layer_dims:
        raise ValueError("layer_dims must be nonempty")
    weights, biases = [], []
    for l in range(len(layer_dims) - 1):
        d_in, d_out = layer_dims[l], layer_dims[l + 1]
        bound = 1.0 / math.sqrt(d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return NetworkParams(list(layer_dims), weights, biases, list(activations))


def _as_batch(x, dim, what="input"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ShapeError(f"{what} length {x.shape[0]} != expected {dim}")
        return x[None, :], True
    if x.ndim == 2:
        if x.shape[1] != dim:
            raise ShapeError(f"{what} width {x.shape[1]} != expected {dim}")
        return x, False
    raise ShapeError(f"{what} must be 1-D or 2-D")


def forward_cache(net, x2d):
    """Batched forward pass keeping pre/post-activations for backward."""
    a = x2d
    pre, post = [], [x2d]
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        a = _act(act, z)
        pre.append(z)
        post.append(a)
    return a, (pre, post)


def forward(net, x):
    """Evaluate the network; accepts a single vector or a (B, n) batch."""
    x2d, single = _as_batch(x, net.input_dim)
    out, _ = forward_cache(net, x2d)
    return out[0] if single else out


def backward_from_cache(net, cache, upstream2d):
    """Gradients of sum_b upstream[b].output[b] w.r.t. parameters and input."""
    pre, post = cache
    delta = upstream2d
    d_w = [None] * len(net.weights)
    d_b = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        delta = delta * _act_grad(net.activations[l], pre[l])
        d_w[l] = delta.T @ post[l]
        d_b[l] = delta.sum(axis=0)
        delta = delta @ net.weights[l]
    return GradientBundle(d_w, d_b, d_input=delta)


def backward(net, x, upstream):
    """Gradients of upstream.output w.r.t. parameters (and input).

    x may be a vector or a (B, n) batch with upstream of matching shape;
    batched gradients are summed over the batch.
    """
    x2d, _ = _as_batch(x, net.input_dim)
    up2d, single = _as_batch(upstream, net.output_dim, what="upstream")
    if up2d.shape[0] != x2d.shape[0]:
        raise ShapeError("upstream batch size does not match input batch size")
    _, cache = forward_cache(net, x2d)
    grads = backward_from_cache(net, cache, up2d)
    if single and x2d.shape[0] == 1:
        grads.d_input = grads.d_input[0]
    return grads


@dataclass
class AdamState:
    """Adam moment accumulators for a flat list of parameter tensors."""

    step_count: int
    first_moment: list
    second_moment: list
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")


def adam_init(params, learning_rate, beta1=0.9, beta2=0.999, eps_stab=1e-8):
    """Fresh AdamState for a list of parameter arrays."""
    return AdamState(
        step_count=0,
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        eps_stab=eps_stab,
    )


def adam_apply(params, grads, state, names=None):
    """One bias-corrected Adam step over a parameter list; returns new lists."""
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            name = names[i] if names else f"param[{i}]"
            raise ValueError(f"non-finite gradient in {name}")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * g * g
        m_hat = m2 / (1.0 - b1**t)
        v_hat = v2 / (1.0 - b2**t)
        new_params.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps_stab))
        new_m.append(m2)
        new_v.append(v2)
    new_state = replace(state, step_count=t, first_moment=new_m, second_moment=new_v)
    return new_params, new_state


def _net_params(net):
    return net.weights + net.biases


def _net_param_names(net):
    n = len(net.weights)
    return [f"weights[{l}]" for l in range(n)] + [f"biases[{l}]" for l in range(n)]


def adam_state_for(net, learning_rate, **kw):
    return adam_init(_net_params(net), learning_rate, **kw)


def adam_step(net, grads, state):
    """Standard Adam update of a whole network; returns (new_net, new_state)."""
    params = _net_params(net)
    glist = grads.d_weights + grads.d_biases
    new_params, new_state = adam_apply(params, glist, state, names=_net_param_names(net))
    n = len(net.weights)
    new_net = NetworkParams(
        list(net.layer_dims), new_params[:n], new_params[n:], list(net.activations)
    )
    return new_net, new_state


def grad_global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_grads(grads, max_norm):
    """Scale the gradient list down to the given global norm if it exceeds it."""
    norm = grad_global_norm(grads)
    if max_norm is not None and norm > max_norm > 0.0:
        scale = max_norm / norm
        return [g * scale for g in grads]
    return grads


def _fmt(v):
    # 17 significant digits round-trips any IEEE double exactly.
    return float(f"{v:.17g}")


def net_to_dict(net):
    return {
        "layer_dims": [int(d) for d in net.layer_dims],
        "activations": list(net.activations),
        "weights": [[[_fmt(v) for v in row] for row in w] for w in net.weights],
        "biases": [[_fmt(v) for v in b] for b in net.biases],
    }


def net_from_dict(d):
    return NetworkParams(
        [int(x) for x in d["layer_dims"]],
        [np.asarray(w, dtype=float) for w in d["weights"]],
        [np.asarray(b, dtype=float) for b in d["biases"]],
        list(d["activations"]),
    )


def save_network(net, path):
    with open(path, "w") as f:
        json.dump(net_to_dict(net), f)


def load_network(path):
    with open(path) as f:
        return net_from_dict(json.load(f))
