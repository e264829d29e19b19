"""Linear and nonlinear Gaussian observation models.

Every function accepts a single graph ``G`` of shape ``(d, d)`` or a batch of
graphs ``(S, d, d)``; hard and soft graphs are treated identically (a soft
graph simply scales each parent's contribution). Values come back with the
batch shape of ``G``; gradients follow the same leading axes.

With ``grad=True`` the functions return ``(value, grad_params, grad_G)``.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import ValidationError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters of the observation model."""

    mu_e: float = 0.0
    sigma_e: float = 1.0
    sigma_p: float = 1.0
    sigma_obs: float = 0.1
    hidden: tuple = (5,)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("sigma_e", "sigma_p", "sigma_obs"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if any(h < 1 for h in self.hidden):
            raise ValidationError("hidden layer sizes must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")


def _log_normal(x, mean, std):
    return -0.5 * (LOG_2PI + 2.0 * math.log(std)) - 0.5 * ((x - mean) / std) ** 2


def _data(X) -> np.ndarray:
    X = getattr(X, "X", X)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValidationError(f"data must be an (n, d) matrix, got shape {X.shape}")
    return X


# --------------------------------------------------------------------------- #
# Linear Gaussian model; theta[j, i] is the weight of X_j in the equation of X_i
# --------------------------------------------------------------------------- #

def linear_log_param_prior(theta, G, cfg: ModelConfig, grad=False):
    theta = np.asarray(theta, dtype=float)
    G = np.asarray(G, dtype=float)
    ld = _log_normal(theta, cfg.mu_e, cfg.sigma_e)
    value = (G * ld).sum(axis=(-2, -1))
    if not grad:
        return value
    g_theta = -G * (theta - cfg.mu_e) / cfg.sigma_e ** 2
    g_G = np.broadcast_to(ld, G.shape).copy()
    return value, g_theta, g_G


def linear_log_likelihood(X, G, theta, cfg: ModelConfig, grad=False):
    """Gaussian log-density of every row of ``X`` under ``X_i ~ N(X @ (G*theta))_i``."""
    X = _data(X)
    theta = np.asarray(theta, dtype=float)
    G = np.asarray(G, dtype=float)
    n, d = X.shape
    if theta.shape != (d, d) or G.shape[-2:] != (d, d):
        raise ValidationError("shape mismatch between data, graph and parameters")
    var = cfg.sigma_obs ** 2
    # R = X (I - W), so ||R||^2 = sum(A * C A) and X^T R = C A with C = X^T X
    C = X.T @ X
    A = np.eye(d) - G * theta
    CA = C @ A
    value = -0.5 * n * d * (LOG_2PI + math.log(var)) - 0.5 * (A * CA).sum(axis=(-2, -1)) / var
    if not grad:
        return value
    g_W = CA / var
    return value, G * g_W, theta * g_W


# --------------------------------------------------------------------------- #
# Nonlinear Gaussian model: one MLP per node over parent-masked inputs
# --------------------------------------------------------------------------- #

def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x):
    return (x > 0).astype(float)


def _identity_grad(x):
    return np.ones_like(x)


_ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "linear": (lambda x: x, _identity_grad),
}


@dataclass(frozen=True, eq=False)
class NonlinearParams:
    """Per-node MLP weights stacked along a leading node axis.

    ``weights[l]`` has shape ``(d, out_l, in_l)`` and ``biases[l]`` has shape
    ``(d, out_l)``; the first layer reads all ``d`` variables and the last
    one emits a scalar.
    """

    weights: tuple
    biases: tuple
    activation: str = "relu"

    def __post_init__(self):
        weights = tuple(np.asarray(w, dtype=float) for w in self.weights)
        biases = tuple(np.asarray(b, dtype=float) for b in self.biases)
        if not weights or len(weights) != len(biases):
            raise ValidationError("need one bias vector per weight matrix")
        d = weights[0].shape[0]
        if weights[0].shape[2] != d:
            raise ValidationError("first layer must read all d inputs")
        for l, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 3 or w.shape[0] != d or b.shape != w.shape[:2]:
                raise ValidationError(f"layer {l}: bad shapes {w.shape}, {b.shape}")
            if l and w.shape[2] != weights[l - 1].shape[1]:
                raise ValidationError(f"layer {l}: input width does not match previous output")
        if weights[-1].shape[1] != 1:
            raise ValidationError("output layer must have width 1")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def d(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden(self) -> tuple:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def layer_sizes(self) -> list:
        return [self.d, *self.hidden, 1]

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)

    @staticmethod
    def n_params(d: int, hidden) -> int:
        sizes = [d, *hidden, 1]
        return d * sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))

    @classmethod
    def from_flat(cls, vec, d: int, hidden, activation="relu") -> "NonlinearParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (cls.n_params(d, hidden),):
            raise ValidationError("flat parameter vector has the wrong length")
        sizes = [d, *hidden, 1]
        weights, biases, pos = [], [], 0
        for i, o in zip(sizes[:-1], sizes[1:]):
            weights.append(vec[pos:pos + d * o * i].reshape(d, o, i))
            pos += d * o * i
            biases.append(vec[pos:pos + d * o].reshape(d, o))
            pos += d * o
        return cls(tuple(weights), tuple(biases), activation)

    @classmethod
    def sample(cls, rng, d: int, hidden=(5,), sigma=1.0, activation="relu") -> "NonlinearParams":
        vec = rng.normal(0.0, sigma, size=cls.n_params(d, hidden))
        return cls.from_flat(vec, d, hidden, activation)

    def node(self, i: int):
        """Weights and biases of node ``i`` as two lists."""
        return [w[i] for w in self.weights], [b[i] for b in self.biases]


def ffn_forward(x, weights, biases, mask, activation="relu") -> float:
    """Single-node MLP output for the masked input ``mask * x``.

    ``weights``/``biases`` are the per-layer arrays of one node (see
    :meth:`NonlinearParams.node`); the activation is applied between layers,
    never after the last one.
    """
    act = _ACTIVATIONS[activation][0]
    h = np.asarray(mask, dtype=float) * np.asarray(x, dtype=float)
    for l, (w, b) in enumerate(zip(weights, biases)):
        w = np.asarray(w, dtype=float)
        if w.shape[1] != h.shape[0]:
            raise ValidationError(f"layer {l}: expected input width {w.shape[1]}, got {h.shape[0]}")
        h = w @ h + b
        if l < len(weights) - 1:
            h = act(h)
    if h.shape != (1,):
        raise ValidationError("final layer must produce a scalar")
    return float(h[0])


def _nonlinear_forward(X, G, params: NonlinearParams):
    """Forward pass for all nodes and graphs; keeps pre-activations for backprop.

    Returns the per-layer pre-activations (each ``(S, n, d, out_l)``) and the
    network output ``(S, n, d)``, with ``S`` the flattened graph batch.
    """
    act = _ACTIVATIONS[params.activation][0]
    S = G.shape[0]
    n, d = X.shape
    W1 = params.weights[0]
    H = W1.shape[1]
    Gt = np.swapaxes(G, -1, -2)                           # (S, i, b)
    E = Gt[:, :, None, :] * W1[None]                      # (S, i, h, b)
    z = (X @ E.reshape(S * d * H, d).T).reshape(n, S, d, H).transpose(1, 0, 2, 3)
    z = z + params.biases[0]
    pre = [z]
    for w, b in zip(params.weights[1:], params.biases[1:]):
        z = np.einsum("snih,ioh->snio", act(pre[-1]), w) + b
        pre.append(z)
    return pre, pre[-1][..., 0]


def nonlinear_log_param_prior(params: NonlinearParams, G, cfg: ModelConfig, grad=False):
    """Gaussian prior; first-layer input weights of node i are masked by ``G[:, i]``."""
    G = np.asarray(G, dtype=float)
    batch = G.shape[:-2]
    Gb = G.reshape((-1,) + G.shape[-2:])
    sp = cfg.sigma_p
    W1 = params.weights[0]
    ld_W1 = _log_normal(W1, 0.0, sp)                       # (i, h, b)
    per_input = ld_W1.sum(axis=1)                          # (i, b)
    unmasked = _log_normal(params.biases[0], 0.0, sp).sum()
    for w, b in zip(params.weights[1:], params.biases[1:]):
        unmasked += _log_normal(w, 0.0, sp).sum() + _log_normal(b, 0.0, sp).sum()
    value = (np.swapaxes(Gb, -1, -2) * per_input).sum(axis=(-2, -1)) + unmasked
    value = value.reshape(batch)
    if not grad:
        return value
    S = Gb.shape[0]
    grads = []
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        gw = np.broadcast_to(-w / sp ** 2, (S,) + w.shape)
        if l == 0:
            gw = gw * np.swapaxes(Gb, -1, -2)[:, :, None, :]
        grads += [gw.reshape(S, -1), np.broadcast_to(-b / sp ** 2, (S,) + b.shape).reshape(S, -1)]
    g_params = np.concatenate(grads, axis=1).reshape(batch + (-1,))
    g_G = np.broadcast_to(per_input.T, Gb.shape).reshape(G.shape).copy()
    return value, g_params, g_G


def nonlinear_log_likelihood(X, G, params: NonlinearParams, cfg: ModelConfig, grad=False):
    X = _data(X)
    G = np.asarray(G, dtype=float)
    n, d = X.shape
    if params.d != d or G.shape[-2:] != (d, d):
        raise ValidationError("shape mismatch between data, graph and parameters")
    batch = G.shape[:-2]
    Gb = G.reshape((-1, d, d))
    S = Gb.shape[0]
    var = cfg.sigma_obs ** 2
    pre, out = _nonlinear_forward(X, Gb, params)
    R = X[None] - out                                      # (S, n, d)
    value = -0.5 * n * d * (LOG_2PI + math.log(var)) - 0.5 * (R ** 2).sum(axis=(1, 2)) / var
    value = value.reshape(batch)
    if not grad:
        return value

    act, act_grad = _ACTIVATIONS[params.activation]
    L = len(params.weights)
    delta = (R / var)[..., None]                           # dlogp / d pre[L-1]
    g_layers = [None] * L
    for l in range(L - 1, 0, -1):
        a_prev = act(pre[l - 1])
        gw = np.einsum("snio,snih->sioh", delta, a_prev)
        gb = delta.sum(axis=1)
        g_layers[l] = (gw, gb)
        delta = np.einsum("snio,ioh->snih", delta, params.weights[l]) * act_grad(pre[l - 1])
    H = params.weights[0].shape[1]
    # first layer works on effective weights E[s,i,h,b] = G[s,b,i] * W1[i,h,b]
    gE = (np.swapaxes(delta.reshape(S, n, d * H), 1, 2) @ X).reshape(S, d, H, d)
    Gt = np.swapaxes(Gb, -1, -2)
    g_layers[0] = (gE * Gt[:, :, None, :], delta.sum(axis=1))
    g_G = np.swapaxes((gE * params.weights[0][None]).sum(axis=2), -1, -2)
    g_params = np.concatenate(
        [np.concatenate([gw.reshape(S, -1), gb.reshape(S, -1)], axis=1) for gw, gb in g_layers],
        axis=1,
    )
    return value, g_params.reshape(batch + (-1,)), g_G.reshape(G.shape)


def nonlinear_predict(X, G, params: NonlinearParams) -> np.ndarray:
    """Per-node MLP means for every row of ``X`` (single graph)."""
    X = _data(X)
    _, out = _nonlinear_forward(X, np.asarray(G, dtype=float)[None], params)
    return out[0]


# --------------------------------------------------------------------------- #
# Joint p(Theta, D | G) and model adapters used by the inference engine
# --------------------------------------------------------------------------- #

def log_joint_theta_data(X, G, params, cfg: ModelConfig):
    """``log p(Theta | G) + log p(D | G, Theta)`` for either model family."""
    if isinstance(params, NonlinearParams):
        return nonlinear_log_param_prior(params, G, cfg) + nonlinear_log_likelihood(X, G, params, cfg)
    return linear_log_param_prior(params, G, cfg) + linear_log_likelihood(X, G, params, cfg)


class LinearGaussian:
    """Adapter exposing the linear model on flat parameter vectors."""

    name = "linear"

    def __init__(self, d: int, cfg: ModelConfig):
        self.d, self.cfg = d, cfg
        self.n_params = d * d

    def unflatten(self, vec):
        return np.asarray(vec, dtype=float).reshape(self.d, self.d)

    def init_params(self, rng) -> np.ndarray:
        return rng.normal(0.0, 1.0, size=self.n_params)

    def log_joint(self, X, G, vec, grad=False):
        theta = self.unflatten(vec)
        if not grad:
            return linear_log_param_prior(theta, G, self.cfg) + linear_log_likelihood(X, G, theta, self.cfg)
        v1, gt1, gg1 = linear_log_param_prior(theta, G, self.cfg, grad=True)
        v2, gt2, gg2 = linear_log_likelihood(X, G, theta, self.cfg, grad=True)
        gt = (gt1 + gt2).reshape(np.shape(v1) + (self.n_params,))
        return v1 + v2, gt, gg1 + gg2

    def log_likelihood(self, X, G, vec):
        return linear_log_likelihood(X, G, self.unflatten(vec), self.cfg)


class NonlinearGaussian:
    """Adapter exposing the MLP model on flat parameter vectors."""

    name = "nonlinear"

    def __init__(self, d: int, cfg: ModelConfig):
        self.d, self.cfg = d, cfg
        self.n_params = NonlinearParams.n_params(d, cfg.hidden)

    def unflatten(self, vec):
        return NonlinearParams.from_flat(vec, self.d, self.cfg.hidden, self.cfg.activation)

    def init_params(self, rng) -> np.ndarray:
        return rng.normal(0.0, self.cfg.sigma_p, size=self.n_params)

    def log_joint(self, X, G, vec, grad=False):
        params = self.unflatten(vec)
        if not grad:
            return (nonlinear_log_param_prior(params, G, self.cfg)
                    + nonlinear_log_likelihood(X, G, params, self.cfg))
        v1, gp1, gg1 = nonlinear_log_param_prior(params, G, self.cfg, grad=True)
        v2, gp2, gg2 = nonlinear_log_likelihood(X, G, params, self.cfg, grad=True)
        return v1 + v2, gp1 + gp2, gg1 + gg2

    def log_likelihood(self, X, G, vec):
        return nonlinear_log_likelihood(X, G, self.unflatten(vec), self.cfg)


def make_model(kind: str, d: int, cfg: ModelConfig):
    if kind == "linear":
        return LinearGaussian(d, cfg)
    if kind == "nonlinear":
        return NonlinearGaussian(d, cfg)
    raise ValidationError(f"unknown model {kind!r}; expected 'linear' or 'nonlinear'")
