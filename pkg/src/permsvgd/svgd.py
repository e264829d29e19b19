"""Stein variational inference of the joint posterior over latents and parameters.

The ordering is fixed for the whole run, so every graph the engine produces is
``P S P^T`` for a strictly upper triangular ``S`` and is acyclic by
construction.

Score estimators are self-normalized Monte Carlo ratios evaluated in log space:
``sum_s softmax(log p(Theta, D | G_s)) * grad_s``. Raw joint densities
underflow long before ``n = 100`` observations, so nothing is ever
exponentiated outside a softmax.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import json
import logging
import math
from pathlib import Path

import numpy as np
from scipy.special import expit, logsumexp

from . import streams
from .errors import NumericDegeneracyError, ValidationError
from .graph import DirectedGraph, graph_to_canonical, permute_to_graph
from .latent import (
    LatentParticle,
    block_grad_to_latent,
    canonical_block,
    dot_block,
    embed_block,
    hard_canonical,
    log_latent_prior,
    resolve_ordering,
    sample_canonical,
)
from .likelihood import ModelConfig, make_model
from .synth import er_edge_probability

log = logging.getLogger(__name__)

_Q_CLIP = 1e-3


@dataclass(frozen=True)
class ScoreEstimatorConfig:
    """Monte Carlo settings for the score estimators.

    ``z_estimator`` picks the likelihood-gradient estimator for the latents:
    ``"gumbel"`` (relaxed reparameterization) or ``"score"`` (score function
    on hard samples). ``denominator`` chooses whether the gumbel ratio is
    normalized by the same relaxed samples (``"soft"``) or by fresh hard
    graphs (``"hard"``). ``n_prior_samples = 0`` evaluates the expected graph
    prior exactly.
    """

    n_graph_samples: int = 64
    n_gumbel_samples: int = 64
    tau: float = 1.0
    z_estimator: str = "gumbel"
    denominator: str = "soft"
    n_prior_samples: int = 0

    def __post_init__(self):
        if self.n_graph_samples < 1 or self.n_gumbel_samples < 1:
            raise ValidationError("sample counts must be >= 1")
        if self.n_prior_samples < 0:
            raise ValidationError("n_prior_samples must be >= 0")
        if not self.tau > 0:
            raise ValidationError("tau must be > 0")
        if self.z_estimator not in ("gumbel", "score"):
            raise ValidationError(f"unknown z_estimator {self.z_estimator!r}")
        if self.denominator not in ("soft", "hard"):
            raise ValidationError(f"unknown denominator {self.denominator!r}")


@dataclass(frozen=True)
class KernelConfig:
    gamma_z: float = 5.0
    gamma_theta: float = 500.0

    def __post_init__(self):
        if not (self.gamma_z > 0 and self.gamma_theta > 0):
            raise ValidationError("kernel bandwidths must be > 0")


@dataclass(frozen=True)
class SVGDConfig:
    n_particles: int = 30
    steps: int = 1000
    alpha_rate: float = 0.05
    learning_rate: float = 0.005
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    model: str = "linear"
    model_cfg: ModelConfig = field(default_factory=ModelConfig)
    estimator: ScoreEstimatorConfig = field(default_factory=ScoreEstimatorConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    expected_degree: float = 1.0
    q: float | None = None
    k: int | None = None
    sigma_z: float | None = None
    use_likelihood: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValidationError("n_particles must be >= 1")
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")
        if not (self.alpha_rate > 0 and self.learning_rate > 0):
            raise ValidationError("alpha_rate and learning_rate must be > 0")
        if self.q is not None and not 0.0 < self.q < 1.0:
            raise ValidationError("q must lie in (0, 1)")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")

    def latent_dim(self, d: int) -> int:
        k = d if self.k is None else self.k
        if k < d - 1:
            raise ValidationError(f"k={k} must be >= d-1={d - 1}")
        return k

    def latent_std(self, d: int) -> float:
        return 1.0 / math.sqrt(self.latent_dim(d)) if self.sigma_z is None else self.sigma_z

    def edge_prior(self, d: int) -> float:
        if self.q is not None:
            return self.q
        q = er_edge_probability(d, self.expected_degree) if d >= 2 else 0.5
        return float(min(max(q, _Q_CLIP), 1.0 - _Q_CLIP))


class _Degenerate(Exception):
    pass


def _self_normalize(log_w, values):
    """Softmax-weighted mean of ``values`` and its delta-method standard error."""
    log_w = np.asarray(log_w, dtype=float)
    if np.any(np.isnan(log_w)) or not np.any(np.isfinite(log_w)):
        raise _Degenerate(log_w)
    w = np.exp(log_w - log_w.max())
    w /= w.sum()
    est = np.tensordot(w, values, axes=1)
    se = np.sqrt(np.tensordot(w ** 2, (values - est) ** 2, axes=1))
    return est, se


# --------------------------------------------------------------------------- #
# Score estimators for a single particle
# --------------------------------------------------------------------------- #

def _retry(fn, rng, diagnostics):
    try:
        return fn(1)
    except _Degenerate:
        log.warning("all importance weights degenerate; retrying with 4x samples")
    try:
        return fn(4)
    except _Degenerate as exc:
        diagnostics = dict(diagnostics, log_weights=np.asarray(exc.args[0]).tolist()[:16])
        raise NumericDegeneracyError("all Monte Carlo weights are -inf or NaN", diagnostics) from None


def score_theta(Z: LatentParticle, theta, X, perm, alpha: float, cfg: SVGDConfig, rng,
                return_stderr: bool = False):
    """Gradient of ``log p(Z, Theta | D, P)`` with respect to the flat parameters."""
    X = np.asarray(getattr(X, "X", X), dtype=float)
    order = resolve_ordering(perm, Z.d)
    model = make_model(cfg.model, Z.d, cfg.model_cfg)
    theta = np.asarray(theta, dtype=float)

    def run(mult):
        S = sample_canonical(Z, alpha, cfg.estimator.n_graph_samples * mult, rng)
        G = permute_to_graph(S, order)
        lp, g_theta, _ = model.log_joint(X, G, theta, grad=True)
        return _self_normalize(lp, g_theta)

    est, se = _retry(run, rng, {"alpha": alpha, "estimator": "theta"})
    return (est, se) if return_stderr else est


def _likelihood_z_gumbel(Z, theta, X, order, alpha, cfg, model, rng, mult):
    est_cfg = cfg.estimator
    n_s = est_cfg.n_gumbel_samples * mult
    d = Z.d
    L = rng.logistic(0.0, 1.0, size=(n_s, d - 1, d - 1))
    soft_block = expit((L + alpha * dot_block(Z)) / est_cfg.tau)
    G = permute_to_graph(embed_block(soft_block), order)
    lp, _, g_G = model.log_joint(X, G, theta, grad=True)
    g_block = canonical_block(graph_to_canonical(g_G, order))
    g_D = g_block * soft_block * (1.0 - soft_block) * (alpha / est_cfg.tau)
    gU, gV = block_grad_to_latent(g_D, Z)
    grads = np.concatenate([gU.reshape(n_s, -1), gV.reshape(n_s, -1)], axis=1)
    if est_cfg.denominator == "soft":
        return _self_normalize(lp, grads)

    # numerator over relaxed samples, denominator over hard graphs
    S = sample_canonical(Z, alpha, est_cfg.n_graph_samples * mult, rng)
    lp_hard = model.log_joint(X, permute_to_graph(S, order), theta)
    if np.any(np.isnan(lp)) or np.any(np.isnan(lp_hard)) or not np.any(np.isfinite(lp_hard)):
        raise _Degenerate(lp_hard)
    log_num, sign = logsumexp(lp[:, None], b=grads, axis=0, return_sign=True)
    log_den = logsumexp(lp_hard)
    shift = math.log(len(lp_hard)) - math.log(n_s)
    with np.errstate(over="ignore"):
        est = sign * np.exp(log_num - log_den + shift)
    c = max(lp.max(), lp_hard.max())
    num_s = np.exp(lp - c)[:, None] * grads
    den_s = np.exp(lp_hard - c)
    mean_den = den_s.mean()
    ratio = num_s.mean(axis=0) / mean_den
    var = (num_s.var(axis=0) / n_s + ratio ** 2 * den_s.var() / len(den_s)) / mean_den ** 2
    return est, np.sqrt(var)


def _likelihood_z_score(Z, theta, X, order, alpha, cfg, model, rng, mult):
    n_s = cfg.estimator.n_graph_samples * mult
    probs = expit(alpha * dot_block(Z))
    S = sample_canonical(Z, alpha, n_s, rng)
    lp = model.log_joint(X, permute_to_graph(S, order), theta)
    g_D = alpha * (canonical_block(S) - probs)
    gU, gV = block_grad_to_latent(g_D, Z)
    grads = np.concatenate([gU.reshape(n_s, -1), gV.reshape(n_s, -1)], axis=1)
    return _self_normalize(lp, grads)


def score_z(Z: LatentParticle, theta, X, perm, alpha: float, cfg: SVGDConfig, rng,
            return_stderr: bool = False):
    """Gradient of ``log p(Z, Theta | D, P)`` with respect to ``(U, V)``, flattened.

    The latent-prior part is exact unless ``n_prior_samples`` is set; the
    likelihood ratio is estimated as configured in ``cfg.estimator``. The
    standard error covers the Monte Carlo part only.
    """
    X = np.asarray(getattr(X, "X", X), dtype=float)
    d = Z.d
    order = resolve_ordering(perm, d)
    est_cfg = cfg.estimator
    noise = None
    if est_cfg.n_prior_samples:
        noise = rng.logistic(0.0, 1.0, size=(est_cfg.n_prior_samples, d - 1, d - 1))
    _, gU, gV = log_latent_prior(Z, order, alpha, cfg.edge_prior(d), cfg.latent_std(d),
                                 noise=noise, tau=est_cfg.tau, grad=True)
    prior = np.concatenate([gU.ravel(), gV.ravel()])
    if not cfg.use_likelihood:
        return (prior, np.zeros_like(prior)) if return_stderr else prior

    model = make_model(cfg.model, d, cfg.model_cfg)
    theta = np.asarray(theta, dtype=float)
    fn = _likelihood_z_gumbel if est_cfg.z_estimator == "gumbel" else _likelihood_z_score
    est, se = _retry(lambda mult: fn(Z, theta, X, order, alpha, cfg, model, rng, mult), rng,
                     {"alpha": alpha, "estimator": f"z/{est_cfg.z_estimator}"})
    total = prior + est
    return (total, se) if return_stderr else total


# --------------------------------------------------------------------------- #
# Kernel
# --------------------------------------------------------------------------- #

def kernel(a, b, cfg: KernelConfig, grad: bool = False):
    """Additive RBF kernel on flattened latents and parameters.

    ``a`` and ``b`` are ``(z, theta)`` pairs of arrays. With ``grad=True``
    the gradients with respect to ``a``'s latent and parameter parts are
    returned as well.
    """
    za, ta = (np.asarray(x, dtype=float).ravel() for x in a)
    zb, tb = (np.asarray(x, dtype=float).ravel() for x in b)
    if za.shape != zb.shape or ta.shape != tb.shape:
        raise ValidationError("kernel arguments have mismatched shapes")
    kz = math.exp(-((za - zb) ** 2).sum() / cfg.gamma_z)
    kt = math.exp(-((ta - tb) ** 2).sum() / cfg.gamma_theta)
    if not grad:
        return kz + kt
    return kz + kt, -2.0 / cfg.gamma_z * kz * (za - zb), -2.0 / cfg.gamma_theta * kt * (ta - tb)


def _kernel_matrices(Zf, Tf, cfg: KernelConfig):
    def sqdist(A):
        diff = A[:, None, :] - A[None, :, :]
        return (diff ** 2).sum(axis=-1)

    return np.exp(-sqdist(Zf) / cfg.gamma_z), np.exp(-sqdist(Tf) / cfg.gamma_theta)


def svgd_directions(Zf, Tf, score_Z, score_T, cfg: KernelConfig):
    """Stein directions for every particle from one snapshot of all particles.

    ``phi_m = mean_r [k(r, m) * score_r + grad_{x_r} k(r, m)]``.
    """
    M = Zf.shape[0]
    Kz, Kt = _kernel_matrices(Zf, Tf, cfg)
    K = Kz + Kt
    rep_z = -2.0 / cfg.gamma_z * (Kz.T @ Zf - Kz.sum(axis=0)[:, None] * Zf)
    rep_t = -2.0 / cfg.gamma_theta * (Kt.T @ Tf - Kt.sum(axis=0)[:, None] * Tf)
    return (K.T @ score_Z + rep_z) / M, (K.T @ score_T + rep_t) / M


# --------------------------------------------------------------------------- #
# Particle state and the update loop
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class ParticleSet:
    """All particles after ``t`` completed steps plus RMSProp accumulators."""

    t: int
    Z: np.ndarray          # (M, 2 (d-1) k): U and V flattened per particle
    theta: np.ndarray      # (M, p)
    msq_z: np.ndarray
    msq_theta: np.ndarray
    d: int
    k: int

    @property
    def M(self) -> int:
        return self.Z.shape[0]

    def latent(self, m: int) -> LatentParticle:
        return LatentParticle.from_flat(self.Z[m], self.d, self.k)

    def graphs(self, perm) -> list[DirectedGraph]:
        order = resolve_ordering(perm, self.d)
        return [DirectedGraph(permute_to_graph(hard_canonical(self.latent(m)), order))
                for m in range(self.M)]


def init_particles(d: int, cfg: SVGDConfig, seed: int) -> ParticleSet:
    k = cfg.latent_dim(d)
    sz = cfg.latent_std(d)
    model = make_model(cfg.model, d, cfg.model_cfg)
    Zs, Ts = [], []
    for m in range(cfg.n_particles):
        rng = streams.stream(seed, streams.INIT_STEP, m, streams.INIT)
        Zs.append(rng.normal(0.0, sz, size=2 * (d - 1) * k))
        Ts.append(model.init_params(rng))
    Z, T = np.array(Zs), np.array(Ts)
    return ParticleSet(0, Z, T, np.zeros_like(Z), np.zeros_like(T), d, k)


def svgd_step(state: ParticleSet, X, perm, cfg: SVGDConfig, seed: int) -> ParticleSet:
    """One synchronous update of every particle from the step-``t`` snapshot."""
    X = np.asarray(getattr(X, "X", X), dtype=float)
    order = resolve_ordering(perm, state.d)
    t = state.t + 1
    alpha = cfg.alpha_rate * t

    def scores(m):
        Z = state.latent(m)
        sz = score_z(Z, state.theta[m], X, order, alpha, cfg,
                     streams.stream(seed, t, m, streams.Z_LIKELIHOOD))
        st = score_theta(Z, state.theta[m], X, order, alpha, cfg,
                         streams.stream(seed, t, m, streams.THETA))
        return sz, st

    if cfg.workers > 1 and state.M > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(scores, range(state.M)))
    else:
        results = [scores(m) for m in range(state.M)]
    score_Z = np.array([r[0] for r in results])
    score_T = np.array([r[1] for r in results])
    phi_z, phi_t = svgd_directions(state.Z, state.theta, score_Z, score_T, cfg.kernel)

    rho = cfg.rms_decay
    msq_z = rho * state.msq_z + (1.0 - rho) * phi_z ** 2
    msq_t = rho * state.msq_theta + (1.0 - rho) * phi_t ** 2
    Z = state.Z + cfg.learning_rate * phi_z / np.sqrt(msq_z + cfg.rms_eps)
    T = state.theta + cfg.learning_rate * phi_t / np.sqrt(msq_t + cfg.rms_eps)
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(T))):
        raise NumericDegeneracyError("particles became non-finite", {"step": t, "alpha": alpha})
    return replace(state, t=t, Z=Z, theta=T, msq_z=msq_z, msq_theta=msq_t)


@dataclass(frozen=True, eq=False)
class InferenceResult:
    graphs: list
    params: list
    state: ParticleSet

    @property
    def particles(self) -> list:
        return list(zip(self.graphs, self.params))


def run_inference(X, perm, cfg: SVGDConfig, rng=0, callback=None, callback_every: int | None = None,
                  state: ParticleSet | None = None) -> InferenceResult:
    """Run SVGD for ``cfg.steps`` total steps and return hard graphs with parameters.

    ``rng`` is an integer master seed (or a Generator, from which one seed is
    drawn). ``callback(state)`` fires every ``callback_every`` steps. Passing
    ``state`` resumes a checkpointed run; the result is bitwise identical to an
    uninterrupted run with the same seed.
    """
    X = np.asarray(getattr(X, "X", X), dtype=float)
    d = X.shape[1]
    if d < 2:
        raise ValidationError("need at least two variables")
    order = resolve_ordering(perm, d)
    seed = streams.seed_from(rng)
    if state is None:
        state = init_particles(d, cfg, seed)
    elif state.d != d or state.theta.shape[1] != make_model(cfg.model, d, cfg.model_cfg).n_params:
        raise ValidationError("checkpointed particles do not match data/model")
    while state.t < cfg.steps:
        state = svgd_step(state, X, order, cfg, seed)
        if callback is not None and callback_every and state.t % callback_every == 0:
            callback(state)
    model = make_model(cfg.model, d, cfg.model_cfg)
    graphs = state.graphs(order)
    params = [model.unflatten(state.theta[m]) for m in range(state.M)]
    return InferenceResult(graphs, params, state)


# --------------------------------------------------------------------------- #
# Checkpoints (plain JSON; float repr round-trips exactly)
# --------------------------------------------------------------------------- #

def save_checkpoint(path, state: ParticleSet, meta: dict | None = None) -> None:
    obj = {
        "format": "permsvgd-checkpoint/1",
        "t": state.t,
        "d": state.d,
        "k": state.k,
        "n_particles": state.M,
        "n_params": state.theta.shape[1],
        "Z": state.Z.ravel().tolist(),
        "theta": state.theta.ravel().tolist(),
        "msq_z": state.msq_z.ravel().tolist(),
        "msq_theta": state.msq_theta.ravel().tolist(),
        "meta": meta or {},
    }
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(obj))
    tmp.replace(path)


def load_checkpoint(path):
    obj = json.loads(Path(path).read_text())
    if obj.get("format") != "permsvgd-checkpoint/1":
        raise ValidationError(f"{path}: not a checkpoint file")
    M, p = obj["n_particles"], obj["n_params"]
    zdim = 2 * (obj["d"] - 1) * obj["k"]

    def arr(key, cols):
        return np.array(obj[key], dtype=float).reshape(M, cols)

    state = ParticleSet(obj["t"], arr("Z", zdim), arr("theta", p), arr("msq_z", zdim),
                        arr("msq_theta", p), obj["d"], obj["k"])
    return state, obj["meta"]
