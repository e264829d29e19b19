"""Posterior summaries over a particle set."""
from __future__ import annotations

from dataclasses import dataclass
import itertools
import math

import numpy as np
from scipy.special import logsumexp

from .errors import NumericDegeneracyError, ValidationError
from .graph import DirectedGraph, auroc, cyclicity_score, permute_to_graph, shd
from .latent import block_mask, dot_block, resolve_ordering, sample_canonical
from .likelihood import (
    ModelConfig,
    NonlinearParams,
    linear_log_likelihood,
    log_joint_theta_data,
    make_model,
    nonlinear_log_likelihood,
)
from .synth import er_log_prior


@dataclass(frozen=True, eq=False)
class ParticleMixture:
    """Particles ``(DirectedGraph, params)`` with normalized log-weights."""

    particles: list
    log_weights: np.ndarray

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=float)
        if not self.particles:
            raise ValidationError("mixture needs at least one particle")
        if lw.shape != (len(self.particles),):
            raise ValidationError("one log-weight per particle required")
        if abs(logsumexp(lw)) > 1e-9:
            raise ValidationError("log-weights are not normalized")
        object.__setattr__(self, "log_weights", lw)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def graphs(self) -> list:
        return [g for g, _ in self.particles]


def _normalize(log_w):
    log_w = np.asarray(log_w, dtype=float)
    if np.any(np.isnan(log_w)) or not np.any(np.isfinite(log_w)):
        raise NumericDegeneracyError("mixture weights are degenerate", {"log_weights": log_w.tolist()})
    return log_w - logsumexp(log_w)


def particle_log_joint(G, params, X, q: float, cfg: ModelConfig) -> float:
    """``log p(G) + log p(Theta | G) + log p(D | G, Theta)`` with the ER graph prior."""
    adj = G.adj if isinstance(G, DirectedGraph) else np.asarray(G)
    return float(er_log_prior(adj, q) + log_joint_theta_data(X, adj, params, cfg))


def make_mixture(particles, X=None, mode: str = "uniform", q: float | None = None,
                 cfg: ModelConfig | None = None) -> ParticleMixture:
    """Uniform weights, or weights proportional to each particle's joint density."""
    particles = list(particles)
    if not particles:
        raise ValidationError("cannot build a mixture from no particles")
    if mode == "uniform":
        return ParticleMixture(particles, np.full(len(particles), -math.log(len(particles))))
    if mode != "weighted":
        raise ValidationError(f"unknown mixture mode {mode!r}")
    if X is None or q is None:
        raise ValidationError("weighted mixtures need data and the edge prior q")
    cfg = cfg or ModelConfig()
    log_w = [particle_log_joint(G, p, X, q, cfg) for G, p in particles]
    return ParticleMixture(particles, _normalize(log_w))


def expected_shd(mix: ParticleMixture, Gstar) -> float:
    return float(sum(w * shd(G, Gstar) for w, G in zip(mix.weights, mix.graphs)))


def posterior_edge_probs(mix: ParticleMixture) -> np.ndarray:
    A = np.array([G.adj if isinstance(G, DirectedGraph) else G for G in mix.graphs], dtype=float)
    return np.tensordot(mix.weights, A, axes=1)


def auroc_of_mixture(mix: ParticleMixture, Gstar) -> float:
    return auroc(posterior_edge_probs(mix), Gstar)


def max_cyclicity(mix: ParticleMixture) -> float:
    return max(cyclicity_score(G) for G in mix.graphs)


def log_likelihood(X, G, params, cfg: ModelConfig) -> float:
    adj = G.adj if isinstance(G, DirectedGraph) else np.asarray(G)
    if isinstance(params, NonlinearParams):
        return float(nonlinear_log_likelihood(X, adj, params, cfg))
    return float(linear_log_likelihood(X, adj, params, cfg))


def neg_log_likelihood(mix: ParticleMixture, X_test, cfg: ModelConfig | None = None) -> float:
    """Posterior-expected ``-log p(D_test | G, Theta)``."""
    X_test = np.asarray(getattr(X_test, "X", X_test), dtype=float)
    if X_test.ndim != 2 or X_test.shape[0] == 0:
        raise ValidationError("held-out data must be a nonempty (n, d) matrix")
    cfg = cfg or ModelConfig()
    return float(-sum(w * log_likelihood(X_test, G, p, cfg) for w, (G, p) in zip(mix.weights, mix.particles)))


# --------------------------------------------------------------------------- #
# Expectations under p(G, Theta | D, P) from latent/parameter particles
# --------------------------------------------------------------------------- #

def all_canonical(d: int) -> np.ndarray:
    """Every strictly upper triangular binary matrix of size ``d``."""
    m = math.comb(d, 2)
    if m > 16:
        raise ValidationError("exhaustive enumeration is limited to d <= 6")
    iu = np.triu_indices(d, k=1)
    out = np.zeros((2 ** m, d, d), dtype=np.int8)
    for s, bits in enumerate(itertools.product((0, 1), repeat=m)):
        out[s][iu] = bits
    return out


def canonical_log_prob(S, Z, alpha: float) -> np.ndarray:
    """``log p(S | Z)`` under independent Bernoulli edges, for a stack of ``S``."""
    logits = alpha * dot_block(Z)
    mask = block_mask(Z.d)
    s = np.asarray(S, dtype=float)[..., :-1, 1:]
    # log sigmoid(x) = -log1p(exp(-x)), written stably via logaddexp
    terms = -np.where(s == 1, np.logaddexp(0.0, -logits), np.logaddexp(0.0, logits))
    return (terms * mask).sum(axis=(-2, -1))


def expectation_of(f, samples, X, perm, alpha: float, kind: str = "linear",
                   cfg: ModelConfig | None = None, mode: str = "mc", n_graph_samples: int = 1000,
                   rng=None, return_stderr: bool = False):
    """Posterior expectation of ``f(G, params)`` from ``(Z, theta)`` samples.

    For each sample the inner ratio
    ``E_{G|Z}[f(G) p(Theta, D | G)] / E_{G|Z}[p(Theta, D | G)]`` is formed
    with log-space weights, either by Monte Carlo over hard graphs
    (``mode="mc"``) or by enumerating every canonical matrix
    (``mode="exact"``). The outer average is uniform over samples. The
    standard error (MC mode) is the delta-method error of the inner ratios.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("need at least one (Z, theta) sample")
    X = np.asarray(getattr(X, "X", X), dtype=float)
    d = X.shape[1]
    order = resolve_ordering(perm, d)
    cfg = cfg or ModelConfig()
    model = make_model(kind, d, cfg)
    if mode not in ("mc", "exact"):
        raise ValidationError(f"unknown mode {mode!r}")
    if mode == "mc" and rng is None:
        raise ValidationError("Monte Carlo mode needs an rng")
    enumerated = all_canonical(d) if mode == "exact" else None

    estimates, variances = [], []
    for Z, theta in samples:
        theta = np.asarray(theta, dtype=float)
        if mode == "exact":
            S = enumerated
            log_w = canonical_log_prob(S, Z, alpha)
        else:
            S = sample_canonical(Z, alpha, n_graph_samples, rng)
            log_w = np.zeros(len(S))
        G = permute_to_graph(S, order)
        log_w = log_w + model.log_joint(X, G, theta)
        if np.any(np.isnan(log_w)) or not np.any(np.isfinite(log_w)):
            raise NumericDegeneracyError("all expectation weights are degenerate", {"alpha": alpha})
        w = np.exp(log_w - log_w.max())
        w /= w.sum()
        params = model.unflatten(theta)
        vals = np.array([f(g, params) for g in G], dtype=float)
        est = float(w @ vals)
        estimates.append(est)
        variances.append(float(w ** 2 @ (vals - est) ** 2) if mode == "mc" else 0.0)
    value = float(np.mean(estimates))
    if return_stderr:
        return value, math.sqrt(sum(variances)) / len(samples)
    return value
