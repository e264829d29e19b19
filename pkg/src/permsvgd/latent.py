"""Bilinear latent representation of the canonical adjacency matrix.

A latent particle holds two ``(d-1, k)`` embeddings. Row ``i`` of ``U`` and
row ``j-1`` of ``V`` score the canonical entry ``S[i, j]`` for ``j > i``; all
of those dot products live in the upper triangle (diagonal included) of the
``(d-1, d-1)`` block ``U @ V.T``, which is what most helpers here operate on.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import expit

from .errors import ValidationError
from .graph import DirectedGraph, as_ordering, check_permutation_matrix, ordering_from_permutation_matrix, permute_to_graph


@dataclass(frozen=True, eq=False)
class LatentParticle:
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        V = np.asarray(self.V, dtype=float)
        if U.ndim != 2 or U.shape != V.shape:
            raise ValidationError(f"U and V must be matching 2-d arrays, got {U.shape} and {V.shape}")
        if U.shape[1] < U.shape[0]:
            raise ValidationError(f"latent dimension k={U.shape[1]} must be >= d-1={U.shape[0]}")
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise ValidationError("latent particle has non-finite entries")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def d(self) -> int:
        return self.U.shape[0] + 1

    @property
    def k(self) -> int:
        return self.U.shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.U.ravel(), self.V.ravel()])

    @classmethod
    def from_flat(cls, vec, d: int, k: int) -> "LatentParticle":
        vec = np.asarray(vec, dtype=float)
        half = (d - 1) * k
        if vec.shape != (2 * half,):
            raise ValidationError("flat latent vector has the wrong length")
        return cls(vec[:half].reshape(d - 1, k), vec[half:].reshape(d - 1, k))

    @classmethod
    def sample(cls, rng, d: int, k: int | None = None, sigma_z: float | None = None) -> "LatentParticle":
        k = d if k is None else k
        sigma_z = 1.0 / math.sqrt(k) if sigma_z is None else sigma_z
        return cls(rng.normal(0.0, sigma_z, (d - 1, k)), rng.normal(0.0, sigma_z, (d - 1, k)))


@dataclass(frozen=True)
class AnnealState:
    t: int
    alpha_rate: float = 0.05
    tau: float = 1.0

    @property
    def alpha(self) -> float:
        return self.alpha_rate * self.t


def block_mask(d: int) -> np.ndarray:
    return np.triu(np.ones((d - 1, d - 1), dtype=bool))


def embed_block(block) -> np.ndarray:
    """Place a ``(..., d-1, d-1)`` block into a strictly upper triangular ``(..., d, d)`` matrix."""
    block = np.asarray(block)
    m = block.shape[-1]
    out = np.zeros(block.shape[:-2] + (m + 1, m + 1), dtype=block.dtype)
    out[..., :-1, 1:] = np.where(block_mask(m + 1), block, 0)
    return out


def canonical_block(S) -> np.ndarray:
    """Inverse of :func:`embed_block`."""
    return np.asarray(S)[..., :-1, 1:]


def dot_block(Z: LatentParticle) -> np.ndarray:
    return Z.U @ Z.V.T


def resolve_ordering(perm, d: int):
    """Accept an :class:`Ordering`, a position sequence or a permutation matrix."""
    arr = perm.pi if hasattr(perm, "pi") else np.asarray(perm)
    if arr.ndim == 2:
        order = ordering_from_permutation_matrix(check_permutation_matrix(arr))
    else:
        order = as_ordering(arr)
    if order.d != d:
        raise ValidationError(f"ordering has {order.d} variables, expected {d}")
    return order


def soft_canonical(Z: LatentParticle, alpha: float) -> np.ndarray:
    if not alpha > 0:
        raise ValidationError("alpha must be > 0")
    return embed_block(expit(alpha * dot_block(Z)))


def hard_canonical(Z: LatentParticle) -> np.ndarray:
    """Limit of :func:`soft_canonical`; a zero dot product means no edge."""
    return embed_block((dot_block(Z) > 0).astype(np.int8))


def gumbel_soft_canonical(Z: LatentParticle, L, alpha: float, tau: float = 1.0) -> np.ndarray:
    """Relaxed Bernoulli sample(s) ``sigmoid((L + alpha * u_i.v_j) / tau)``.

    ``L`` is a ``(d-1, d-1)`` logistic noise block or a stack of them.
    """
    if not tau > 0:
        raise ValidationError("tau must be > 0")
    L = np.asarray(L, dtype=float)
    if L.shape[-2:] != (Z.d - 1, Z.d - 1):
        raise ValidationError(f"noise block must be {(Z.d - 1, Z.d - 1)}, got {L.shape[-2:]}")
    return embed_block(expit((L + alpha * dot_block(Z)) / tau))


def edge_probabilities(Z: LatentParticle, perm, alpha: float) -> np.ndarray:
    """``P @ soft_canonical(Z) @ P.T``: per-edge probabilities in variable labels."""
    return permute_to_graph(soft_canonical(Z, alpha), resolve_ordering(perm, Z.d))


def sample_canonical(Z: LatentParticle, alpha: float, count: int, rng) -> np.ndarray:
    """``count`` Bernoulli draws of the canonical matrix, shape ``(count, d, d)``."""
    probs = expit(alpha * dot_block(Z))
    draws = rng.random((count,) + probs.shape) < probs
    return embed_block(draws.astype(np.int8))


def sample_hard_graphs(Z: LatentParticle, perm, alpha: float, count: int, rng) -> list[DirectedGraph]:
    if count < 1:
        raise ValidationError("count must be >= 1")
    order = resolve_ordering(perm, Z.d)
    S = sample_canonical(Z, alpha, count, rng)
    return [DirectedGraph(g) for g in permute_to_graph(S, order)]


def block_grad_to_latent(g_block, Z: LatentParticle):
    """Chain rule from ``d/d(U V^T)`` (possibly batched) to ``(d/dU, d/dV)``."""
    g_block = np.where(block_mask(Z.d), g_block, 0.0)
    return g_block @ Z.V, np.swapaxes(g_block, -1, -2) @ Z.U


def log_latent_prior(Z: LatentParticle, perm, alpha: float, q: float, sigma_z: float,
                     noise=None, tau: float = 1.0, grad: bool = False):
    """Gaussian log-density of ``Z`` plus the expected ER log graph prior.

    The graph prior is linear in the edge indicators, so its expectation under
    the edge-wise Bernoulli model is evaluated exactly from the edge
    probabilities. Passing a stack of logistic ``noise`` blocks switches to
    the relaxed-sample average instead. The ordering does not change the value
    (relabeling preserves the edge count) but is validated for shape.
    """
    if not sigma_z > 0:
        raise ValidationError("sigma_z must be > 0")
    if not 0.0 < q < 1.0:
        raise ValidationError(f"q must lie in (0, 1), got {q}")
    resolve_ordering(perm, Z.d)
    d = Z.d
    mask = block_mask(d)
    gauss = (-0.5 * (Z.U ** 2).sum() / sigma_z ** 2 - 0.5 * (Z.V ** 2).sum() / sigma_z ** 2
             - Z.U.size * (math.log(sigma_z) + 0.5 * math.log(2 * math.pi)) * 2)
    logit_q = math.log(q) - math.log1p(-q)
    D = dot_block(Z)
    if noise is None:
        probs = expit(alpha * D)
        count = probs[mask].sum()
        dcount_dD = alpha * probs * (1.0 - probs)
    else:
        soft = expit((np.asarray(noise, dtype=float) + alpha * D) / tau)
        count = soft[..., mask].sum(axis=-1).mean()
        dcount_dD = (alpha / tau * soft * (1.0 - soft)).mean(axis=0)
    graph_term = count * math.log(q) + (math.comb(d, 2) - count) * math.log1p(-q)
    value = float(gauss + graph_term)
    if not grad:
        return value
    gU, gV = block_grad_to_latent(logit_q * dcount_dD, Z)
    return value, gU - Z.U / sigma_z ** 2, gV - Z.V / sigma_z ** 2
