"""Topological-ordering estimation under equal error variances."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .graph import Ordering, as_adjacency, as_ordering

# Gram matrices with a larger condition number get ridge damping.
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class OrderingEstimate:
    pi: Ordering
    # one list per greedy step of (candidate, residual variance) pairs
    selection_trace: list = field(default_factory=list)


def _residual_variance(C, j, selected, ridge_scale):
    if not selected:
        return C[j, j]
    S = np.asarray(selected)
    A = C[np.ix_(S, S)]
    b = C[S, j]
    if np.linalg.cond(A) > _COND_LIMIT:
        A = A + ridge_scale * np.eye(len(S))
    beta = np.linalg.solve(A, b)
    return max(C[j, j] - b @ beta, 0.0)


def eqvar_ordering(X) -> OrderingEstimate:
    """Top-down greedy ordering by minimum residual variance.

    At every step each remaining variable is regressed (OLS with intercept)
    on the variables already placed; the one with the smallest residual
    variance takes the next position. Ties go to the lowest index.
    """
    X = np.asarray(getattr(X, "X", X), dtype=float)
    if X.ndim != 2:
        raise ValidationError("data must be an (n, d) matrix")
    n, d = X.shape
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / n
    if np.any(np.diag(C) <= 0):
        raise ValidationError("eqvar_ordering needs non-constant columns")
    ridge_scale = 1e-6 * np.trace(C) / d

    selected: list[int] = []
    remaining = list(range(d))
    trace = []
    for _ in range(d):
        step = [(j, float(_residual_variance(C, j, selected, ridge_scale))) for j in remaining]
        trace.append(step)
        best = min(step, key=lambda t: (t[1], t[0]))[0]
        selected.append(best)
        remaining.remove(best)
    return OrderingEstimate(Ordering.from_order(selected), trace)


def validate_ordering(pi, Gstar) -> bool:
    """True iff every edge ``i -> j`` of ``Gstar`` has ``pi[i] < pi[j]``."""
    pi = as_ordering(pi).pi
    adj = as_adjacency(Gstar)
    if adj.shape != (len(pi), len(pi)):
        raise ValidationError(f"dimension mismatch: ordering of {len(pi)} vs graph {adj.shape}")
    src, dst = np.nonzero(adj)
    return bool(np.all(pi[src] < pi[dst]))
