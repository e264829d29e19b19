"""Graph types, permutation algebra and graph metrics.

Conventions used throughout the package:

* ``adj[i, j] == 1`` means the edge ``i -> j``.
* An ordering ``pi`` stores the *position* of every variable, so
  ``pi[i] < pi[j]`` means ``i`` can never be a descendant of ``j``.
  Positions are 0-based internally; 1-based input is accepted and shifted.
* The permutation matrix of ``pi`` has a single 1 in row ``i`` at column
  ``pi[i]``, so that ``P @ S @ P.T`` moves the canonical (strictly upper
  triangular) matrix ``S`` into variable labels: ``G[a, b] = S[pi[a], pi[b]]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError


# --------------------------------------------------------------------------- #
# Types
# --------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class Ordering:
    """Topological ordering stored as the position of each variable."""

    pi: np.ndarray

    def __post_init__(self):
        pi = _normalize_positions(self.pi)
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    @property
    def d(self) -> int:
        return len(self.pi)

    @property
    def order(self) -> np.ndarray:
        """Variables listed by increasing position (the inverse permutation)."""
        return np.argsort(self.pi, kind="stable")

    @classmethod
    def identity(cls, d: int) -> "Ordering":
        return cls(np.arange(d))

    @classmethod
    def from_order(cls, order: Sequence[int]) -> "Ordering":
        """Build from a list of variables sorted root-first."""
        order = np.asarray(order, dtype=int)
        pi = np.empty_like(order)
        pi[order] = np.arange(len(order))
        return cls(pi)

    @classmethod
    def random(cls, d: int, rng: np.random.Generator) -> "Ordering":
        return cls(rng.permutation(d))

    @classmethod
    def from_dag(cls, g) -> "Ordering":
        """Topological sort (Kahn's algorithm, lowest index first on ties)."""
        order = topological_order(g)
        if order is None:
            raise ValidationError("graph contains a directed cycle")
        return cls.from_order(order)

    def __eq__(self, other):
        return isinstance(other, Ordering) and np.array_equal(self.pi, other.pi)

    def __hash__(self):
        return hash(tuple(self.pi.tolist()))

    def __repr__(self):
        return f"Ordering({self.pi.tolist()})"


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    """Binary adjacency matrix with a zero diagonal."""

    adj: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValidationError(f"adjacency must be square, got shape {adj.shape}")
        if not np.all((adj == 0) | (adj == 1)):
            raise ValidationError("adjacency entries must be exactly 0 or 1")
        adj = adj.astype(np.int8).copy()
        np.fill_diagonal(adj, 0)
        adj.setflags(write=False)
        object.__setattr__(self, "adj", adj)

    @property
    def d(self) -> int:
        return self.adj.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adj.sum())

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.adj))]

    @classmethod
    def empty(cls, d: int) -> "DirectedGraph":
        return cls(np.zeros((d, d), dtype=np.int8))

    @classmethod
    def from_edges(cls, d: int, edges: Iterable[tuple[int, int]]) -> "DirectedGraph":
        adj = np.zeros((d, d), dtype=np.int8)
        for i, j in edges:
            if not (0 <= i < d and 0 <= j < d):
                raise ValidationError(f"edge ({i}, {j}) out of range for d={d}")
            adj[i, j] = 1
        return cls(adj)

    def __eq__(self, other):
        return isinstance(other, DirectedGraph) and np.array_equal(self.adj, other.adj)

    def __hash__(self):
        return hash(self.adj.tobytes())


def _normalize_positions(pi) -> np.ndarray:
    arr = np.asarray(pi)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError("ordering must be a non-empty 1-d sequence")
    if not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValidationError("ordering positions must be integers")
    arr = arr.astype(int)
    d = arr.size
    values = set(arr.tolist())
    if len(values) != d:
        raise ValidationError(f"ordering has duplicate positions: {arr.tolist()}")
    if values == set(range(d)):
        return arr.copy()
    if values == set(range(1, d + 1)):
        return arr - 1
    raise ValidationError(f"ordering positions out of range: {arr.tolist()}")


def as_adjacency(g) -> np.ndarray:
    """Return the matrix behind a graph-like argument (no copy when possible)."""
    if isinstance(g, DirectedGraph):
        return g.adj
    arr = np.asarray(g)
    if arr.ndim < 2 or arr.shape[-1] != arr.shape[-2]:
        raise ValidationError(f"expected square matrix, got shape {arr.shape}")
    return arr


def as_ordering(pi) -> Ordering:
    return pi if isinstance(pi, Ordering) else Ordering(pi)


# --------------------------------------------------------------------------- #
# Permutation algebra
# --------------------------------------------------------------------------- #

def permutation_matrix(pi) -> np.ndarray:
    """Permutation matrix with ``P[i, pi[i]] = 1``."""
    pi = as_ordering(pi).pi
    d = len(pi)
    P = np.zeros((d, d), dtype=np.int8)
    P[np.arange(d), pi] = 1
    return P


def check_permutation_matrix(P) -> np.ndarray:
    P = np.asarray(P)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValidationError(f"permutation matrix must be square, got {P.shape}")
    if not np.all((P == 0) | (P == 1)):
        raise ValidationError("permutation matrix entries must be 0 or 1")
    if not (np.all(P.sum(axis=0) == 1) and np.all(P.sum(axis=1) == 1)):
        raise ValidationError("permutation matrix needs exactly one 1 per row and column")
    return P


def ordering_from_permutation_matrix(P) -> Ordering:
    P = check_permutation_matrix(P)
    return Ordering(np.argmax(P, axis=1))


def check_canonical(S, atol: float = 0.0) -> np.ndarray:
    S = np.asarray(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError(f"canonical matrix must be square, got {S.shape}")
    if np.any(np.abs(np.tril(S)) > atol):
        raise ValidationError("canonical matrix must be strictly upper triangular")
    return S


def compose_adjacency(P, S) -> np.ndarray:
    """``P @ S @ P.T`` for a permutation matrix and a canonical matrix.

    Binary ``S`` yields the adjacency of a DAG isomorphic to ``S``; soft ``S``
    yields the matching matrix of edge probabilities.
    """
    P = check_permutation_matrix(P)
    S = check_canonical(S)
    if P.shape != S.shape:
        raise ValidationError(f"dimension mismatch: P {P.shape} vs S {S.shape}")
    pi = np.argmax(P, axis=1)
    return S[np.ix_(pi, pi)]


def permute_to_graph(S, pi) -> np.ndarray:
    """Same as :func:`compose_adjacency` from an ordering; batch dims allowed."""
    pi = as_ordering(pi).pi
    return S[..., pi[:, None], pi[None, :]]


def graph_to_canonical(G, pi) -> np.ndarray:
    """Inverse of :func:`permute_to_graph`; batch dims allowed."""
    order = as_ordering(pi).order
    return G[..., order[:, None], order[None, :]]


# --------------------------------------------------------------------------- #
# Acyclicity
# --------------------------------------------------------------------------- #

def topological_order(g) -> list[int] | None:
    """Kahn's algorithm; returns ``None`` when the graph has a cycle."""
    adj = as_adjacency(g) != 0
    d = adj.shape[0]
    indeg = adj.sum(axis=0).astype(int)
    ready = sorted(i for i in range(d) if indeg[i] == 0)
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in np.nonzero(adj[i])[0]:
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
        ready.sort()
    return order if len(order) == d else None


def is_acyclic(g) -> bool:
    """True iff the graph has no directed cycle (self-loops count as cycles)."""
    return topological_order(g) is not None


def cyclicity_score(G) -> float:
    """``tr[(I + G/d)^d] - d`` by repeated matrix multiplication."""
    G = np.asarray(as_adjacency(G), dtype=float)
    if G.ndim != 2:
        raise ValidationError("cyclicity_score expects a single square matrix")
    if np.any(G < 0):
        raise ValidationError("cyclicity_score expects nonnegative entries")
    d = G.shape[0]
    M = np.eye(d) + G / d
    acc = np.eye(d)
    for _ in range(d):
        acc = acc @ M
    return float(np.trace(acc) - d)


# --------------------------------------------------------------------------- #
# Comparison metrics
# --------------------------------------------------------------------------- #

def shd(G, Gstar) -> int:
    """Structural Hamming distance over unordered node pairs.

    Each pair has one of four states (no edge, i->j, j->i, both); a pair
    contributes 1 whenever the states differ, so a reversed edge costs 1.
    """
    A = as_adjacency(G) != 0
    B = as_adjacency(Gstar) != 0
    if A.shape != B.shape:
        raise ValidationError(f"dimension mismatch: {A.shape} vs {B.shape}")
    diff = (A != B) | (A.T != B.T)
    return int(np.triu(diff, k=1).sum())


def auroc(edge_probs, Gstar) -> float:
    """Area under the ROC curve over ordered off-diagonal pairs (midrank ties)."""
    p = np.asarray(edge_probs, dtype=float)
    truth = as_adjacency(Gstar) != 0
    if p.shape != truth.shape:
        raise ValidationError(f"dimension mismatch: {p.shape} vs {truth.shape}")
    off = ~np.eye(p.shape[0], dtype=bool)
    scores, labels = p[off], truth[off]
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUROC undefined: ground truth needs both edges and non-edges")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# --------------------------------------------------------------------------- #
# Edge-list files
# --------------------------------------------------------------------------- #

def write_graph(path, g) -> None:
    """Write ``d=<n>`` followed by one 0-based ``i j`` pair per line."""
    adj = as_adjacency(g)
    lines = [f"d={adj.shape[0]}"]
    lines += [f"{i} {j}" for i, j in zip(*np.nonzero(adj))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_graph(path) -> DirectedGraph:
    text = Path(path).read_text().split("\n")
    rows = [ln.strip() for ln in text if ln.strip()]
    if not rows or not rows[0].startswith("d="):
        raise ValidationError(f"{path}: missing 'd=<n>' header")
    try:
        d = int(rows[0][2:])
        edges = [tuple(int(tok) for tok in ln.split()) for ln in rows[1:]]
    except ValueError as exc:
        raise ValidationError(f"{path}: malformed graph file ({exc})") from None
    if any(len(e) != 2 for e in edges):
        raise ValidationError(f"{path}: every edge line needs exactly two indices")
    return DirectedGraph.from_edges(d, edges)
