"""Erdős–Rényi DAGs, Gaussian SEM simulation and the ER graph prior."""
from __future__ import annotations

from dataclasses import dataclass
import json
import math
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .graph import DirectedGraph, Ordering, as_adjacency, as_ordering, topological_order
from .likelihood import NonlinearParams


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    X_test: np.ndarray | None = None

    def __post_init__(self):
        for name in ("X", "X_test"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.ndim != 2 or arr.shape[0] < 1:
                raise ValidationError(f"{name} must be an (n, d) matrix with n >= 1")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)
        if self.X_test is not None and self.X_test.shape[1] != self.X.shape[1]:
            raise ValidationError("X and X_test have different column counts")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True, eq=False)
class LinearSem:
    G: DirectedGraph
    weights: np.ndarray
    sigma_obs: float = 0.1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != self.G.adj.shape:
            raise ValidationError("weight matrix shape does not match the graph")
        if np.any((w != 0) & (self.G.adj == 0)):
            raise ValidationError("nonzero weight on a non-edge")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True, eq=False)
class NonlinearSem:
    G: DirectedGraph
    params: NonlinearParams
    sigma_obs: float = 0.1


# --------------------------------------------------------------------------- #
# Graphs and graph prior
# --------------------------------------------------------------------------- #

def er_edge_probability(d: int, expected_degree: float) -> float:
    """Edge probability giving ``expected_degree * d`` expected edges, clipped to [0, 1]."""
    if d < 2:
        raise ValidationError("need d >= 2 for an ER edge probability")
    return float(min(1.0, max(0.0, expected_degree * d / math.comb(d, 2))))


def sample_er_dag(d: int, expected_degree: float, rng: np.random.Generator) -> DirectedGraph:
    """Random DAG: uniform ordering, each compatible pair kept with probability q."""
    if d < 2:
        raise ValidationError("need d >= 2")
    if expected_degree < 1:
        raise ValidationError("expected_degree must be >= 1")
    q = er_edge_probability(d, expected_degree)
    order = rng.permutation(d)
    keep = np.triu(rng.random((d, d)) < q, k=1)
    adj = np.zeros((d, d), dtype=np.int8)
    adj[np.ix_(order, order)] = keep
    return DirectedGraph(adj)


def soft_edge_count(G, pi=None) -> float:
    """Edge count of a hard or soft graph.

    With an ordering, only entries that go forward in it are counted. Without
    one, each unordered pair contributes ``max(G[i, j], G[j, i])``: for DAGs
    and for probability matrices of the form ``P S P^T`` this is exactly the
    sum of the entries that can carry an edge.
    """
    A = np.asarray(as_adjacency(G), dtype=float)
    if pi is not None:
        p = as_ordering(pi).pi
        counts = A[..., p[:, None] < p[None, :]].sum(axis=-1)
    else:
        pair = np.maximum(A, np.swapaxes(A, -1, -2))
        iu = np.triu_indices(A.shape[-1], k=1)
        counts = pair[..., iu[0], iu[1]].sum(axis=-1)
    return float(counts) if np.ndim(counts) == 0 else counts


def er_log_prior(G, q: float, pi=None):
    """Unnormalized ``log q^|G| (1-q)^(C(d,2)-|G|)`` for hard or soft graphs."""
    if not 0.0 < q < 1.0:
        raise ValidationError(f"q must lie in (0, 1), got {q}")
    A = as_adjacency(G)
    d = A.shape[-1]
    count = soft_edge_count(A, pi)
    return count * math.log(q) + (math.comb(d, 2) - count) * math.log1p(-q)


# --------------------------------------------------------------------------- #
# SEMs
# --------------------------------------------------------------------------- #

def sample_linear_sem(G, rng, mu_e=0.0, sigma_e=1.0, min_abs=0.5, sigma_obs=0.1) -> LinearSem:
    """Edge weights ``N(mu_e, sigma_e^2)`` pushed away from zero by ``min_abs``."""
    G = G if isinstance(G, DirectedGraph) else DirectedGraph(G)
    raw = rng.normal(mu_e, sigma_e, size=G.adj.shape)
    raw = raw + np.sign(raw) * min_abs
    return LinearSem(G, np.where(G.adj == 1, raw, 0.0), sigma_obs)


def _topo(G: DirectedGraph) -> list[int]:
    order = topological_order(G)
    if order is None:
        raise ValidationError("SEM graph must be acyclic")
    return order


def simulate_linear(sem: LinearSem, n: int, rng) -> Dataset:
    """``X_i = sum_j w[j, i] X_j + eps_i`` filled in topological order."""
    d = sem.G.d
    eps = rng.normal(0.0, 1.0, size=(n, d)) * sem.sigma_obs
    X = np.zeros((n, d))
    for i in _topo(sem.G):
        X[:, i] = X @ sem.weights[:, i] + eps[:, i]
    return Dataset(X)


def sample_nonlinear_sem(G, rng, weight_sigma=1.0, hidden=(5,), sigma_obs=0.1) -> NonlinearSem:
    G = G if isinstance(G, DirectedGraph) else DirectedGraph(G)
    params = NonlinearParams.sample(rng, G.d, hidden, weight_sigma)
    return NonlinearSem(G, params, sigma_obs)


def node_mean(X, params: NonlinearParams, i: int, mask) -> np.ndarray:
    """Output of node ``i``'s MLP for every row of ``X`` after masking."""
    weights, biases = params.node(i)
    h = np.asarray(X, dtype=float) * np.asarray(mask, dtype=float)
    for l, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w.T + b
        if l < len(weights) - 1:
            h = np.maximum(h, 0.0) if params.activation == "relu" else h
    return h[:, 0]


def simulate_nonlinear(sem: NonlinearSem, n: int, rng) -> Dataset:
    d = sem.G.d
    eps = rng.normal(0.0, 1.0, size=(n, d)) * sem.sigma_obs
    X = np.zeros((n, d))
    for i in _topo(sem.G):
        X[:, i] = node_mean(X, sem.params, i, sem.G.adj[:, i]) + eps[:, i]
    return Dataset(X)


def simulate(sem, n: int, rng) -> Dataset:
    if isinstance(sem, LinearSem):
        return simulate_linear(sem, n, rng)
    return simulate_nonlinear(sem, n, rng)


def standardize(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    std = X.std(axis=0)
    if np.any(std == 0):
        raise ValidationError("cannot standardize a constant column")
    return (X - X.mean(axis=0)) / std


# --------------------------------------------------------------------------- #
# Files
# --------------------------------------------------------------------------- #

def write_csv(path, X) -> None:
    """Headerless CSV; ``%.17g`` round-trips every float64 exactly."""
    X = np.asarray(X, dtype=float)
    with open(path, "w", newline="\n") as fh:
        for row in X:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def read_csv(path, skip_header: bool | None = None) -> np.ndarray:
    """Read a numeric CSV; a non-numeric first line is treated as a header."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"{path}: empty data file")
    if skip_header is None:
        try:
            [float(tok) for tok in lines[0].split(",")]
            skip_header = False
        except ValueError:
            skip_header = True
    rows = lines[1:] if skip_header else lines
    try:
        X = np.array([[float(tok) for tok in ln.split(",")] for ln in rows])
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})") from None
    if X.ndim != 2:
        raise ValidationError(f"{path}: rows have differing column counts")
    return X


def sem_to_dict(sem) -> dict:
    out = {"d": sem.G.d, "edges": [list(e) for e in sem.G.edges()], "sigma_obs": sem.sigma_obs}
    if isinstance(sem, LinearSem):
        out.update(kind="linear", weights=sem.weights.tolist())
    else:
        out.update(kind="nonlinear", layer_sizes=sem.params.layer_sizes,
                   activation=sem.params.activation, weights=sem.params.flat().tolist())
    return out


def sem_from_dict(obj: dict):
    G = DirectedGraph.from_edges(obj["d"], [tuple(e) for e in obj["edges"]])
    if obj["kind"] == "linear":
        return LinearSem(G, np.array(obj["weights"]), obj["sigma_obs"])
    hidden = tuple(obj["layer_sizes"][1:-1])
    params = NonlinearParams.from_flat(np.array(obj["weights"]), obj["d"], hidden,
                                       obj.get("activation", "relu"))
    return NonlinearSem(G, params, obj["sigma_obs"])


def write_sem(path, sem) -> None:
    Path(path).write_text(json.dumps(sem_to_dict(sem), indent=1) + "\n")


def read_sem(path):
    return sem_from_dict(json.loads(Path(path).read_text()))


def ground_truth_ordering(G) -> Ordering:
    return Ordering.from_dag(G)
