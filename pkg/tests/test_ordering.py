import numpy as np
import pytest

from permsvgd.errors import ValidationError
from permsvgd.graph import DirectedGraph, Ordering
from permsvgd.ordering import eqvar_ordering, validate_ordering
from permsvgd.synth import LinearSem, sample_er_dag, sample_linear_sem, simulate


def ols_residual_variance(X, j, selected):
    """Independent oracle: least squares with an explicit intercept column."""
    y = X[:, j]
    A = np.column_stack([np.ones(len(X))] + [X[:, s] for s in selected])
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    return np.mean((y - A @ beta) ** 2)


def test_chain_recovered():
    rng = np.random.default_rng(0)
    G = DirectedGraph.from_edges(3, [(2, 0), (0, 1)])
    sem = LinearSem(G, np.where(G.adj == 1, 1.0, 0.0), 1.0)
    X = simulate(sem, 2000, rng).X
    assert eqvar_ordering(X).pi == Ordering.from_order([2, 0, 1])


def test_trace_matches_regression_oracle():
    rng = np.random.default_rng(1)
    G = sample_er_dag(5, 1, rng)
    X = simulate(sample_linear_sem(G, rng, sigma_obs=1.0), 300, rng).X
    est = eqvar_ordering(X)
    placed = []
    for step in est.selection_trace:
        for j, v in step:
            assert v == pytest.approx(ols_residual_variance(X, j, placed), rel=1e-9, abs=1e-12)
        placed.append(min(step, key=lambda t: (t[1], t[0]))[0])
    assert placed == est.pi.order.tolist()


def test_ties_break_to_lowest_index():
    X = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    assert eqvar_ordering(X).pi.order.tolist() == [0, 1]


def test_collinear_columns_get_ridge():
    rng = np.random.default_rng(2)
    a = rng.normal(size=200)
    X = np.column_stack([a, a, rng.normal(size=200)])
    est = eqvar_ordering(X)
    assert sorted(est.pi.order.tolist()) == [0, 1, 2]


def test_constant_column_rejected():
    with pytest.raises(ValidationError):
        eqvar_ordering(np.column_stack([np.ones(10), np.arange(10.0)]))


def test_validate_ordering():
    G = DirectedGraph.from_edges(3, [(0, 1), (1, 2)])
    assert validate_ordering([0, 1, 2], G)
    assert not validate_ordering([1, 0, 2], G)
    with pytest.raises(ValidationError):
        validate_ordering([0, 1], G)


def test_equal_variance_consistency():
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        G = sample_er_dag(10, 1, rng)
        X = simulate(sample_linear_sem(G, rng, sigma_obs=1.0), 500, rng).X
        hits += validate_ordering(eqvar_ordering(X).pi, G)
    assert hits >= 9
