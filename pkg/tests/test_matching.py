import itertools

import numpy as np
import pytest
from sklearn.base import clone

from graphsir.matching import (
    GraphMatcher,
    _phi,
    brute_force_match,
    combine_phis,
    label_cost,
    pad_adjacency,
    permutation_matrix,
    project_to_permutation,
    qap_objective,
    refine_by_swaps,
    solve_match,
    temporal_objective,
    temporal_weights,
)


def _random_graph(rng, n, p=0.5):
    A = np.triu((rng.random((n, n)) < p).astype(float), 1)
    return A + A.T


def _phi_direct(A, B, C, perm, nu):
    """Elementwise evaluation, independent of the matrix form used by the solver."""
    n = len(perm)
    num = sum((A[i, j] - B[perm[i], perm[j]]) ** 2 for i in range(n) for j in range(n))
    Z = (A ** 2).sum() + (B ** 2).sum()
    lab = sum(C[i, perm[i]] for i in range(n))
    cn = np.sqrt((C ** 2).sum())
    return (1 - nu) * (num / Z if Z else 0.0) - nu * (lab / cn if cn else 0.0)


def test_label_cost_identical_labels():
    X = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 5.0]])
    C = label_cost(X, X)
    assert np.allclose(np.diag(C), 1.0)
    assert C.min() >= 0 and C.max() <= 1


def test_label_cost_scalar_example():
    C = label_cost(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    assert C.tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_label_cost_padding():
    C = label_cost(np.array([0.0, 1.0, 2.0]), np.array([0.0, 2.0]))
    assert C.shape == (3, 3)
    assert np.all(C[:, 2] == 1.0)
    C = label_cost(np.array([0.0, 1.0, 2.0]), np.array([0.0, 2.0]), pad_value=0.25)
    assert np.all(C[:, 2] == 0.25)


def test_label_cost_degenerate():
    assert np.all(label_cost(np.ones((3, 2)), np.ones((3, 2))) == 1.0)


def test_objective_identical_graphs():
    rng = np.random.default_rng(0)
    A = _random_graph(rng, 5)
    C = label_cost(rng.random((5, 2)), rng.random((5, 2)))
    assert qap_objective(A, A, C, np.eye(5), 0.0) == 0.0


def test_objective_empty_graphs():
    Z = np.zeros((3, 3))
    assert qap_objective(Z, Z, np.ones((3, 3)), np.eye(3), 0.0) == 0.0
    assert qap_objective(Z, Z, np.zeros((3, 3)), np.eye(3), 0.5) == 0.0


def test_objective_matches_elementwise_form():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = rng.integers(1, 7)
        A, B = _random_graph(rng, n), _random_graph(rng, n)
        C = rng.random((n, n))
        perm = rng.permutation(n)
        nu = rng.random()
        got = qap_objective(A, B, C, permutation_matrix(perm), nu)
        assert got == pytest.approx(_phi_direct(A, B, C, perm, nu), abs=1e-12)


def test_objective_bounds_on_permutations():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = rng.integers(2, 7)
        A, B = _random_graph(rng, n), _random_graph(rng, n)
        C = label_cost(rng.random((n, 3)), rng.random((n, 3)))
        P = permutation_matrix(rng.permutation(n))
        struct = qap_objective(A, B, C, P, 0.0)
        label = qap_objective(A, B, C, P, 1.0)
        assert 0.0 <= struct <= 1.0
        assert -np.abs(C).sum() / np.linalg.norm(C) <= label <= 0.0


def test_objective_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        qap_objective(np.zeros((2, 2)), np.zeros((3, 3)), np.ones((2, 2)), np.eye(2), 0.0)


def test_brute_force_on_small_cases():
    tri = np.ones((3, 3)) - np.eye(3)
    X = np.zeros((3, 1))
    assert brute_force_match((tri, X), (tri, X), nu=0.0).phi == 0.0
    one = np.array([[0.0, 1.0], [1.0, 0.0]])
    none = np.zeros((2, 2))
    X = np.zeros((2, 1))
    assert brute_force_match((one, X), (none, X), nu=0.0).phi == 1.0


def test_brute_force_equals_exhaustive_loop():
    rng = np.random.default_rng(3)
    A, B = _random_graph(rng, 5), _random_graph(rng, 5)
    X, X2 = rng.random((5, 2)), rng.random((5, 2))
    C = label_cost(X, X2)
    best = min(_phi_direct(A, B, C, p, 0.3) for p in itertools.permutations(range(5)))
    assert brute_force_match((A, X), (B, X2), nu=0.3).phi == pytest.approx(best, abs=1e-12)


def test_brute_force_size_limit():
    with pytest.raises(ValueError):
        brute_force_match((np.zeros((9, 9)), np.zeros((9, 1))), (np.zeros((2, 2)), np.zeros((2, 1))))


def test_isomorphic_six_vertex_graphs():
    rng = np.random.default_rng(4)
    for _ in range(20):
        A = _random_graph(rng, 6)
        perm = rng.permutation(6)
        B = A[np.ix_(perm, perm)]
        X = np.zeros((6, 1))
        assert brute_force_match((A, X), (B, X), nu=0.0).phi == 0.0
        assert solve_match((A, X), (B, X), nu=0.0).phi <= 1e-6


def test_solver_never_beats_the_oracle():
    rng = np.random.default_rng(5)
    for _ in range(40):
        n, m = rng.integers(1, 7, size=2)
        G = (_random_graph(rng, n), rng.integers(0, 3, (n, 3)).astype(float))
        H = (_random_graph(rng, m), rng.integers(0, 3, (m, 3)).astype(float))
        nu, xi = rng.random(), rng.choice([0.0, 0.5])
        assert solve_match(G, H, nu=nu, xi=xi).phi >= brute_force_match(G, H, nu=nu, xi=xi).phi - 1e-9


def test_solver_phi_is_objective_at_its_permutation():
    rng = np.random.default_rng(6)
    A, B = _random_graph(rng, 5), _random_graph(rng, 4)
    X, X2 = rng.random((5, 2)), rng.random((4, 2))
    r = solve_match((A, X), (B, X2), nu=0.4)
    C = label_cost(X, X2)
    P = permutation_matrix(r.permutation)
    assert r.phi == pytest.approx(qap_objective(A, pad_adjacency(B, 5), C, P, 0.4), abs=1e-12)
    assert r.iterations >= 1
    assert r.n_vertices == (5, 4)


def test_relaxed_objective_is_nonincreasing():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = rng.integers(2, 9)
        G = (_random_graph(rng, n), rng.random((n, 2)))
        H = (_random_graph(rng, n), rng.random((n, 2)))
        r = solve_match(G, H, nu=rng.random())
        for hist in (r.convex_history, r.history):
            assert np.all(np.diff(hist) <= 1e-12)


def test_padding_contract():
    rng = np.random.default_rng(8)
    G = (_random_graph(rng, 4), rng.random((4, 2)))
    H = (_random_graph(rng, 6), rng.random((6, 2)))
    r = solve_match(G, H)
    assert sorted(r.permutation.tolist()) == list(range(6))
    P = pad_adjacency(G[0], 6, 0.5)
    assert P.shape == (6, 6)
    assert np.all(P[4:, :] == 0.5) and np.all(P[:4, :4] == G[0])


def test_projection_is_a_permutation():
    rng = np.random.default_rng(9)
    P = rng.random((5, 5))
    perm = project_to_permutation(P)
    assert sorted(perm.tolist()) == list(range(5))
    assert project_to_permutation(np.eye(4)[[2, 0, 3, 1]]).tolist() == [2, 0, 3, 1]


def test_swaps_always_improve():
    rng = np.random.default_rng(10)
    for _ in range(100):
        n = rng.integers(2, 7)
        A, B = _random_graph(rng, n), _random_graph(rng, n)
        C = label_cost(rng.random((n, 2)), rng.random((n, 2)))
        perm = rng.permutation(n)
        nu = rng.random()
        new, k = refine_by_swaps(A, B, C, perm, nu)
        before = _phi(A, B, C, permutation_matrix(perm), nu)
        after = _phi(A, B, C, permutation_matrix(new), nu)
        assert after <= before + 1e-12
        if k:
            assert after < before


def test_empty_graphs_match_at_zero():
    r = solve_match((np.zeros((0, 0)), np.zeros((0, 4))), (np.zeros((0, 0)), np.zeros((0, 4))))
    assert r.phi == 0.0 and r.permutation.size == 0


def test_solver_argument_validation():
    G = (np.zeros((2, 2)), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        solve_match(G, G, nu=1.5)
    with pytest.raises(ValueError):
        solve_match(G, G, xi=-1)
    with pytest.raises(ValueError):
        solve_match((np.zeros((2, 2)), np.zeros((3, 1))), G)


# -- temporal objective ----------------------------------------------------------------


def test_temporal_weights():
    assert np.allclose(temporal_weights(1, 0.5), [1 / 3, 2 / 3], atol=1e-12)
    assert temporal_weights(0, 0.3).tolist() == [1.0]
    w = temporal_weights(5, 0.2)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.diff(w) > 0)
    with pytest.raises(ValueError):
        temporal_weights(2, 0.0)


def test_combine_phis_identities():
    assert combine_phis([0.37], 0.5) == 0.37
    assert combine_phis([0.2, 0.8], 0.5) == pytest.approx(0.2 / 3 + 1.6 / 3, abs=1e-12)
    assert combine_phis([0.42] * 7, 0.3) == pytest.approx(0.42, abs=1e-12)


def test_temporal_objective_of_identical_sequences():
    rng = np.random.default_rng(11)
    seq = [(_random_graph(rng, k), rng.random((k, 3))) for k in (2, 3, 5)]
    value, terms = temporal_objective(seq, seq, nu=0.0, return_terms=True)
    assert value == pytest.approx(0.0, abs=1e-9)
    assert len(terms) == 3
    with pytest.raises(ValueError):
        temporal_objective(seq, seq[:2])


def test_graph_matcher_estimator():
    rng = np.random.default_rng(12)
    ref = [(_random_graph(rng, 4), rng.random((4, 2))) for _ in range(3)]
    other = [(_random_graph(rng, 4), rng.random((4, 2))) for _ in range(3)]
    m = GraphMatcher(nu=0.0).fit(ref)
    assert m.distance(ref) == pytest.approx(0.0, abs=1e-9)
    D = m.transform([ref, other])
    assert D.shape == (2, 1) and D[1, 0] >= D[0, 0]
    assert clone(m).get_params()["nu"] == 0.0
    with pytest.raises(AttributeError):
        GraphMatcher().distance(ref)
