"""Labelled graph matching by a relaxed quadratic assignment problem.

For adjacency matrices ``A`` (n x n) and ``B`` (m x m), padded to a common
size, and a vertex-fitness matrix ``C`` in [0, 1], a permutation matrix ``P``
is scored by

    phi(P) = (1 - nu) * ||A - P B P^T||_F^2 / (||A||_F^2 + ||B||_F^2)
             - nu * <C, P>_F / ||C||_F

The minimiser is approximated by Frank-Wolfe (conditional gradient) over the
doubly stochastic matrices: first on the convex surrogate ``||AP - PB||^2``,
then on the indefinite quadratic that coincides with ``phi`` on permutations,
warm-started from the convex solution. The final doubly stochastic matrix is
rounded to the nearest permutation by linear assignment.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator

from ._validation import check_positive_int, check_square
from .population import Snapshot

BRUTE_FORCE_MAX = 8

GraphLike = Union[Snapshot, Tuple[np.ndarray, np.ndarray]]


@dataclass
class MatchResult:
    permutation: np.ndarray
    phi: float
    relaxed_phi: float
    iterations: int
    P: np.ndarray = None
    history: List[float] = field(default_factory=list)
    convex_history: List[float] = field(default_factory=list)
    n_vertices: Tuple[int, int] = (0, 0)


def _as_graph(G: GraphLike) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(G, Snapshot):
        return G.adjacency(), G.label_matrix()
    A, X = G
    A = np.asarray(A, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if A.shape != (X.shape[0], X.shape[0]):
        raise ValueError("adjacency and label matrix disagree on the vertex count")
    return A, X


def label_cost(X: np.ndarray, X2: np.ndarray, pad_value: float = 1.0) -> np.ndarray:
    """Vertex fitness matrix in [0, 1]; 1 marks the most similar pair.

    Columns of the stacked labels are scaled to unit norm, pairwise Euclidean
    distances are rescaled affinely so the smallest distance maps to 1 and the
    largest to 0, and the result is padded to a square matrix with
    ``pad_value``.
    """
    X = np.asarray(X, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X2.ndim == 1:
        X2 = X2[:, None]
    n, m = X.shape[0], X2.shape[0]
    if n and m and X.shape[1] != X2.shape[1]:
        raise ValueError(f"label dimensions differ: {X.shape[1]} vs {X2.shape[1]}")
    N = max(n, m)
    C = np.full((N, N), float(pad_value))
    if n == 0 or m == 0:
        return C
    stacked = np.vstack([X, X2])
    norms = np.linalg.norm(stacked, axis=0)
    norms[norms == 0] = 1.0
    stacked = stacked / norms
    Xn, X2n = stacked[:n], stacked[n:]
    D = np.sqrt(np.maximum(
        (Xn ** 2).sum(1)[:, None] + (X2n ** 2).sum(1)[None, :] - 2.0 * Xn @ X2n.T, 0.0))
    lo, hi = D.min(), D.max()
    if hi - lo <= 1e-12 * max(1.0, hi):
        C[:n, :m] = 1.0
    else:
        C[:n, :m] = (hi - D) / (hi - lo)
    return C


def pad_adjacency(A: np.ndarray, N: int, xi: float = 0.0) -> np.ndarray:
    n = A.shape[0]
    if n == N:
        return A.astype(float, copy=True)
    out = np.full((N, N), float(xi))
    out[:n, :n] = A
    return out


def qap_objective(A, B, C, P, nu: float) -> float:
    """Normalised objective at ``P`` (intended for permutations)."""
    A = check_square(A, "A")
    B = check_square(B, "B")
    C = check_square(C, "C")
    P = check_square(P, "P")
    if not A.shape == B.shape == C.shape == P.shape:
        raise ValueError("A, B, C and P must share one shape")
    return _phi(A, B, C, P, nu)


def _phi(A, B, C, P, nu):
    Z = (A ** 2).sum() + (B ** 2).sum()
    struct = ((A - P @ B @ P.T) ** 2).sum() / Z if Z > 0 else 0.0
    cnorm = np.linalg.norm(C)
    lab = (C * P).sum() / cnorm if cnorm > 0 else 0.0
    return float((1 - nu) * struct - nu * lab)


class _Problem:
    """Padded matrices and the two quadratic relaxations over doubly stochastic P."""

    def __init__(self, A, B, C, nu):
        self.A, self.B, self.C, self.nu = A, B, C, nu
        Z = (A ** 2).sum() + (B ** 2).sum()
        self.s = (1 - nu) / Z if Z > 0 else 0.0
        cnorm = np.linalg.norm(C)
        self.lin = nu * C / cnorm if cnorm > 0 else np.zeros_like(C)
        self.const = Z

    # convex surrogate: s * ||AP - PB||^2 - <lin, P>
    def convex(self, P):
        R = self.A @ P - P @ self.B
        return self.s * (R ** 2).sum() - (self.lin * P).sum()

    def convex_grad(self, P):
        R = self.A @ P - P @ self.B
        return 2 * self.s * (self.A.T @ R - R @ self.B.T) - self.lin

    def convex_curv(self, D):
        R = self.A @ D - D @ self.B
        return self.s * (R ** 2).sum()

    # indefinite form, equal to phi on permutations:
    # s * (||A||^2 + ||B||^2 - 2 <A, P B P^T>) - <lin, P>
    def exact(self, P):
        return self.s * (self.const - 2 * (self.A * (P @ self.B @ P.T)).sum()) - (self.lin * P).sum()

    def exact_grad(self, P):
        return -2 * self.s * (self.A @ P @ self.B.T + self.A.T @ P @ self.B) - self.lin

    def exact_curv(self, D):
        return -2 * self.s * (self.A * (D @ self.B @ D.T)).sum()


def _frank_wolfe(P, f, grad, curv, max_iter, tol):
    history = [float(f(P))]
    it = 0
    while it < max_iter:
        it += 1
        g = grad(P)
        rows, cols = linear_sum_assignment(g)
        S = np.zeros_like(P)
        S[rows, cols] = 1.0
        D = S - P
        slope = (g * D).sum()
        if slope >= -1e-14:
            break
        a = curv(D)
        if a > 0:
            t = min(1.0, -slope / (2 * a))
        else:
            t = 1.0 if a + slope < 0 else 0.0
        if t <= 0:
            break
        P = P + t * D
        val = float(f(P))
        prev = history[-1]
        history.append(val)
        if prev - val <= tol * max(abs(prev), 1e-12):
            break
    return P, history, it


def project_to_permutation(P: np.ndarray) -> np.ndarray:
    """Permutation ``perm`` maximising ``sum_i P[i, perm[i]]``."""
    rows, cols = linear_sum_assignment(P, maximize=True)
    perm = np.empty(P.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def permutation_matrix(perm: np.ndarray) -> np.ndarray:
    P = np.zeros((len(perm), len(perm)))
    P[np.arange(len(perm)), perm] = 1.0
    return P


def refine_by_swaps(A, B, C, perm, nu, max_swaps=None):
    """Greedy 2-opt on the permutation: apply the best improving swap until none is left.

    Works with the swap gain in closed form, so each round costs one matrix
    product. ``A`` and ``B`` must be symmetric.
    """
    N = len(perm)
    perm = perm.copy()
    if N < 2:
        return perm, 0
    Z = (A ** 2).sum() + (B ** 2).sum()
    s = (1 - nu) / Z if Z > 0 else 0.0
    cnorm = np.linalg.norm(C)
    lin = nu * C / cnorm if cnorm > 0 else np.zeros_like(C)
    max_swaps = N * N if max_swaps is None else max_swaps
    dA = np.diag(A)
    n_swaps = 0
    while n_swaps < max_swaps:
        Bp = B[np.ix_(perm, perm)]
        G = A @ Bp
        dG = np.diag(G)
        dB = np.diag(Bp)
        gain = (G + G.T - dG[:, None] - dG[None, :]
                - (dA[:, None] - A.T) * (Bp.T - dB[:, None])
                - (A - dA[None, :]) * (dB[None, :] - Bp))
        gain = 2 * gain + (dA[:, None] - dA[None, :]) * (dB[None, :] - dB[:, None])
        L = lin[:, perm]
        dL = np.diag(L)
        lab_gain = L + L.T - dL[:, None] - dL[None, :]
        delta = -2 * s * gain - lab_gain
        np.fill_diagonal(delta, 0.0)
        k = int(np.argmin(delta))
        i, j = divmod(k, N)
        if delta[i, j] >= -1e-12:
            break
        perm[i], perm[j] = perm[j], perm[i]
        n_swaps += 1
    return perm, n_swaps


def _setup(G: GraphLike, G2: GraphLike, xi: float, pad_value: float):
    A, X = _as_graph(G)
    B, X2 = _as_graph(G2)
    N = max(A.shape[0], B.shape[0])
    C = label_cost(X, X2, pad_value)
    return pad_adjacency(A, N, xi), pad_adjacency(B, N, xi), C, (A.shape[0], B.shape[0])


def solve_match(G: GraphLike, G2: GraphLike, nu: float = 0.2, xi: float = 0.0,
                max_iter: int = 100, tol: float = 1e-6, pad_value: float = 1.0,
                refine: bool = True) -> MatchResult:
    """Approximately minimise ``phi`` between two labelled graphs.

    ``G`` and ``G2`` are snapshots or ``(adjacency, labels)`` pairs. The
    returned permutation maps vertex ``i`` of the padded first graph to vertex
    ``permutation[i]`` of the padded second graph. With ``refine`` the
    rounded permutation is polished by improving pairwise swaps.
    """
    check_positive_int(max_iter, "max_iter")
    if not 0.0 <= nu <= 1.0:
        raise ValueError("nu must lie in [0, 1]")
    if xi < 0:
        raise ValueError("xi must be non-negative")
    A, B, C, sizes = _setup(G, G2, xi, pad_value)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B)) and np.all(np.isfinite(C))):
        raise ValueError("non-finite entries in the matching problem")
    N = A.shape[0]
    if N == 0:
        return MatchResult(np.empty(0, dtype=np.int64), 0.0, 0.0, 1, np.zeros((0, 0)), [0.0], [0.0], sizes)

    prob = _Problem(A, B, C, nu)
    P0 = np.full((N, N), 1.0 / N)
    P1, convex_hist, it1 = _frank_wolfe(P0, prob.convex, prob.convex_grad, prob.convex_curv, max_iter, tol)
    P2, hist, it2 = _frank_wolfe(P1, prob.exact, prob.exact_grad, prob.exact_curv, max_iter, tol)
    perm = project_to_permutation(P2)
    if refine:
        perm, _ = refine_by_swaps(A, B, C, perm, nu)
    phi = _phi(A, B, C, permutation_matrix(perm), nu)
    return MatchResult(perm, phi, float(hist[-1]), max(1, it1 + it2), P2, hist, convex_hist, sizes)


def brute_force_match(G: GraphLike, G2: GraphLike, nu: float = 0.2, xi: float = 0.0,
                      pad_value: float = 1.0) -> MatchResult:
    """Exhaustive minimum of ``phi`` over all permutations (padded size <= 8)."""
    A, B, C, sizes = _setup(G, G2, xi, pad_value)
    N = A.shape[0]
    if N > BRUTE_FORCE_MAX:
        raise ValueError(f"brute force refused for padded size {N} > {BRUTE_FORCE_MAX}")
    if N == 0:
        return MatchResult(np.empty(0, dtype=np.int64), 0.0, 0.0, 1, np.zeros((0, 0)), [0.0], [], sizes)
    perms = np.array(list(itertools.permutations(range(N))), dtype=np.int64)
    Z = (A ** 2).sum() + (B ** 2).sum()
    permuted = B[perms[:, :, None], perms[:, None, :]]
    struct = ((A[None] - permuted) ** 2).sum(axis=(1, 2))
    struct = struct / Z if Z > 0 else np.zeros(len(perms))
    cnorm = np.linalg.norm(C)
    lab = C[np.arange(N)[None, :], perms].sum(1)
    lab = lab / cnorm if cnorm > 0 else np.zeros(len(perms))
    vals = (1 - nu) * struct - nu * lab
    k = int(np.argmin(vals))
    return MatchResult(perms[k], float(vals[k]), float(vals[k]), 1, permutation_matrix(perms[k]),
                       [float(vals[k])], [], sizes)


def temporal_weights(K: int, omega: float) -> np.ndarray:
    """Normalised weights ``omega (1 - omega)^(K - i)`` for ``i = 0..K``."""
    if not 0.0 < omega <= 1.0:
        raise ValueError("omega must lie in (0, 1]")
    w = omega * (1.0 - omega) ** (K - np.arange(K + 1, dtype=float))
    return w / w.sum()


def temporal_objective(S: Sequence[GraphLike], S2: Sequence[GraphLike], omega: float = 0.5,
                       nu: float = 0.2, xi: float = 0.0, return_terms: bool = False, **solver_kw):
    """Exponentially weighted mean of per-snapshot ``phi``; later snapshots weigh more."""
    if len(S) != len(S2):
        raise ValueError(f"snapshot sequences differ in length: {len(S)} vs {len(S2)}")
    if len(S) == 0:
        raise ValueError("empty snapshot sequences")
    phis = np.array([solve_match(a, b, nu=nu, xi=xi, **solver_kw).phi for a, b in zip(S, S2)])
    value = float(temporal_weights(len(S) - 1, omega) @ phis)
    if return_terms:
        return value, phis
    return value


def combine_phis(phis: Sequence[float], omega: float) -> float:
    phis = np.asarray(phis, dtype=float)
    if phis.size == 0:
        raise ValueError("no objective values to combine")
    return float(temporal_weights(phis.size - 1, omega) @ phis)


class GraphMatcher(BaseEstimator):
    """Distance from candidate snapshot sequences to a fitted reference sequence."""

    def __init__(self, nu=0.2, xi=0.0, omega=0.5, max_iter=100, tol=1e-6, pad_value=1.0):
        self.nu = nu
        self.xi = xi
        self.omega = omega
        self.max_iter = max_iter
        self.tol = tol
        self.pad_value = pad_value

    def fit(self, reference, y=None):
        reference = list(reference)
        if not reference:
            raise ValueError("reference sequence is empty")
        self.reference_ = reference
        self.n_snapshots_ = len(reference)
        return self

    def _solver_kw(self):
        return dict(max_iter=self.max_iter, tol=self.tol, pad_value=self.pad_value)

    def distance(self, sequence, return_terms=False):
        if not hasattr(self, "reference_"):
            raise AttributeError("GraphMatcher is not fitted; call fit(reference) first")
        return temporal_objective(self.reference_, list(sequence), omega=self.omega, nu=self.nu,
                                  xi=self.xi, return_terms=return_terms, **self._solver_kw())

    def transform(self, sequences):
        return np.array([[self.distance(s)] for s in sequences])
