"""Marked evolving contact graph, SIR bookkeeping and detected-network snapshots."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ._validation import as_generator, check_fraction

NO_PARTNER = -1


class Gender(enum.IntEnum):
    MALE = 0
    FEMALE = 1


class Orientation(enum.IntEnum):
    HETERO = 0
    BISEXUAL = 1


class State(enum.IntEnum):
    S = 0
    I = 1  # noqa: E741
    R = 2


class DetectionType(enum.IntEnum):
    RANDOM = 0
    CONTACT_TRACED = 1


class ModelViolation(RuntimeError):
    """Raised when an operation would break the epidemic model's rules."""


@dataclass(frozen=True)
class VertexLabel:
    gender: Gender
    orientation: Orientation
    state: State
    hidden_degree: int
    detection_time: Optional[float] = None
    detection_type: Optional[DetectionType] = None
    infection_time: Optional[float] = None

    def __post_init__(self):
        if self.hidden_degree < 1:
            raise ValueError("hidden_degree must be >= 1")
        if self.gender == Gender.FEMALE and self.orientation == Orientation.BISEXUAL:
            raise ValueError("bisexual orientation is only modelled for men")
        removed = self.state == State.R
        if (self.detection_time is not None) != removed or (self.detection_type is not None) != removed:
            raise ValueError("detection time/type must be set exactly for removed vertices")
        if (self.infection_time is not None) != (self.state != State.S):
            raise ValueError("infection_time must be set exactly for infected or removed vertices")


class EvolvingGraph:
    """Fixed vertex set with a growing simple edge set and per-vertex marks.

    Vertex marks live in parallel numpy arrays so the simulator can vectorise
    partner selection; ``label(i)`` gives the per-vertex record view.
    Edges are keyed by ``(i, j)`` with ``i < j`` and map to the day of first
    contact.
    """

    def __init__(self, gender, orientation, hidden_degree):
        gender = np.asarray(gender, dtype=np.int8)
        orientation = np.asarray(orientation, dtype=np.int8)
        hidden_degree = np.asarray(hidden_degree, dtype=np.int64)
        n = gender.shape[0]
        if orientation.shape != (n,) or hidden_degree.shape != (n,):
            raise ValueError("label arrays must share one length")
        if np.any(hidden_degree < 1):
            raise ValueError("hidden degrees must be >= 1")
        if np.any((gender == Gender.FEMALE) & (orientation == Orientation.BISEXUAL)):
            raise ValueError("bisexual orientation is only modelled for men")

        self.gender = gender
        self.orientation = orientation
        self.hidden_degree = hidden_degree
        self.state = np.zeros(n, dtype=np.int8)
        self.detection_time = np.full(n, np.nan)
        self.detection_type = np.full(n, -1, dtype=np.int8)
        self.infection_time = np.full(n, np.nan)
        self.degree = np.zeros(n, dtype=np.int64)
        # number of removed neighbours, kept for the simulator's rate bound
        self.n_detected_neighbors = np.zeros(n, dtype=np.int64)
        self.last_partner = np.full(n, NO_PARTNER, dtype=np.int64)
        self.edges: Dict[Tuple[int, int], float] = {}
        self.neighbors: List[set] = [set() for _ in range(n)]
        self._infective: List[int] = []
        self._infective_pos: Dict[int, int] = {}

    def __len__(self):
        return self.gender.shape[0]

    @property
    def n_vertices(self) -> int:
        return len(self)

    # -- SIR partition -------------------------------------------------

    @property
    def susceptible(self) -> frozenset:
        return frozenset(np.flatnonzero(self.state == State.S).tolist())

    @property
    def infective(self) -> frozenset:
        return frozenset(self._infective)

    @property
    def removed(self) -> frozenset:
        return frozenset(np.flatnonzero(self.state == State.R).tolist())

    @property
    def n_infective(self) -> int:
        return len(self._infective)

    def infective_at(self, k: int) -> int:
        """The k-th member of the infective list (arbitrary but stable order)."""
        return self._infective[k]

    def infective_array(self) -> np.ndarray:
        return np.asarray(self._infective, dtype=np.int64)

    def counts(self) -> Tuple[int, int, int]:
        n_i = len(self._infective)
        n_r = int(np.count_nonzero(self.state == State.R))
        return len(self) - n_i - n_r, n_i, n_r

    def infect(self, i: int, day: float) -> None:
        if self.state[i] != State.S:
            raise ModelViolation(f"vertex {i} is not susceptible")
        self.state[i] = State.I
        self.infection_time[i] = day
        self._infective_pos[i] = len(self._infective)
        self._infective.append(i)

    def detect(self, i: int, day: float, kind: DetectionType) -> None:
        if self.state[i] != State.I:
            raise ModelViolation(f"vertex {i} is not infective")
        pos = self._infective_pos.pop(i)
        last = self._infective.pop()
        if last != i:
            self._infective[pos] = last
            self._infective_pos[last] = pos
        self.state[i] = State.R
        self.detection_time[i] = day
        self.detection_type[i] = int(kind)
        for j in self.neighbors[i]:
            self.n_detected_neighbors[j] += 1

    def mark_removed(self, i: int, detection_time: float, kind: DetectionType,
                     infection_time: Optional[float] = None) -> None:
        """Place a susceptible vertex straight into R (used when seeding from data)."""
        if self.state[i] != State.S:
            raise ModelViolation(f"vertex {i} is not susceptible")
        self.state[i] = State.I
        self.infection_time[i] = detection_time if infection_time is None else infection_time
        self._infective_pos[i] = len(self._infective)
        self._infective.append(i)
        self.detect(i, detection_time, kind)

    # -- edges -----------------------------------------------------------

    def add_contact_edge(self, i: int, j: int, day: float) -> bool:
        """Record a contact between ``i`` and ``j``; returns True for a new edge."""
        if i == j:
            raise ModelViolation("self contact")
        if self.state[i] == State.R or self.state[j] == State.R:
            raise ModelViolation(f"contact ({i}, {j}) involves a removed vertex")
        key = (i, j) if i < j else (j, i)
        self.last_partner[i] = j
        self.last_partner[j] = i
        first = self.edges.get(key)
        if first is not None:
            if day < first:
                self.edges[key] = day
            return False
        self.edges[key] = day
        self.neighbors[i].add(j)
        self.neighbors[j].add(i)
        self.degree[i] += 1
        self.degree[j] += 1
        return True

    def add_edge_raw(self, i: int, j: int, day: float) -> None:
        """Insert an edge without contact rules (seeding from recorded data)."""
        if i == j:
            raise ValueError("self loop")
        key = (i, j) if i < j else (j, i)
        if key in self.edges:
            self.edges[key] = min(self.edges[key], day)
            return
        self.edges[key] = day
        self.neighbors[i].add(j)
        self.neighbors[j].add(i)
        self.degree[i] += 1
        self.degree[j] += 1
        if self.state[i] == State.R:
            self.n_detected_neighbors[j] += 1
        if self.state[j] == State.R:
            self.n_detected_neighbors[i] += 1

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    # -- views -------------------------------------------------------------

    def label(self, i: int) -> VertexLabel:
        state = State(int(self.state[i]))
        det = self.detection_time[i]
        inf = self.infection_time[i]
        return VertexLabel(
            gender=Gender(int(self.gender[i])),
            orientation=Orientation(int(self.orientation[i])),
            state=state,
            hidden_degree=int(self.hidden_degree[i]),
            detection_time=None if np.isnan(det) else float(det),
            detection_type=None if self.detection_type[i] < 0 else DetectionType(int(self.detection_type[i])),
            infection_time=None if np.isnan(inf) else float(inf),
        )

    @property
    def labels(self) -> List[VertexLabel]:
        return [self.label(i) for i in range(len(self))]

    def copy(self) -> "EvolvingGraph":
        g = EvolvingGraph.__new__(EvolvingGraph)
        for name in ("gender", "orientation", "hidden_degree", "state", "detection_time",
                     "detection_type", "infection_time", "degree", "n_detected_neighbors",
                     "last_partner"):
            setattr(g, name, getattr(self, name).copy())
        g.edges = dict(self.edges)
        g.neighbors = [set(s) for s in self.neighbors]
        g._infective = list(self._infective)
        g._infective_pos = dict(self._infective_pos)
        return g

    def check_invariants(self) -> None:
        """Assert the structural invariants; meant for tests and debugging."""
        n = len(self)
        assert set(self._infective) == set(np.flatnonzero(self.state == State.I).tolist())
        assert int(self.degree.sum()) == 2 * len(self.edges)
        for (i, j), day in self.edges.items():
            assert 0 <= i < j < n
            for v in (i, j):
                if self.state[v] == State.R:
                    assert day <= self.detection_time[v]
        removed = self.state == State.R
        assert np.all(np.isnan(self.detection_time) == ~removed)
        assert np.all((self.detection_type >= 0) == removed)
        assert np.all(np.isnan(self.infection_time) == (self.state == State.S))
        nd = np.array([sum(1 for j in self.neighbors[i] if removed[j]) for i in range(n)], dtype=np.int64)
        assert np.array_equal(nd, self.n_detected_neighbors)


def _power_law_degrees(rng: np.random.Generator, n: int, exponent: float, d_max: int) -> np.ndarray:
    ks = np.arange(1, d_max + 1, dtype=float)
    cdf = np.cumsum(ks ** -exponent)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    return np.minimum(idx, d_max - 1) + 1


def init_population(M: int, degree_exponent: float = 2.0, female_frac: float = 0.5,
                    bisexual_frac: float = 0.05, n_initial_infected: int = 0,
                    seed=None, start_day: float = 0.0) -> EvolvingGraph:
    """Draw a fresh population with power-law hidden degrees and no edges.

    Hidden degrees follow ``P(d=k) ∝ k**-degree_exponent`` on ``1..max(1, M-1)``
    via the inverse CDF. Each vertex is female with probability ``female_frac``;
    a male is bisexual with probability ``bisexual_frac / (1 - female_frac)`` so
    that the population-level bisexual fraction is ``bisexual_frac``.
    """
    if M < 0:
        raise ValueError("M must be non-negative")
    if degree_exponent <= 1:
        raise ValueError("degree_exponent must be > 1")
    check_fraction(female_frac, "female_frac")
    check_fraction(bisexual_frac, "bisexual_frac")
    if bisexual_frac > 0 and bisexual_frac >= 1 - female_frac:
        raise ValueError("bisexual_frac must be smaller than the male fraction 1 - female_frac")
    if not 0 <= n_initial_infected <= M:
        raise ValueError("n_initial_infected must lie in [0, M]")

    rng = as_generator(seed)
    female = rng.random(M) < female_frac
    p_bi = bisexual_frac / (1 - female_frac) if bisexual_frac > 0 else 0.0
    bisexual = (~female) & (rng.random(M) < p_bi)
    hidden = _power_law_degrees(rng, M, degree_exponent, max(1, M - 1))
    g = EvolvingGraph(female.astype(np.int8), bisexual.astype(np.int8), hidden)
    for i in sorted(rng.choice(M, size=n_initial_infected, replace=False).tolist()):
        g.infect(i, start_day)
    return g


def add_contact_edge(G: EvolvingGraph, i: int, j: int, day: float) -> EvolvingGraph:
    G.add_contact_edge(i, j, day)
    return G


@dataclass
class Snapshot:
    """Observable network at ``day``: detected vertices and the edges among them."""

    day: float
    detected: List[Tuple[int, VertexLabel]] = field(default_factory=list)
    edges: set = field(default_factory=set)

    @property
    def n_vertices(self) -> int:
        return len(self.detected)

    @property
    def ids(self) -> List[int]:
        return [v for v, _ in self.detected]

    def adjacency(self) -> np.ndarray:
        index = {v: k for k, (v, _) in enumerate(self.detected)}
        A = np.zeros((len(index), len(index)))
        for a, b in self.edges:
            A[index[a], index[b]] = A[index[b], index[a]] = 1.0
        return A

    def label_matrix(self) -> np.ndarray:
        """Covariates used for matching: gender, orientation, detection day, detection type."""
        X = np.empty((len(self.detected), 4))
        for k, (_, lab) in enumerate(self.detected):
            X[k] = (int(lab.gender), int(lab.orientation), lab.detection_time, int(lab.detection_type))
        return X

    def observed_content(self):
        """Day, covariates visible in a contact database, and edges."""
        verts = tuple((v, int(l.gender), int(l.orientation), l.detection_time, int(l.detection_type))
                      for v, l in sorted(self.detected, key=lambda t: t[0]))
        return float(self.day), verts, frozenset(self.edges)

    def same_content(self, other: "Snapshot") -> bool:
        return self.observed_content() == other.observed_content()


def observable_network(G: EvolvingGraph, day: float) -> Snapshot:
    """Subgraph induced on vertices detected no later than ``day``."""
    with np.errstate(invalid="ignore"):
        mask = G.detection_time <= day
    ids = np.flatnonzero(mask).tolist()
    edges = {(i, j) for (i, j) in G.edges if mask[i] and mask[j]}
    return Snapshot(day=day, detected=[(i, G.label(i)) for i in ids], edges=edges)


@dataclass(frozen=True)
class GraphStats:
    n_detected: int
    n_random: int
    n_traced: int
    n_edges: int
    n_components: int
    largest_component: int


def graph_stats(S: Snapshot) -> GraphStats:
    n = S.n_vertices
    if n == 0:
        return GraphStats(0, 0, 0, 0, 0, 0)
    n_traced = sum(1 for _, lab in S.detected if lab.detection_type == DetectionType.CONTACT_TRACED)
    index = {v: k for k, v in enumerate(S.ids)}
    rows = [index[a] for a, _ in S.edges]
    cols = [index[b] for _, b in S.edges]
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    n_comp, comp = connected_components(adj, directed=False)
    return GraphStats(
        n_detected=n,
        n_random=n - n_traced,
        n_traced=n_traced,
        n_edges=len(S.edges),
        n_components=int(n_comp),
        largest_component=int(np.bincount(comp).max()),
    )

