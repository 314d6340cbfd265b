"""Event-driven SIR simulation on an evolving contact graph.

Events are generated by thinning: waiting times are drawn from a dominating
constant rate and each proposal is accepted with probability
``exact rate / bound``. Only infectives initiate contacts, so the cost per
event scales with the number of infectives rather than the population.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_generator, check_fraction, check_nonnegative
from .population import (
    NO_PARTNER,
    DetectionType,
    EvolvingGraph,
    Gender,
    Orientation,
    Snapshot,
    State,
    VertexLabel,
    init_population,
    observable_network,
)

PARAM_NAMES = ("n_initial_infected", "alpha", "gamma", "beta", "lambda", "sigma")


class NoCompatiblePartner(LookupError):
    pass


@dataclass(frozen=True)
class Theta:
    """Model parameters, ordered as ``[|I0|, alpha, gamma, beta, lambda, sigma]``."""

    n_initial_infected: int = 100
    alpha: float = 0.9
    gamma: float = 0.001
    beta: float = 0.001
    lambda_: float = 0.1
    sigma: float = 0.005

    def __post_init__(self):
        if int(self.n_initial_infected) != self.n_initial_infected or self.n_initial_infected < 0:
            raise ValueError("n_initial_infected must be a non-negative integer")
        object.__setattr__(self, "n_initial_infected", int(self.n_initial_infected))
        check_fraction(self.alpha, "alpha")
        check_fraction(self.sigma, "sigma")
        check_nonnegative(self.gamma, "gamma")
        check_nonnegative(self.beta, "beta")
        check_nonnegative(self.lambda_, "lambda")

    def to_array(self) -> np.ndarray:
        return np.array([self.n_initial_infected, self.alpha, self.gamma, self.beta,
                         self.lambda_, self.sigma], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Theta":
        values = [float(v) for v in values]
        if len(values) != 6:
            raise ValueError("theta vectors have 6 entries")
        return cls(int(round(values[0])), *values[1:])


@dataclass
class SimConfig:
    M: int = 5000
    T: float = 1000.0
    tau: float = 0.5
    eta1: float = 720.0
    eta2: float = 180.0
    snapshot_days: Optional[List[float]] = None
    degree_exponent: float = 2.0
    female_frac: float = 0.5
    bisexual_frac: float = 0.05
    seed: Optional[int] = None
    start_day: float = 0.0

    def __post_init__(self):
        check_fraction(self.tau, "tau")
        if not self.eta1 > self.eta2 >= 0:
            raise ValueError("contact tracing window needs eta1 > eta2 >= 0")
        if self.T < self.start_day:
            raise ValueError("T must not precede start_day")
        if self.snapshot_days is None:
            self.snapshot_days = default_snapshot_days(self.start_day, self.T)
        days = [float(d) for d in self.snapshot_days]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise ValueError("snapshot_days must be strictly ascending")
        if days and (days[0] < self.start_day or days[-1] > self.T):
            raise ValueError("snapshot_days must lie within [start_day, T]")
        self.snapshot_days = days


def default_snapshot_days(start: float, end: float, n_intervals: int = 5) -> List[float]:
    """Integer days splitting ``[start, end]`` into equal intervals."""
    days = np.round(np.linspace(start, end, n_intervals + 1))
    return sorted(set(float(d) for d in days))


class EventKind(enum.Enum):
    CONTACT = "contact"
    INFECTION = "infection"
    DETECTION_RANDOM = "detection_random"
    DETECTION_TRACED = "detection_traced"
    NULL = "null"


@dataclass(frozen=True)
class Event:
    day: float
    kind: EventKind
    i: int = -1
    j: int = -1


@dataclass
class Trajectory:
    graph: EvolvingGraph
    snapshots: List[Snapshot]
    events: List[Event] = field(default_factory=list)
    start_day: float = 0.0
    end_day: float = 0.0
    n_null: int = 0

    @property
    def snapshot_days(self) -> List[float]:
        return [s.day for s in self.snapshots]

    def counts_at(self, days) -> dict:
        """S/I/R sizes and detection-type counts at each of ``days``.

        Computed from the recorded infection and detection times, which fully
        determine the step functions.
        """
        days = np.atleast_1d(np.asarray(days, dtype=float))
        g = self.graph
        inf = np.sort(g.infection_time[~np.isnan(g.infection_time)])
        removed = ~np.isnan(g.detection_time)
        det = g.detection_time[removed]
        traced = np.sort(det[g.detection_type[removed] == DetectionType.CONTACT_TRACED])
        rand = np.sort(det[g.detection_type[removed] == DetectionType.RANDOM])
        n_inf = np.searchsorted(inf, days, side="right")
        n_traced = np.searchsorted(traced, days, side="right")
        n_rand = np.searchsorted(rand, days, side="right")
        n_r = n_traced + n_rand
        return {
            "day": days,
            "susceptible": len(g) - n_inf,
            "infective": n_inf - n_r,
            "removed": n_r,
            "random": n_rand,
            "traced": n_traced,
            "infected_total": n_inf,
        }

    @property
    def final_counts(self) -> Tuple[int, int, int]:
        return self.graph.counts()


def detection_rate(G: EvolvingGraph, i: int, day: float, gamma: float, beta: float,
                   eta1: float = 720.0, eta2: float = 180.0) -> float:
    """``gamma + beta * #{neighbours detected within [day - eta1, day - eta2]}``."""
    if G.state[i] != State.I:
        raise ValueError(f"detection rate queried for non-infective vertex {i}")
    return gamma + beta * windowed_detected_count(G, i, day, eta1, eta2)


def windowed_detected_count(G: EvolvingGraph, i: int, day: float, eta1: float, eta2: float) -> int:
    lo, hi = day - eta1, day - eta2
    dt = G.detection_time
    return sum(1 for j in G.neighbors[i] if lo <= dt[j] <= hi)


def _compatible_mask(G: EvolvingGraph, i: int) -> np.ndarray:
    if G.gender[i] == Gender.FEMALE:
        return G.gender == Gender.MALE
    if G.orientation[i] == Orientation.BISEXUAL:
        return (G.gender == Gender.FEMALE) | (G.orientation == Orientation.BISEXUAL)
    return G.gender == Gender.FEMALE


def compatible(G: EvolvingGraph, i: int, j: int) -> bool:
    if G.gender[i] == Gender.FEMALE:
        return G.gender[j] == Gender.MALE
    if G.gender[j] == Gender.FEMALE:
        return True
    return G.orientation[i] == Orientation.BISEXUAL and G.orientation[j] == Orientation.BISEXUAL


def partner_weights(G: EvolvingGraph, i: int, tau: float) -> np.ndarray:
    """Unnormalised selection weights over all vertices for a new partner of ``i``.

    Zero outside the candidate set (removed, incompatible, ``i`` itself and its
    last partner).
    """
    mask = _compatible_mask(G, i) & (G.state != State.R)
    mask[i] = False
    lp = G.last_partner[i]
    if lp != NO_PARTNER:
        mask[lp] = False
    w = (1.0 - tau) * G.degree + tau * G.hidden_degree
    return np.where(mask, w, 0.0), mask


def choose_partner(G: EvolvingGraph, i: int, alpha: float, tau: float, rng) -> int:
    if G.state[i] == State.R:
        raise ValueError(f"removed vertex {i} cannot make contacts")
    lp = G.last_partner[i]
    if rng.random() < alpha and lp != NO_PARTNER and G.state[lp] != State.R:
        return int(lp)
    w, mask = partner_weights(G, i, tau)
    cand = np.flatnonzero(mask)
    if cand.size == 0:
        raise NoCompatiblePartner(f"vertex {i} has no compatible non-removed partner")
    wc = w[cand]
    total = wc.sum()
    if total <= 0:
        return int(cand[rng.integers(cand.size)])
    k = np.searchsorted(np.cumsum(wc), rng.random() * total, side="right")
    return int(cand[min(k, cand.size - 1)])


def infection_occurs(label_i: VertexLabel, label_j: VertexLabel, sigma: float, rng) -> bool:
    if label_i.gender == Gender.FEMALE and label_j.gender == Gender.FEMALE:
        return False
    return bool(rng.random() < sigma)


def rate_bound(G: EvolvingGraph, theta: Theta) -> float:
    """Dominating total event rate: every detected neighbour counts, windowed or not."""
    n_inf = G.n_infective
    nd = int(G.n_detected_neighbors[G.infective_array()].sum()) if n_inf else 0
    return (theta.lambda_ + theta.gamma) * n_inf + theta.beta * nd


def exact_total_rate(G: EvolvingGraph, theta: Theta, day: float, eta1: float, eta2: float) -> float:
    """Sum of exact contact and detection rates at ``day`` (no thinning slack)."""
    total = 0.0
    for i in G.infective_array().tolist():
        if theta.lambda_ > 0 and _has_partner(G, i):
            total += theta.lambda_
        total += detection_rate(G, i, day, theta.gamma, theta.beta, eta1, eta2)
    return total


def _has_partner(G: EvolvingGraph, i: int) -> bool:
    lp = G.last_partner[i]
    if lp != NO_PARTNER and G.state[lp] != State.R:
        return True
    _, mask = partner_weights(G, i, 0.0)
    return bool(mask.any())


def propose_event(G: EvolvingGraph, theta: Theta, config: SimConfig, day: float, rng) -> Tuple[Event, float]:
    """Draw the next candidate time and the event (possibly Null) without mutating ``G``.

    For a contact the partner is already drawn, so ``Event.j`` is set.
    """
    n_inf = G.n_infective
    if n_inf == 0:
        raise RuntimeError("no infectives left; the epidemic has ended")
    rho = rate_bound(G, theta)
    if rho <= 0:
        return Event(np.inf, EventKind.NULL), np.inf
    t = day + rng.exponential(1.0 / rho)
    u = rng.random() * rho

    contact_mass = theta.lambda_ * n_inf
    if u < contact_mass:
        i = G.infective_at(min(int(u / theta.lambda_), n_inf - 1))
        try:
            j = choose_partner(G, i, theta.alpha, config.tau, rng)
        except NoCompatiblePartner:
            return Event(t, EventKind.NULL, i), t
        return Event(t, EventKind.CONTACT, i, j), t
    u -= contact_mass

    random_mass = theta.gamma * n_inf
    if u < random_mass:
        i = G.infective_at(min(int(u / theta.gamma), n_inf - 1))
        return Event(t, EventKind.DETECTION_RANDOM, i), t
    u -= random_mass

    # tracing pressure: pick an (infective, detected neighbour) pair uniformly,
    # keep it only if the neighbour's detection falls in the tracing window
    inf = G.infective_array()
    nd = G.n_detected_neighbors[inf]
    csum = np.cumsum(nd)
    if csum.size == 0 or csum[-1] == 0:
        return Event(t, EventKind.NULL), t
    k = min(int(u / theta.beta), int(csum[-1]) - 1)
    pos = int(np.searchsorted(csum, k, side="right"))
    i = int(inf[pos])
    offset = k - (int(csum[pos - 1]) if pos else 0)
    detected = sorted(v for v in G.neighbors[i] if G.state[v] == State.R)
    j = detected[offset]
    if t - config.eta1 <= G.detection_time[j] <= t - config.eta2:
        return Event(t, EventKind.DETECTION_TRACED, i, j), t
    return Event(t, EventKind.NULL, i), t


def apply_event(G: EvolvingGraph, event: Event, theta: Theta, rng) -> List[Event]:
    """Mutate ``G`` according to ``event``; returns the log entries it produced."""
    kind = event.kind
    if kind is EventKind.CONTACT:
        i, j = event.i, event.j
        G.add_contact_edge(i, j, event.day)
        out = [event]
        if G.state[j] == State.S:
            both_female = G.gender[i] == Gender.FEMALE and G.gender[j] == Gender.FEMALE
            if not both_female and rng.random() < theta.sigma:
                G.infect(j, event.day)
                out.append(Event(event.day, EventKind.INFECTION, i, j))
        return out
    if kind is EventKind.DETECTION_RANDOM:
        G.detect(event.i, event.day, DetectionType.RANDOM)
        return [event]
    if kind is EventKind.DETECTION_TRACED:
        G.detect(event.i, event.day, DetectionType.CONTACT_TRACED)
        return [event]
    return [event]


def step(G: EvolvingGraph, theta: Theta, config: SimConfig, day: float, rng) -> Tuple[List[Event], float]:
    """Advance to the next candidate event and apply it.

    Returns the produced events (a contact that transmits yields a Contact and an
    Infection entry with the same timestamp) and the new time. Proposals past
    the horizon ``config.T`` are discarded and the clock stops at ``T``.
    """
    if G.n_infective == 0:
        raise RuntimeError("no infectives left; the epidemic has ended")
    if day >= config.T:
        raise RuntimeError("simulation horizon reached")
    event, t = propose_event(G, theta, config, day, rng)
    if t > config.T:
        return [], float(config.T)
    return apply_event(G, event, theta, rng), t


def run(theta: Theta, config: SimConfig, G0: Optional[EvolvingGraph] = None, rng=None,
        record_events: bool = True) -> Trajectory:
    """Simulate until ``config.T`` or until no infective remains."""
    rng = as_generator(config.seed if rng is None else rng)
    if G0 is None:
        G = init_population(config.M, config.degree_exponent, config.female_frac,
                            config.bisexual_frac, theta.n_initial_infected, rng,
                            start_day=config.start_day)
    else:
        G = G0.copy()

    day = float(config.start_day)
    events: List[Event] = []
    n_null = 0
    while day < config.T and G.n_infective > 0:
        produced, day = step(G, theta, config, day, rng)
        for ev in produced:
            if ev.kind is EventKind.NULL:
                n_null += 1
            elif record_events:
                events.append(ev)

    snapshots = [observable_network(G, d) for d in config.snapshot_days]
    return Trajectory(graph=G, snapshots=snapshots, events=events,
                      start_day=config.start_day, end_day=day, n_null=n_null)


class EpidemicSimulator(BaseEstimator):
    """Parameter holder exposing the simulator through the estimator API.

    ``get_params``/``set_params``/``clone`` behave as for any scikit-learn
    estimator; ``simulate`` draws one trajectory.
    """

    def __init__(self, n_initial_infected=100, alpha=0.9, gamma=0.001, beta=0.001,
                 lambda_=0.1, sigma=0.005, M=5000, T=1000.0, tau=0.5, eta1=720.0,
                 eta2=180.0, snapshot_days=None, degree_exponent=2.0, female_frac=0.5,
                 bisexual_frac=0.05, start_day=0.0, random_state=None):
        self.n_initial_infected = n_initial_infected
        self.alpha = alpha
        self.gamma = gamma
        self.beta = beta
        self.lambda_ = lambda_
        self.sigma = sigma
        self.M = M
        self.T = T
        self.tau = tau
        self.eta1 = eta1
        self.eta2 = eta2
        self.snapshot_days = snapshot_days
        self.degree_exponent = degree_exponent
        self.female_frac = female_frac
        self.bisexual_frac = bisexual_frac
        self.start_day = start_day
        self.random_state = random_state

    @property
    def theta(self) -> Theta:
        return Theta(self.n_initial_infected, self.alpha, self.gamma, self.beta, self.lambda_, self.sigma)

    @property
    def config(self) -> SimConfig:
        return SimConfig(M=self.M, T=self.T, tau=self.tau, eta1=self.eta1, eta2=self.eta2,
                         snapshot_days=self.snapshot_days, degree_exponent=self.degree_exponent,
                         female_frac=self.female_frac, bisexual_frac=self.bisexual_frac,
                         seed=None, start_day=self.start_day)

    @classmethod
    def from_parts(cls, theta: Theta, config: SimConfig) -> "EpidemicSimulator":
        kw = {f.name: getattr(config, f.name) for f in fields(SimConfig) if f.name != "seed"}
        return cls(**asdict(theta), **kw, random_state=config.seed)

    def simulate(self, G0: Optional[EvolvingGraph] = None, random_state=None,
                 record_events: bool = True) -> Trajectory:
        seed = self.random_state if random_state is None else random_state
        return run(self.theta, self.config, G0=G0, rng=as_generator(seed), record_events=record_events)
