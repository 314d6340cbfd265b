"""ABC sequential Monte Carlo over the epidemic parameters.

A population of weighted particles is pushed through a decreasing sequence of
tolerances. Iteration 0 samples the prior; later iterations resample ancestors
by weight, perturb them with an independent per-coordinate kernel and keep a
proposal once its simulated data falls within the current tolerance of the
observation. Each particle slot draws from its own RNG stream, so results do
not depend on how slots are scheduled.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import special, stats
from sklearn.base import BaseEstimator

from ._validation import as_generator, check_positive_int
from .matching import temporal_objective
from .population import EvolvingGraph, State
from .simulator import PARAM_NAMES, SimConfig, Theta, run

logger = logging.getLogger(__name__)

_MAX_REJECTIONS = 100_000

# "all_below": stop once every accepted particle of an iteration is below the
# stop threshold. "epsilon_below": stop after the first iteration run with a
# tolerance below the threshold, which implies the former and never stops on a
# population drawn from the prior alone (unless epsilon_initial is already small).
STOP_RULES = ("all_below", "epsilon_below")


class AbcError(RuntimeError):
    """An ABC iteration could not fill its population; ``diagnostics`` has the history."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


# -- priors -------------------------------------------------------------------


class TruncatedNormal:
    discrete = False

    def __init__(self, mu, s, lo=-np.inf, hi=np.inf):
        if s <= 0 or not lo < hi:
            raise ValueError("need s > 0 and lo < hi")
        self.mu, self.s, self.lo, self.hi = float(mu), float(s), float(lo), float(hi)
        self._mass = stats.norm.cdf(self.hi, self.mu, self.s) - stats.norm.cdf(self.lo, self.mu, self.s)
        if self._mass <= 0:
            raise ValueError("truncation region carries no probability mass")

    def sample(self, rng):
        for _ in range(_MAX_REJECTIONS):
            x = rng.normal(self.mu, self.s)
            if self.lo <= x <= self.hi:
                return x
        raise ValueError("truncation region too unlikely for rejection sampling")

    def pdf(self, x):
        if not self.lo <= x <= self.hi:
            return 0.0
        return float(stats.norm.pdf(x, self.mu, self.s) / self._mass)

    def __repr__(self):
        return f"TruncatedNormal({self.mu}, {self.s}, {self.lo}, {self.hi})"


class TruncatedDiscreteNormal:
    """Normal draw rounded to the nearest integer, restricted to ``[lo, hi]``."""

    discrete = True

    def __init__(self, mu, s, lo, hi):
        if s <= 0 or not lo <= hi:
            raise ValueError("need s > 0 and lo <= hi")
        self.mu, self.s = float(mu), float(s)
        self.lo, self.hi = int(math.ceil(lo)), int(math.floor(hi))
        self._mass = (stats.norm.cdf(self.hi + 0.5, self.mu, self.s)
                      - stats.norm.cdf(self.lo - 0.5, self.mu, self.s))
        if self.lo > self.hi or self._mass <= 0:
            raise ValueError("truncation region carries no probability mass")

    def sample(self, rng):
        for _ in range(_MAX_REJECTIONS):
            k = float(np.round(rng.normal(self.mu, self.s)))
            if self.lo <= k <= self.hi:
                return k
        raise ValueError("truncation region too unlikely for rejection sampling")

    def pdf(self, x):
        if x != round(x) or not self.lo <= x <= self.hi:
            return 0.0
        p = stats.norm.cdf(x + 0.5, self.mu, self.s) - stats.norm.cdf(x - 0.5, self.mu, self.s)
        return float(p / self._mass)

    def __repr__(self):
        return f"TruncatedDiscreteNormal({self.mu}, {self.s}, {self.lo}, {self.hi})"


class GammaPrior:
    """Gamma distribution given by its mean and standard deviation."""

    discrete = False

    def __init__(self, mean, sd):
        if mean <= 0 or sd <= 0:
            raise ValueError("gamma prior needs positive mean and sd")
        self.mean, self.sd = float(mean), float(sd)
        self.shape = (self.mean / self.sd) ** 2
        self.scale = self.sd ** 2 / self.mean
        self._dist = stats.gamma(self.shape, scale=self.scale)

    def sample(self, rng):
        return float(rng.gamma(self.shape, self.scale))

    def pdf(self, x):
        return float(self._dist.pdf(x)) if x > 0 else 0.0

    def __repr__(self):
        return f"GammaPrior(mean={self.mean}, sd={self.sd})"


class UniformPrior:
    discrete = False

    def __init__(self, lo, hi):
        if not lo < hi:
            raise ValueError("need lo < hi")
        self.lo, self.hi = float(lo), float(hi)

    def sample(self, rng):
        return float(rng.uniform(self.lo, self.hi))

    def pdf(self, x):
        return 1.0 / (self.hi - self.lo) if self.lo <= x <= self.hi else 0.0

    def __repr__(self):
        return f"UniformPrior({self.lo}, {self.hi})"


class PriorSpec:
    """Independent product of one-dimensional priors."""

    def __init__(self, components: Sequence):
        self.components = list(components)
        if not self.components:
            raise ValueError("a prior needs at least one component")

    def __len__(self):
        return len(self.components)

    @property
    def discrete(self) -> np.ndarray:
        return np.array([c.discrete for c in self.components])

    def sample(self, rng) -> np.ndarray:
        return np.array([c.sample(rng) for c in self.components], dtype=float)

    def pdf(self, theta) -> float:
        p = 1.0
        for c, x in zip(self.components, theta):
            p *= c.pdf(float(x))
            if p == 0.0:
                return 0.0
        return p

    def __repr__(self):
        return f"PriorSpec({self.components!r})"


def epidemic_prior(mean: Sequence[float], sd: Sequence[float], max_initial: float = 1500) -> PriorSpec:
    """Priors used for the six epidemic parameters.

    Discrete truncated normal on ``[0, max_initial]`` for the initial infectives,
    truncated normals on ``[0, 1]`` for the two probabilities and mean/sd gamma
    distributions for the three rates.
    """
    if len(mean) != 6 or len(sd) != 6:
        raise ValueError("epidemic priors need 6 means and 6 sds")
    return PriorSpec([
        TruncatedDiscreteNormal(mean[0], sd[0], 0, max_initial),
        TruncatedNormal(mean[1], sd[1], 0.0, 1.0),
        GammaPrior(mean[2], sd[2]),
        GammaPrior(mean[3], sd[3]),
        GammaPrior(mean[4], sd[4]),
        TruncatedNormal(mean[5], sd[5], 0.0, 1.0),
    ])


def sample_prior(spec: PriorSpec, rng) -> np.ndarray:
    return spec.sample(as_generator(rng))


# -- kernels ------------------------------------------------------------------


class KernelSpec:
    """Independent Normal perturbations; discrete coordinates use a rounded Normal."""

    def __init__(self, scales, discrete):
        self.scales = np.asarray(scales, dtype=float)
        self.discrete = np.asarray(discrete, dtype=bool)
        if self.scales.shape != self.discrete.shape:
            raise ValueError("scales and discrete flags must align")
        if np.any(self.scales <= 0):
            raise ValueError("kernel scales must be positive")

    @classmethod
    def from_population(cls, thetas: np.ndarray, discrete, factor: float = 0.2,
                        floor: float = 1e-8) -> "KernelSpec":
        sd = np.std(np.atleast_2d(thetas), axis=0)
        return cls(np.maximum(factor * sd, floor), discrete)

    def perturb(self, theta, rng) -> np.ndarray:
        out = np.asarray(theta, dtype=float) + rng.normal(0.0, self.scales)
        out[self.discrete] = np.round(out[self.discrete])
        return out

    def density(self, origin, target):
        """Kernel density of moving ``origin`` to ``target``.

        ``origin`` may be a stack of points (one per row); the result is then
        an array with one density per row.
        """
        origin = np.asarray(origin, dtype=float)
        diff = np.asarray(target, dtype=float) - origin
        diff2 = np.atleast_2d(diff)
        cont = ~self.discrete
        z = diff2[:, cont] / self.scales[cont]
        log_p = (-0.5 * z ** 2 - np.log(self.scales[cont] * math.sqrt(2 * math.pi))).sum(axis=1)
        p = np.exp(log_p)
        if self.discrete.any():
            d = diff2[:, self.discrete]
            s = self.scales[self.discrete]
            p = p * np.prod(special.ndtr((d + 0.5) / s) - special.ndtr((d - 0.5) / s), axis=1)
        return float(p[0]) if diff.ndim == 1 else p


# -- population ---------------------------------------------------------------


@dataclass
class Particle:
    theta: np.ndarray
    weight: float
    distance: float


def compute_weight(theta_new, prev: Optional[Sequence[Particle]], prior: PriorSpec,
                   kernel: Optional[KernelSpec]) -> float:
    """Importance weight ``prior(theta) / sum_j w_j K(theta_j, theta)``; 1 at iteration 0."""
    if not prev:
        return 1.0
    num = prior.pdf(theta_new)
    w = np.array([p.weight for p in prev])
    den = float(w @ kernel.density(np.array([p.theta for p in prev]), theta_new))
    if not den > 0:
        raise ValueError("kernel mixture density is zero at the new particle")
    return num / den


def resample(pop: Sequence[Particle], rng, size: Optional[int] = None) -> List[np.ndarray]:
    w = np.array([p.weight for p in pop], dtype=float)
    if w.size == 0 or not w.sum() > 0 or np.any(w < 0):
        raise ValueError("resampling needs non-negative weights with a positive total")
    size = len(pop) if size is None else size
    idx = as_generator(rng).choice(len(pop), size=size, replace=True, p=w / w.sum())
    return [pop[k].theta.copy() for k in idx]


def posterior_summary(pop: Sequence[Particle]):
    """Weighted mean and standard deviation per coordinate."""
    if not pop:
        raise ValueError("empty population")
    thetas = np.array([p.theta for p in pop], dtype=float)
    w = np.array([p.weight for p in pop], dtype=float)
    w = w / w.sum()
    mean = w @ thetas
    var = w @ (thetas - mean) ** 2
    return mean, np.sqrt(np.maximum(var, 0.0))


# -- the sampler ----------------------------------------------------------------


@dataclass
class AbcConfig:
    n_particles: int = 50
    epsilon_initial: float = 0.8
    stop_threshold: float = 0.3
    max_sim_attempts: int = 100
    # each slot may draw this many ancestors, max_sim_attempts simulations each;
    # the iteration's total budget is n_particles times their product
    max_ancestors: int = 50
    max_iterations: int = 20
    kernel_factor: float = 0.2
    kernel_floor: float = 1e-8
    nu: float = 0.2
    xi: float = 0.0
    omega: float = 0.5
    n_jobs: int = 1
    stop_rule: str = "epsilon_below"

    def __post_init__(self):
        if self.stop_rule not in STOP_RULES:
            raise ValueError(f"stop_rule must be one of {STOP_RULES}")
        check_positive_int(self.n_particles, "n_particles")
        check_positive_int(self.max_sim_attempts, "max_sim_attempts")
        check_positive_int(self.max_ancestors, "max_ancestors")
        check_positive_int(self.max_iterations, "max_iterations")
        if not self.epsilon_initial > self.stop_threshold > 0:
            raise ValueError("need epsilon_initial > stop_threshold > 0")


@dataclass
class IterationDiagnostics:
    iteration: int
    epsilon: float
    n_accepted: int
    n_attempts: int
    mean: np.ndarray
    sd: np.ndarray
    mean_distance: float
    max_distance: float

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_attempts if self.n_attempts else 0.0


@dataclass
class AbcResult:
    population: List[Particle]
    diagnostics: List[IterationDiagnostics] = field(default_factory=list)
    converged: bool = False

    @property
    def epsilons(self) -> List[float]:
        return [d.epsilon for d in self.diagnostics]


class EpidemicModel:
    """Simulate-and-compare callable pair for the epidemic simulator.

    ``simulate`` returns the snapshot sequence, or ``None`` when the summary is
    undefined: a simulated snapshot is empty while the observed one at the
    same day is not.
    """

    def __init__(self, sim_config: SimConfig, observed, nu=0.2, xi=0.0, omega=0.5,
                 seed_graph: Optional[EvolvingGraph] = None):
        self.sim_config = sim_config
        self.observed = list(observed)
        self.nu, self.xi, self.omega = nu, xi, omega
        self.seed_graph = seed_graph
        if len(self.observed) != len(sim_config.snapshot_days):
            raise ValueError("observed sequence and snapshot days differ in length")

    def simulate(self, theta, rng):
        th = Theta.from_array(theta)
        G0 = None
        if self.seed_graph is not None:
            G0 = self.seed_graph.copy()
            seed_infectives(G0, th.n_initial_infected, rng, self.sim_config.start_day)
        traj = run(th, self.sim_config, G0=G0, rng=rng, record_events=False)
        for sim, obs in zip(traj.snapshots, self.observed):
            if sim.n_vertices == 0 and obs.n_vertices > 0:
                return None
        return traj.snapshots

    def distance(self, simulated, observed):
        return temporal_objective(observed, simulated, omega=self.omega, nu=self.nu, xi=self.xi)


def seed_infectives(G: EvolvingGraph, n: int, rng, day: float) -> None:
    """Infect ``n`` uniformly chosen susceptible vertices of ``G`` at ``day``."""
    sus = np.flatnonzero(G.state == State.S)
    if n > sus.size:
        raise ValueError("more initial infectives than susceptible vertices")
    for i in sorted(rng.choice(sus, size=n, replace=False).tolist()):
        G.infect(int(i), day)


def _fill_slot(seed_seq, epsilon, prior, kernel, prev, cfg, simulate, distance, observed):
    """Produce one accepted particle for a slot, or report failure.

    Returns ``(theta, distance, n_simulations)`` with ``theta=None`` when every
    ancestor ran out of attempts.
    """
    rng = np.random.default_rng(seed_seq)
    n_sims = 0
    if prev:
        w = np.array([p.weight for p in prev])
        w = w / w.sum()
    for _ in range(cfg.max_ancestors):
        ancestor = None if not prev else prev[rng.choice(len(prev), p=w)].theta
        for _ in range(cfg.max_sim_attempts):
            if ancestor is None:
                theta = prior.sample(rng)
            else:
                theta = None
                for _ in range(_MAX_REJECTIONS):
                    cand = kernel.perturb(ancestor, rng)
                    if prior.pdf(cand) > 0:
                        theta = cand
                        break
                if theta is None:
                    break
            n_sims += 1
            sim = simulate(theta, rng)
            if sim is None:
                continue
            d = float(distance(sim, observed))
            if d < epsilon:
                return theta, d, n_sims
    return None, math.nan, n_sims


def abc_smc(prior: PriorSpec, config: AbcConfig, observed, rng=None,
            simulate: Optional[Callable] = None, distance: Optional[Callable] = None,
            sim_config: Optional[SimConfig] = None, seed_graph: Optional[EvolvingGraph] = None,
            callback: Optional[Callable[[IterationDiagnostics], None]] = None) -> AbcResult:
    """Run ABC-SMC until the stopping rule fires or ``max_iterations`` is reached.

    ``config.stop_rule`` picks the rule: ``"epsilon_below"`` stops after the first
    iteration whose tolerance is below ``stop_threshold``, ``"all_below"`` once
    every accepted distance is.

    With ``simulate``/``distance`` left as ``None`` the epidemic simulator and
    the temporal graph-matching distance are used (``sim_config`` required).
    ``simulate(theta, rng)`` returns simulated data or ``None`` if undefined;
    ``distance(simulated, observed)`` returns a float.
    """
    if simulate is None or distance is None:
        if sim_config is None:
            raise ValueError("sim_config is required for the default epidemic model")
        model = EpidemicModel(sim_config, observed, config.nu, config.xi, config.omega, seed_graph)
        simulate = simulate or model.simulate
        distance = distance or model.distance
    if observed is None or (hasattr(observed, "__len__") and len(observed) == 0):
        raise ValueError("observed data is empty")

    if isinstance(rng, np.random.SeedSequence):
        root = rng
    elif isinstance(rng, np.random.Generator):
        root = np.random.SeedSequence(int(rng.integers(2 ** 63)))
    else:
        root = np.random.SeedSequence(rng)

    N = config.n_particles
    discrete = prior.discrete
    prev: List[Particle] = []
    diagnostics: List[IterationDiagnostics] = []
    epsilon = config.epsilon_initial
    converged = False

    for it in range(config.max_iterations):
        kernel = None
        if prev:
            kernel = KernelSpec.from_population(np.array([p.theta for p in prev]), discrete,
                                                config.kernel_factor, config.kernel_floor)
        slot_seeds = root.spawn(N)
        args = [(s, epsilon, prior, kernel, prev, config, simulate, distance, observed) for s in slot_seeds]
        if config.n_jobs == 1:
            results = [_fill_slot(*a) for a in args]
        else:
            from joblib import Parallel, delayed
            results = Parallel(n_jobs=config.n_jobs)(delayed(_fill_slot)(*a) for a in args)

        n_attempts = sum(r[2] for r in results)
        accepted = [r for r in results if r[0] is not None]
        if len(accepted) < N:
            diag = IterationDiagnostics(it, epsilon, len(accepted), n_attempts,
                                        np.full(len(prior), np.nan), np.full(len(prior), np.nan),
                                        math.nan, math.nan)
            diagnostics.append(diag)
            raise AbcError(f"iteration {it}: only {len(accepted)} of {N} particles accepted "
                           f"after {n_attempts} simulations at epsilon={epsilon:.4g}", diagnostics)

        pop = []
        for theta, d, _ in accepted:
            pop.append(Particle(theta, compute_weight(theta, prev, prior, kernel), d))
        total = sum(p.weight for p in pop)
        if not total > 0 or not np.isfinite(total):
            raise AbcError(f"iteration {it}: degenerate weights", diagnostics)
        for p in pop:
            p.weight /= total

        mean, sd = posterior_summary(pop)
        dists = np.array([p.distance for p in pop])
        diag = IterationDiagnostics(it, epsilon, N, n_attempts, mean, sd, float(dists.mean()), float(dists.max()))
        diagnostics.append(diag)
        logger.info("iteration %d: epsilon=%.4f acceptance=%.3f mean distance=%.4f",
                    it, epsilon, diag.acceptance_rate, diag.mean_distance)
        if callback is not None:
            callback(diag)
        prev = pop
        if config.stop_rule == "epsilon_below":
            done = epsilon < config.stop_threshold
        else:
            done = bool(np.all(dists < config.stop_threshold))
        if done:
            converged = True
            break
        epsilon = float(dists.mean())

    return AbcResult(prev, diagnostics, converged)


class ABCSMC(BaseEstimator):
    """Fit the six epidemic parameters to an observed snapshot sequence.

    After ``fit``: ``population_``, ``diagnostics_``, ``posterior_mean_``,
    ``posterior_sd_`` and ``converged_``. ``resimulate`` reruns each accepted
    particle once and returns the count curves.
    """

    def __init__(self, prior=None, sim_config=None, n_particles=50, epsilon_initial=0.8,
                 stop_threshold=0.3, max_sim_attempts=100, max_ancestors=50, max_iterations=20,
                 kernel_factor=0.2, nu=0.2, xi=0.0, omega=0.5, n_jobs=1, stop_rule="epsilon_below",
                 seed_graph=None, random_state=None):
        self.prior = prior
        self.sim_config = sim_config
        self.n_particles = n_particles
        self.epsilon_initial = epsilon_initial
        self.stop_threshold = stop_threshold
        self.max_sim_attempts = max_sim_attempts
        self.max_ancestors = max_ancestors
        self.max_iterations = max_iterations
        self.kernel_factor = kernel_factor
        self.nu = nu
        self.xi = xi
        self.omega = omega
        self.n_jobs = n_jobs
        self.stop_rule = stop_rule
        self.seed_graph = seed_graph
        self.random_state = random_state

    def _config(self) -> AbcConfig:
        return AbcConfig(n_particles=self.n_particles, epsilon_initial=self.epsilon_initial,
                         stop_threshold=self.stop_threshold, max_sim_attempts=self.max_sim_attempts,
                         max_ancestors=self.max_ancestors, max_iterations=self.max_iterations,
                         kernel_factor=self.kernel_factor, nu=self.nu, xi=self.xi, omega=self.omega,
                         n_jobs=self.n_jobs, stop_rule=self.stop_rule)

    def fit(self, observed, y=None, callback=None):
        if self.prior is None or self.sim_config is None:
            raise ValueError("ABCSMC needs both a prior and a sim_config")
        observed = list(observed)
        result = abc_smc(self.prior, self._config(), observed, rng=self.random_state,
                         sim_config=self.sim_config, seed_graph=self.seed_graph, callback=callback)
        self.population_ = result.population
        self.diagnostics_ = result.diagnostics
        self.converged_ = result.converged
        self.posterior_mean_, self.posterior_sd_ = posterior_summary(result.population)
        self.n_iterations_ = len(result.diagnostics)
        return self

    def resimulate(self, days=None, random_state=None):
        """One fresh simulation per accepted particle; returns a list of count dicts."""
        if not hasattr(self, "population_"):
            raise AttributeError("ABCSMC is not fitted")
        days = self.sim_config.snapshot_days if days is None else days
        rng = as_generator(self.random_state if random_state is None else random_state)
        curves = []
        for p in self.population_:
            th = Theta.from_array(p.theta)
            G0 = None
            if self.seed_graph is not None:
                G0 = self.seed_graph.copy()
                seed_infectives(G0, th.n_initial_infected, rng, self.sim_config.start_day)
            traj = run(th, self.sim_config, G0=G0, rng=rng, record_events=False)
            curves.append(traj.counts_at(days))
        return curves

    def posterior_table(self):
        return [(name, float(m), float(s))
                for name, m, s in zip(PARAM_NAMES, self.posterior_mean_, self.posterior_sd_)]
