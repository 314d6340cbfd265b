"""Simulation and ABC inference for SIR epidemics on evolving contact graphs."""

from .abc import (
    ABCSMC,
    AbcConfig,
    AbcError,
    AbcResult,
    GammaPrior,
    KernelSpec,
    Particle,
    PriorSpec,
    TruncatedDiscreteNormal,
    TruncatedNormal,
    UniformPrior,
    abc_smc,
    compute_weight,
    epidemic_prior,
    posterior_summary,
    resample,
    sample_prior,
)
from .io import export_snapshots, load_contact_db, load_snapshot_dir
from .matching import (
    GraphMatcher,
    MatchResult,
    brute_force_match,
    label_cost,
    qap_objective,
    solve_match,
    temporal_objective,
)
from .population import (
    EvolvingGraph,
    Snapshot,
    VertexLabel,
    add_contact_edge,
    graph_stats,
    init_population,
    observable_network,
)
from .simulator import (
    EpidemicSimulator,
    Event,
    EventKind,
    SimConfig,
    Theta,
    Trajectory,
    choose_partner,
    detection_rate,
    infection_occurs,
    rate_bound,
    run,
    step,
)

__version__ = "0.1.0"
