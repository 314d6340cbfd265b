"""Command line entry point: ``graphsir simulate|infer|match``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .abc import ABCSMC, AbcConfig, AbcError, epidemic_prior
from .io import (
    CURVE_FIELDS,
    ConfigError,
    ContactDbError,
    _write_csv,
    curves_rows,
    export_snapshots,
    format_day,
    load_contact_db,
    load_snapshot_dir,
    read_config,
)
from .matching import temporal_objective
from .simulator import PARAM_NAMES, SimConfig, Theta, default_snapshot_days, run

logger = logging.getLogger("graphsir")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

_SIM_KEYS = ("M", "T", "tau", "eta1", "eta2", "degree_exponent", "female_frac", "bisexual_frac",
             "start_day")
_ABC_KEYS = ("n_particles", "epsilon_initial", "stop_threshold", "max_sim_attempts", "max_ancestors",
             "max_iterations", "kernel_factor", "nu", "xi", "omega", "n_jobs", "stop_rule")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    mode: str
    sim: SimConfig
    theta: Optional[Theta] = None
    prior_mean: Optional[list] = None
    prior_sd: Optional[list] = None
    abc: Optional[AbcConfig] = None
    seed: Optional[int] = None
    seed_from_observed: bool = False
    max_initial: float = 1500.0


def build_run_config(mode: str, values: dict, seed: Optional[int] = None) -> RunConfig:
    values = dict(values)
    if seed is not None:
        values["seed"] = seed
    sim_kw = {k: values[k] for k in _SIM_KEYS if k in values}
    if "M" in sim_kw:
        sim_kw["M"] = int(sim_kw["M"])
    start = float(values.get("start_day", 0.0))
    T = float(values.get("T", SimConfig.T))
    if "snapshot_days" in values:
        sim_kw["snapshot_days"] = values["snapshot_days"]
    elif "snapshot_step" in values:
        step = values["snapshot_step"]
        if step <= 0:
            raise ConfigError("snapshot_step must be positive")
        sim_kw["snapshot_days"] = [float(d) for d in np.arange(start, T + 1e-9, step)]
    else:
        sim_kw["snapshot_days"] = default_snapshot_days(start, T, int(values.get("n_intervals", 5)))
    try:
        sim = SimConfig(**sim_kw, seed=values.get("seed"))
        theta = None
        if mode == "simulate" or all(k in values for k in ("alpha", "gamma", "beta", "lambda", "sigma")):
            theta = Theta(
                n_initial_infected=int(values.get("n_initial_infected", Theta.n_initial_infected)),
                alpha=values.get("alpha", Theta.alpha), gamma=values.get("gamma", Theta.gamma),
                beta=values.get("beta", Theta.beta), lambda_=values.get("lambda", Theta.lambda_),
                sigma=values.get("sigma", Theta.sigma))
        abc = None
        prior_mean = prior_sd = None
        if mode == "infer":
            abc = AbcConfig(**{k: values[k] for k in _ABC_KEYS if k in values})
            if theta is not None:
                default_mean = theta.to_array()
            else:
                default_mean = Theta().to_array()
            prior_mean = list(values.get("prior_mean", default_mean))
            prior_sd = list(values.get("prior_sd", np.asarray(prior_mean) / 10))
            # the initial infectives cannot outnumber the population
            values.setdefault("max_initial", min(1500.0, float(sim.M)))
            if values["max_initial"] > sim.M:
                raise ValueError("max_initial exceeds the population size M")
            epidemic_prior(prior_mean, prior_sd, values["max_initial"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(mode=mode, sim=sim, theta=theta, prior_mean=prior_mean, prior_sd=prior_sd,
                     abc=abc, seed=values.get("seed"),
                     seed_from_observed=bool(values.get("seed_from_observed", False)),
                     max_initial=float(values.get("max_initial", 1500.0)))


def _cmd_simulate(args) -> int:
    rc = build_run_config("simulate", read_config(args.config), args.seed)
    traj = run(rc.theta, rc.sim, rng=np.random.default_rng(rc.seed), record_events=False)
    out = Path(args.out)
    export_snapshots(traj, out)
    counts = traj.counts_at(rc.sim.snapshot_days)
    _write_csv(out / "curves.csv", CURVE_FIELDS[1:], [r[1:] for r in curves_rows([counts])])
    s, i, r = traj.final_counts
    print(f"simulated to day {format_day(traj.end_day)}: S={s} I={i} R={r} edges={traj.graph.n_edges}")
    return EXIT_OK


def _cmd_infer(args) -> int:
    rc = build_run_config("infer", read_config(args.config), args.seed)
    obs_dir = Path(args.observed)
    vp, ep = obs_dir / "vertices.csv", obs_dir / "edges.csv"
    if not vp.exists() or not ep.exists():
        raise ConfigError(f"{obs_dir} must contain vertices.csv and edges.csv")
    db = load_contact_db(vp, ep)
    observed = db.snapshots(rc.sim.snapshot_days)
    seed_graph = None
    if rc.seed_from_observed:
        seed_graph, _ = db.seed_graph(rc.sim.start_day, rc.sim.M, rc.sim.degree_exponent,
                                      rc.sim.female_frac, rc.sim.bisexual_frac, seed=rc.seed)
    prior = epidemic_prior(rc.prior_mean, rc.prior_sd, rc.max_initial)
    a = rc.abc
    est = ABCSMC(prior=prior, sim_config=rc.sim, n_particles=a.n_particles,
                 epsilon_initial=a.epsilon_initial, stop_threshold=a.stop_threshold,
                 max_sim_attempts=a.max_sim_attempts, max_ancestors=a.max_ancestors,
                 max_iterations=a.max_iterations, kernel_factor=a.kernel_factor, nu=a.nu, xi=a.xi,
                 omega=a.omega, n_jobs=a.n_jobs, stop_rule=a.stop_rule, seed_graph=seed_graph,
                 random_state=rc.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        est.fit(observed)
    except AbcError as exc:
        write_diagnostics(exc.diagnostics, out / "diagnostics.csv")
        raise
    write_diagnostics(est.diagnostics_, out / "diagnostics.csv")
    _write_csv(out / "posterior.csv", ["parameter", "mean", "sd"],
               [[n, repr(m), repr(s)] for n, m, s in est.posterior_table()])
    _write_csv(out / "particles.csv", list(PARAM_NAMES) + ["weight", "distance"],
               [[repr(float(x)) for x in p.theta] + [repr(p.weight), repr(p.distance)]
                for p in est.population_])
    _write_csv(out / "curves.csv", CURVE_FIELDS, curves_rows(est.resimulate()))
    for n, m, s in est.posterior_table():
        print(f"{n:>20s} {m:.6g} ({s:.3g})")
    return EXIT_OK


def write_diagnostics(diagnostics, path) -> None:
    header = ["iteration", "epsilon", "n_accepted", "n_attempts", "acceptance_rate", "mean_distance"]
    header += [f"{n}_mean" for n in PARAM_NAMES] + [f"{n}_sd" for n in PARAM_NAMES]
    rows = []
    for d in diagnostics:
        rows.append([d.iteration, repr(d.epsilon), d.n_accepted, d.n_attempts, repr(d.acceptance_rate),
                     repr(d.mean_distance)] + [repr(float(x)) for x in d.mean] + [repr(float(x)) for x in d.sd])
    _write_csv(path, header, rows)


def _cmd_match(args) -> int:
    a = load_snapshot_dir(args.a)
    b = load_snapshot_dir(args.b)
    if [s.day for s in a] != [s.day for s in b]:
        raise ConfigError("snapshot directories cover different days")
    if not a:
        raise ConfigError("no snapshots found")
    if not 0 <= args.nu <= 1 or not 0 < args.omega <= 1 or args.xi < 0:
        raise ConfigError("need nu in [0, 1], omega in (0, 1] and xi >= 0")
    value, phis = temporal_objective(a, b, omega=args.omega, nu=args.nu, xi=args.xi, return_terms=True)
    for snap, phi in zip(a, phis):
        print(f"day {format_day(snap.day)} phi {phi:.6f}")
    print(f"Phi {value:.6f}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graphsir", description="SIR epidemics on evolving contact graphs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="simulate one epidemic and export its detected network")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("infer", help="fit parameters to an observed contact database by ABC-SMC")
    p.add_argument("--config", required=True)
    p.add_argument("--observed", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("match", help="temporal graph-matching distance between two snapshot directories")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--nu", type=float, default=0.2)
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--xi", type=float, default=0.0)
    p.set_defaults(func=_cmd_match)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ContactDbError, FileNotFoundError) as exc:
        print(f"graphsir: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AbcError as exc:
        print(f"graphsir: inference failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"graphsir: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
