import csv
import filecmp

import numpy as np
import pytest

from graphsir.cli import build_run_config, main
from graphsir.io import (
    ConfigError,
    ContactDbError,
    export_snapshots,
    load_contact_db,
    load_snapshot_dir,
    parse_config_text,
    read_config,
    write_config,
)
from graphsir.population import DetectionType, Gender, Orientation, State
from graphsir.simulator import SimConfig, Theta, run

TOY_CONFIG = """\
# toy epidemic
M = 5000
T = 1000
snapshot_step = 100
n_initial_infected = 100
alpha = 0.9
gamma = 0.001
beta = 0.001
lambda = 0.1
sigma = 0.005
"""


@pytest.fixture
def small_db(tmp_path):
    (tmp_path / "vertices.csv").write_text(
        "id,detect_day,detect_type,gender,orientation\n"
        "1,10,RAND,M,HETERO\n"
        "2,20,CT,F,HETERO\n"
        "3,30,RAND,M,BI\n")
    (tmp_path / "edges.csv").write_text("id_a,id_b\n1,2\n")
    return tmp_path


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_load_contact_db(small_db):
    db = load_contact_db(small_db / "vertices.csv", small_db / "edges.csv")
    assert db.detection_days() == [10.0, 20.0, 30.0]
    assert db.edges == {(1, 2)}
    assert db.vertices[2].detection_type == DetectionType.CONTACT_TRACED
    assert db.vertices[3].orientation == Orientation.BISEXUAL
    snaps = db.snapshots()
    assert [s.n_vertices for s in snaps] == [1, 2, 3]
    assert [len(s.edges) for s in snaps] == [0, 1, 1]
    lab = dict(snaps[-1].detected)[2]
    assert lab.gender == Gender.FEMALE and lab.state == State.R and lab.detection_time == 20.0


def test_round_trip(small_db, tmp_path):
    db = load_contact_db(small_db / "vertices.csv", small_db / "edges.csv")
    snaps = db.snapshots()
    out = tmp_path / "out"
    export_snapshots(snaps, out)
    back = load_snapshot_dir(out)
    assert len(back) == 3
    assert all(a.same_content(b) for a, b in zip(snaps, back))
    again = tmp_path / "again"
    export_snapshots(back, again)
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted(p.name for p in again.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(out, again, names, shallow=False)
    assert mismatch == [] and errors == []
    assert _read(out / "summary.csv")[1:] == [
        ["10", "1", "1", "0", "0", "1", "1", ""],
        ["20", "2", "1", "1", "1", "1", "2", ""],
        ["30", "3", "2", "1", "1", "2", "2", ""],
    ]


def test_empty_files_give_no_snapshots(tmp_path):
    (tmp_path / "v.csv").write_text("")
    (tmp_path / "e.csv").write_text("")
    assert load_contact_db(tmp_path / "v.csv", tmp_path / "e.csv").snapshots() == []


def test_empty_export_writes_header_only(tmp_path):
    export_snapshots([], tmp_path)
    assert _read(tmp_path / "summary.csv") == [
        ["day", "n_detected", "n_random", "n_traced", "n_edges", "n_components",
         "largest_component", "n_infected_total"]]


def test_extra_columns_are_ignored(tmp_path):
    (tmp_path / "v.csv").write_text("id,detect_day,detect_type,gender,orientation,note\n5,1,RAND,F,HETERO,x\n")
    (tmp_path / "e.csv").write_text("id_a,id_b\n")
    db = load_contact_db(tmp_path / "v.csv", tmp_path / "e.csv")
    assert list(db.vertices) == [5]


@pytest.mark.parametrize("vertices, edges, fragment", [
    ("id,detect_day,detect_type,gender\n1,1,RAND,M\n", "id_a,id_b\n", "lacks columns"),
    ("id,detect_day,detect_type,gender,orientation\n1,,RAND,M,HETERO\n", "id_a,id_b\n", "day missing"),
    ("id,detect_day,detect_type,gender,orientation\n1,1,XX,M,HETERO\n", "id_a,id_b\n", "unknown code"),
    ("id,detect_day,detect_type,gender,orientation\n1,1,RAND,F,BI\n", "id_a,id_b\n", "only modelled"),
    ("id,detect_day,detect_type,gender,orientation\n1,1,RAND,M,HETERO\n1,2,RAND,M,HETERO\n",
     "id_a,id_b\n", "duplicate"),
    ("id,detect_day,detect_type,gender,orientation\n1,1,RAND,M,HETERO\n", "id_a,id_b\n1,9\n", "unknown id"),
    ("id,detect_day,detect_type,gender,orientation\n1,1,RAND,M,HETERO\n", "id_a,id_b\n1,1\n", "self loop"),
])
def test_malformed_databases(tmp_path, vertices, edges, fragment):
    (tmp_path / "v.csv").write_text(vertices)
    (tmp_path / "e.csv").write_text(edges)
    with pytest.raises(ContactDbError, match=fragment):
        load_contact_db(tmp_path / "v.csv", tmp_path / "e.csv")


def test_error_reports_line_number(tmp_path):
    (tmp_path / "v.csv").write_text("id,detect_day,detect_type,gender,orientation\n1,1,RAND,M,HETERO\n2,x,RAND,M,HETERO\n")
    (tmp_path / "e.csv").write_text("id_a,id_b\n")
    with pytest.raises(ContactDbError, match=r"v\.csv:3"):
        load_contact_db(tmp_path / "v.csv", tmp_path / "e.csv")


def test_seed_graph_keeps_detected_part(small_db):
    db = load_contact_db(small_db / "vertices.csv", small_db / "edges.csv")
    G, index = db.seed_graph(25.0, 50, seed=0)
    assert len(G) == 50 and set(index) == {1, 2}
    assert G.removed == frozenset(index.values())
    assert G.n_edges == 1
    G.check_invariants()
    with pytest.raises(ValueError):
        db.seed_graph(30.0, 2)


def test_trajectory_export_has_infected_totals(tmp_path):
    tr = run(Theta(10, sigma=0.05), SimConfig(M=200, T=200, seed=1))
    export_snapshots(tr, tmp_path)
    rows = _read(tmp_path / "summary.csv")[1:]
    assert [r[0] for r in rows] == ["0", "40", "80", "120", "160", "200"]
    assert rows[0][-1] == "10"
    totals = [int(r[-1]) for r in rows]
    assert totals == sorted(totals)


# -- config ----------------------------------------------------------------------


def test_config_round_trip(tmp_path):
    values = {"M": 100, "T": 50.0, "prior_mean": [1.0, 0.5], "stop_rule": "all_below",
              "seed_from_observed": True}
    write_config(values, tmp_path / "c.cfg")
    assert read_config(tmp_path / "c.cfg") == values


@pytest.mark.parametrize("text", ["M 100", "bogus = 1", "M = ten", "seed_from_observed = maybe"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_build_run_config():
    rc = build_run_config("simulate", parse_config_text(TOY_CONFIG), seed=3)
    assert rc.sim.snapshot_days == [float(d) for d in range(0, 1001, 100)]
    assert rc.theta == Theta()
    assert rc.sim.seed == 3
    rc = build_run_config("infer", {"M": 100, "T": 50})
    assert rc.prior_mean == Theta().to_array().tolist()
    assert np.allclose(rc.prior_sd, np.array(rc.prior_mean) / 10)
    with pytest.raises(ConfigError):
        build_run_config("simulate", {"tau": 3.0})
    with pytest.raises(ConfigError):
        build_run_config("infer", {"prior_mean": [1.0]})
    assert build_run_config("infer", {"M": 100}).max_initial == 100.0
    with pytest.raises(ConfigError):
        build_run_config("infer", {"M": 100, "max_initial": 500})


# -- command line ------------------------------------------------------------------


def test_cli_toy_simulation(tmp_path, capsys):
    cfg = tmp_path / "toy.cfg"
    cfg.write_text(TOY_CONFIG)
    assert main(["simulate", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "sim")]) == 0
    rows = _read(tmp_path / "sim" / "summary.csv")
    assert [r[0] for r in rows[1:]] == [str(d) for d in range(0, 1001, 100)]
    curves = _read(tmp_path / "sim" / "curves.csv")
    assert curves[0] == ["day", "susceptible", "infective", "removed", "random", "traced"]
    assert len(curves) == 12
    assert "simulated to day 1000" in capsys.readouterr().out


def test_cli_match_self_is_zero(small_db, tmp_path, capsys):
    db = load_contact_db(small_db / "vertices.csv", small_db / "edges.csv")
    export_snapshots(db.snapshots(), tmp_path / "snaps")
    d = str(tmp_path / "snaps")
    assert main(["match", "--a", d, "--b", d, "--nu", "0"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1] == "Phi 0.000000"
    assert out[0] == "day 10 phi 0.000000"


def test_cli_infer_writes_posterior(tmp_path):
    sim_cfg = tmp_path / "sim.cfg"
    sim_cfg.write_text("M = 150\nT = 150\nn_initial_infected = 10\ngamma = 0.005\nbeta = 0.005\nsigma = 0.02\n")
    assert main(["simulate", "--config", str(sim_cfg), "--seed", "9", "--out", str(tmp_path / "obs")]) == 0
    inf_cfg = tmp_path / "inf.cfg"
    inf_cfg.write_text("M = 150\nT = 150\nn_particles = 4\nmax_iterations = 2\nstop_threshold = 0.7\n"
                       "prior_mean = 10, 0.9, 0.005, 0.005, 0.1, 0.02\n")
    out = tmp_path / "fit"
    code = main(["infer", "--config", str(inf_cfg), "--observed", str(tmp_path / "obs"),
                 "--out", str(out), "--seed", "2"])
    assert code == 0
    post = _read(out / "posterior.csv")
    assert post[0] == ["parameter", "mean", "sd"]
    assert [r[0] for r in post[1:]] == ["n_initial_infected", "alpha", "gamma", "beta", "lambda", "sigma"]
    assert all(np.isfinite(float(r[1])) and float(r[2]) >= 0 for r in post[1:])
    diag = _read(out / "diagnostics.csv")
    assert diag[0][:3] == ["iteration", "epsilon", "n_accepted"] and len(diag) >= 2
    assert len(_read(out / "particles.csv")) == 5
    assert (out / "curves.csv").exists()


def test_cli_exit_codes(tmp_path, small_db):
    assert main(["--bogus"]) == 1
    assert main(["simulate"]) == 1
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("tau = 7\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["match", "--a", str(tmp_path / "nope"), "--b", str(tmp_path / "nope")]) == 1
    assert main(["infer", "--config", str(bad), "--observed", str(tmp_path), "--out", str(tmp_path)]) == 1
    # inference that cannot accept anything is a runtime failure
    cfg = tmp_path / "inf.cfg"
    cfg.write_text("M = 60\nT = 40\nn_particles = 2\nmax_sim_attempts = 1\nmax_ancestors = 1\n"
                   "epsilon_initial = 0.02\nstop_threshold = 0.01\nprior_mean = 3, 0.9, 0.001, 0.001, 0.1, 0.005\n")
    code = main(["infer", "--config", str(cfg), "--observed", str(small_db), "--out", str(tmp_path / "f")])
    assert code == 2
    assert (tmp_path / "f" / "diagnostics.csv").exists()
