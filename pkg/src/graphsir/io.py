"""CSV contact databases, snapshot export and the flat key=value config format."""

from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from ._validation import as_generator
from .population import (
    DetectionType,
    EvolvingGraph,
    Gender,
    Orientation,
    Snapshot,
    State,
    VertexLabel,
    _power_law_degrees,
    graph_stats,
)
from .simulator import Trajectory

VERTEX_FIELDS = ["id", "detect_day", "detect_type", "gender", "orientation"]
EDGE_FIELDS = ["id_a", "id_b"]
SUMMARY_FIELDS = ["day", "n_detected", "n_random", "n_traced", "n_edges", "n_components",
                  "largest_component", "n_infected_total"]

_DETECT_CODES = {"RAND": DetectionType.RANDOM, "CT": DetectionType.CONTACT_TRACED}
_GENDER_CODES = {"M": Gender.MALE, "F": Gender.FEMALE}
_ORIENT_CODES = {"HETERO": Orientation.HETERO, "BI": Orientation.BISEXUAL}


class ContactDbError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def _code(table, value):
    return next(k for k, v in table.items() if v == value)


def format_day(day: float) -> str:
    day = float(day)
    return str(int(day)) if day.is_integer() else repr(day)


@dataclass
class DetectedVertex:
    gender: Gender
    orientation: Orientation
    detection_time: float
    detection_type: DetectionType


@dataclass
class ContactDatabase:
    """Detected individuals and their declared contacts."""

    vertices: Dict[int, DetectedVertex] = field(default_factory=dict)
    edges: Set[Tuple[int, int]] = field(default_factory=set)

    def detection_days(self) -> List[float]:
        return sorted({v.detection_time for v in self.vertices.values()})

    def _degree(self) -> Dict[int, int]:
        deg = {i: 0 for i in self.vertices}
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def _label(self, i: int, deg: Dict[int, int]) -> VertexLabel:
        v = self.vertices[i]
        return VertexLabel(gender=v.gender, orientation=v.orientation, state=State.R,
                           hidden_degree=max(1, deg[i]), detection_time=v.detection_time,
                           detection_type=v.detection_type, infection_time=v.detection_time)

    def snapshot(self, day: float) -> Snapshot:
        deg = self._degree()
        ids = sorted(i for i, v in self.vertices.items() if v.detection_time <= day)
        keep = set(ids)
        edges = {e for e in self.edges if e[0] in keep and e[1] in keep}
        return Snapshot(day=float(day), detected=[(i, self._label(i, deg)) for i in ids], edges=edges)

    def snapshots(self, days: Optional[Sequence[float]] = None) -> List[Snapshot]:
        """Observable network at each day; defaults to every distinct detection day."""
        days = self.detection_days() if days is None else days
        return [self.snapshot(d) for d in days]

    def seed_graph(self, day: float, M: int, degree_exponent: float = 2.0, female_frac: float = 0.5,
                   bisexual_frac: float = 0.05, seed=None) -> Tuple[EvolvingGraph, Dict[int, int]]:
        """Population of size ``M`` whose removed part is the network detected by ``day``.

        Detected individuals keep their covariates and edges; the remaining
        vertices are drawn as in ``init_population``. Returns the graph and the
        mapping from database ids to vertex indices.
        """
        snap = self.snapshot(day)
        n_det = snap.n_vertices
        if M < n_det:
            raise ValueError(f"population size {M} is smaller than the {n_det} detected individuals")
        rng = as_generator(seed)
        n_new = M - n_det
        female = rng.random(n_new) < female_frac
        p_bi = bisexual_frac / (1 - female_frac) if bisexual_frac > 0 else 0.0
        bisexual = (~female) & (rng.random(n_new) < p_bi)
        hidden_new = _power_law_degrees(rng, n_new, degree_exponent, max(1, M - 1)) if n_new else []
        gender = [int(lab.gender) for _, lab in snap.detected] + female.astype(int).tolist()
        orient = [int(lab.orientation) for _, lab in snap.detected] + bisexual.astype(int).tolist()
        hidden = [lab.hidden_degree for _, lab in snap.detected] + list(hidden_new)
        G = EvolvingGraph(gender, orient, hidden)
        index = {vid: k for k, (vid, _) in enumerate(snap.detected)}
        for vid, lab in snap.detected:
            G.mark_removed(index[vid], lab.detection_time, lab.detection_type)
        for a, b in sorted(snap.edges):
            first = min(self.vertices[a].detection_time, self.vertices[b].detection_time)
            G.add_edge_raw(index[a], index[b], first)
        return G, index


def _read_rows(path, required: Sequence[str]):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return []
    reader = csv.DictReader(text.splitlines())
    missing = [c for c in required if c not in (reader.fieldnames or [])]
    if missing:
        raise ContactDbError(f"{path}: header lacks columns {missing}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if None in row or any(row[c] is None for c in required):
            raise ContactDbError(f"{path}:{lineno}: wrong number of fields")
        rows.append((lineno, row))
    return rows


def load_contact_db(vertices_path, edges_path) -> ContactDatabase:
    """Parse the vertex and edge CSV files; extra columns are ignored."""
    db = ContactDatabase()
    for lineno, row in _read_rows(vertices_path, VERTEX_FIELDS):
        where = f"{vertices_path}:{lineno}"
        try:
            vid = int(row["id"])
        except ValueError:
            raise ContactDbError(f"{where}: bad id {row['id']!r}") from None
        if vid in db.vertices:
            raise ContactDbError(f"{where}: duplicate id {vid}")
        day_text = row["detect_day"].strip()
        if not day_text:
            raise ContactDbError(f"{where}: detection day missing")
        try:
            day = float(day_text)
        except ValueError:
            raise ContactDbError(f"{where}: bad detection day {day_text!r}") from None
        try:
            dtype = _DETECT_CODES[row["detect_type"].strip()]
            gender = _GENDER_CODES[row["gender"].strip()]
            orient = _ORIENT_CODES[row["orientation"].strip()]
        except KeyError as exc:
            raise ContactDbError(f"{where}: unknown code {exc.args[0]!r}") from None
        if gender == Gender.FEMALE and orient == Orientation.BISEXUAL:
            raise ContactDbError(f"{where}: bisexual orientation is only modelled for men")
        db.vertices[vid] = DetectedVertex(gender, orient, day, dtype)

    for lineno, row in _read_rows(edges_path, EDGE_FIELDS):
        where = f"{edges_path}:{lineno}"
        try:
            a, b = int(row["id_a"]), int(row["id_b"])
        except ValueError:
            raise ContactDbError(f"{where}: bad vertex id") from None
        for v in (a, b):
            if v not in db.vertices:
                raise ContactDbError(f"{where}: edge references unknown id {v}")
        if a == b:
            raise ContactDbError(f"{where}: self loop on {a}")
        db.edges.add((a, b) if a < b else (b, a))
    return db


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _vertex_rows(detected):
    return [[vid, format_day(lab.detection_time), _code(_DETECT_CODES, lab.detection_type),
             _code(_GENDER_CODES, lab.gender), _code(_ORIENT_CODES, lab.orientation)]
            for vid, lab in sorted(detected, key=lambda t: t[0])]


def _edge_rows(edges):
    return [list(e) for e in sorted(edges)]


def export_snapshots(data: Union[Trajectory, Sequence[Snapshot]], directory,
                     infected_total: Optional[Sequence[int]] = None) -> List[Path]:
    """Write per-day snapshot files, the cumulative database and ``summary.csv``.

    For a trajectory the infected totals come from its counts; for bare
    snapshots they can be passed in, otherwise the column is left empty.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(data, Trajectory):
        snapshots = data.snapshots
        if snapshots:
            infected_total = data.counts_at([s.day for s in snapshots])["infected_total"].tolist()
    else:
        snapshots = list(data)
    written = []
    summary = []
    for k, snap in enumerate(snapshots):
        tag = format_day(snap.day)
        vp, ep = directory / f"vertices_{tag}.csv", directory / f"edges_{tag}.csv"
        _write_csv(vp, VERTEX_FIELDS, _vertex_rows(snap.detected))
        _write_csv(ep, EDGE_FIELDS, _edge_rows(snap.edges))
        written += [vp, ep]
        st = graph_stats(snap)
        inf = "" if infected_total is None else int(infected_total[k])
        summary.append([tag, st.n_detected, st.n_random, st.n_traced, st.n_edges,
                        st.n_components, st.largest_component, inf])
    last = snapshots[-1] if snapshots else Snapshot(day=0.0)
    _write_csv(directory / "vertices.csv", VERTEX_FIELDS, _vertex_rows(last.detected))
    _write_csv(directory / "edges.csv", EDGE_FIELDS, _edge_rows(last.edges))
    _write_csv(directory / "summary.csv", SUMMARY_FIELDS, summary)
    written += [directory / "vertices.csv", directory / "edges.csv", directory / "summary.csv"]
    return written


_SNAPSHOT_FILE = re.compile(r"^vertices_(.+)\.csv$")


def load_snapshot_dir(directory) -> List[Snapshot]:
    """Read back the per-day ``vertices_D.csv``/``edges_D.csv`` pairs, ordered by day."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    tags = []
    for name in os.listdir(directory):
        m = _SNAPSHOT_FILE.match(name)
        if m:
            tags.append(m.group(1))
    snaps = []
    for tag in sorted(tags, key=float):
        db = load_contact_db(directory / f"vertices_{tag}.csv", directory / f"edges_{tag}.csv")
        snaps.append(db.snapshot(float(tag)))
    return snaps


# -- config ---------------------------------------------------------------------

_FLOAT_KEYS = {"T", "tau", "eta1", "eta2", "degree_exponent", "female_frac", "bisexual_frac",
               "start_day", "alpha", "gamma", "beta", "lambda", "sigma", "epsilon_initial",
               "stop_threshold", "kernel_factor", "nu", "xi", "omega", "snapshot_step",
               "max_initial"}
_INT_KEYS = {"M", "seed", "n_initial_infected", "n_particles", "max_sim_attempts",
             "max_ancestors", "max_iterations", "n_jobs", "n_intervals"}
_LIST_KEYS = {"snapshot_days", "prior_mean", "prior_sd"}
_STR_KEYS = {"stop_rule"}
_BOOL_KEYS = {"seed_from_observed"}
CONFIG_KEYS = _FLOAT_KEYS | _INT_KEYS | _LIST_KEYS | _STR_KEYS | _BOOL_KEYS


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = _convert(key, value, f"{source}:{lineno}")
    return out


def _convert(key, value, where):
    if key not in CONFIG_KEYS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _INT_KEYS:
            return int(value)
        if key in _LIST_KEYS:
            return [float(v) for v in value.replace(",", " ").split()]
        if key in _BOOL_KEYS:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        return value
    except ValueError:
        raise ConfigError(f"{where}: bad value {value!r} for {key}") from None


def read_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))


def write_config(values: dict, path) -> None:
    lines = []
    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = ", ".join(repr(float(v)) for v in value)
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def curves_rows(curves) -> List[list]:
    rows = []
    for k, c in enumerate(curves):
        for idx, day in enumerate(np.asarray(c["day"]).tolist()):
            rows.append([k, format_day(day), int(c["susceptible"][idx]), int(c["infective"][idx]),
                         int(c["removed"][idx]), int(c["random"][idx]), int(c["traced"][idx])])
    return rows


CURVE_FIELDS = ["particle", "day", "susceptible", "infective", "removed", "random", "traced"]
