"""Grid description, contingency enumeration and DC PTDFs."""

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ParseError, SingularTopology, ValidationError

log = logging.getLogger(__name__)

CASE_KEYS = ("buses", "lines", "generators", "wind_units", "loads", "slack_bus")


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: int
    to_bus: int
    reactance: float
    flow_limit: float


@dataclass(frozen=True)
class Generator:
    id: str
    bus: int
    p_min: float
    p_max: float
    r_max: float
    h: float
    h_plus: float
    h_minus: float
    h_con: float


@dataclass(frozen=True)
class WindUnit:
    id: str
    bus: int
    forecast: float
    support_lower: float
    support_upper: float


@dataclass(frozen=True)
class Load:
    bus: int
    demand: float


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple
    lines: tuple
    generators: tuple
    wind_units: tuple
    loads: tuple
    slack_bus: int
    base_mva: float = 100.0
    excluded_lines: frozenset = field(default_factory=frozenset)
    name: str = ""

    @property
    def bus_index(self):
        return {b: i for i, b in enumerate(self.buses)}

    @property
    def total_demand(self):
        return sum(ld.demand for ld in self.loads)

    @property
    def total_forecast(self):
        return sum(w.forecast for w in self.wind_units)

    def line(self, line_id):
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise KeyError(line_id)

    def generator_position(self, gen_id):
        for i, g in enumerate(self.generators):
            if g.id == gen_id:
                return i
        raise KeyError(gen_id)

    def support_box(self):
        lo = np.array([w.support_lower for w in self.wind_units], dtype=float)
        hi = np.array([w.support_upper for w in self.wind_units], dtype=float)
        return lo, hi


@dataclass(frozen=True)
class Contingency:
    kind: str  # "intact" | "gen" | "line"
    element: str = ""

    @classmethod
    def intact(cls):
        return cls("intact")

    @classmethod
    def gen_out(cls, gen_id):
        return cls("gen", str(gen_id))

    @classmethod
    def line_out(cls, line_id):
        return cls("line", str(line_id))

    @property
    def label(self):
        if self.kind == "intact":
            return "intact"
        return f"{self.kind}:{self.element}"

    @classmethod
    def parse(cls, label):
        if label == "intact":
            return cls.intact()
        kind, _, element = label.partition(":")
        if kind not in ("gen", "line") or not element:
            raise ValueError(f"bad contingency label {label!r}")
        return cls(kind, element)


@dataclass(frozen=True)
class PtdfMatrix:
    contingency: Contingency
    line_ids: tuple
    buses: tuple
    entries: np.ndarray  # rows: surviving lines, cols: buses

    def flows(self, injections):
        return self.entries @ np.asarray(injections, dtype=float)


# ---------------------------------------------------------------------------
# loading / validation
# ---------------------------------------------------------------------------

def _require(obj, key, where):
    if key not in obj:
        raise ParseError(f"{where}: missing key {key!r}")
    return obj[key]


def case_from_dict(data, name=""):
    if not isinstance(data, dict):
        raise ParseError("case file must hold a JSON object")
    for key in CASE_KEYS[:-1]:
        _require(data, key, "case")
    try:
        buses = tuple(int(b) for b in data["buses"])
        lines = tuple(
            Line(str(ln["id"]), int(ln["from_bus"]), int(ln["to_bus"]),
                 float(ln["reactance"]), float(ln["flow_limit"]))
            for ln in data["lines"]
        )
        gens = tuple(
            Generator(str(g["id"]), int(g["bus"]), float(g["p_min"]), float(g["p_max"]),
                      float(g["r_max"]), float(g["h"]), float(g["h_plus"]),
                      float(g["h_minus"]), float(g["h_con"]))
            for g in data["generators"]
        )
        winds = tuple(
            WindUnit(str(w["id"]), int(w["bus"]), float(w["forecast"]),
                     float(w["support_lower"]), float(w["support_upper"]))
            for w in data["wind_units"]
        )
        loads = tuple(Load(int(ld["bus"]), float(ld["demand"])) for ld in data["loads"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed case entry: {exc!r}") from exc

    slack = data.get("slack_bus")
    if slack is None:
        gen_buses = sorted({g.bus for g in gens})
        if not gen_buses:
            raise ValidationError("slack_bus", "no generator to host a default slack")
        slack = gen_buses[0]
    case = NetworkCase(
        buses=buses, lines=lines, generators=gens, wind_units=winds, loads=loads,
        slack_bus=int(slack), base_mva=float(data.get("base_mva", 100.0)),
        excluded_lines=frozenset(str(x) for x in data.get("excluded_lines", ())),
        name=name or str(data.get("name", "")),
    )
    validate_case(case)
    return case


def case_to_dict(case):
    return {
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": list(case.buses),
        "lines": [vars(ln).copy() for ln in case.lines],
        "generators": [vars(g).copy() for g in case.generators],
        "wind_units": [vars(w).copy() for w in case.wind_units],
        "loads": [vars(ld).copy() for ld in case.loads],
        "slack_bus": case.slack_bus,
        "excluded_lines": sorted(case.excluded_lines),
    }


def load_case(path):
    """Read a case JSON file and validate it.

    Raises :class:`ParseError` for unreadable/malformed JSON and
    :class:`ValidationError` (naming the offending field) for broken
    invariants.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ParseError(f"{path}: no such file") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return case_from_dict(data, name=path.stem)


def bundled_case_path(name="rts24"):
    return Path(str(resources.files("drdispatch") / "data" / f"{name}.json"))


def load_bundled(name="rts24"):
    return load_case(bundled_case_path(name))


def validate_case(case):
    bus_set = set(case.buses)
    if len(bus_set) != len(case.buses) or not case.buses:
        raise ValidationError("buses", "bus ids must be unique and non-empty")
    if case.slack_bus not in bus_set:
        raise ValidationError("slack_bus", f"unknown bus {case.slack_bus}")
    seen = set()
    for i, ln in enumerate(case.lines):
        where = f"lines[{i}]({ln.id})"
        if ln.id in seen:
            raise ValidationError(where + ".id", "duplicate line id")
        seen.add(ln.id)
        if ln.from_bus not in bus_set or ln.to_bus not in bus_set:
            raise ValidationError(where, "references an unknown bus")
        if ln.from_bus == ln.to_bus:
            raise ValidationError(where, "self loop")
        if not ln.reactance > 0:
            raise ValidationError(where + ".reactance", f"must be > 0, got {ln.reactance}")
        if not ln.flow_limit > 0:
            raise ValidationError(where + ".flow_limit", f"must be > 0, got {ln.flow_limit}")
    for lid in case.excluded_lines:
        if lid not in seen:
            raise ValidationError("excluded_lines", f"unknown line {lid}")
    seen = set()
    for i, g in enumerate(case.generators):
        where = f"generators[{i}]({g.id})"
        if g.id in seen:
            raise ValidationError(where + ".id", "duplicate generator id")
        seen.add(g.id)
        if g.bus not in bus_set:
            raise ValidationError(where + ".bus", "unknown bus")
        if g.p_min > g.p_max:
            raise ValidationError(where + ".p_min", "p_min exceeds p_max")
        if g.r_max < 0:
            raise ValidationError(where + ".r_max", "must be >= 0")
    for i, w in enumerate(case.wind_units):
        where = f"wind_units[{i}]({w.id})"
        if w.bus not in bus_set:
            raise ValidationError(where + ".bus", "unknown bus")
        if w.support_lower > w.support_upper:
            raise ValidationError(where + ".support_lower", "exceeds support_upper")
    for i, ld in enumerate(case.loads):
        if ld.bus not in bus_set:
            raise ValidationError(f"loads[{i}].bus", "unknown bus")
    if not case.total_demand > 0:
        raise ValidationError("loads", "total demand must be positive")
    if not _connected(case.buses, case.lines):
        raise ValidationError("lines", "network graph is not connected")


def _connected(buses, lines):
    adj = {b: [] for b in buses}
    for ln in lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    start = buses[0]
    seen = {start}
    queue = deque([start])
    while queue:
        b = queue.popleft()
        for nb in adj[b]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(buses)


# ---------------------------------------------------------------------------
# contingencies and PTDFs
# ---------------------------------------------------------------------------

def surviving_lines(case, contingency):
    if contingency.kind == "line":
        return tuple(ln for ln in case.lines if ln.id != contingency.element)
    return case.lines


def enumerate_contingencies(case, excluded_lines=None):
    """Intact first, then every generator outage, then every admissible line
    outage (not excluded and not a bridge), in case-file order."""
    excluded = case.excluded_lines if excluded_lines is None else frozenset(excluded_lines)
    out = [Contingency.intact()]
    out += [Contingency.gen_out(g.id) for g in case.generators]
    for ln in case.lines:
        if ln.id in excluded:
            continue
        rest = [other for other in case.lines if other.id != ln.id]
        if not _connected(case.buses, rest):
            log.info("line %s is a bridge; skipping its outage", ln.id)
            continue
        out.append(Contingency.line_out(ln.id))
    return out


def compute_ptdf(case, contingency):
    lines = surviving_lines(case, contingency)
    if contingency.kind == "line" and len(lines) == len(case.lines):
        raise ValueError(f"unknown line {contingency.element}")
    if contingency.kind == "gen":
        case.generator_position(contingency.element)
    if not _connected(case.buses, lines):
        raise SingularTopology(f"{contingency.label} disconnects the network")

    idx = case.bus_index
    n_bus = len(case.buses)
    inc = np.zeros((len(lines), n_bus))
    for r, ln in enumerate(lines):
        inc[r, idx[ln.from_bus]] = 1.0
        inc[r, idx[ln.to_bus]] = -1.0
    susc = np.array([1.0 / ln.reactance for ln in lines])
    bmat = inc.T @ (susc[:, None] * inc)
    keep = np.array([i for i in range(n_bus) if i != idx[case.slack_bus]], dtype=int)
    entries = np.zeros((len(lines), n_bus))
    if keep.size:
        try:
            angles = np.linalg.solve(bmat[np.ix_(keep, keep)], np.eye(keep.size))
        except np.linalg.LinAlgError as exc:
            raise SingularTopology(str(exc)) from exc
        entries[:, keep] = susc[:, None] * (inc[:, keep] @ angles)
    return PtdfMatrix(contingency, tuple(ln.id for ln in lines), case.buses, entries)


def compute_all_ptdfs(case, contingencies):
    """PTDFs for a contingency list; generator outages share the intact matrix."""
    intact = None
    out = []
    for c in contingencies:
        if c.kind == "line":
            out.append(compute_ptdf(case, c))
            continue
        if c.kind == "gen":
            case.generator_position(c.element)
        if intact is None:
            intact = compute_ptdf(case, Contingency.intact())
        out.append(PtdfMatrix(c, intact.line_ids, intact.buses, intact.entries))
    return out
