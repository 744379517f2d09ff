"""Power-system data, forecasts, the forecast-error box and shift factors.

Units are MW and one-hour periods throughout, so a marginal cost in $/MWh
multiplies a power directly to give the cost of a period.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
from scipy.sparse.csgraph import connected_components

TOP_LEVEL_KEYS = {"buses", "generators", "lines", "reg_units", "loads", "horizon", "reference_bus"}
META_KEYS = {"name", "source", "notes"}


class DataError(ValueError):
    """Invalid system, forecast or sample data."""


@dataclass(frozen=True)
class Generator:
    id: str
    bus: Any
    no_load_cost: float
    startup_cost: float
    shutdown_cost: float
    marginal_cost: float
    p_min: float
    p_max: float
    ramp_up: float
    ramp_down: float
    startup_ramp: float
    shutdown_ramp: float
    min_up: int = 1
    min_down: int = 1
    initial_on: bool = False
    initial_output: float = 0.0


@dataclass(frozen=True)
class RegUnit:
    id: str
    bus: Any
    capacity: float
    curtail_cost: float = 0.0


@dataclass(frozen=True)
class LoadSeries:
    id: str
    bus: Any
    demand: tuple[float, ...]
    sheddable: bool = True
    shed_cost: float = 0.0

    @property
    def shed_limit(self) -> np.ndarray:
        """Upper bound on shedding per period (zero when not sheddable)."""
        d = np.asarray(self.demand, dtype=float)
        return d if self.sheddable else np.zeros_like(d)


@dataclass(frozen=True)
class Line:
    id: str
    from_bus: Any
    to_bus: Any
    reactance: float
    capacity: float


@dataclass(frozen=True)
class SystemData:
    buses: tuple
    generators: tuple[Generator, ...]
    lines: tuple[Line, ...]
    reg_units: tuple[RegUnit, ...]
    loads: tuple[LoadSeries, ...]
    horizon: int
    reference_bus: Any
    name: str = ""
    source: str = ""

    def __post_init__(self):
        validate_system(self)

    # sizes
    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_gens(self) -> int:
        return len(self.generators)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def n_reg(self) -> int:
        return len(self.reg_units)

    @property
    def n_loads(self) -> int:
        return len(self.loads)

    @cached_property
    def bus_index(self) -> dict:
        return {b: i for i, b in enumerate(self.buses)}

    @cached_property
    def reg_index(self) -> dict:
        return {r.id: i for i, r in enumerate(self.reg_units)}

    # per-component arrays used by the model builders
    @cached_property
    def gen_bus(self) -> np.ndarray:
        return np.array([self.bus_index[g.bus] for g in self.generators], dtype=int)

    @cached_property
    def load_bus(self) -> np.ndarray:
        return np.array([self.bus_index[l.bus] for l in self.loads], dtype=int)

    @cached_property
    def reg_bus(self) -> np.ndarray:
        return np.array([self.bus_index[r.bus] for r in self.reg_units], dtype=int)

    @cached_property
    def demand(self) -> np.ndarray:
        """Load demand, shape (n_loads, T)."""
        return np.array([l.demand for l in self.loads], dtype=float).reshape(self.n_loads, self.horizon)

    @cached_property
    def shed_limit(self) -> np.ndarray:
        return np.array([l.shed_limit for l in self.loads], dtype=float).reshape(self.n_loads, self.horizon)

    @cached_property
    def gen_cost(self) -> np.ndarray:
        return np.array([g.marginal_cost for g in self.generators], dtype=float)

    @cached_property
    def shed_cost(self) -> np.ndarray:
        return np.array([l.shed_cost for l in self.loads], dtype=float)

    @cached_property
    def curtail_cost(self) -> np.ndarray:
        return np.array([r.curtail_cost for r in self.reg_units], dtype=float)

    @cached_property
    def reg_capacity(self) -> np.ndarray:
        return np.array([r.capacity for r in self.reg_units], dtype=float)

    @cached_property
    def ptdf(self) -> np.ndarray:
        return compute_ptdf(self)


def _fail(msg):
    raise DataError(msg)


def validate_system(s: SystemData):
    if s.horizon < 1:
        _fail(f"horizon must be >= 1, got {s.horizon}")
    if len(set(s.buses)) != len(s.buses) or not s.buses:
        _fail("bus ids must be unique and nonempty")
    buses = set(s.buses)
    if s.reference_bus not in buses:
        _fail(f"reference_bus {s.reference_bus!r} is not a bus")
    for k, g in enumerate(s.generators):
        where = f"generators[{k}] ({g.id})"
        if g.bus not in buses:
            _fail(f"{where}: unknown bus {g.bus!r}")
        if not 0 <= g.p_min <= g.p_max:
            _fail(f"{where}: need 0 <= p_min <= p_max, got p_min={g.p_min}, p_max={g.p_max}")
        for attr in ("ramp_up", "ramp_down", "startup_ramp", "shutdown_ramp"):
            if getattr(g, attr) < 0:
                _fail(f"{where}: {attr} must be >= 0")
        if g.min_up < 1 or g.min_down < 1:
            _fail(f"{where}: min_up and min_down must be >= 1")
        if g.initial_on and not g.p_min <= g.initial_output <= g.p_max:
            _fail(f"{where}: initial_output {g.initial_output} outside [p_min, p_max] for a unit initially on")
        if not g.initial_on and g.initial_output != 0:
            _fail(f"{where}: initial_output must be 0 for a unit initially off")
        for attr in ("no_load_cost", "startup_cost", "shutdown_cost", "marginal_cost"):
            if getattr(g, attr) < 0:
                _fail(f"{where}: {attr} must be >= 0")
    reg_buses = set()
    for k, r in enumerate(s.reg_units):
        if r.bus not in buses:
            _fail(f"reg_units[{k}] ({r.id}): unknown bus {r.bus!r}")
        if r.capacity < 0:
            _fail(f"reg_units[{k}] ({r.id}): capacity must be >= 0")
        if r.bus in reg_buses:
            _fail(f"reg_units[{k}] ({r.id}): more than one REG unit at bus {r.bus!r}")
        reg_buses.add(r.bus)
    if len({r.id for r in s.reg_units}) != len(s.reg_units):
        _fail("reg unit ids must be unique")
    for k, l in enumerate(s.loads):
        if l.bus not in buses:
            _fail(f"loads[{k}] ({l.id}): unknown bus {l.bus!r}")
        if len(l.demand) != s.horizon:
            _fail(f"loads[{k}] ({l.id}): demand has {len(l.demand)} entries, horizon is {s.horizon}")
        if any(d < 0 for d in l.demand):
            _fail(f"loads[{k}] ({l.id}): demand must be >= 0")
        if l.shed_cost < 0:
            _fail(f"loads[{k}] ({l.id}): shed_cost must be >= 0")
    for k, ln in enumerate(s.lines):
        if ln.from_bus not in buses or ln.to_bus not in buses:
            _fail(f"lines[{k}] ({ln.id}): unknown endpoint")
        if ln.from_bus == ln.to_bus:
            _fail(f"lines[{k}] ({ln.id}): from_bus equals to_bus")
        if not ln.capacity > 0:
            _fail(f"lines[{k}] ({ln.id}): capacity must be > 0")
        if not ln.reactance > 0:
            _fail(f"lines[{k}] ({ln.id}): reactance must be > 0")
    idx = {b: i for i, b in enumerate(s.buses)}
    n = len(s.buses)
    if n > 1:
        rows = [idx[ln.from_bus] for ln in s.lines]
        cols = [idx[ln.to_bus] for ln in s.lines]
        from scipy.sparse import coo_matrix

        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            _fail(f"network is disconnected ({ncomp} islands)")


def compute_ptdf(system: SystemData) -> np.ndarray:
    """DC shift factors, shape (n_buses, n_lines).

    Entry ``[b, l]`` is the flow on line ``l`` (positive from ``from_bus`` to
    ``to_bus``) when 1 MW is injected at bus ``b`` and withdrawn at the
    reference bus.
    """
    n, L = system.n_buses, system.n_lines
    if L == 0:
        return np.zeros((n, 0))
    idx = system.bus_index
    f = np.array([idx[ln.from_bus] for ln in system.lines])
    t = np.array([idx[ln.to_bus] for ln in system.lines])
    b = 1.0 / np.array([ln.reactance for ln in system.lines])
    Cft = np.zeros((L, n))
    Cft[np.arange(L), f] = 1.0
    Cft[np.arange(L), t] = -1.0
    Bf = b[:, None] * Cft
    Bbus = Cft.T @ Bf
    ref = idx[system.reference_bus]
    keep = np.array([i for i in range(n) if i != ref], dtype=int)
    X = np.zeros((n, n))
    if keep.size:
        Bred = Bbus[np.ix_(keep, keep)]
        if np.linalg.matrix_rank(Bred) < keep.size:
            raise DataError("singular susceptance matrix; check network connectivity")
        X[np.ix_(keep, keep)] = np.linalg.inv(Bred)
    return (Bf @ X).T


def line_flows(system: SystemData, injection: np.ndarray) -> np.ndarray:
    """Line flows for a net injection vector over buses (sums to zero)."""
    return injection @ system.ptdf


@dataclass(frozen=True)
class ForecastSeries:
    """REG forecast per (reg unit, period), MW."""

    unit_ids: tuple[str, ...]
    values: np.ndarray

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    def aligned(self, system: SystemData) -> np.ndarray:
        """Forecast in the system's REG-unit order, shape (n_reg, T)."""
        pos = {u: i for i, u in enumerate(self.unit_ids)}
        missing = [r.id for r in system.reg_units if r.id not in pos]
        if missing:
            raise DataError(f"forecast lacks REG units {missing}")
        out = self.values[[pos[r.id] for r in system.reg_units]]
        if out.shape[1] != system.horizon:
            raise DataError(f"forecast has {out.shape[1]} periods, horizon is {system.horizon}")
        return out


def validate_forecast(system: SystemData, forecast: ForecastSeries) -> np.ndarray:
    wf = forecast.aligned(system)
    cap = system.reg_capacity[:, None]
    if np.any(wf < 0) or np.any(wf > cap):
        r, t = np.argwhere((wf < 0) | (wf > cap))[0]
        raise DataError(
            f"forecast for {system.reg_units[r].id} at period {t + 1} is {wf[r, t]}, "
            f"outside [0, {system.reg_units[r].capacity}]"
        )
    return wf


@dataclass(frozen=True)
class UncertaintyBox:
    """Per-(reg unit, period) error interval ``[lower, upper]``, MW."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.lower.shape != self.upper.shape:
            raise DataError("lower and upper bounds differ in shape")
        if np.any(self.lower > self.upper):
            raise DataError("box has lower > upper")

    @property
    def shape(self):
        return self.lower.shape

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, w: np.ndarray, tol: float = 1e-9) -> bool:
        w = np.asarray(w)
        return bool(np.all(w >= self.lower - tol) and np.all(w <= self.upper + tol))

    def period(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        return self.lower[:, t], self.upper[:, t]

    def effective(self, t: int, tol: float = 1e-9) -> np.ndarray:
        """Indices of REG coordinates with a nondegenerate interval in period ``t``."""
        return np.flatnonzero(self.upper[:, t] - self.lower[:, t] > tol)

    def zero_width(self) -> "UncertaintyBox":
        z = np.zeros_like(self.lower)
        return UncertaintyBox(z, z.copy())

    def scaled(self, factor: float) -> "UncertaintyBox":
        return UncertaintyBox(self.lower * factor, self.upper * factor)


def uncertainty_box(system: SystemData, forecast: ForecastSeries) -> UncertaintyBox:
    """Physical error box: ``[-forecast, capacity - forecast]``."""
    wf = validate_forecast(system, forecast)
    return UncertaintyBox(-wf, system.reg_capacity[:, None] - wf)


# -- file formats ----------------------------------------------------------

def _parse_system(doc: dict) -> SystemData:
    unknown = set(doc) - TOP_LEVEL_KEYS - META_KEYS
    if unknown:
        _fail(f"unknown top-level keys {sorted(unknown)}")
    missing = TOP_LEVEL_KEYS - set(doc)
    if missing:
        _fail(f"missing top-level keys {sorted(missing)}")
    buses = tuple(b["id"] if isinstance(b, dict) else b for b in doc["buses"])

    def build(items, key, required, defaults):
        out = []
        for k, item in enumerate(items):
            miss = [r for r in required if r not in item]
            if miss:
                _fail(f"{key}[{k}]: missing fields {miss}")
            extra = set(item) - set(required) - set(defaults)
            if extra:
                _fail(f"{key}[{k}]: unknown fields {sorted(extra)}")
            kw = {**defaults, **item}
            out.append(kw)
        return out

    gens = []
    for kw in build(doc["generators"], "generators",
                    ["id", "bus", "marginal_cost", "p_min", "p_max"],
                    dict(no_load_cost=0.0, startup_cost=0.0, shutdown_cost=0.0, ramp_up=None,
                         ramp_down=None, startup_ramp=None, shutdown_ramp=None, min_up=1,
                         min_down=1, initial_on=False, initial_output=0.0)):
        for r in ("ramp_up", "ramp_down"):
            if kw[r] is None:
                kw[r] = kw["p_max"]
        for r in ("startup_ramp", "shutdown_ramp"):
            if kw[r] is None:
                kw[r] = kw["p_max"]
        kw["id"] = str(kw["id"])
        gens.append(Generator(**kw))
    regs = []
    for k, kw in enumerate(build(doc["reg_units"], "reg_units", ["bus", "capacity"],
                                 dict(id=None, curtail_cost=0.0))):
        kw["id"] = str(kw["id"]) if kw["id"] is not None else f"REG{kw['bus']}"
        regs.append(RegUnit(**kw))
    loads = []
    for k, kw in enumerate(build(doc["loads"], "loads", ["bus", "demand"],
                                 dict(id=None, sheddable=True, shed_cost=0.0))):
        kw["id"] = str(kw["id"]) if kw["id"] is not None else f"L{k + 1}"
        kw["demand"] = tuple(float(x) for x in kw["demand"])
        loads.append(LoadSeries(**kw))
    lines = []
    for k, kw in enumerate(build(doc["lines"], "lines", ["from_bus", "to_bus", "reactance", "capacity"],
                                 dict(id=None))):
        kw["id"] = str(kw["id"]) if kw["id"] is not None else f"line{k + 1}"
        lines.append(Line(**kw))
    return SystemData(
        buses=buses,
        generators=tuple(gens),
        lines=tuple(lines),
        reg_units=tuple(regs),
        loads=tuple(loads),
        horizon=int(doc["horizon"]),
        reference_bus=doc["reference_bus"],
        name=doc.get("name", ""),
        source=doc.get("source", ""),
    )


def system_from_dict(doc: dict) -> SystemData:
    try:
        return _parse_system(doc)
    except (TypeError, KeyError) as exc:
        raise DataError(f"malformed system data: {exc}") from exc


def load_system(path) -> SystemData:
    """Read and validate a system JSON file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{path}: top level must be an object")
    return system_from_dict(doc)


def system_to_dict(system: SystemData) -> dict:
    from dataclasses import asdict

    doc = {}
    if system.name:
        doc["name"] = system.name
    if system.source:
        doc["source"] = system.source
    doc.update(
        horizon=system.horizon,
        reference_bus=system.reference_bus,
        buses=list(system.buses),
        generators=[asdict(g) for g in system.generators],
        lines=[asdict(l) for l in system.lines],
        reg_units=[asdict(r) for r in system.reg_units],
        loads=[{**asdict(l), "demand": list(l.demand)} for l in system.loads],
    )
    return doc


def load_forecast(path) -> ForecastSeries:
    """Read a forecast CSV: header of unit ids, one row per period."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty forecast file")
    header = tuple(h.strip() for h in rows[0])
    try:
        vals = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if vals.ndim != 2 or vals.shape[1] != len(header):
        raise DataError(f"{path}: every row needs {len(header)} values")
    return ForecastSeries(header, vals.T.copy())


def save_forecast(forecast: ForecastSeries, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(forecast.unit_ids)
        for row in forecast.values.T:
            w.writerow([repr(float(x)) for x in row])


DATA_DIR = Path(__file__).parent / "data"


def six_bus() -> tuple[SystemData, ForecastSeries]:
    """The bundled 6-bus system and its PV forecast."""
    return load_system(DATA_DIR / "six_bus.json"), load_forecast(DATA_DIR / "six_bus_forecast.csv")
