"""Scenario generation, holdout selection of the radius, and model comparison runs."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml
from scipy.stats import truncnorm

from .affine import AwdrucSolution, evaluate_ranges, solve_awdruc
from .recourse import DispatchRange
from .robust import CCGSettings, RobustSolution, solve_ruc
from .solver import SolveParams, set_default_backend
from .system import ForecastSeries, SystemData, UncertaintyBox, load_forecast, load_system, six_bus, uncertainty_box
from .uc import CommitmentSolution, solve_duc, solve_suc
from .wasserstein import SampleSet, WassersteinConfig, solve_ewdruc

log = logging.getLogger(__name__)

MODELS = ("duc", "suc", "ruc", "ewdruc", "awdruc")
EPSILON_GRID = (0.001, 0.005, 0.01, 0.05, 0.1, 0.5)
REPORT_COLUMNS = ("S", "seed", "model", "epsilon", "objective", "eval_mean_cost", "eval_second_stage",
                  "eval_infeasible", "fixed_cost", "rows", "cols", "iterations", "certified", "status")
TIMING_COLUMNS = ("S", "seed", "model", "wall_time")


# -- sampling -------------------------------------------------------------------

def generate_samples(wf: np.ndarray, sigma_ratio: float, count: int, seed, box: UncertaintyBox | None = None,
                     unit_ids=()) -> SampleSet:
    """Zero-mean normal errors with standard deviation ``sigma_ratio * forecast``.

    With ``box`` the draws are truncated to it (training samples); without
    it they are plain normal (evaluation scenarios).
    """
    if sigma_ratio < 0:
        raise ValueError("sigma_ratio must be nonnegative")
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    sd = sigma_ratio * np.asarray(wf, dtype=float)
    out = np.zeros((count,) + sd.shape)
    m = sd > 0
    if m.any():
        if box is None:
            out[:, m] = rng.normal(0.0, sd[m], size=(count, int(m.sum())))
        else:
            a = box.lower[m] / sd[m]
            b = box.upper[m] / sd[m]
            out[:, m] = truncnorm.rvs(a, b, scale=sd[m], size=(count, int(m.sum())), random_state=rng)
            # guard against rounding just past the box edges
            out = np.clip(out, box.lower, box.upper)
    out += 0.0  # no negative zeros in written files
    return SampleSet(out, tuple(unit_ids))


# -- model dispatch ---------------------------------------------------------------

@dataclass
class ModelResult:
    model: str
    on: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    ranges: DispatchRange
    objective: float
    wall_time: float
    rows: int
    cols: int
    iterations: int = 1
    certified: bool = True
    epsilon: float | None = None
    status: str = "optimal"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dict(model=self.model, objective=self.objective, epsilon=self.epsilon, certified=self.certified,
                 status=self.status, iterations=self.iterations, rows=self.rows, cols=self.cols,
                 wall_time=self.wall_time, on=self.on.tolist(), start=self.start.tolist(),
                 stop=self.stop.tolist(), range_lower=self.ranges.lower.tolist(),
                 range_upper=self.ranges.upper.tolist())
        d.update({k: v for k, v in self.extra.items() if _jsonable(v)})
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelResult":
        rng = DispatchRange(np.array(d["range_lower"], dtype=float), np.array(d["range_upper"], dtype=float))
        return cls(d["model"], np.array(d["on"], dtype=int), np.array(d["start"], dtype=int),
                   np.array(d["stop"], dtype=int), rng, float(d["objective"]), float(d.get("wall_time", 0.0)),
                   int(d.get("rows", 0)), int(d.get("cols", 0)), int(d.get("iterations", 1)),
                   bool(d.get("certified", True)), d.get("epsilon"), d.get("status", "optimal"))


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
        return True
    except TypeError:
        return False


@dataclass
class SolverSettings:
    mip_gap: float = 1e-4
    time_limit: float | None = None
    seed: int | None = None
    ccg_gap: float = 1e-4
    ccg_max_iter: int = 50
    affine_max_iter: int = 100

    def params(self) -> SolveParams:
        return SolveParams(mip_gap=self.mip_gap, time_limit=self.time_limit, seed=self.seed)

    def ccg(self) -> CCGSettings:
        return CCGSettings(gap=self.ccg_gap, max_iter=self.ccg_max_iter, params=self.params())


def solve_model(name: str, system: SystemData, wf: np.ndarray, box: UncertaintyBox, samples: SampleSet | None,
                epsilon: float | None = None, beta: float = 100.0,
                settings: SolverSettings | None = None) -> ModelResult:
    st = settings or SolverSettings()
    t0 = time.perf_counter()
    if name == "duc":
        sol: CommitmentSolution = solve_duc(system, wf, params=st.params())
        return ModelResult(name, sol.on, sol.start, sol.stop, sol.ranges, sol.objective, time.perf_counter() - t0,
                           sol.extra["rows"], sol.extra["cols"])
    if name == "suc":
        sol = solve_suc(system, wf, samples.values, params=st.params())
        return ModelResult(name, sol.on, sol.start, sol.stop, sol.ranges, sol.objective, time.perf_counter() - t0,
                           sol.extra["rows"], sol.extra["cols"])
    if name == "ruc":
        rs: RobustSolution = solve_ruc(system, wf, box, st.ccg())
        return ModelResult(name, rs.on, rs.start, rs.stop, rs.ranges, rs.objective, time.perf_counter() - t0,
                           rs.extra["rows"], rs.extra["cols"], rs.iterations, rs.certified and rs.converged,
                           status="optimal" if rs.converged else "limit",
                           extra=dict(lower_bound=rs.lower_bound, pool_size=rs.pool_size))
    if name == "ewdruc":
        cfg = WassersteinConfig(epsilon, beta)
        rs = solve_ewdruc(system, wf, samples, cfg, box, st.ccg())
        return ModelResult(name, rs.on, rs.start, rs.stop, rs.ranges, rs.objective, time.perf_counter() - t0,
                           rs.extra["rows"], rs.extra["cols"], rs.iterations, rs.certified and rs.converged,
                           epsilon, status="optimal" if rs.converged else "limit",
                           extra=dict(lower_bound=rs.lower_bound, pool_size=rs.pool_size, lam=rs.extra["lam"]))
    if name == "awdruc":
        cfg = WassersteinConfig(epsilon, beta)
        a: AwdrucSolution = solve_awdruc(system, wf, samples, cfg, box, st.params(), max_iter=st.affine_max_iter)
        return ModelResult(name, a.on, a.start, a.stop, a.ranges, a.objective, time.perf_counter() - t0,
                           a.extra["rows"], a.extra["cols"], a.iterations, a.certified, epsilon,
                           status="optimal" if a.certified else "uncertified",
                           extra=dict(policy=a.policy.to_dict(), gc=a.gc, gv=a.gv, affine_cuts=a.affine_cuts,
                                      feasibility_cuts=a.feasibility_cuts, certified_affine=a.certified_affine,
                                      certified_feasible=a.certified_feasible))
    raise ValueError(f"unknown model {name!r}; choose from {', '.join(MODELS)}")


# -- radius selection --------------------------------------------------------------

def select_epsilon_holdout(system: SystemData, wf: np.ndarray, samples: SampleSet, grid, split: float,
                           box: UncertaintyBox, beta: float = 100.0, settings: SolverSettings | None = None):
    """Train A-WDRUC per radius on the first ``split`` share of the samples and
    score the mean exact-recourse cost on the rest; ties go to the smaller radius.

    Returns ``(epsilon, table)`` where ``table`` lists one dict per radius.
    """
    if not 0 < split < 1:
        raise ValueError("split must lie in (0, 1)")
    S = samples.S
    n_train = int(round(split * S))
    if n_train < 1 or n_train > S - 1:
        raise ValueError(f"split {split} leaves an empty side for S={S}")
    train = samples.subset(np.arange(n_train))
    valid = samples.subset(np.arange(n_train, S))
    grid = sorted({float(e) for e in grid})
    if not grid:
        raise ValueError("empty epsilon grid")
    table = []
    for eps in grid:
        res = solve_model("awdruc", system, wf, box, train, eps, beta, settings)
        if not res.certified:
            log.warning("epsilon %g skipped: training solve not certified", eps)
            table.append(dict(epsilon=eps, validation_cost=None, certified=False))
            continue
        ev = evaluate_ranges(res, system, wf, valid.values)
        table.append(dict(epsilon=eps, validation_cost=ev["mean_cost"], certified=True))
    scored = [r for r in table if r["validation_cost"] is not None]
    if not scored:
        raise RuntimeError("no radius in the grid produced a certified solution")
    best = min(scored, key=lambda r: (r["validation_cost"], r["epsilon"]))
    return best["epsilon"], table


# -- comparison runs ----------------------------------------------------------------

@dataclass
class ExperimentConfig:
    system: str | None = None
    forecast: str | None = None
    models: tuple = ("suc", "ruc", "awdruc")
    sample_sizes: tuple = (10, 40)
    eval_count: int = 10_000
    seeds: tuple = tuple(range(10))
    sigma_ratio: float = 0.2
    epsilon: float | str = "holdout"
    epsilon_grid: tuple = EPSILON_GRID
    beta: float = 100.0
    split: float = 0.7
    output: str = "results"
    backend: str | None = None
    workers: int = 1
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if isinstance(self.solver, dict):
            self.solver = SolverSettings(**self.solver)
        if isinstance(self.sample_sizes, int):
            self.sample_sizes = (self.sample_sizes,)
        self.models = tuple(self.models)
        self.sample_sizes = tuple(int(s) for s in self.sample_sizes)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.epsilon_grid = tuple(float(e) for e in self.epsilon_grid)
        bad = set(self.models) - set(MODELS)
        if bad:
            raise ValueError(f"unknown models {sorted(bad)}")
        if any(s < 1 for s in self.sample_sizes):
            raise ValueError("sample sizes must be >= 1")
        if not 0 < self.split < 1:
            raise ValueError("split must lie in (0, 1)")
        if not self.epsilon_grid:
            raise ValueError("epsilon grid is empty")
        if self.epsilon != "holdout":
            self.epsilon = float(self.epsilon)
        if self.eval_count < 1:
            raise ValueError("eval_count must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        solver = dict(doc.pop("solver", {}) or {})
        backend = solver.pop("backend", None)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        if backend is not None:
            doc.setdefault("backend", backend)
        return cls(**doc, solver=SolverSettings(**solver))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text()
        doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        return cls.from_dict(doc or {})


def load_case(system_path=None, forecast_path=None) -> tuple[SystemData, ForecastSeries]:
    if system_path is None and forecast_path is None:
        return six_bus()
    if system_path is None or forecast_path is None:
        raise ValueError("give both a system file and a forecast file, or neither")
    return load_system(system_path), load_forecast(forecast_path)


@dataclass
class ComparisonReport:
    rows: list
    timings: list
    holdout: list

    def aggregates(self) -> dict:
        out = {}
        for key in sorted({(r["model"], r["S"]) for r in self.rows}):
            sel = [r for r in self.rows if (r["model"], r["S"]) == key]
            entry = {}
            for col in ("objective", "eval_mean_cost"):
                v = np.array([r[col] for r in sel if r[col] is not None and np.isfinite(r[col])], dtype=float)
                entry[col] = (dict(mean=float(v.mean()), p25=float(np.percentile(v, 25)),
                                   p75=float(np.percentile(v, 75)), n=int(v.size)) if v.size else None)
            out[f"{key[0]}/S={key[1]}"] = entry
        return out

    def timing_aggregates(self) -> dict:
        out = {}
        for key in sorted({(r["model"], r["S"]) for r in self.timings}):
            v = np.array([r["wall_time"] for r in self.timings if (r["model"], r["S"]) == key])
            out[f"{key[0]}/S={key[1]}"] = dict(mean=float(v.mean()), p25=float(np.percentile(v, 25)),
                                                p75=float(np.percentile(v, 75)))
        return out

    def write(self, outdir) -> dict:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = dict(report=outdir / "report.csv", timings=outdir / "timings.csv", summary=outdir / "summary.json")
        with open(paths["report"], "w", newline="") as fh:
            wr = csv.DictWriter(fh, REPORT_COLUMNS, lineterminator="\n")
            wr.writeheader()
            for r in self.rows:
                wr.writerow({k: _fmt(r[k]) for k in REPORT_COLUMNS})
        with open(paths["timings"], "w", newline="") as fh:
            wr = csv.DictWriter(fh, TIMING_COLUMNS, lineterminator="\n")
            wr.writeheader()
            for r in self.timings:
                wr.writerow({k: _fmt(r[k]) for k in TIMING_COLUMNS})
        summary = dict(aggregates=self.aggregates(), holdout=self.holdout)
        paths["summary"].write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
        (outdir / "timings.json").write_text(json.dumps(self.timing_aggregates(), indent=1, sort_keys=True) + "\n")
        return paths


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _seed_task(args):
    cfg, S, seed = args
    if cfg.backend:
        set_default_backend(cfg.backend)
    system, forecast = load_case(cfg.system, cfg.forecast)
    wf = forecast.aligned(system)
    box = uncertainty_box(system, forecast)
    ids = tuple(u.id for u in system.reg_units)
    train = generate_samples(wf, cfg.sigma_ratio, S, np.random.SeedSequence([seed, S, 1]), box, ids)
    scen = generate_samples(wf, cfg.sigma_ratio, cfg.eval_count, np.random.SeedSequence([seed, 2]), None, ids)
    rows, timings, holdout = [], [], []
    eps = cfg.epsilon
    needs_eps = any(m in ("ewdruc", "awdruc") for m in cfg.models)
    if needs_eps and eps == "holdout":
        if S >= 2:
            eps, table = select_epsilon_holdout(system, wf, train, cfg.epsilon_grid, cfg.split, box, cfg.beta,
                                                cfg.solver)
            holdout.append(dict(S=S, seed=seed, epsilon=eps, table=table))
        else:
            eps = min(cfg.epsilon_grid)
    for name in cfg.models:
        row = dict(S=S, seed=seed, model=name, epsilon=eps if name in ("ewdruc", "awdruc") else None)
        try:
            res = solve_model(name, system, wf, box, train, row["epsilon"], cfg.beta, cfg.solver)
            ev = evaluate_ranges(res, system, wf, scen.values)
            row.update(objective=res.objective, eval_mean_cost=ev["mean_cost"], eval_second_stage=ev["second_stage"],
                       eval_infeasible=ev["infeasible"], fixed_cost=ev["fixed_cost"], rows=res.rows, cols=res.cols,
                       iterations=res.iterations, certified=res.certified, status=res.status)
            timings.append(dict(S=S, seed=seed, model=name, wall_time=res.wall_time))
        except Exception as exc:  # recorded, the run continues
            log.error("S=%d seed=%d %s failed: %s", S, seed, name, exc)
            row.update(objective=None, eval_mean_cost=None, eval_second_stage=None, eval_infeasible=None,
                       fixed_cost=None, rows=None, cols=None, iterations=None, certified=False,
                       status=f"error: {type(exc).__name__}")
        rows.append(row)
    return rows, timings, holdout


def run_comparison(cfg: ExperimentConfig, write: bool = True) -> ComparisonReport:
    tasks = [(cfg, S, seed) for S in cfg.sample_sizes for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_seed_task, tasks))
    else:
        results = [_seed_task(t) for t in tasks]
    rows, timings, holdout = [], [], []
    for r, tm, h in results:
        rows += r
        timings += tm
        holdout += h
    report = ComparisonReport(rows, timings, holdout)
    if write:
        report.write(cfg.output)
    return report


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
