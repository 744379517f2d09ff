"""Unit-commitment model builders: commitment logic, dispatch ranges, DUC and SUC."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .recourse import DispatchRange, add_recourse_block, period_lp
from .solver import OPTIMAL, Model, SolveParams, Solution, SolverError, solve
from .system import SystemData


@dataclass
class CommitmentVars:
    """Variable ids of the on/start-up/shut-down binaries, each shape (G, T)."""

    on: np.ndarray
    start: np.ndarray
    stop: np.ndarray


@dataclass
class RangeVars:
    upper: np.ndarray
    lower: np.ndarray


@dataclass
class CommitmentSolution:
    on: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    ranges: DispatchRange
    objective: float
    fixed_cost: float
    status: str = OPTIMAL
    extra: dict = field(default_factory=dict)


def fixed_cost_vector(system: SystemData):
    """Per-generator (no-load, start-up, shut-down) cost arrays."""
    gens = system.generators
    return (np.array([g.no_load_cost for g in gens]), np.array([g.startup_cost for g in gens]),
            np.array([g.shutdown_cost for g in gens]))


def commitment_cost(system: SystemData, on, start, stop) -> float:
    co, cu, cd = fixed_cost_vector(system)
    return float((co[:, None] * on).sum() + (cu[:, None] * start).sum() + (cd[:, None] * stop).sum())


def build_commitment_constraints(model: Model, system: SystemData) -> CommitmentVars:
    """Binary status variables with logic and minimum up/down-time rows.

    The objective receives the no-load, start-up and shut-down costs.
    Period-0 rows use the generators' initial status.
    """
    G, T = system.n_gens, system.horizon
    co, cu, cd = fixed_cost_vector(system)
    on = model.add_variables(G * T, 0, 1, integral=True, obj=np.repeat(co, T), name="u_on").reshape(G, T)
    start = model.add_variables(G * T, 0, 1, integral=True, obj=np.repeat(cu, T), name="u_start").reshape(G, T)
    stop = model.add_variables(G * T, 0, 1, integral=True, obj=np.repeat(cd, T), name="u_stop").reshape(G, T)
    for i, g in enumerate(system.generators):
        init = 1.0 if g.initial_on else 0.0

        def prev(t):
            # (terms, constant) for u_on at t-1
            return ([(on[i, t - 1], 1.0)], 0.0) if t > 0 else ([], init)

        for t in range(T):
            pt, pc = prev(t)
            # start-up / shut-down logic
            model.add_constraint([(start[i, t], 1.0), (on[i, t], -1.0)] + pt, ">=", -pc)
            model.add_constraint([(stop[i, t], 1.0), (on[i, t], 1.0)] + [(v, -c) for v, c in pt], ">=", pc)
            model.add_constraint([(on[i, t], 1.0), (stop[i, t], 1.0)], "<=", 1.0)
            model.add_constraint(pt + [(start[i, t], 1.0)], "<=", 1.0 - pc)
            # minimum up time: switching on at t keeps the unit on until t + min_up - 1
            for tau in range(t + 1, min(t + g.min_up, T)):
                model.add_constraint([(on[i, t], 1.0), (on[i, tau], -1.0)] + [(v, -c) for v, c in pt], "<=", pc)
            # minimum down time
            for tau in range(t + 1, min(t + g.min_down, T)):
                model.add_constraint(pt + [(on[i, t], -1.0), (on[i, tau], 1.0)], "<=", 1.0 - pc)
    return CommitmentVars(on, start, stop)


def build_dispatch_range_stage(model: Model, system: SystemData, cv: CommitmentVars) -> RangeVars:
    """Dispatch-range variables and the rows tying them to commitment and ramping."""
    G, T = system.n_gens, system.horizon
    pmax = np.array([g.p_max for g in system.generators])
    upper = model.add_variables(G * T, 0, np.repeat(pmax, T), name="x_upper").reshape(G, T)
    lower = model.add_variables(G * T, 0, np.repeat(pmax, T), name="x_lower").reshape(G, T)
    for i, g in enumerate(system.generators):
        for t in range(T):
            model.add_constraint([(lower[i, t], 1.0), (cv.on[i, t], -g.p_min)], ">=", 0.0)
            model.add_constraint([(lower[i, t], 1.0), (upper[i, t], -1.0)], "<=", 0.0)
            model.add_constraint([(upper[i, t], 1.0), (cv.on[i, t], -g.p_max)], "<=", 0.0)
            # upper_t - lower_{t-1} <= RU*on_{t-1} + SU*start_t
            up_terms = [(upper[i, t], 1.0), (cv.start[i, t], -g.startup_ramp)]
            # upper_{t-1} - lower_t <= RD*on_t + SD*stop_t
            dn_terms = [(lower[i, t], -1.0), (cv.on[i, t], -g.ramp_down), (cv.stop[i, t], -g.shutdown_ramp)]
            if t > 0:
                up_terms += [(lower[i, t - 1], -1.0), (cv.on[i, t - 1], -g.ramp_up)]
                dn_terms += [(upper[i, t - 1], 1.0)]
                model.add_constraint(up_terms, "<=", 0.0)
                model.add_constraint(dn_terms, "<=", 0.0)
            else:
                init_on = 1.0 if g.initial_on else 0.0
                model.add_constraint(up_terms, "<=", g.initial_output + g.ramp_up * init_on)
                model.add_constraint(dn_terms, "<=", -g.initial_output)
    return RangeVars(upper, lower)


@dataclass
class FirstStage:
    """A model holding the commitment and dispatch-range variables."""

    model: Model
    cv: CommitmentVars
    rv: RangeVars

    def extract(self, sol: Solution) -> tuple[np.ndarray, np.ndarray, np.ndarray, DispatchRange]:
        x = sol.x
        on = np.rint(x[self.cv.on]).astype(int)
        start = np.rint(x[self.cv.start]).astype(int)
        stop = np.rint(x[self.cv.stop]).astype(int)
        lower = x[self.rv.lower].copy()
        upper = x[self.rv.upper].copy()
        # tidy solver noise so that lower <= upper holds exactly
        upper = np.maximum(upper, lower)
        return on, start, stop, DispatchRange(lower, upper)


def build_first_stage(system: SystemData, name: str = "uc") -> FirstStage:
    model = Model(name=name)
    cv = build_commitment_constraints(model, system)
    rv = build_dispatch_range_stage(model, system, cv)
    return FirstStage(model, cv, rv)


# -- DUC --------------------------------------------------------------------

@dataclass
class DUCModel:
    model: Model
    cv: CommitmentVars
    dispatch: np.ndarray  # (T, n) ids of the per-period dispatch blocks
    n_gen: int

    def extract(self, system: SystemData, sol: Solution) -> CommitmentSolution:
        x = sol.x
        on = np.rint(x[self.cv.on]).astype(int)
        start = np.rint(x[self.cv.start]).astype(int)
        stop = np.rint(x[self.cv.stop]).astype(int)
        xg = x[self.dispatch[:, : self.n_gen]].T.copy()
        return CommitmentSolution(on, start, stop, DispatchRange(xg, xg.copy()), float(sol.objective),
                                  commitment_cost(system, on, start, stop),
                                  extra={"dispatch": x[self.dispatch].copy()})


def build_duc(system: SystemData, wf: np.ndarray, w=None) -> DUCModel:
    """Deterministic UC for a known error vector ``w`` (default zero)."""
    G, T = system.n_gens, system.horizon
    w = np.zeros((system.n_reg, T)) if w is None else np.asarray(w, dtype=float).reshape(system.n_reg, T)
    model = Model(name="duc")
    cv = build_commitment_constraints(model, system)
    pmin = np.array([g.p_min for g in system.generators])
    pmax = np.array([g.p_max for g in system.generators])
    blocks = []
    for t in range(T):
        plp = period_lp(system, wf, t)
        ids = add_recourse_block(model, plp, w[:, t], cv.on[:, t], cv.on[:, t], pmax, pmin, name=f"dispatch_t{t + 1}")
        model.set_objective(ids, plp.c)
        blocks.append(ids)
    blocks = np.array(blocks)
    xg = blocks[:, :G]
    for i, g in enumerate(system.generators):
        init_on = 1.0 if g.initial_on else 0.0
        for t in range(T):
            up = [(xg[t, i], 1.0), (cv.start[i, t], -g.startup_ramp)]
            dn = [(xg[t, i], -1.0), (cv.on[i, t], -g.ramp_down), (cv.stop[i, t], -g.shutdown_ramp)]
            if t > 0:
                model.add_constraint(up + [(xg[t - 1, i], -1.0), (cv.on[i, t - 1], -g.ramp_up)], "<=", 0.0)
                model.add_constraint(dn + [(xg[t - 1, i], 1.0)], "<=", 0.0)
            else:
                model.add_constraint(up, "<=", g.initial_output + g.ramp_up * init_on)
                model.add_constraint(dn, "<=", -g.initial_output)
    return DUCModel(model, cv, blocks, G)


def solve_duc(system: SystemData, wf: np.ndarray, w=None, params: SolveParams | None = None) -> CommitmentSolution:
    duc = build_duc(system, wf, w)
    sol = solve(duc.model, params)
    if sol.x is None:
        raise SolverError(f"DUC is {sol.status}: {sol.message}")
    out = duc.extract(system, sol)
    out.status = sol.status
    out.extra.update(rows=duc.model.n_rows, cols=duc.model.n_vars, wall_time=sol.wall_time)
    return out


# -- SUC --------------------------------------------------------------------

@dataclass
class SUCModel:
    first: FirstStage
    blocks: list  # blocks[s][t] -> ids

    @property
    def model(self) -> Model:
        return self.first.model


def build_suc(system: SystemData, wf: np.ndarray, samples) -> SUCModel:
    """Extensive-form stochastic UC: one recourse copy per sample and period."""
    W = np.asarray(samples, dtype=float).reshape(-1, system.n_reg, system.horizon)
    S = W.shape[0]
    if S < 1:
        raise ValueError("SUC needs at least one sample")
    fs = build_first_stage(system, name="suc")
    plps = [period_lp(system, wf, t) for t in range(system.horizon)]
    blocks = []
    for s in range(S):
        row = []
        for t, plp in enumerate(plps):
            ids = add_recourse_block(fs.model, plp, W[s, :, t], fs.rv.upper[:, t], fs.rv.lower[:, t])
            fs.model.set_objective(ids, plp.c / S)
            row.append(ids)
        blocks.append(row)
    return SUCModel(fs, blocks)


def solve_suc(system: SystemData, wf: np.ndarray, samples, params: SolveParams | None = None) -> CommitmentSolution:
    suc = build_suc(system, wf, samples)
    sol = solve(suc.model, params)
    if sol.x is None:
        raise SolverError(f"SUC is {sol.status}: {sol.message}")
    on, start, stop, ranges = suc.first.extract(sol)
    return CommitmentSolution(on, start, stop, ranges, float(sol.objective), commitment_cost(system, on, start, stop),
                              status=sol.status,
                              extra=dict(rows=suc.model.n_rows, cols=suc.model.n_vars, wall_time=sol.wall_time,
                                         dual_bound=sol.dual_bound))
