"""Two-stage robust machinery shared by RUC and both Wasserstein models.

The recourse cost separates over periods, so every subproblem here works
per period: maximize an LP value over a box of error vectors.  The LP value
is convex in the error (away from the curtailment clamp, which never binds
inside the physical box), hence the maximum sits at a vertex.  Vertex
enumeration is used up to ``ENUM_LIMIT`` effective coordinates; beyond that
the inner LP is dualized and the bilinear terms are linearized with big-M.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .recourse import (InfeasibleDispatch, PeriodLP, DispatchRange, add_recourse_block, box_vertices,
                       period_costs, period_lp)
from .solver import OPTIMAL, Model, SolveParams, SolverError, solve
from .system import SystemData, UncertaintyBox
from .uc import build_first_stage, commitment_cost

log = logging.getLogger(__name__)

ENUM_LIMIT = 12
FEAS_TOL = 1e-6
OPTIMALITY = "optimality"
FEASIBILITY = "feasibility"


class RobustInfeasible(RuntimeError):
    """The first-stage problem admits no range that is feasible for every error."""


# -- scenario pool ----------------------------------------------------------

class ScenarioPool:
    """Per-period error vectors collected by an outer loop, with origin tags."""

    def __init__(self, box: UncertaintyBox, tol: float = 1e-9):
        self.box = box
        self.tol = tol
        self._points: list[list[np.ndarray]] = [[] for _ in range(box.shape[1])]
        self._tags: list[list[str]] = [[] for _ in range(box.shape[1])]

    def add(self, t: int, w, tag: str = OPTIMALITY) -> bool:
        """Add ``w`` to period ``t``; returns False when it is already present."""
        w = np.asarray(w, dtype=float).copy()
        lo, hi = self.box.period(t)
        if np.any(w < lo - self.tol) or np.any(w > hi + self.tol):
            raise ValueError(f"pool point outside the box in period {t + 1}")
        for p in self._points[t]:
            if np.max(np.abs(p - w), initial=0.0) <= self.tol:
                return False
        self._points[t].append(w)
        self._tags[t].append(tag)
        return True

    def points(self, t: int) -> list[np.ndarray]:
        return self._points[t]

    def tags(self, t: int) -> list[str]:
        return self._tags[t]

    def __len__(self) -> int:
        return sum(len(p) for p in self._points)

    def count(self, tag: str) -> int:
        return sum(tg.count(tag) for tg in self._tags)


@dataclass
class RobustSolution:
    on: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    ranges: DispatchRange
    objective: float
    lower_bound: float
    iterations: int
    pool_size: int
    fixed_cost: float = 0.0
    certified: bool = False
    converged: bool = False
    status: str = OPTIMAL
    history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return relative_gap(self.lower_bound, self.objective)


def relative_gap(lb: float, ub: float) -> float:
    if not np.isfinite(ub):
        return np.inf
    return max(ub - lb, 0.0) / max(1.0, abs(ub))


# -- inner maximization -----------------------------------------------------

def _dual_big_m(plp: PeriodLP, w_hi_rhs) -> float:
    c = np.abs(plp.c[np.isfinite(plp.c)])
    bounds = np.concatenate([np.abs(plp.lb[np.isfinite(plp.lb)]), np.abs(plp.ub[np.isfinite(plp.ub)])])
    mag = max(np.max(np.abs(w_hi_rhs), initial=0.0), np.max(bounds, initial=0.0))
    return 10.0 * (np.max(c, initial=0.0) + mag)


def max_value_binary_affine(plp: PeriodLP, w0, D, penalty=None, z_rows=None, big_m: float | None = None,
                            params: SolveParams | None = None):
    """Maximize ``value(w0 + D z) - penalty @ z`` over binary ``z``.

    ``value`` is the optimal value of ``plp`` at the error vector.  The inner
    LP is replaced by its dual; each product ``z_j * y_i`` is linearized with
    the bound ``|y_i| <= big_m``.  ``z_rows`` is an optional list of
    ``(coeffs, relation, rhs)`` side constraints on ``z``.  The clamp on the
    curtailment rows is ignored, so every ``w`` reached must keep those
    right-hand sides nonnegative.

    Returns ``(value, z, w)``; ``value`` already has the penalty subtracted.
    """
    w0 = np.asarray(w0, dtype=float)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    k = D.shape[1]
    penalty = np.zeros(k) if penalty is None else np.asarray(penalty, dtype=float)
    A = sp.csr_matrix(plp.A)
    m, n = A.shape
    base = plp.b0 + plp.Bw @ w0           # rhs at z = 0
    slope = plp.Bw @ D                    # d rhs / d z, shape (m, k)
    if big_m is None:
        big_m = _dual_big_m(plp, np.abs(base) + np.abs(slope).sum(axis=1))

    model = Model(sense="max", name=f"dual-max-t{plp.period + 1}")
    y_lo = np.where(plp.rel == 1, 0.0, -big_m)
    y_hi = np.where(plp.rel == -1, 0.0, big_m)
    y = model.add_variables(m, y_lo, y_hi, obj=base, name="y")
    fin_lo_all = np.flatnonzero(np.isfinite(plp.lb))
    fin_up = np.flatnonzero(np.isfinite(plp.ub))
    # bound multipliers stay unbounded: only the row duals enter products
    mu = model.add_variables(fin_lo_all.size, 0.0, np.inf, obj=plp.lb[fin_lo_all], name="mu")
    nu = model.add_variables(fin_up.size, 0.0, np.inf, obj=-plp.ub[fin_up], name="nu")
    z = model.add_variables(k, 0, 1, integral=True, obj=-penalty, name="z")
    # stationarity: A' y + mu - nu = c
    At = A.T.tocsr()
    Mu = sp.csr_matrix((np.ones(fin_lo_all.size), (fin_lo_all, np.arange(fin_lo_all.size))), shape=(n, fin_lo_all.size))
    Nu = sp.csr_matrix((-np.ones(fin_up.size), (fin_up, np.arange(fin_up.size))), shape=(n, fin_up.size))
    model.add_constraints(sp.hstack([At, Mu, Nu]), np.concatenate([y, mu, nu]), "==", plp.c)
    # products p_ij = z_j * y_i where slope_ij != 0
    ii, jj = np.nonzero(slope)
    if ii.size:
        p = model.add_variables(ii.size, -big_m, big_m, obj=slope[ii, jj], name="p")
        for q, (i, j) in enumerate(zip(ii, jj)):
            model.add_constraint([(p[q], 1.0), (z[j], -big_m)], "<=", 0.0)
            model.add_constraint([(p[q], 1.0), (z[j], big_m)], ">=", 0.0)
            model.add_constraint([(p[q], 1.0), (y[i], -1.0), (z[j], big_m)], "<=", big_m)
            model.add_constraint([(p[q], 1.0), (y[i], -1.0), (z[j], -big_m)], ">=", -big_m)
    for coeffs, rel, rhs in z_rows or ():
        model.add_constraint(list(zip(z.tolist(), coeffs)), rel, rhs)
    sol = solve(model, params or SolveParams(mip_gap=1e-9))
    if sol.status != OPTIMAL:
        raise SolverError(f"dualized subproblem is {sol.status}: {sol.message}")
    zv = np.rint(sol.x[z])
    return float(sol.objective), zv, w0 + D @ zv


def box_max_milp(plp: PeriodLP, lower, upper, params: SolveParams | None = None, big_m: float | None = None):
    """Maximize the LP value of ``plp`` over the box ``[lower, upper]`` by MILP."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    eff = np.flatnonzero(upper - lower > 1e-9)
    D = np.zeros((lower.size, eff.size))
    D[eff, np.arange(eff.size)] = (upper - lower)[eff]
    val, _, w = max_value_binary_affine(plp, lower, D, big_m=big_m, params=params)
    return val, w


def box_max(plp: PeriodLP, lower, upper, method: str = "auto"):
    """``(value, argmax w)`` of the period LP over a box; ``inf`` flags infeasibility."""
    eff = int(np.count_nonzero(np.asarray(upper) - np.asarray(lower) > 1e-9))
    if method == "milp" or (method == "auto" and eff > ENUM_LIMIT):
        return box_max_milp(plp, lower, upper)
    V = box_vertices(lower, upper)
    vals = period_costs(plp, V)
    k = int(np.argmax(vals))
    return float(vals[k]), V[k]


def worst_case_cost(system: SystemData, ranges: DispatchRange, wf: np.ndarray, box: UncertaintyBox,
                    method: str = "auto"):
    """Maximize the second-stage cost over ``box``; returns ``(w*, cost, per-period costs)``.

    Raises :class:`InfeasibleDispatch` carrying the witness if some vertex
    admits no dispatch.
    """
    T = system.horizon
    w_star = np.zeros((system.n_reg, T))
    costs = np.zeros(T)
    for t in range(T):
        plp = period_lp(system, wf, t).with_range(ranges.lower[:, t], ranges.upper[:, t])
        lo, hi = box.period(t)
        val, w = box_max(plp, lo, hi, method)
        w_star[:, t] = w
        if not np.isfinite(val):
            raise InfeasibleDispatch(t, w)
        costs[t] = val
    return w_star, float(costs.sum()), costs


def feasibility_subproblem(system: SystemData, ranges: DispatchRange, wf: np.ndarray, box: UncertaintyBox,
                           method: str = "auto"):
    """Largest elastic violation of the recourse polytope over ``box``.

    Returns ``(violation, witness, per-period violations)``; a violation of
    at most ``FEAS_TOL`` certifies that every error in the box can be
    dispatched.
    """
    T = system.horizon
    witness = np.zeros((system.n_reg, T))
    viol = np.zeros(T)
    for t in range(T):
        plp = period_lp(system, wf, t, elastic=True).with_range(ranges.lower[:, t], ranges.upper[:, t])
        lo, hi = box.period(t)
        val, w = box_max(plp, lo, hi, method)
        if not np.isfinite(val):
            raise SolverError(f"elastic LP failed in period {t + 1}")
        viol[t] = max(val, 0.0)
        witness[:, t] = w
    k = int(np.argmax(viol))
    return float(viol[k]), witness, viol


# -- RUC by column-and-constraint generation ---------------------------------

@dataclass
class CCGSettings:
    gap: float = 1e-4
    max_iter: int = 50
    params: SolveParams = field(default_factory=SolveParams)
    seed_vertices: bool = True


def seed_box_vertices(pool: ScenarioPool, box: UncertaintyBox, tag: str = OPTIMALITY):
    """Put the all-lower and all-upper corners of each period box into the pool."""
    for t in range(box.shape[1]):
        lo, hi = box.period(t)
        pool.add(t, lo, tag)
        pool.add(t, hi, tag)


class RecourseMaster:
    """First stage plus per-period epigraph variables and pooled recourse copies."""

    def __init__(self, system: SystemData, wf: np.ndarray, name: str = "ruc-master"):
        self.system = system
        self.wf = wf
        self.first = build_first_stage(system, name=name)
        self.model = self.first.model
        self.plps = [period_lp(system, wf, t) for t in range(system.horizon)]
        self.n_blocks = 0

    def add_block(self, t: int, w) -> np.ndarray:
        """A recourse copy at ``w`` linked to period ``t``'s ranges; returns its ids."""
        ids = add_recourse_block(self.model, self.plps[t], w, self.first.rv.upper[:, t], self.first.rv.lower[:, t])
        self.n_blocks += 1
        return ids


def solve_ruc(system: SystemData, wf: np.ndarray, box: UncertaintyBox, settings: CCGSettings | None = None,
              method: str = "auto") -> RobustSolution:
    """Robust UC over ``box`` by column-and-constraint generation."""
    st = settings or CCGSettings()
    t0 = time.perf_counter()
    T = system.horizon
    rm = RecourseMaster(system, wf)
    model = rm.model
    theta = model.add_variables(T, 0.0, np.inf, obj=1.0, name="theta")
    pool = ScenarioPool(box)

    def add_point(t, w, tag):
        if pool.add(t, w, tag):
            ids = rm.add_block(t, w)
            model.add_constraint([(theta[t], 1.0)] + [(v, -c) for v, c in zip(ids, rm.plps[t].c)], ">=", 0.0)
            return True
        return False

    if st.seed_vertices:
        for t in range(T):
            lo, hi = box.period(t)
            add_point(t, lo, OPTIMALITY)
            add_point(t, hi, OPTIMALITY)
    lb, ub = -np.inf, np.inf
    best = None
    history = []
    certified = False
    converged = False
    it = 0
    while it < st.max_iter:
        it += 1
        sol = solve(model, st.params)
        if sol.status != OPTIMAL and sol.x is None:
            raise RobustInfeasible(f"RUC master is {sol.status}: {sol.message}")
        bound = sol.dual_bound if sol.dual_bound is not None and np.isfinite(sol.dual_bound) else sol.objective
        lb = max(lb, float(bound))
        on, start, stop, ranges = rm.first.extract(sol)
        viol, wit, per = feasibility_subproblem(system, ranges, wf, box, method)
        added = False
        if viol > FEAS_TOL:
            for t in np.flatnonzero(per > FEAS_TOL):
                added |= add_point(int(t), wit[:, t], FEASIBILITY)
            history.append((it, lb, ub, viol))
            log.debug("ruc it %d: feasibility violation %.3g", it, viol)
            if not added:
                raise RobustInfeasible("feasibility witness already in the pool; master tolerance too loose")
            continue
        w_star, wc, _ = worst_case_cost(system, ranges, wf, box, method)
        fixed = commitment_cost(system, on, start, stop)
        cand = fixed + wc
        if cand < ub:
            ub = cand
            best = (on, start, stop, ranges, fixed)
            certified = True
        history.append((it, lb, ub, 0.0))
        log.debug("ruc it %d: lb %.6f ub %.6f", it, lb, ub)
        if relative_gap(lb, ub) <= st.gap:
            converged = True
            break
        for t in range(T):
            added |= add_point(t, w_star[:, t], OPTIMALITY)
        if not added:
            # every worst case is already represented: the master is exact up to its MIP gap
            converged = relative_gap(lb, ub) <= max(st.gap, st.params.mip_gap)
            break
    if best is None:
        raise RobustInfeasible("no certified first-stage solution within the iteration limit")
    on, start, stop, ranges, fixed = best
    return RobustSolution(on, start, stop, ranges, ub, lb, it, len(pool), fixed_cost=fixed, certified=certified,
                          converged=converged, history=history,
                          extra=dict(rows=model.n_rows, cols=model.n_vars, wall_time=time.perf_counter() - t0,
                                     feasibility_cuts=pool.count(FEASIBILITY)))


def certify_ranges(system: SystemData, ranges: DispatchRange, wf: np.ndarray, box: UncertaintyBox) -> bool:
    viol, _, _ = feasibility_subproblem(system, ranges, wf, box)
    return viol <= FEAS_TOL
