"""Single-period real-time dispatch and the second-stage cost function.

Once the day-ahead stage has fixed a dispatch range ``[lower, upper]`` for
every generator and period, the recourse problem has no inter-temporal
coupling, so the second-stage cost is a sum of independent per-period LPs.
:class:`PeriodLP` is the single description of one of those LPs; every
model in the package that needs a recourse copy builds it from here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .solver import INFEASIBLE, OPTIMAL, Model, SolveParams, SolverError, solve
from .system import SystemData, UncertaintyBox

_LP_PARAMS = SolveParams(feasibility_tol=1e-7)


class InfeasibleDispatch(RuntimeError):
    """Raised when the recourse polytope is empty for a period."""

    def __init__(self, period: int, w=None, message=""):
        self.period = period
        self.w = None if w is None else np.asarray(w, dtype=float)
        super().__init__(message or f"no feasible dispatch in period {period + 1}")


@dataclass(frozen=True)
class DispatchRange:
    """Allowable output interval per (generator, period), MW."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper ranges differ in shape")

    @property
    def horizon(self) -> int:
        return self.lower.shape[1]


@dataclass
class DispatchResult:
    status: str
    generation: np.ndarray | None = None
    shedding: np.ndarray | None = None
    curtailment: np.ndarray | None = None
    cost: float = np.inf


@dataclass(frozen=True)
class PeriodLP:
    """``min c'x  s.t.  A x (rel) rhs(w),  lb <= x <= ub``.

    ``rhs(w) = b0 + Bw @ w``, except that rows flagged in ``clamp`` (the
    curtailment limits ``x^r <= w^f + w``) are floored at zero so that the
    LP stays well posed for errors outside the physical box.  Variables are
    ordered generation, shedding, curtailment.
    """

    c: np.ndarray
    A: sp.csr_matrix
    rel: np.ndarray
    b0: np.ndarray
    Bw: np.ndarray
    clamp: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    n_gen: int
    n_load: int
    n_reg: int
    period: int

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.b0.shape[0]

    @property
    def gen(self) -> slice:
        return slice(0, self.n_gen)

    @property
    def shed(self) -> slice:
        return slice(self.n_gen, self.n_gen + self.n_load)

    @property
    def curt(self) -> slice:
        return slice(self.n_gen + self.n_load, self.n)

    def rhs(self, w) -> np.ndarray:
        r = self.b0 + self.Bw @ np.asarray(w, dtype=float)
        return np.where(self.clamp, np.maximum(r, 0.0), r)

    def rhs_slope(self, w) -> np.ndarray:
        """d rhs / d w at ``w`` (clamped rows contribute zero when active)."""
        raw = self.b0 + self.Bw @ np.asarray(w, dtype=float)
        return np.where((self.clamp & (raw < 0))[:, None], 0.0, self.Bw)

    def with_range(self, lower, upper) -> "PeriodLP":
        lb = self.lb.copy()
        ub = self.ub.copy()
        lb[self.gen] = lower
        ub[self.gen] = upper
        return PeriodLP(self.c, self.A, self.rel, self.b0, self.Bw, self.clamp, lb, ub,
                        self.n_gen, self.n_load, self.n_reg, self.period)

    def model(self, w, name="dispatch") -> tuple[Model, np.ndarray]:
        m = Model(name=name)
        ids = m.add_variables(self.n, self.lb, self.ub, obj=self.c)
        m.add_constraints(self.A, ids, [_REL[r] for r in self.rel], self.rhs(w))
        return m, ids


_REL = {-1: "<=", 0: "==", 1: ">="}


def period_lp(system: SystemData, wf: np.ndarray, t: int, elastic: bool = False) -> PeriodLP:
    """Build the period-``t`` dispatch LP with generation bounds ``[0, p_max]``.

    With ``elastic=True`` the balance and line rows get nonnegative slacks
    and the objective becomes total slack (used to measure infeasibility).
    """
    G, K, R, L = system.n_gens, system.n_loads, system.n_reg, system.n_lines
    P = system.ptdf
    d = system.demand[:, t]
    wft = wf[:, t]
    n = G + K + R
    rows, relc, b0, Bw = [], [], [], []

    # balance: sum xg + sum xl - sum xr = D - sum wf - sum w
    rows.append(np.concatenate([np.ones(G), np.ones(K), -np.ones(R)]))
    relc.append(0)
    b0.append(d.sum() - wft.sum())
    Bw.append(-np.ones(R))

    # line limits in shift-factor form
    const_flow = -(d @ P[system.load_bus]) + wft @ P[system.reg_bus]
    for l in range(L):
        coef = np.concatenate([P[system.gen_bus, l], P[system.load_bus, l], -P[system.reg_bus, l]])
        pw = P[system.reg_bus, l]
        rows.append(coef)
        relc.append(-1)
        b0.append(system.lines[l].capacity - const_flow[l])
        Bw.append(-pw)
        rows.append(coef)
        relc.append(1)
        b0.append(-system.lines[l].capacity - const_flow[l])
        Bw.append(-pw)

    # curtailment limits x^r <= wf + w (clamped at zero)
    n_core = len(rows)
    for r in range(R):
        row = np.zeros(n)
        row[G + K + r] = 1.0
        rows.append(row)
        relc.append(-1)
        b0.append(wft[r])
        e = np.zeros(R)
        e[r] = 1.0
        Bw.append(e)

    A = np.array(rows, dtype=float).reshape(len(rows), n)
    Bw_arr = np.array(Bw, dtype=float).reshape(len(rows), R)
    clamp = np.zeros(len(rows), dtype=bool)
    clamp[n_core:] = True
    lb = np.zeros(n)
    ub = np.concatenate([[g.p_max for g in system.generators], system.shed_limit[:, t], np.full(R, np.inf)])
    c = np.concatenate([system.gen_cost, system.shed_cost, system.curtail_cost])
    rel = np.array(relc, dtype=np.int8)
    b0 = np.array(b0, dtype=float)

    if elastic:
        # slack on balance (both directions) and on every line row
        slack_rows = np.flatnonzero(~clamp)
        ns = len(slack_rows) + 1
        S = np.zeros((len(rows), ns))
        S[0, 0] = 1.0
        S[0, 1] = -1.0
        for j, i in enumerate(slack_rows[1:], start=2):
            S[i, j] = -1.0 if rel[i] == -1 else 1.0
        A = np.hstack([A, S])
        c = np.concatenate([np.zeros(n), np.ones(ns)])
        lb = np.concatenate([lb, np.zeros(ns)])
        ub = np.concatenate([ub, np.full(ns, np.inf)])
    return PeriodLP(c, sp.csr_matrix(A), rel, b0, Bw_arr, clamp, lb, ub, G, K, R, t)


def solve_period(plp: PeriodLP, w, params: SolveParams | None = None):
    m, ids = plp.model(w)
    return solve(m, params or _LP_PARAMS), ids


def rt_dispatch(system: SystemData, ranges: DispatchRange, wf: np.ndarray, w_t, t: int,
                params: SolveParams | None = None) -> DispatchResult:
    """Optimal single-period dispatch for a realized error vector ``w_t``."""
    plp = period_lp(system, wf, t).with_range(ranges.lower[:, t], ranges.upper[:, t])
    sol, ids = solve_period(plp, w_t, params)
    if sol.status == INFEASIBLE:
        return DispatchResult(status=INFEASIBLE)
    if sol.status != OPTIMAL:
        raise SolverError(f"dispatch LP for period {t + 1}: {sol.status} ({sol.message})")
    x = sol.x
    return DispatchResult(OPTIMAL, x[plp.gen].copy(), x[plp.shed].copy(), x[plp.curt].copy(), float(sol.objective))


def evaluate_second_stage(system: SystemData, ranges: DispatchRange, wf: np.ndarray, w) -> tuple[float, np.ndarray]:
    """Total recourse cost over all periods and the per-period costs."""
    w = np.asarray(w, dtype=float).reshape(system.n_reg, system.horizon)
    costs = np.empty(system.horizon)
    for t in range(system.horizon):
        res = rt_dispatch(system, ranges, wf, w[:, t], t)
        if res.status != OPTIMAL:
            raise InfeasibleDispatch(t, w[:, t])
        costs[t] = res.cost
    return float(costs.sum()), costs


def monolithic_second_stage(system: SystemData, ranges: DispatchRange, wf: np.ndarray, w) -> float:
    """The undecomposed T-period recourse LP (used to check decomposition)."""
    w = np.asarray(w, dtype=float).reshape(system.n_reg, system.horizon)
    m = Model(name="recourse-all-periods")
    for t in range(system.horizon):
        plp = period_lp(system, wf, t).with_range(ranges.lower[:, t], ranges.upper[:, t])
        ids = m.add_variables(plp.n, plp.lb, plp.ub, obj=plp.c)
        m.add_constraints(plp.A, ids, [_REL[r] for r in plp.rel], plp.rhs(w[:, t]))
    sol = solve(m, _LP_PARAMS)
    if sol.status != OPTIMAL:
        raise InfeasibleDispatch(-1, None, f"monolithic recourse LP is {sol.status}")
    return float(sol.objective)


# -- master-problem embedding ----------------------------------------------

def add_recourse_block(model: Model, plp: PeriodLP, w, upper_ids, lower_ids,
                       upper_scale=1.0, lower_scale=1.0, name=None) -> np.ndarray:
    """Add a copy of the period LP at fixed ``w`` whose generation is tied to
    first-stage variables: ``xg <= upper_scale*upper`` and ``xg >= lower_scale*lower``.

    Returns the ids of the copy's variables (cost vector is ``plp.c``).
    """
    ids = model.add_variables(plp.n, plp.lb, plp.ub, name=name)
    model.add_constraints(plp.A, ids, [_REL[r] for r in plp.rel], plp.rhs(w), name=name)
    G = plp.n_gen
    eye = sp.identity(G, format="csr")
    up = np.broadcast_to(np.asarray(upper_scale, dtype=float), (G,))
    lo = np.broadcast_to(np.asarray(lower_scale, dtype=float), (G,))
    gen = ids[:G]
    model.add_constraints(sp.hstack([eye, -sp.diags(up)]), np.concatenate([gen, upper_ids]), "<=", 0.0)
    model.add_constraints(sp.hstack([eye, -sp.diags(lo)]), np.concatenate([gen, lower_ids]), ">=", 0.0)
    return ids


# -- batch evaluation -------------------------------------------------------

def _pwl_scalar(fun, a: float, b: float, max_evals: int = 400):
    """Tangent lines of a convex piecewise-linear function on ``[a, b]``.

    ``fun(s)`` returns ``(value, slope)`` with ``slope`` any subgradient, or
    ``None`` when infeasible.  Uses the tangent-intersection refinement: a
    segment is certified once the function meets both end tangents at their
    crossing point.  Returns ``None`` if the budget runs out or a point is
    infeasible.
    """
    fa, fb = fun(a), fun(b)
    if fa is None or fb is None:
        return None
    lines = [(fa[1], fa[0] - fa[1] * a), (fb[1], fb[0] - fb[1] * b)]
    if b - a <= 1e-12:
        return lines
    stack = [(a, fa, b, fb)]
    evals = 2
    while stack:
        x0, f0, x1, f1 = stack.pop()
        (v0, g0), (v1, g1) = f0, f1
        scale = 1e-8 * (1.0 + abs(v0) + abs(v1))
        if abs(g1 - g0) * (x1 - x0) <= scale:
            continue
        xc = (v1 - v0 + g0 * x0 - g1 * x1) / (g0 - g1)
        if not x0 < xc < x1:
            # numerically linear or inconsistent slopes; check the midpoint
            xc = 0.5 * (x0 + x1)
        tangent = max(v0 + g0 * (xc - x0), v1 + g1 * (xc - x1))
        if evals >= max_evals:
            return None
        fc = fun(xc)
        evals += 1
        if fc is None:
            return None
        if fc[0] - tangent <= scale:
            continue
        lines.append((fc[1], fc[0] - fc[1] * xc))
        stack.append((x0, f0, xc, fc))
        stack.append((xc, fc, x1, f1))
    return lines


def _batch_lp(plp: PeriodLP, points: np.ndarray):
    """Solve one block-diagonal LP holding a copy per point."""
    N = points.shape[0]
    m = Model(name=f"dispatch-batch-t{plp.period + 1}")
    ids = m.add_variables(N * plp.n, np.tile(plp.lb, N), np.tile(plp.ub, N), obj=np.tile(plp.c, N))
    rhs = np.concatenate([plp.rhs(p) for p in points])
    m.add_constraints(sp.kron(sp.identity(N, format="csr"), plp.A, format="csr"), ids,
                      [_REL[r] for r in np.tile(plp.rel, N)], rhs)
    sol = solve(m, _LP_PARAMS)
    if sol.status != OPTIMAL:
        return None
    return (sol.x.reshape(N, plp.n) * plp.c).sum(axis=1)


def period_costs(plp: PeriodLP, points, method: str = "auto", chunk: int = 400) -> np.ndarray:
    """Recourse cost of ``plp`` at each row of ``points`` (shape (N, R)).

    Infeasible points get ``inf``.  ``method`` is ``"direct"`` (one LP per
    point), ``"batch"`` (block LPs), ``"pwl"`` (exact piecewise-linear
    reconstruction, valid when the points differ in one coordinate only) or
    ``"auto"``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    N = pts.shape[0]
    out = np.full(N, np.inf)
    if N == 0:
        return out
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    vals = _period_costs_unique(plp, uniq, method, chunk)
    return vals[inverse]


def _direct(plp, pts):
    out = np.full(pts.shape[0], np.inf)
    for k, p in enumerate(pts):
        sol, _ = solve_period(plp, p)
        if sol.status == OPTIMAL:
            out[k] = sol.objective
        elif sol.status != INFEASIBLE:
            raise SolverError(f"dispatch LP for period {plp.period + 1}: {sol.status} ({sol.message})")
    return out


def _period_costs_unique(plp, pts, method, chunk):
    N = pts.shape[0]
    if method == "direct" or (method == "auto" and N <= 6):
        return _direct(plp, pts)
    varying = np.flatnonzero(np.ptp(pts, axis=0) > 0)
    if method in ("auto", "pwl") and varying.size == 1:
        vals = _pwl_eval(plp, pts, int(varying[0]))
        if vals is not None:
            return vals
        if method == "pwl":
            raise RuntimeError("piecewise-linear reconstruction failed")
    out = np.full(N, np.inf)
    for s in range(0, N, chunk):
        block = pts[s:s + chunk]
        vals = _batch_lp(plp, block)
        out[s:s + chunk] = _direct(plp, block) if vals is None else vals
    return out


def _pwl_eval(plp, pts, r):
    base = pts[0].copy()
    s_all = pts[:, r]
    # clamp threshold: curtailment row of coordinate r changes slope where b0 + Bw w = 0
    rows = np.flatnonzero(plp.clamp & (plp.Bw[:, r] != 0))
    kinks = []
    for i in rows:
        other = plp.b0[i] + plp.Bw[i] @ base - plp.Bw[i, r] * base[r]
        kinks.append(-other / plp.Bw[i, r])
    lo, hi = float(s_all.min()), float(s_all.max())
    cuts = sorted({lo, hi, *[k for k in kinks if lo < k < hi]})
    out = np.full(pts.shape[0], np.inf)

    def make_fun(left_of_kink_mid):
        def fun(s):
            w = base.copy()
            w[r] = s
            sol, _ = solve_period(plp, w)
            if sol.status != OPTIMAL:
                return None
            wm = base.copy()
            wm[r] = left_of_kink_mid
            slope = float(sol.duals @ plp.rhs_slope(wm)[:, r])
            return float(sol.objective), slope
        return fun

    for a, b in zip(cuts[:-1], cuts[1:]) if len(cuts) > 1 else [(lo, hi)]:
        lines = _pwl_scalar(make_fun(0.5 * (a + b)), a, b)
        if lines is None:
            return None
        g = np.array([ln[0] for ln in lines])
        h = np.array([ln[1] for ln in lines])
        mask = (s_all >= a) & (s_all <= b)
        out[mask] = np.max(np.outer(s_all[mask], g) + h, axis=1)
    return out


def scenario_costs(system: SystemData, ranges: DispatchRange, wf: np.ndarray, scenarios,
                   method: str = "auto") -> np.ndarray:
    """Per-period recourse costs for many error scenarios, shape (N, T).

    ``scenarios`` has shape (N, n_reg, T).  Infeasible (scenario, period)
    pairs are ``inf``.
    """
    W = np.asarray(scenarios, dtype=float).reshape(-1, system.n_reg, system.horizon)
    out = np.empty((W.shape[0], system.horizon))
    for t in range(system.horizon):
        plp = period_lp(system, wf, t).with_range(ranges.lower[:, t], ranges.upper[:, t])
        out[:, t] = period_costs(plp, W[:, :, t], method=method)
    return out


def box_vertices(lower: np.ndarray, upper: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """All vertices of a box, degenerate coordinates fixed; shape (2^k, n)."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    eff = np.flatnonzero(upper - lower > tol)
    k = eff.size
    V = np.tile(lower, (1 << k, 1))
    for j, i in enumerate(eff):
        bit = (np.arange(1 << k) >> j) & 1
        V[:, i] = np.where(bit == 1, upper[i], lower[i])
    return V


def random_box_points(box: UncertaintyBox, t: int, n: int, rng) -> np.ndarray:
    lo, hi = box.period(t)
    return lo + (hi - lo) * rng.random((n, lo.shape[0]))
