"""Affine-policy Wasserstein DRUC.

Recourse decisions inside Omega are affine in the period-total error
``E_t = sum_r w_rt``:  ``x = a1 * E_t + a0`` per generator, load and REG unit.
With that restriction the worst-case expectation over the Wasserstein ball
splits into an empirical-mean term and a small LP whose dual is folded into
the master problem, so the master size does not depend on the sample count.

The robust constraints on the policy are handled by cutting planes with a
closed-form worst case (every row is linear in ``w`` over a box), and
recourse feasibility over the whole box W by pooled recourse copies.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .recourse import DispatchRange, scenario_costs
from .robust import FEAS_TOL, FEASIBILITY, RecourseMaster, RobustInfeasible, ScenarioPool, feasibility_subproblem
from .solver import OPTIMAL, SolveParams, Solution, solve
from .system import SystemData, UncertaintyBox
from .uc import commitment_cost
from .wasserstein import GvBounds, SampleSet, WassersteinConfig, gv_bounds, omega

log = logging.getLogger(__name__)

SEP_TOL = 1e-6


@dataclass
class AffinePolicy:
    """Slopes (``*1``) and intercepts (``*0``) per component and period."""

    g1: np.ndarray
    g0: np.ndarray
    l1: np.ndarray
    l0: np.ndarray
    r1: np.ndarray
    r0: np.ndarray

    def dispatch(self, w_t, t: int):
        """Policy outputs ``(generation, shedding, curtailment)`` at error ``w_t``."""
        E = float(np.sum(w_t))
        return (self.g1[:, t] * E + self.g0[:, t], self.l1[:, t] * E + self.l0[:, t],
                self.r1[:, t] * E + self.r0[:, t])

    def slopes(self, t: int) -> np.ndarray:
        return np.concatenate([self.g1[:, t], self.l1[:, t], self.r1[:, t]])

    def intercepts(self, t: int) -> np.ndarray:
        return np.concatenate([self.g0[:, t], self.l0[:, t], self.r0[:, t]])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("g1", "g0", "l1", "l0", "r1", "r0")}


@dataclass(frozen=True)
class CostFunctions:
    """Per-period linear cost maps of the policy: ``c1_t(a1) = cost @ slopes``."""

    gen: np.ndarray
    shed: np.ndarray
    curtail: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.gen, self.shed, self.curtail])

    def c1(self, policy: AffinePolicy) -> np.ndarray:
        return self.gen @ policy.g1 + self.shed @ policy.l1 + self.curtail @ policy.r1

    def c0(self, policy: AffinePolicy) -> np.ndarray:
        return self.gen @ policy.g0 + self.shed @ policy.l0 + self.curtail @ policy.r0


def cost_coefficients(system: SystemData) -> CostFunctions:
    return CostFunctions(system.gen_cost.copy(), system.shed_cost.copy(), system.curtail_cost.copy())


# -- robust rows ------------------------------------------------------------

@dataclass(frozen=True)
class PeriodRows:
    """Robust inequalities of period ``t``, all of the form

    ``M @ (a1*E + a0) + XU @ upper + XL @ lower + c0 + Q @ w <= 0``

    with ``E = sum(w)``.  ``labels`` name the rows for reporting.
    """

    t: int
    M: np.ndarray
    XU: np.ndarray
    XL: np.ndarray
    c0: np.ndarray
    Q: np.ndarray
    labels: tuple[str, ...]

    def values(self, a1, a0, upper, lower, w) -> np.ndarray:
        E = float(np.sum(w))
        return self.M @ (a1 * E + a0) + self.XU @ upper + self.XL @ lower + self.c0 + self.Q @ w

    def worst_case(self, a1, lo, hi):
        """Maximizing vertex of every row over the box ``[lo, hi]``: (n_rows, R)."""
        coef = (self.M @ a1)[:, None] + self.Q
        return np.where(coef > 0, hi[None, :], lo[None, :])


def affine_constraint_system(system: SystemData, wf: np.ndarray) -> list[PeriodRows]:
    """Range, shedding, curtailment and line rows of the affine recourse, per period."""
    G, K, R, L = system.n_gens, system.n_loads, system.n_reg, system.n_lines
    n = G + K + R
    P = system.ptdf
    out = []
    for t in range(system.horizon):
        blocks_M, blocks_XU, blocks_XL, c0, Q, labels = [], [], [], [], [], []

        def add(M, XU=None, XL=None, const=None, q=None, names=()):
            m = M.shape[0]
            blocks_M.append(M)
            blocks_XU.append(np.zeros((m, G)) if XU is None else XU)
            blocks_XL.append(np.zeros((m, G)) if XL is None else XL)
            c0.append(np.zeros(m) if const is None else const)
            Q.append(np.zeros((m, R)) if q is None else q)
            labels.extend(names)

        eye = np.eye(n)
        gids = [g.id for g in system.generators]
        lids = [l.id for l in system.loads]
        rids = [r.id for r in system.reg_units]
        add(eye[:G], XU=-np.eye(G), names=[f"gen_max:{i}" for i in gids])
        add(-eye[:G], XL=np.eye(G), names=[f"gen_min:{i}" for i in gids])
        add(eye[G:G + K], const=-system.shed_limit[:, t], names=[f"shed_max:{i}" for i in lids])
        add(-eye[G:G + K], names=[f"shed_min:{i}" for i in lids])
        add(eye[G + K:], const=-wf[:, t], q=-np.eye(R), names=[f"curt_max:{i}" for i in rids])
        add(-eye[G + K:], names=[f"curt_min:{i}" for i in rids])
        if L:
            flow_M = np.hstack([P[system.gen_bus].T, P[system.load_bus].T, -P[system.reg_bus].T])
            flow_c = -(system.demand[:, t] @ P[system.load_bus]) + wf[:, t] @ P[system.reg_bus]
            flow_q = P[system.reg_bus].T
            cap = np.array([ln.capacity for ln in system.lines])
            add(flow_M, const=flow_c - cap, q=flow_q, names=[f"line_max:{ln.id}" for ln in system.lines])
            add(-flow_M, const=-flow_c - cap, q=-flow_q, names=[f"line_min:{ln.id}" for ln in system.lines])
        out.append(PeriodRows(t, np.vstack(blocks_M), np.vstack(blocks_XU), np.vstack(blocks_XL),
                              np.concatenate(c0), np.vstack(Q), tuple(labels)))
    return out


@dataclass(frozen=True)
class Violation:
    period: int
    row: int
    label: str
    witness: np.ndarray
    amount: float


def separate(policy: AffinePolicy, ranges: DispatchRange, om: UncertaintyBox, rows: list[PeriodRows],
             tol: float = SEP_TOL) -> list[Violation]:
    """Every robust row violated by more than ``tol`` at its worst-case vertex of ``om``."""
    out = []
    for pr in rows:
        t = pr.t
        lo, hi = om.period(t)
        a1, a0 = policy.slopes(t), policy.intercepts(t)
        Wst = pr.worst_case(a1, lo, hi)
        E = Wst.sum(axis=1)
        vals = (pr.M @ a1) * E + pr.M @ a0 + pr.XU @ ranges.upper[:, t] + pr.XL @ ranges.lower[:, t] \
            + pr.c0 + np.einsum("ij,ij->i", pr.Q, Wst)
        for j in np.flatnonzero(vals > tol):
            out.append(Violation(t, int(j), pr.labels[j], Wst[j].copy(), float(vals[j])))
    return out


# -- master -------------------------------------------------------------------

@dataclass
class Cut:
    period: int
    row: int
    witness: np.ndarray

    @property
    def key(self):
        return (self.period, self.row, tuple(np.round(self.witness, 9)))


@dataclass
class MasterModel:
    rm: RecourseMaster
    slope: np.ndarray       # (T, n) variable ids
    intercept: np.ndarray   # (T, n)
    xi: int
    xi_plus: np.ndarray
    xi_minus: np.ndarray
    rows: list
    omega: UncertaintyBox
    bounds: GvBounds
    mean_total: np.ndarray  # sample mean of E_t
    cuts: dict = field(default_factory=dict)
    feasibility: ScenarioPool | None = None

    @property
    def model(self):
        return self.rm.model

    @property
    def n_rows(self) -> int:
        return self.model.n_rows

    @property
    def n_cols(self) -> int:
        return self.model.n_vars

    def add_cut(self, cut: Cut) -> bool:
        if cut.key in self.cuts:
            return False
        pr = self.rows[cut.period]
        t, j, w = cut.period, cut.row, cut.witness
        E = float(np.sum(w))
        M = pr.M[j]
        nz = np.flatnonzero(M)
        terms = [(self.slope[t, k], M[k] * E) for k in nz] + [(self.intercept[t, k], M[k]) for k in nz]
        fs = self.rm.first
        terms += [(fs.rv.upper[g, t], pr.XU[j, g]) for g in np.flatnonzero(pr.XU[j])]
        terms += [(fs.rv.lower[g, t], pr.XL[j, g]) for g in np.flatnonzero(pr.XL[j])]
        self.model.add_constraint(terms, "<=", -pr.c0[j] - float(pr.Q[j] @ w), name=f"cut:{pr.labels[j]}")
        self.cuts[cut.key] = cut
        return True

    def add_feasibility_point(self, t: int, w) -> bool:
        if self.feasibility.add(t, w, FEASIBILITY):
            self.rm.add_block(t, w)
            return True
        return False

    def policy(self, x) -> AffinePolicy:
        G, K = self.rm.system.n_gens, self.rm.system.n_loads
        a1 = x[self.slope].T
        a0 = x[self.intercept].T
        return AffinePolicy(a1[:G], a0[:G], a1[G:G + K], a0[G:G + K], a1[G + K:], a0[G + K:])


def build_master(system: SystemData, wf: np.ndarray, samples: SampleSet, cfg: WassersteinConfig,
                 box: UncertaintyBox, cuts=(), feasibility_points=(), seed: bool = True) -> MasterModel:
    """Master MILP: first stage, policy variables, folded dual of the variation LP.

    ``seed`` adds cuts at the all-lower and all-upper Omega corners of every
    robust row and recourse copies at the corresponding corners of W.
    """
    samples.check(box)
    S, T = samples.S, system.horizon
    G, K, R = system.n_gens, system.n_loads, system.n_reg
    n = G + K + R
    om = omega(samples, cfg, box)
    gvb = gv_bounds(samples, om)
    rm = RecourseMaster(system, wf, name="awdruc-master")
    model = rm.model
    costs = cost_coefficients(system).vector
    mean_total = samples.values.sum(axis=1).mean(axis=0)
    slope = np.zeros((T, n), dtype=int)
    intercept = np.zeros((T, n), dtype=int)
    demand = system.demand
    for t in range(T):
        eff = om.effective(t)
        # empirical-mean cost term: c1_t * mean(E_t) + c0_t
        if eff.size:
            slope[t] = model.add_variables(n, -np.inf, np.inf, obj=costs * mean_total[t], name=f"a1_t{t + 1}")
        else:
            # a point Omega: any slope is equivalent to a shifted intercept
            slope[t] = model.add_variables(n, 0.0, 0.0, name=f"a1_t{t + 1}")
        intercept[t] = model.add_variables(n, -np.inf, np.inf, obj=costs, name=f"a0_t{t + 1}")
        sign = np.concatenate([np.ones(G + K), -np.ones(R)])
        rhs = demand[:, t].sum() - wf[:, t].sum()
        if eff.size:
            model.add_constraint(list(zip(slope[t], sign)), "==", -1.0, name=f"balance_slope_t{t + 1}")
        else:
            rhs -= float(om.lower[:, t].sum())
        model.add_constraint(list(zip(intercept[t], sign)), "==", rhs, name=f"balance_int_t{t + 1}")
    xi = model.add_variable(0.0, np.inf, obj=cfg.epsilon, name="xi")
    xp = model.add_variables(T, 0.0, np.inf, obj=gvb.z_plus, name="xi_plus")
    xm = model.add_variables(T, 0.0, np.inf, obj=gvb.z_minus, name="xi_minus")
    for t in range(T):
        c1 = [(v, -c) for v, c in zip(slope[t], costs)]
        model.add_constraint([(xi, 1.0), (xp[t], float(S))] + c1, ">=", 0.0)
        model.add_constraint([(xi, 1.0), (xm[t], float(S))] + [(v, -c) for v, c in c1], ">=", 0.0)
    mm = MasterModel(rm, slope, intercept, xi, xp, xm, affine_constraint_system(system, wf), om, gvb, mean_total,
                     feasibility=ScenarioPool(box))
    if seed:
        for t in range(T):
            lo, hi = om.period(t)
            for j in range(mm.rows[t].M.shape[0]):
                mm.add_cut(Cut(t, j, lo.copy()))
                mm.add_cut(Cut(t, j, hi.copy()))
            wlo, whi = box.period(t)
            mm.add_feasibility_point(t, wlo)
            mm.add_feasibility_point(t, whi)
    for c in cuts:
        mm.add_cut(c)
    for t, w in feasibility_points:
        mm.add_feasibility_point(t, w)
    return mm


# -- outer loop ---------------------------------------------------------------

@dataclass
class AwdrucSolution:
    on: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    ranges: DispatchRange
    policy: AffinePolicy
    objective: float
    fixed_cost: float
    gc: float
    gv: float
    iterations: int
    affine_cuts: int
    feasibility_cuts: int
    certified_affine: bool
    certified_feasible: bool
    xi: float = 0.0
    xi_plus: np.ndarray | None = None
    xi_minus: np.ndarray | None = None
    status: str = OPTIMAL
    extra: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.certified_affine and self.certified_feasible


def _summarize(mm: MasterModel, sol: Solution, system: SystemData):
    x = sol.x
    on, start, stop, ranges = mm.rm.first.extract(sol)
    policy = mm.policy(x)
    costs = cost_coefficients(system)
    c1 = costs.c1(policy)
    gc_val = float(c1 @ mm.mean_total + costs.c0(policy).sum())
    gv_val = float(mm.model.objective_vector()[[mm.xi, *mm.xi_plus, *mm.xi_minus]] @ x[[mm.xi, *mm.xi_plus,
                                                                                          *mm.xi_minus]])
    return on, start, stop, ranges, policy, gc_val, gv_val


def solve_awdruc(system: SystemData, wf: np.ndarray, samples: SampleSet, cfg: WassersteinConfig,
                 box: UncertaintyBox, params: SolveParams | None = None, max_iter: int = 100,
                 seed: bool = True) -> AwdrucSolution:
    """Cutting planes on the policy rows interleaved with recourse feasibility over W."""
    params = params or SolveParams()
    t0 = time.perf_counter()
    mm = build_master(system, wf, samples, cfg, box, seed=seed)
    it = 0
    cert_aff = cert_feas = False
    n_aff = 0
    last = None
    while it < max_iter:
        it += 1
        sol = solve(mm.model, params)
        if sol.x is None:
            raise RobustInfeasible(f"A-WDRUC master is {sol.status}: {sol.message}")
        last = sol
        on, start, stop, ranges, policy, _, _ = _summarize(mm, sol, system)
        added = 0
        viol, wit, per = feasibility_subproblem(system, ranges, wf, box)
        cert_feas = viol <= FEAS_TOL
        if not cert_feas:
            for t in np.flatnonzero(per > FEAS_TOL):
                added += mm.add_feasibility_point(int(t), wit[:, t])
        found = separate(policy, ranges, mm.omega, mm.rows)
        cert_aff = not found
        for v in found:
            if mm.add_cut(Cut(v.period, v.row, v.witness)):
                added += 1
                n_aff += 1
        log.debug("awdruc it %d: obj %.6f, %d violations, feasibility %.3g", it, sol.objective, len(found), viol)
        if cert_aff and cert_feas:
            break
        if not added:
            log.warning("violations persist but every cut is already in the master")
            break
    on, start, stop, ranges, policy, gc_val, gv_val = _summarize(mm, last, system)
    x = last.x
    return AwdrucSolution(on, start, stop, ranges, policy, float(last.objective),
                          commitment_cost(system, on, start, stop), gc_val, gv_val, it, n_aff,
                          len(mm.feasibility), cert_aff, cert_feas, float(x[mm.xi]), x[mm.xi_plus].copy(),
                          x[mm.xi_minus].copy(), status=last.status,
                          extra=dict(rows=mm.n_rows, cols=mm.n_cols, wall_time=time.perf_counter() - t0,
                                     dual_bound=last.dual_bound, omega=mm.omega, cuts_total=len(mm.cuts)))


def evaluate_awdruc(solution, system: SystemData, wf: np.ndarray, scenarios) -> dict:
    """Mean exact-recourse cost at the solution's ranges; the policy is not used."""
    return evaluate_ranges(solution, system, wf, scenarios)


def evaluate_ranges(solution, system: SystemData, wf: np.ndarray, scenarios) -> dict:
    costs = scenario_costs(system, solution.ranges, wf, scenarios)
    total = costs.sum(axis=1)
    ok = np.isfinite(total)
    fixed = commitment_cost(system, solution.on, solution.start, solution.stop)
    return dict(mean_cost=float(fixed + total[ok].mean()) if ok.any() else float("inf"),
                second_stage=float(total[ok].mean()) if ok.any() else float("inf"),
                fixed_cost=fixed, infeasible=int((~ok).sum()), scenarios=int(total.size), per_scenario=fixed + total)
