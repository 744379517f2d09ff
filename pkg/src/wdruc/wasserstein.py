"""Wasserstein ambiguity sets on a box: the Omega subset, the worst-case
probability witness, the aggregated variation LP and its dual, and the
exact distributionally robust UC solved by constraint generation.
"""

from __future__ import annotations

import csv
import itertools
import logging
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .recourse import period_costs, period_lp
from .robust import (ENUM_LIMIT, FEAS_TOL, FEASIBILITY, OPTIMALITY, CCGSettings, RecourseMaster, RobustInfeasible,
                     RobustSolution, ScenarioPool, feasibility_subproblem, max_value_binary_affine, relative_gap)
from .solver import OPTIMAL, Model, SolveParams, SolverError, solve
from .system import DataError, SystemData, UncertaintyBox
from .uc import commitment_cost

log = logging.getLogger(__name__)

SAMPLE_COLUMNS = ("scenario_id", "reg_unit_id", "period", "error_mw")


# -- samples ------------------------------------------------------------------

@dataclass(frozen=True)
class SampleSet:
    """``S`` forecast-error samples, array of shape (S, n_reg, T) in MW."""

    values: np.ndarray
    unit_ids: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[0] < 1:
            raise DataError(f"samples must have shape (S>=1, n_reg, T), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("samples contain non-finite values")
        object.__setattr__(self, "values", v)
        if self.unit_ids and len(self.unit_ids) != v.shape[1]:
            raise DataError("unit_ids do not match the sample array")

    @property
    def S(self) -> int:
        return self.values.shape[0]

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def check(self, box: UncertaintyBox, tol: float = 1e-9) -> "SampleSet":
        """Reject samples outside the box; returns ``self`` for chaining."""
        if self.values.shape[1:] != box.shape:
            raise DataError(f"samples have shape {self.values.shape[1:]}, box has {box.shape}")
        low = self.values < box.lower - tol
        high = self.values > box.upper + tol
        if low.any() or high.any():
            s, r, t = np.argwhere(low | high)[0]
            raise DataError(f"sample {s + 1} is outside the uncertainty box at unit {r}, period {t + 1}: "
                            f"{self.values[s, r, t]} not in [{box.lower[r, t]}, {box.upper[r, t]}]")
        return self

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.values[np.asarray(idx)], self.unit_ids)


def save_samples(path, samples: SampleSet):
    """Long-format CSV: one row per (scenario, unit, period); periods 1-based."""
    ids = samples.unit_ids or tuple(f"REG{r + 1}" for r in range(samples.values.shape[1]))
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(SAMPLE_COLUMNS)
        S, R, T = samples.values.shape
        for s in range(S):
            for r in range(R):
                for t in range(T):
                    wr.writerow([s + 1, ids[r], t + 1, repr(float(samples.values[s, r, t]))])


def load_samples(path, system: SystemData, box: UncertaintyBox | None = None) -> SampleSet:
    """Read long-format samples; every (scenario, unit, period) cell must be present once."""
    path = Path(path)
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames is None or tuple(f.strip() for f in rd.fieldnames) != SAMPLE_COLUMNS:
            raise DataError(f"{path}: header must be {','.join(SAMPLE_COLUMNS)}")
        rows = list(rd)
    ids = [u.id for u in system.reg_units]
    index = {u: k for k, u in enumerate(ids)}
    scen = sorted({r["scenario_id"].strip() for r in rows}, key=lambda x: (len(x), x))
    sidx = {s: k for k, s in enumerate(scen)}
    vals = np.full((len(scen), len(ids), system.horizon), np.nan)
    for n, row in enumerate(rows, start=2):
        unit = row["reg_unit_id"].strip()
        if unit not in index:
            raise DataError(f"{path}:{n}: unknown REG unit {unit!r}")
        try:
            t = int(row["period"]) - 1
            v = float(row["error_mw"])
        except ValueError as exc:
            raise DataError(f"{path}:{n}: {exc}") from exc
        if not 0 <= t < system.horizon:
            raise DataError(f"{path}:{n}: period {t + 1} outside 1..{system.horizon}")
        cell = (sidx[row["scenario_id"].strip()], index[unit], t)
        if not np.isnan(vals[cell]):
            raise DataError(f"{path}:{n}: duplicate entry")
        vals[cell] = v
    if np.isnan(vals).any():
        s, r, t = np.argwhere(np.isnan(vals))[0]
        raise DataError(f"{path}: missing value for scenario {scen[s]}, unit {ids[r]}, period {t + 1}")
    out = SampleSet(vals, tuple(ids))
    return out.check(box) if box is not None else out


# -- ambiguity set --------------------------------------------------------------

@dataclass(frozen=True)
class WassersteinConfig:
    epsilon: float
    beta: float = 100.0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.beta >= 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")

    def multiplier(self, S: int) -> float:
        return self.epsilon * max(S, self.beta)


@dataclass(frozen=True)
class OmegaBox(UncertaintyBox):
    """The box W intersected with the sample hull widened by ``eps*max(S, beta)``."""

    widening: float = 0.0


def omega(samples: SampleSet, cfg: WassersteinConfig, box: UncertaintyBox) -> OmegaBox:
    m = cfg.multiplier(samples.S)
    hi = np.minimum(box.upper, samples.values.max(axis=0) + m)
    lo = np.maximum(box.lower, samples.values.min(axis=0) - m)
    return OmegaBox(lo, hi, widening=m)


@dataclass(frozen=True)
class DiscreteDistribution:
    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if a.shape[0] != p.shape[0]:
            raise ValueError("one probability per atom is required")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to one")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "probs", p)

    @classmethod
    def empirical(cls, samples: SampleSet) -> "DiscreteDistribution":
        S = samples.S
        return cls(samples.values.reshape(S, -1), np.full(S, 1.0 / S))


def wasserstein_distance_discrete(P: DiscreteDistribution, Q: DiscreteDistribution) -> float:
    """Optimal transport cost between two discrete laws with 1-norm ground cost."""
    if P.atoms.shape[1] != Q.atoms.shape[1]:
        raise ValueError("atoms live in different dimensions")
    n, m = P.atoms.shape[0], Q.atoms.shape[0]
    cost = np.abs(P.atoms[:, None, :] - Q.atoms[None, :, :]).sum(axis=2)
    model = Model(name="transport")
    pi = model.add_variables(n * m, 0.0, np.inf, obj=cost.ravel())
    rows = sp.kron(sp.identity(n), np.ones((1, m)))
    cols = sp.kron(np.ones((1, n)), sp.identity(m))
    model.add_constraints(rows, pi, "==", P.probs)
    model.add_constraints(cols, pi, "==", Q.probs)
    sol = solve(model, SolveParams(feasibility_tol=1e-9))
    if sol.status != OPTIMAL:
        raise SolverError(f"transport LP is {sol.status}")
    return float(sol.objective)


# -- worst-case probability witness ----------------------------------------------

class WitnessUnreachable(ValueError):
    """The boundary of the widened box lies outside W, so no mass can be moved there."""


@dataclass(frozen=True)
class Witness:
    distribution: DiscreteDistribution
    transport_cost: Fraction
    mass_outside: Fraction
    coordinate: tuple[int, int]
    direction: int
    moved_fraction: Fraction


def tightness_witness(samples: SampleSet, cfg: WassersteinConfig, box: UncertaintyBox) -> Witness:
    """Distribution in the ball that puts ``1/max(S, beta)`` mass on the box boundary.

    The sample extreme in some coordinate moves a fraction ``min(1, S/beta)``
    of its atom straight to the boundary of the widened sample hull, a
    distance of ``eps*max(S, beta)``.  Quantities are exact rationals derived
    from the float inputs.
    """
    if cfg.epsilon <= 0:
        raise WitnessUnreachable("epsilon = 0 leaves no transport budget")
    S = samples.S
    vals = samples.values.reshape(S, -1)
    lo = box.lower.reshape(-1)
    hi = box.upper.reshape(-1)
    eps = Fraction(cfg.epsilon)
    big = max(Fraction(S), Fraction(cfg.beta))
    dist = eps * big
    alpha = min(Fraction(1), Fraction(S) / Fraction(cfg.beta))
    choice = None
    for j in range(vals.shape[1]):
        for direction in (1, -1):
            col = vals[:, j]
            s = int(np.argmax(col)) if direction == 1 else int(np.argmin(col))
            target = Fraction(col[s]) + direction * dist
            limit = Fraction(hi[j]) if direction == 1 else Fraction(lo[j])
            if (direction == 1 and target <= limit) or (direction == -1 and target >= limit):
                choice = (j, direction, s, target)
                break
        if choice:
            break
    if choice is None:
        raise WitnessUnreachable("every boundary of the widened hull is clipped by W")
    j, direction, s, target = choice
    moved = vals[s].copy()
    moved[j] = float(target)
    atoms = np.vstack([vals, moved[None, :]])
    probs_q = [Fraction(1, S)] * S + [alpha / S]
    probs_q[s] -= alpha / S
    keep = [k for k, p in enumerate(probs_q) if p > 0]
    dist_obj = DiscreteDistribution(atoms[keep], np.array([float(probs_q[k]) for k in keep]))
    transport = (alpha / S) * abs(target - Fraction(vals[s, j]))
    # mass on or beyond the boundary of the open widened box
    m = big * eps
    wa_hi = [Fraction(x) + m for x in vals.max(axis=0)]
    wa_lo = [Fraction(x) - m for x in vals.min(axis=0)]
    outside = Fraction(0)
    exact_atoms = [[Fraction(x) for x in row] for row in vals] + [[Fraction(x) for x in vals[s]]]
    exact_atoms[-1][j] = target
    for k in keep:
        a = exact_atoms[k]
        if any(a[i] >= wa_hi[i] or a[i] <= wa_lo[i] for i in range(len(a))):
            outside += probs_q[k]
    r, t = divmod(j, box.shape[1])
    return Witness(dist_obj, transport, outside, (r, t), direction, alpha)


# -- aggregated variation LP ----------------------------------------------------

@dataclass(frozen=True)
class GvBounds:
    z_plus: np.ndarray
    z_minus: np.ndarray


def gv_bounds(samples: SampleSet, om: UncertaintyBox) -> GvBounds:
    v = samples.values
    up = (om.upper[None] - v).sum(axis=(0, 1))
    dn = (v - om.lower[None]).sum(axis=(0, 1))
    return GvBounds(up, dn)


def _lp_value(model: Model) -> float:
    sol = solve(model, SolveParams(feasibility_tol=1e-9))
    if sol.status != OPTIMAL:
        raise SolverError(f"{model.name} is {sol.status}: {sol.message}")
    return sol


def gv_primal(c1, bounds: GvBounds, eps: float, S: int) -> float:
    c1 = np.asarray(c1, dtype=float)
    T = c1.size
    m = Model(sense="max", name="gv-primal")
    zp = m.add_variables(T, 0.0, bounds.z_plus, obj=c1 / S)
    zm = m.add_variables(T, 0.0, bounds.z_minus, obj=-c1 / S)
    m.add_constraint([(v, 1.0 / S) for v in zp] + [(v, 1.0 / S) for v in zm], "<=", eps)
    return float(_lp_value(m).objective)


def gv_disaggregated(c1, samples: SampleSet, om: UncertaintyBox, eps: float) -> float:
    """The per-(unit, sample, period) variation LP before aggregation."""
    c1 = np.asarray(c1, dtype=float)
    v = samples.values
    S, R, T = v.shape
    coef = np.broadcast_to(c1[None, None, :], v.shape).ravel() / S
    m = Model(sense="max", name="gv-disaggregated")
    vp = m.add_variables(v.size, 0.0, (om.upper[None] - v).ravel(), obj=coef)
    vm = m.add_variables(v.size, 0.0, (v - om.lower[None]).ravel(), obj=-coef)
    m.add_constraint([(k, 1.0 / S) for k in vp] + [(k, 1.0 / S) for k in vm], "<=", eps)
    return float(_lp_value(m).objective)


def gv_dual(c1, bounds: GvBounds, eps: float, S: int):
    """``(value, xi, xi_plus, xi_minus)`` of the dual of the aggregated LP."""
    c1 = np.asarray(c1, dtype=float)
    T = c1.size
    m = Model(name="gv-dual")
    xi = m.add_variable(0.0, np.inf, obj=eps)
    xp = m.add_variables(T, 0.0, np.inf, obj=bounds.z_plus)
    xm = m.add_variables(T, 0.0, np.inf, obj=bounds.z_minus)
    for t in range(T):
        m.add_constraint([(xi, 1.0), (xp[t], float(S))], ">=", c1[t])
        m.add_constraint([(xi, 1.0), (xm[t], float(S))], ">=", -c1[t])
    sol = _lp_value(m)
    return float(sol.objective), float(sol.x[xi]), sol.x[xp].copy(), sol.x[xm].copy()


def gc(policy, samples: SampleSet, cost_fns) -> float:
    """Empirical mean of the affine-policy cost."""
    c1 = cost_fns.c1(policy)
    c0 = cost_fns.c0(policy)
    m = samples.values.sum(axis=1).mean(axis=0)
    return float(c1 @ m + c0.sum())


# -- exact WDRUC ------------------------------------------------------------------

def _grid(center, lo, hi, tol=1e-9):
    """Points of ``prod_r {lo_r, center_r, hi_r}`` (duplicates removed per axis)."""
    axes = []
    for c, a, b in zip(center, lo, hi):
        axes.append(sorted({float(a), float(c), float(b)}) if b - a > tol else [float(a)])
    return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(center))


def _grid_size(center, lo, hi, tol=1e-9) -> int:
    n = 1
    for c, a, b in zip(center, lo, hi):
        n *= len({float(a), float(c), float(b)}) if b - a > tol else 1
    return n


def _penalized_max(plp, center, lo, hi, lam, cache):
    """Maximize ``f(w) - lam*|w - center|_1`` over the box ``[lo, hi]``.

    On each orthant piece around ``center`` the objective is convex, so the
    maximum is on the grid ``{lo, center, hi}^k``.
    """
    if _grid_size(center, lo, hi) <= (1 << ENUM_LIMIT):
        G = _grid(center, lo, hi)
        f = cache(G)
        vals = f - lam * np.abs(G - center).sum(axis=1)
        k = int(np.argmax(vals))
        return float(vals[k]), G[k]
    eff = np.flatnonzero(hi - lo > 1e-9)
    R, k = center.size, eff.size
    D = np.zeros((R, 2 * k))
    D[eff, np.arange(k)] = (hi - center)[eff]
    D[eff, k + np.arange(k)] = -(center - lo)[eff]
    pen = lam * np.concatenate([(hi - center)[eff], (center - lo)[eff]])
    rows = []
    for j in range(k):
        coeffs = np.zeros(2 * k)
        coeffs[[j, k + j]] = 1.0
        rows.append((coeffs, "<=", 1.0))
    val, _, w = max_value_binary_affine(plp, center, D, penalty=pen, z_rows=rows)
    return val, w


def _best_lambda(fvals, dists, eps, S):
    """Minimize ``lam*eps + (1/S) sum_j max_k (f_jk - lam d_jk)`` over ``lam >= 0``.

    ``fvals[j]``/``dists[j]`` are arrays over the candidate points of group j.
    """
    m = Model(name="lambda")
    lam = m.add_variable(0.0, np.inf, obj=eps)
    eta = m.add_variables(len(fvals), -np.inf, np.inf, obj=1.0 / S)
    for j, (f, d) in enumerate(zip(fvals, dists)):
        for fk, dk in zip(f, d):
            m.add_constraint([(eta[j], 1.0), (lam, dk)], ">=", fk)
    sol = solve(m, SolveParams(feasibility_tol=1e-9))
    if sol.status != OPTIMAL:
        raise SolverError(f"lambda LP is {sol.status}")
    return float(sol.objective), float(sol.x[lam])


def solve_ewdruc(system: SystemData, wf: np.ndarray, samples: SampleSet, cfg: WassersteinConfig,
                 box: UncertaintyBox, settings: CCGSettings | None = None) -> RobustSolution:
    """Exact Wasserstein DRUC by constraint generation on its finite reformulation.

    Because both the recourse cost and the transport penalty separate over
    periods, the per-sample epigraph variable is split into one per period.
    Each pooled error vector carries one recourse copy shared by all samples.
    """
    st = settings or CCGSettings()
    t0 = time.perf_counter()
    samples.check(box)
    S, T = samples.S, system.horizon
    om = omega(samples, cfg, box)
    rm = RecourseMaster(system, wf, name="ewdruc-master")
    model = rm.model
    lam = model.add_variable(0.0, np.inf, obj=cfg.epsilon, name="lambda")
    eta = model.add_variables(S * T, -np.inf, np.inf, obj=1.0 / S, name="eta").reshape(S, T)
    pool = ScenarioPool(om)
    wpool = ScenarioPool(box)
    W = samples.values

    def add_point(t, w):
        if not pool.add(t, w, OPTIMALITY):
            return False
        ids = rm.add_block(t, w)
        c = rm.plps[t].c
        for s in range(S):
            d = float(np.abs(w - W[s, :, t]).sum())
            model.add_constraint([(eta[s, t], 1.0), (lam, d)] + [(v, -cv) for v, cv in zip(ids, c)], ">=", 0.0)
        return True

    def add_feasibility(t, w):
        if wpool.add(t, w, FEASIBILITY):
            rm.add_block(t, w)
            return True
        return False

    for t in range(T):
        for s in range(S):
            add_point(t, W[s, :, t])
        lo, hi = om.period(t)
        add_point(t, lo)
        add_point(t, hi)
        if st.seed_vertices:
            lo, hi = box.period(t)
            add_feasibility(t, lo)
            add_feasibility(t, hi)

    lb, ub = -np.inf, np.inf
    best = None
    history = []
    converged = False
    it = 0
    while it < st.max_iter:
        it += 1
        sol = solve(model, st.params)
        if sol.x is None:
            raise RobustInfeasible(f"E-WDRUC master is {sol.status}: {sol.message}")
        bound = sol.dual_bound if sol.dual_bound is not None and np.isfinite(sol.dual_bound) else sol.objective
        lb = max(lb, float(bound))
        on, start, stop, ranges = rm.first.extract(sol)
        viol, wit, per = feasibility_subproblem(system, ranges, wf, box)
        if viol > FEAS_TOL:
            added = False
            for t in np.flatnonzero(per > FEAS_TOL):
                added |= add_feasibility(int(t), wit[:, t])
            history.append((it, lb, ub, viol))
            if not added:
                raise RobustInfeasible("feasibility witness already in the pool; master tolerance too loose")
            continue
        lam_k = float(sol.x[lam])
        fvals, dists, new_pts = [], [], []
        for t in range(T):
            plp = period_lp(system, wf, t).with_range(ranges.lower[:, t], ranges.upper[:, t])
            lo, hi = om.period(t)
            memo = {}

            def cache(G, plp=plp, memo=memo):
                keys = [g.tobytes() for g in G]
                todo = [g for g, key in zip(G, keys) if key not in memo]
                if todo:
                    vals = period_costs(plp, np.array(todo))
                    for g, v in zip(todo, vals):
                        memo[g.tobytes()] = v
                return np.array([memo[key] for key in keys])

            for s in range(S):
                c = W[s, :, t]
                _, w_best = _penalized_max(plp, c, lo, hi, lam_k, cache)
                new_pts.append((t, w_best))
                if _grid_size(c, lo, hi) <= (1 << ENUM_LIMIT):
                    G = _grid(c, lo, hi)
                    fvals.append(cache(G))
                    dists.append(np.abs(G - c).sum(axis=1))
                else:
                    # fallback: candidates are the pooled points plus the new maximizer
                    G = np.array(pool.points(t) + [w_best])
                    fvals.append(cache(G))
                    dists.append(np.abs(G - c).sum(axis=1))
        if any(not np.all(np.isfinite(f)) for f in fvals):
            raise SolverError("recourse infeasible inside Omega despite a feasibility certificate")
        second, lam_best = _best_lambda(fvals, dists, cfg.epsilon, S)
        fixed = commitment_cost(system, on, start, stop)
        cand = fixed + second
        if cand < ub:
            ub = cand
            best = (on, start, stop, ranges, fixed, lam_best)
        history.append((it, lb, ub, 0.0))
        log.debug("ewdruc it %d: lb %.6f ub %.6f", it, lb, ub)
        if relative_gap(lb, ub) <= st.gap:
            converged = True
            break
        added = False
        for t, w in new_pts:
            added |= add_point(t, w)
        if not added:
            converged = relative_gap(lb, ub) <= max(st.gap, st.params.mip_gap)
            break
    if best is None:
        raise RobustInfeasible("no certified E-WDRUC solution within the iteration limit")
    on, start, stop, ranges, fixed, lam_best = best
    return RobustSolution(on, start, stop, ranges, ub, lb, it, len(pool), fixed_cost=fixed, certified=True,
                          converged=converged, history=history,
                          extra=dict(rows=model.n_rows, cols=model.n_vars, wall_time=time.perf_counter() - t0,
                                     lam=lam_best, feasibility_cuts=len(wpool), omega=om))
