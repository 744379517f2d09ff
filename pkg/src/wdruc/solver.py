"""Backend-agnostic LP/MILP models.

Every optimization problem in the package is assembled into a :class:`Model`
and handed to a backend through :func:`solve`.  Two open-source backends are
registered: ``"highs"`` (HiGHS through :mod:`scipy.optimize`) and ``"glpk"``
(GLPK through :mod:`cvxopt`, optional).

Dual values follow one convention regardless of backend or objective sense:
``duals[i]`` is the sensitivity of the optimal objective to the right-hand
side of constraint ``i``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

INF = math.inf

LE, EQ, GE = "<=", "==", ">="
_REL_CODE = {LE: -1, "<": -1, EQ: 0, "=": 0, GE: 1, ">": 1}

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
LIMIT = "limit"


class ModelError(ValueError):
    """Raised for malformed model input (bad bounds, unknown ids...)."""


class SolverError(RuntimeError):
    """Raised when a backend fails without a usable status."""


@dataclass(frozen=True)
class SolveParams:
    mip_gap: float = 1e-4
    feasibility_tol: float = 1e-6
    time_limit: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if not self.mip_gap >= 0:
            raise ValueError(f"mip_gap must be nonnegative, got {self.mip_gap}")
        if not self.feasibility_tol > 0:
            raise ValueError(f"feasibility_tol must be positive, got {self.feasibility_tol}")
        if self.time_limit is not None and not self.time_limit > 0:
            raise ValueError(f"time_limit must be positive, got {self.time_limit}")


@dataclass
class Solution:
    status: str
    objective: float | None = None
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    dual_objective: float | None = None
    dual_bound: float | None = None
    rows: int = 0
    cols: int = 0
    wall_time: float = 0.0
    backend: str = ""
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL

    def value(self, ids):
        if self.x is None:
            raise SolverError(f"no primal values (status {self.status}: {self.message})")
        return self.x[ids]


@dataclass
class _Arrays:
    A: sp.csr_matrix
    rel: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c: np.ndarray
    integral: np.ndarray
    trivially_infeasible: bool
    kept_rows: np.ndarray


class Model:
    """A linear or mixed-integer linear program under construction.

    Variables and constraints are identified by consecutive integers starting
    at zero, stable for the model's lifetime.  Duplicate variables inside one
    constraint have their coefficients summed.
    """

    def __init__(self, sense: str = "min", name: str = "model"):
        if sense not in ("min", "max"):
            raise ModelError(f"objective sense must be 'min' or 'max', got {sense!r}")
        self.sense = sense
        self.name = name
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._obj: list[float] = []
        self._int: list[bool] = []
        self._var_names: list[tuple[int, int, str]] = []
        self._chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._rel: list[np.ndarray] = []
        self._rhs: list[np.ndarray] = []
        self._row_names: list[tuple[int, int, str]] = []
        self._n_rows = 0
        self._cache: _Arrays | None = None

    # -- sizes -------------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self._lb)

    @property
    def n_rows(self) -> int:
        return self._n_rows

    @property
    def is_mip(self) -> bool:
        return any(self._int)

    # -- variables ---------------------------------------------------------
    def add_variable(self, lower=0.0, upper=INF, integral=False, obj=0.0, name=None) -> int:
        lower = -INF if lower is None else float(lower)
        upper = INF if upper is None else float(upper)
        if lower > upper:
            raise ModelError(f"inverted bounds [{lower}, {upper}] for variable {name or self.n_vars}")
        vid = self.n_vars
        self._lb.append(lower)
        self._ub.append(upper)
        self._obj.append(float(obj))
        self._int.append(bool(integral))
        if name:
            self._var_names.append((vid, vid + 1, name))
        self._cache = None
        return vid

    def add_variables(self, n, lower=0.0, upper=INF, integral=False, obj=0.0, name=None) -> np.ndarray:
        """Add ``n`` variables at once; bounds and costs broadcast."""
        n = int(n)
        lo = np.broadcast_to(np.asarray(-INF if lower is None else lower, dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(INF if upper is None else upper, dtype=float), (n,))
        if np.any(lo > hi):
            bad = int(np.argmax(lo > hi))
            raise ModelError(f"inverted bounds [{lo[bad]}, {hi[bad]}] for variable {name or ''}[{bad}]")
        start = self.n_vars
        self._lb.extend(lo.tolist())
        self._ub.extend(hi.tolist())
        self._obj.extend(np.broadcast_to(np.asarray(obj, dtype=float), (n,)).tolist())
        self._int.extend(np.broadcast_to(np.asarray(integral, dtype=bool), (n,)).tolist())
        if name:
            self._var_names.append((start, start + n, name))
        self._cache = None
        return np.arange(start, start + n)

    def set_bounds(self, vid: int, lower=None, upper=None):
        lo = self._lb[vid] if lower is None else float(lower)
        hi = self._ub[vid] if upper is None else float(upper)
        if lo > hi:
            raise ModelError(f"inverted bounds [{lo}, {hi}] for variable {vid}")
        self._lb[vid], self._ub[vid] = lo, hi
        self._cache = None

    def set_objective(self, ids, coeffs, add=False):
        ids = np.atleast_1d(np.asarray(ids, dtype=int))
        coeffs = np.broadcast_to(np.asarray(coeffs, dtype=float), ids.shape)
        for i, v in zip(ids.tolist(), coeffs.tolist()):
            self._check_id(i)
            self._obj[i] = self._obj[i] + v if add else v
        self._cache = None

    def objective_vector(self) -> np.ndarray:
        return np.asarray(self._obj, dtype=float)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self._lb, dtype=float), np.asarray(self._ub, dtype=float)

    def var_name(self, vid: int) -> str:
        for start, stop, name in self._var_names:
            if start <= vid < stop:
                return name if stop - start == 1 else f"{name}[{vid - start}]"
        return f"x{vid}"

    def _check_id(self, vid):
        if not 0 <= vid < self.n_vars:
            raise ModelError(f"unknown variable id {vid} in model {self.name!r}")

    # -- constraints -------------------------------------------------------
    def add_constraint(self, terms: Iterable[tuple[int, float]], relation: str, rhs: float, name=None) -> int:
        terms = list(terms)
        cols = np.fromiter((int(t[0]) for t in terms), dtype=np.int64, count=len(terms))
        vals = np.fromiter((float(t[1]) for t in terms), dtype=float, count=len(terms))
        return int(self._append(np.zeros(len(terms), dtype=np.int64), cols, vals, 1, relation, [rhs], name)[0])

    def add_constraints(self, matrix, cols: Sequence[int], relation, rhs, name=None) -> np.ndarray:
        """Add ``m`` rows ``matrix @ x[cols] (relation) rhs`` at once.

        ``relation`` is a single relation string or one per row.
        """
        M = sp.coo_matrix(matrix)
        cols = np.asarray(cols, dtype=np.int64)
        if M.shape[1] != cols.shape[0]:
            raise ModelError(f"matrix has {M.shape[1]} columns but {cols.shape[0]} variable ids were given")
        return self._append(M.row.astype(np.int64), cols[M.col], M.data.astype(float), M.shape[0], relation, rhs, name)

    def _append(self, rows, cols, vals, m, relation, rhs, name):
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_vars):
            bad = cols[(cols < 0) | (cols >= self.n_vars)][0]
            raise ModelError(f"unknown variable id {int(bad)} in constraint {name or self._n_rows}")
        if isinstance(relation, str):
            try:
                rel = np.full(m, _REL_CODE[relation], dtype=np.int8)
            except KeyError:
                raise ModelError(f"unknown relation {relation!r}") from None
        else:
            try:
                rel = np.array([_REL_CODE[r] for r in relation], dtype=np.int8)
            except KeyError as exc:
                raise ModelError(f"unknown relation {exc.args[0]!r}") from None
        rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (m,)).copy()
        if rel.shape[0] != m:
            raise ModelError(f"{rel.shape[0]} relations for {m} rows")
        if np.any(np.isnan(rhs)):
            raise ModelError(f"NaN right-hand side in constraint {name or self._n_rows}")
        start = self._n_rows
        self._chunks.append((rows + start, cols, vals))
        self._rel.append(rel)
        self._rhs.append(rhs)
        if name:
            self._row_names.append((start, start + m, name))
        self._n_rows += m
        self._cache = None
        return np.arange(start, start + m)

    def row_name(self, rid: int) -> str:
        for start, stop, name in self._row_names:
            if start <= rid < stop:
                return name if stop - start == 1 else f"{name}[{rid - start}]"
        return f"r{rid}"

    # -- export ------------------------------------------------------------
    def arrays(self) -> _Arrays:
        if self._cache is not None:
            return self._cache
        n, m = self.n_vars, self._n_rows
        if self._chunks:
            rows = np.concatenate([c[0] for c in self._chunks])
            cols = np.concatenate([c[1] for c in self._chunks])
            vals = np.concatenate([c[2] for c in self._chunks])
            rel = np.concatenate(self._rel)
            rhs = np.concatenate(self._rhs)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
            rel = np.zeros(0, dtype=np.int8)
            rhs = np.zeros(0)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
        A.sum_duplicates()
        A.eliminate_zeros()
        nnz = np.diff(A.indptr)
        empty = nnz == 0
        # empty rows are checked here instead of being passed to the backend
        bad = empty & (((rel == -1) & (rhs < 0)) | ((rel == 1) & (rhs > 0)) | ((rel == 0) & (rhs != 0)))
        kept = np.flatnonzero(~empty)
        self._cache = _Arrays(
            A=A[kept] if empty.any() else A,
            rel=rel[kept],
            rhs=rhs[kept],
            lb=np.asarray(self._lb, dtype=float),
            ub=np.asarray(self._ub, dtype=float),
            c=np.asarray(self._obj, dtype=float),
            integral=np.asarray(self._int, dtype=bool),
            trivially_infeasible=bool(bad.any()),
            kept_rows=kept,
        )
        return self._cache

    def row_activity(self, x) -> np.ndarray:
        """``A @ x`` over all rows, including empty ones."""
        arr = self.arrays()
        act = np.zeros(self._n_rows)
        act[arr.kept_rows] = arr.A @ np.asarray(x, dtype=float)
        return act

    def rhs(self) -> np.ndarray:
        return np.concatenate(self._rhs) if self._rhs else np.zeros(0)

    def relations(self) -> np.ndarray:
        return np.concatenate(self._rel) if self._rel else np.zeros(0, dtype=np.int8)

    def solve(self, params: SolveParams | None = None, backend: str | None = None) -> Solution:
        return solve(self, params, backend)


# -- backends ---------------------------------------------------------------

class Backend:
    name = "abstract"

    def solve(self, model: Model, params: SolveParams) -> Solution:  # pragma: no cover
        raise NotImplementedError


def _finish_duals(model, arr, sol, row_duals_kept, low_marg, up_marg, sign):
    """Expand duals to all rows and compute the dual objective."""
    duals = np.zeros(model.n_rows)
    duals[arr.kept_rows] = sign * row_duals_kept
    sol.duals = duals
    low = sign * low_marg
    up = sign * up_marg
    dual_obj = float(arr.rhs @ duals[arr.kept_rows])
    fin_lo = np.isfinite(arr.lb)
    fin_up = np.isfinite(arr.ub)
    dual_obj += float(arr.lb[fin_lo] @ low[fin_lo]) + float(arr.ub[fin_up] @ up[fin_up])
    sol.dual_objective = dual_obj


class HighsBackend(Backend):
    """HiGHS through scipy: ``linprog`` for LPs (duals), ``milp`` for MILPs."""

    name = "highs"

    def solve(self, model: Model, params: SolveParams) -> Solution:
        from scipy.optimize import Bounds, LinearConstraint, linprog, milp

        arr = model.arrays()
        sign = -1.0 if model.sense == "max" else 1.0
        c = sign * arr.c
        sol = Solution(status="", rows=model.n_rows, cols=model.n_vars, backend=self.name)
        if model.n_vars == 0:
            sol.status, sol.objective, sol.x = OPTIMAL, 0.0, np.zeros(0)
            sol.duals = np.zeros(model.n_rows)
            sol.dual_objective = 0.0
            return sol
        if arr.integral.any():
            lo = np.where(arr.rel == -1, -INF, arr.rhs)
            hi = np.where(arr.rel == 1, INF, arr.rhs)
            cons = LinearConstraint(arr.A, lo, hi) if arr.A.shape[0] else None
            opts = {"disp": False, "presolve": True, "mip_rel_gap": params.mip_gap}
            if params.time_limit is not None:
                opts["time_limit"] = params.time_limit
            res = milp(c, integrality=arr.integral.astype(int), bounds=Bounds(arr.lb, arr.ub),
                       constraints=cons, options=opts)
            sol.message = res.message
            if res.status == 0:
                sol.status = OPTIMAL
            elif res.status == 1:
                sol.status = LIMIT
            elif res.status == 2:
                sol.status = INFEASIBLE
            elif res.status == 3:
                sol.status = UNBOUNDED
            else:
                raise SolverError(f"HiGHS failed on {model.name!r}: {res.message}")
            if res.x is not None:
                sol.x = np.asarray(res.x)
                sol.objective = sign * float(res.fun)
                if getattr(res, "mip_dual_bound", None) is not None:
                    sol.dual_bound = sign * float(res.mip_dual_bound)
            return sol

        ub_mask = arr.rel != 0
        A_ub = arr.A[ub_mask]
        flip = np.where(arr.rel[ub_mask] == 1, -1.0, 1.0)
        A_ub = sp.diags(flip) @ A_ub
        b_ub = flip * arr.rhs[ub_mask]
        eq_mask = ~ub_mask
        opts = {"primal_feasibility_tolerance": params.feasibility_tol * 1e-1,
                "dual_feasibility_tolerance": params.feasibility_tol * 1e-1,
                "presolve": True}
        if params.time_limit is not None:
            opts["time_limit"] = params.time_limit
        res = linprog(
            c,
            A_ub=A_ub if A_ub.shape[0] else None,
            b_ub=b_ub if A_ub.shape[0] else None,
            A_eq=arr.A[eq_mask] if eq_mask.any() else None,
            b_eq=arr.rhs[eq_mask] if eq_mask.any() else None,
            bounds=np.column_stack([np.where(np.isfinite(arr.lb), arr.lb, -np.inf),
                                    np.where(np.isfinite(arr.ub), arr.ub, np.inf)]),
            method="highs",
            options=opts,
        )
        sol.message = res.message
        if res.status == 0:
            sol.status = OPTIMAL
        elif res.status == 1:
            sol.status = LIMIT
        elif res.status == 2:
            sol.status = INFEASIBLE
        elif res.status == 3:
            sol.status = UNBOUNDED
        else:
            raise SolverError(f"HiGHS failed on {model.name!r}: {res.message}")
        if sol.status == OPTIMAL:
            sol.x = np.asarray(res.x)
            sol.objective = sign * float(res.fun)
            row = np.zeros(arr.A.shape[0])
            if A_ub.shape[0]:
                row[ub_mask] = flip * res.ineqlin.marginals
            if eq_mask.any():
                row[eq_mask] = res.eqlin.marginals
            _finish_duals(model, arr, sol, row, res.lower.marginals, res.upper.marginals, sign)
        return sol


class GlpkBackend(Backend):
    """GLPK through cvxopt.  Bounds are passed as rows; MILP duals are not produced."""

    name = "glpk"

    def solve(self, model: Model, params: SolveParams) -> Solution:
        try:
            from cvxopt import glpk, matrix, spmatrix
        except ImportError as exc:  # pragma: no cover
            raise SolverError("the glpk backend needs cvxopt (pip install cvxopt)") from exc

        arr = model.arrays()
        n = model.n_vars
        sign = -1.0 if model.sense == "max" else 1.0
        sol = Solution(status="", rows=model.n_rows, cols=n, backend=self.name)
        if n == 0:
            sol.status, sol.objective, sol.x = OPTIMAL, 0.0, np.zeros(0)
            sol.duals = np.zeros(model.n_rows)
            sol.dual_objective = 0.0
            return sol
        ub_mask = arr.rel != 0
        flip = np.where(arr.rel[ub_mask] == 1, -1.0, 1.0)
        G_rows = sp.diags(flip) @ arr.A[ub_mask]
        h_rows = flip * arr.rhs[ub_mask]
        fin_lo = np.flatnonzero(np.isfinite(arr.lb))
        fin_up = np.flatnonzero(np.isfinite(arr.ub))
        G = sp.vstack([
            G_rows,
            sp.csr_matrix((-np.ones(fin_lo.size), (np.arange(fin_lo.size), fin_lo)), shape=(fin_lo.size, n)),
            sp.csr_matrix((np.ones(fin_up.size), (np.arange(fin_up.size), fin_up)), shape=(fin_up.size, n)),
        ]).tocoo()
        h = np.concatenate([h_rows, -arr.lb[fin_lo], arr.ub[fin_up]])
        if G.shape[0] == 0:
            G = sp.coo_matrix((np.zeros(1), ([0], [0])), shape=(1, n))
            h = np.ones(1)
        Aeq = arr.A[~ub_mask].tocoo()
        beq = arr.rhs[~ub_mask]

        def spm(M):
            return spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), size=M.shape)

        c = matrix((sign * arr.c).tolist(), (n, 1), "d")
        Gm, hm = spm(G), matrix(h.tolist(), (len(h), 1), "d")
        Am = spm(Aeq) if Aeq.shape[0] else spmatrix([], [], [], (0, n))
        bm = matrix(beq.tolist(), (len(beq), 1), "d")
        opts = {"msg_lev": "GLP_MSG_OFF"}
        if params.time_limit is not None:
            opts["tm_lim"] = int(params.time_limit * 1000)
        if arr.integral.any():
            opts["mip_gap"] = params.mip_gap
            idx = np.flatnonzero(arr.integral)
            binary = {int(i) for i in idx if arr.lb[i] == 0.0 and arr.ub[i] == 1.0}
            integer = {int(i) for i in idx} - binary
            status, x = glpk.ilp(c, Gm, hm, Am, bm, integer, binary, options=opts)
            sol.message = status
            if status == "optimal":
                sol.status = OPTIMAL
            elif status in ("feasible", "undefined"):
                sol.status = LIMIT
            elif status in ("infeasible problem", "LP relaxation is primal infeasible"):
                sol.status = INFEASIBLE
            elif status == "LP relaxation is dual infeasible":
                sol.status = UNBOUNDED
            else:
                raise SolverError(f"GLPK failed on {model.name!r}: {status}")
            if x is not None:
                sol.x = np.array(x).ravel()
                sol.objective = float(arr.c @ sol.x)
            return sol

        status, x, z, y = glpk.lp(c, Gm, hm, Am, bm, options=opts)
        sol.message = status
        if status == "optimal":
            sol.status = OPTIMAL
        elif status == "primal infeasible":
            sol.status = INFEASIBLE
        elif status == "dual infeasible":
            sol.status = UNBOUNDED
        else:
            raise SolverError(f"GLPK failed on {model.name!r}: {status}")
        if sol.status == OPTIMAL:
            sol.x = np.array(x).ravel()
            sol.objective = float(arr.c @ sol.x)
            z = -np.array(z).ravel()  # d(obj)/d(h) for G x <= h
            y = -np.array(y).ravel() if Aeq.shape[0] else np.zeros(0)
            m_ub = G_rows.shape[0]
            row = np.zeros(arr.A.shape[0])
            row[ub_mask] = flip * z[:m_ub]
            row[~ub_mask] = y
            low = np.zeros(n)
            up = np.zeros(n)
            low[fin_lo] = -z[m_ub:m_ub + fin_lo.size]
            up[fin_up] = z[m_ub + fin_lo.size:m_ub + fin_lo.size + fin_up.size]
            _finish_duals(model, arr, sol, row, low, up, sign)
        return sol


_BACKENDS: dict[str, Backend] = {"highs": HighsBackend(), "glpk": GlpkBackend()}
_default_backend = "highs"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def set_default_backend(name: str):
    global _default_backend
    get_backend(name)
    _default_backend = name


def default_backend() -> str:
    return _default_backend


def get_backend(name: str | None = None) -> Backend:
    name = name or _default_backend
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown solver backend {name!r}; choose from {available_backends()}") from None


def solve(model: Model, params: SolveParams | None = None, backend: str | None = None) -> Solution:
    """Solve ``model`` with the named (or default) backend."""
    params = params or SolveParams()
    be = get_backend(backend)
    arr = model.arrays()
    t0 = time.perf_counter()
    if arr.trivially_infeasible:
        sol = Solution(status=INFEASIBLE, rows=model.n_rows, cols=model.n_vars, backend=be.name,
                       message="an empty constraint row is violated")
    else:
        sol = be.solve(model, params)
    sol.wall_time = time.perf_counter() - t0
    logger.debug("%s: %s rows=%d cols=%d obj=%s (%.3fs)", model.name, sol.status,
                 sol.rows, sol.cols, sol.objective, sol.wall_time)
    return sol
