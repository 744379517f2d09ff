"""Reference computations written independently of the library's model builders.

Each one works from raw system fields and plain scipy/numpy so that a bug in
the package cannot hide in both the code under test and its check.
"""

import itertools

import numpy as np
from scipy.optimize import linprog


# -- network -------------------------------------------------------------------------

def ptdf_via_angles(system):
    """Shift factors by solving B·theta = p with the Laplacian pseudo-inverse."""
    buses = list(system.buses)
    pos = {b: k for k, b in enumerate(buses)}
    n = len(buses)
    lap = np.zeros((n, n))
    for ln in system.lines:
        a, b, y = pos[ln.from_bus], pos[ln.to_bus], 1.0 / ln.reactance
        lap[a, a] += y
        lap[b, b] += y
        lap[a, b] -= y
        lap[b, a] -= y
    pinv = np.linalg.pinv(lap)
    ref = pos[system.reference_bus]
    out = np.zeros((n, len(system.lines)))
    for k in range(n):
        p = np.zeros(n)
        p[k] += 1.0
        p[ref] -= 1.0
        theta = pinv @ p
        for l, ln in enumerate(system.lines):
            out[k, l] = (theta[pos[ln.from_bus]] - theta[pos[ln.to_bus]]) / ln.reactance
    return out


# -- recourse ------------------------------------------------------------------------

def dispatch_lp(system, lower, upper, wf, w):
    """Monolithic recourse LP over every period, built from the system fields.

    Returns the optimal cost, or ``None`` when infeasible.
    """
    T = system.horizon
    gens, loads, regs = system.generators, system.loads, system.reg_units
    G, K, R = len(gens), len(loads), len(regs)
    buses = list(system.buses)
    pos = {b: k for k, b in enumerate(buses)}
    F = ptdf_via_angles(system)
    nv = G + K + R
    c, bounds, A_eq, b_eq, A_ub, b_ub = [], [], [], [], [], []
    for t in range(T):
        off = t * nv
        c += [g.marginal_cost for g in gens] + [ld.shed_cost for ld in loads] + [r.curtail_cost for r in regs]
        bounds += [(lower[i, t], upper[i, t]) for i in range(G)]
        bounds += [(0.0, ld.demand[t] if ld.sheddable else 0.0) for ld in loads]
        bounds += [(0.0, max(wf[r, t] + w[r, t], 0.0)) for r in range(R)]
        # injection per bus = A_inj @ x + const
        inj = np.zeros((len(buses), T * nv))
        const = np.zeros(len(buses))
        for i, g in enumerate(gens):
            inj[pos[g.bus], off + i] += 1.0
        for k, ld in enumerate(loads):
            inj[pos[ld.bus], off + G + k] += 1.0
            const[pos[ld.bus]] -= ld.demand[t]
        for r, reg in enumerate(regs):
            inj[pos[reg.bus], off + G + K + r] -= 1.0
            const[pos[reg.bus]] += wf[r, t] + w[r, t]
        A_eq.append(inj.sum(axis=0))
        b_eq.append(-const.sum())
        flows = F.T @ inj
        fconst = F.T @ const
        for l, ln in enumerate(system.lines):
            A_ub.append(flows[l])
            b_ub.append(ln.capacity - fconst[l])
            A_ub.append(-flows[l])
            b_ub.append(ln.capacity + fconst[l])
    res = linprog(np.array(c), A_ub=np.array(A_ub) if A_ub else None, b_ub=np.array(b_ub) if b_ub else None,
                  A_eq=np.array(A_eq), b_eq=np.array(b_eq), bounds=bounds, method="highs")
    if res.status == 2:
        return None
    assert res.status == 0, res.message
    return float(res.fun)


# -- commitment replay ---------------------------------------------------------------

def replay_first_stage(system, on, start, stop, lower, upper, tol=1e-6):
    """Check status logic, minimum up/down times and the dispatch-range rows.

    Returns a list of human-readable violations (empty when all hold).
    """
    bad = []
    T = system.horizon
    for i, g in enumerate(system.generators):
        init = 1 if g.initial_on else 0
        status = np.concatenate([[init], on[i]])  # status[t] is the status before period t
        prev_lo = prev_up = g.initial_output
        for t in range(T):
            u, su, sd, prev_on = on[i, t], start[i, t], stop[i, t], status[t]
            if {u, su, sd} - {0, 1}:
                bad.append(f"{g.id} t{t}: non-binary status")
            if su < u - prev_on or sd < prev_on - u or u + sd > 1 or prev_on + su > 1:
                bad.append(f"{g.id} t{t}: start/stop logic")
            for tau in range(t, min(t + g.min_up, T)):
                if u - prev_on > on[i, tau]:
                    bad.append(f"{g.id} t{t}: min up time")
            for tau in range(t, min(t + g.min_down, T)):
                if prev_on - u > 1 - on[i, tau]:
                    bad.append(f"{g.id} t{t}: min down time")
            lo, up = lower[i, t], upper[i, t]
            if not (g.p_min * u - tol <= lo <= up + tol and up <= g.p_max * u + tol):
                bad.append(f"{g.id} t{t}: range nesting")
            if up - prev_lo > g.ramp_up * prev_on + g.startup_ramp * su + tol:
                bad.append(f"{g.id} t{t}: ramp up")
            if prev_up - lo > g.ramp_down * u + g.shutdown_ramp * sd + tol:
                bad.append(f"{g.id} t{t}: ramp down")
            prev_on, prev_lo, prev_up = u, lo, up
    return bad


def ramp_extremes_ok(system, on, start, stop, lower, upper, tol=1e-6):
    """Any per-period choice inside the ranges meets the ramp rows: check the extreme pairs."""
    for i, g in enumerate(system.generators):
        for t in range(1, system.horizon):
            for a, b in itertools.product((lower[i, t - 1], upper[i, t - 1]), (lower[i, t], upper[i, t])):
                if b - a > g.ramp_up * on[i, t - 1] + g.startup_ramp * start[i, t] + tol:
                    return False
                if a - b > g.ramp_down * on[i, t] + g.shutdown_ramp * stop[i, t] + tol:
                    return False
    return True


# -- Wasserstein --------------------------------------------------------------------

def transport_cost(atoms_p, probs_p, atoms_q, probs_q):
    """1-Wasserstein distance with 1-norm ground cost, as a dense transport LP."""
    P = np.asarray(atoms_p, dtype=float).reshape(len(probs_p), -1)
    Q = np.asarray(atoms_q, dtype=float).reshape(len(probs_q), -1)
    m, n = len(probs_p), len(probs_q)
    cost = np.abs(P[:, None, :] - Q[None, :, :]).sum(axis=2).ravel()
    A = np.zeros((m + n, m * n))
    for a in range(m):
        A[a, a * n:(a + 1) * n] = 1.0
    for b in range(n):
        A[m + b, b::n] = 1.0
    res = linprog(cost, A_eq=A, b_eq=np.concatenate([probs_p, probs_q]), bounds=(0, None), method="highs",
                  options=dict(primal_feasibility_tolerance=1e-10, dual_feasibility_tolerance=1e-10))
    assert res.status == 0
    return float(res.fun)


def gv_greedy(c1, z_plus, z_minus, eps, S):
    """Fractional-knapsack optimum of the aggregated worst-case LP.

    Budget ``S*eps`` of z-mass; each unit of z^+_t earns c1_t/S, each unit of
    z^-_t earns -c1_t/S, so fill the largest gains first.
    """
    items = []
    for t, c in enumerate(c1):
        items.append((c, z_plus[t]))
        items.append((-c, z_minus[t]))
    items.sort(key=lambda it: -it[0])
    budget = S * eps
    val = 0.0
    for gain, cap in items:
        if gain <= 0 or budget <= 0:
            break
        take = min(cap, budget)
        val += gain * take
        budget -= take
    return val / S


def box_vertex_max(fun, lo, hi):
    """Maximize ``fun`` over the vertices of the box ``[lo, hi]``."""
    best, arg = -np.inf, None
    for corner in itertools.product(*zip(lo, hi)):
        v = fun(np.array(corner))
        if v > best:
            best, arg = v, np.array(corner)
    return best, arg
