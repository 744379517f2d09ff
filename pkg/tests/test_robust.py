import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import forecast, random_toy, single_bus
from oracles import box_vertex_max
from wdruc.recourse import DispatchRange, period_costs, period_lp, rt_dispatch, scenario_costs
from wdruc.robust import (FEAS_TOL, FEASIBILITY, CCGSettings, ScenarioPool, box_max, feasibility_subproblem,
                          solve_ruc, worst_case_cost)
from wdruc.solver import OPTIMAL, SolveParams
from wdruc.system import UncertaintyBox, uncertainty_box
from wdruc.uc import solve_duc, solve_suc

TIGHT = CCGSettings(gap=1e-7, params=SolveParams(mip_gap=1e-9))


@pytest.fixture(scope="module")
def ruc6():
    from wdruc.system import six_bus

    system, fc = six_bus()
    wf = fc.aligned(system)
    box = uncertainty_box(system, fc)
    return system, wf, box, solve_ruc(system, wf, box)


def test_pool_rejects_points_outside_box():
    box = UncertaintyBox(np.array([[-1.0]]), np.array([[1.0]]))
    pool = ScenarioPool(box)
    with pytest.raises(ValueError):
        pool.add(0, [1.5])
    assert pool.add(0, [1.0], FEASIBILITY)
    assert not pool.add(0, [1.0 + 1e-12])
    assert len(pool) == 1 and pool.count(FEASIBILITY) == 1


def test_worst_case_single_bus():
    s = single_bus()
    wf = np.array([[2.0]])
    rng = DispatchRange(np.array([[0.0]]), np.array([[10.0]]))
    box = UncertaintyBox(np.array([[-2.0]]), np.array([[2.0]]))
    w, cost, _ = worst_case_cost(s, rng, wf, box)
    ends = {v: rt_dispatch(s, rng, wf, [v], 0).cost for v in (-2.0, 2.0)}
    assert w[0, 0] == -2.0
    assert cost == pytest.approx(max(ends.values())) == pytest.approx(50.0)


def test_worst_case_degenerate_box():
    s = single_bus()
    wf = np.array([[2.0]])
    rng = DispatchRange(np.array([[0.0]]), np.array([[10.0]]))
    box = UncertaintyBox(np.zeros((1, 1)), np.zeros((1, 1)))
    _, cost, _ = worst_case_cost(s, rng, wf, box)
    assert cost == pytest.approx(rt_dispatch(s, rng, wf, [0.0], 0).cost)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_vertex_beats_dense_grid(seed):
    r = np.random.default_rng(seed)
    system, fc = random_toy(r)
    wf = fc.aligned(system)
    box = uncertainty_box(system, fc)
    pmax = np.array([g.p_max for g in system.generators])
    t = int(r.integers(system.horizon))
    lo = r.uniform(0, 0.3) * pmax
    hi = lo + r.uniform(0.2, 0.7) * pmax
    plp = period_lp(system, wf, t).with_range(lo, hi)
    blo, bhi = box.period(t)
    val, _ = box_max(plp, blo, bhi)
    grid = np.linspace(blo, bhi, 201)
    dense = period_costs(plp, grid, method="direct")
    assert np.max(dense) <= val + 1e-6
    milp, _ = box_max(plp, blo, bhi, method="milp")
    if np.isfinite(val):
        assert milp == pytest.approx(val, rel=1e-6, abs=1e-6)


def test_milp_fallback_matches_enumeration_six_bus(ruc6):
    system, wf, box, sol = ruc6
    for t in (6, 10, 12, 15):
        plp = period_lp(system, wf, t).with_range(sol.ranges.lower[:, t], sol.ranges.upper[:, t])
        lo, hi = box.period(t)
        enum, _ = box_max(plp, lo, hi, method="enum")
        milp, _ = box_max(plp, lo, hi, method="milp")
        ref, _ = box_vertex_max(lambda w: period_costs(plp, w[None], method="direct")[0], lo, hi)
        assert enum == pytest.approx(ref, rel=1e-9)
        assert milp == pytest.approx(enum, rel=1e-6)


def test_feasibility_violation_hand_case():
    # no shedding, empty range: supply is only the PV output, at least wf + lower error
    s = single_bus(demand=(5.0,), sheddable=False, reg_cap=3.0)
    wf = np.array([[1.0]])
    box = uncertainty_box(s, forecast(s, [1.0]))
    rng = DispatchRange(np.zeros((1, 1)), np.zeros((1, 1)))
    viol, wit, _ = feasibility_subproblem(s, rng, wf, box)
    assert viol == pytest.approx(5.0 - (1.0 + box.lower[0, 0]))
    assert wit[0, 0] == box.lower[0, 0]
    # with the upper corner as the only outcome the gap shrinks to 5 - (wf + upper)
    top = UncertaintyBox(box.upper.copy(), box.upper.copy())
    viol2, _, _ = feasibility_subproblem(s, rng, wf, top)
    assert viol2 == pytest.approx(5.0 - (1.0 + box.upper[0, 0]))


def test_feasibility_zero_for_deterministic_dispatch():
    s = single_bus()
    wf = np.array([[2.0]])
    box = UncertaintyBox(np.zeros((1, 1)), np.zeros((1, 1)))
    rng = DispatchRange(np.array([[3.0]]), np.array([[3.0]]))
    viol, _, _ = feasibility_subproblem(s, rng, wf, box)
    assert viol == pytest.approx(0.0, abs=1e-9)


def test_ruc_certificates(ruc6):
    system, wf, box, sol = ruc6
    assert sol.converged and sol.certified
    assert sol.lower_bound <= sol.objective + 1e-6 * abs(sol.objective)
    viol, _, _ = feasibility_subproblem(system, sol.ranges, wf, box)
    assert viol <= FEAS_TOL
    r = np.random.default_rng(5)
    W = r.uniform(box.lower, box.upper, (1000,) + box.shape)
    assert np.all(np.isfinite(scenario_costs(system, sol.ranges, wf, W)))


def test_ruc_ranges_admit_independent_dispatch(ruc6):
    system, wf, box, sol = ruc6
    r = np.random.default_rng(9)
    for t in range(system.horizon):
        lo, hi = box.period(t)
        for w in lo + (hi - lo) * r.random((100 if hi.any() or lo.any() else 1, lo.size)):
            assert rt_dispatch(system, sol.ranges, wf, w, t).status == OPTIMAL


def test_ruc_bounds_monotone(ruc6):
    *_, sol = ruc6
    lbs = [h[1] for h in sol.history]
    ubs = [h[2] for h in sol.history]
    assert all(b >= a - 1e-9 for a, b in zip(lbs, lbs[1:]))
    assert all(b <= a + 1e-9 for a, b in zip(ubs, ubs[1:]))


def test_ruc_zero_box_is_duc(six):
    system, wf, box = six
    ruc = solve_ruc(system, wf, box.zero_width(), TIGHT)
    duc = solve_duc(system, wf, params=SolveParams(mip_gap=1e-9))
    assert ruc.objective == pytest.approx(duc.objective, rel=1e-6)


def test_ruc_monotone_in_box_size(six):
    system, wf, box = six
    vals = [solve_ruc(system, wf, box.scaled(f), TIGHT).objective for f in (0.0, 0.5, 1.0)]
    assert vals[0] <= vals[1] * (1 + 1e-6) and vals[1] <= vals[2] * (1 + 1e-6)


def test_ruc_above_suc(ruc6):
    system, wf, box, sol = ruc6
    for seed in range(10):
        W = np.random.default_rng(seed).uniform(box.lower, box.upper, (4,) + box.shape)
        suc = solve_suc(system, wf, W)
        assert suc.objective <= sol.objective * (1 + 1e-4)


def test_ruc_on_toys_with_milp_subproblem():
    r = np.random.default_rng(21)
    for _ in range(4):
        system, fc = random_toy(r)
        wf = fc.aligned(system)
        box = uncertainty_box(system, fc)
        a = solve_ruc(system, wf, box, TIGHT)
        b = solve_ruc(system, wf, box, TIGHT, method="milp")
        assert a.objective == pytest.approx(b.objective, rel=1e-6)
