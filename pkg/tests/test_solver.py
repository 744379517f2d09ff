import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wdruc.solver import (INF, INFEASIBLE, OPTIMAL, UNBOUNDED, Model, ModelError, SolveParams,
                          available_backends, solve)

BACKENDS = available_backends()


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def test_binary_and_free_variables():
    m = Model()
    b = m.add_variable(0, 1, integral=True, obj=1.0)
    f = m.add_variable(-INF, INF)
    lo, hi = m.bounds()
    assert (lo[b], hi[b], lo[f], hi[f]) == (0, 1, -INF, INF)
    assert m.is_mip


def test_inverted_bounds_rejected():
    with pytest.raises(ModelError):
        Model().add_variable(5, 3)


def test_unknown_variable_rejected():
    m = Model()
    m.add_variable()
    with pytest.raises(ModelError):
        m.add_constraint([(3, 1.0)], "<=", 1)


def test_two_binaries(backend):
    m = Model(sense="max")
    x = m.add_variable(0, 1, True, 1.0)
    y = m.add_variable(0, 1, True, 1.0)
    m.add_constraint([(x, 1), (y, 1)], "<=", 1)
    sol = solve(m, backend=backend)
    assert sol.status == OPTIMAL and sol.objective == pytest.approx(1.0)


def test_empty_row_infeasible(backend):
    m = Model()
    m.add_variable(0, 1)
    m.add_constraint([], "<=", -1)
    assert solve(m, backend=backend).status == INFEASIBLE


def test_duplicate_terms_summed(backend):
    m = Model(sense="max")
    x = m.add_variable(0, INF, obj=1.0)
    m.add_constraint([(x, 1.0), (x, 1.0)], "<=", 4)
    assert solve(m, backend=backend).objective == pytest.approx(2.0)


def test_one_variable_lp_dual(backend):
    m = Model()
    x = m.add_variable(-INF, INF, obj=1.0)
    r = m.add_constraint([(x, 1.0)], ">=", 3)
    sol = solve(m, backend=backend)
    assert sol.objective == pytest.approx(3.0)
    assert sol.duals[r] == pytest.approx(1.0)


def test_integer_max(backend):
    m = Model(sense="max")
    x = m.add_variable(0, INF, integral=True, obj=1.0)
    m.add_constraint([(x, 1.0)], "<=", 2.5)
    assert solve(m, backend=backend).objective == pytest.approx(2.0)


def test_infeasible_pair(backend):
    m = Model()
    x = m.add_variable(-INF, INF)
    m.add_constraint([(x, 1.0)], "<=", 0)
    m.add_constraint([(x, 1.0)], ">=", 1)
    assert solve(m, backend=backend).status == INFEASIBLE


def test_unbounded(backend):
    m = Model()
    m.add_variable(-INF, INF, obj=1.0)
    assert solve(m, backend=backend).status in (UNBOUNDED, INFEASIBLE)


def _random_lp(seed, sense):
    r = np.random.default_rng(seed)
    n, k = int(r.integers(2, 6)), int(r.integers(1, 6))
    m = Model(sense=sense)
    ids = m.add_variables(n, lower=-r.uniform(0.5, 5, n), upper=r.uniform(0.5, 5, n), obj=r.normal(size=n))
    x0 = r.uniform(-0.5, 0.5, n)  # a common interior point keeps the rows satisfiable
    for _ in range(k):
        terms = list(zip(ids.tolist(), r.normal(size=n)))
        rel = ["<=", ">=", "=="][int(r.integers(0, 3))]
        lhs = sum(c * x for (_, c), x in zip(terms, x0))
        rhs = lhs + (r.uniform(0, 2) if rel == "<=" else -r.uniform(0, 2) if rel == ">=" else 0.0)
        m.add_constraint(terms, rel, rhs)
    return m


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), sense=st.sampled_from(["min", "max"]))
def test_strong_duality(seed, sense):
    m = _random_lp(seed, sense)
    for be in BACKENDS:
        sol = solve(m, backend=be)
        assert sol.status == OPTIMAL
        assert abs(sol.objective - sol.dual_objective) <= 1e-6 * (1 + abs(sol.objective))
        lo, hi = m.bounds()
        tol = SolveParams().feasibility_tol
        assert np.all(sol.x >= lo - tol) and np.all(sol.x <= hi + tol)


def test_backends_agree():
    for seed in range(20):
        m = _random_lp(seed, "min")
        vals = [solve(m, backend=be).objective for be in BACKENDS]
        assert max(vals) - min(vals) <= 1e-6 * (1 + abs(vals[0]))


def test_repeat_solve_deterministic(six):
    from wdruc.uc import build_suc

    system, wf, box = six
    w = np.random.default_rng(0).uniform(box.lower, box.upper, (3,) + box.shape)
    m = build_suc(system, wf, w).model
    p = SolveParams(mip_gap=1e-6, seed=7)
    a, b = solve(m, p), solve(m, p)
    assert abs(a.objective - b.objective) <= 1e-9 * abs(a.objective)
    assert a.rows == m.n_rows and a.cols == m.n_vars
