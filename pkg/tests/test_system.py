import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import forecast, single_bus
from oracles import ptdf_via_angles
from wdruc.system import (DataError, compute_ptdf, line_flows, load_forecast, load_system, save_forecast, six_bus,
                          system_from_dict, system_to_dict, uncertainty_box)


def _net(lines, ref=1, buses=(1, 2, 3)):
    return system_from_dict(dict(horizon=1, reference_bus=ref, buses=list(buses), generators=[], reg_units=[],
                                 loads=[], lines=lines))


def test_bundled_six_bus_shape():
    system, fc = six_bus()
    assert (system.n_buses, system.n_gens, system.n_lines, system.n_reg) == (6, 3, 7, 1)
    assert system.horizon == 24
    assert "IIT" in system.source
    wf = fc.aligned(system)
    assert wf.shape == (1, 24)
    assert np.all(wf >= 0) and np.all(wf <= system.reg_capacity[:, None])


def test_six_bus_round_trip(tmp_path):
    system, fc = six_bus()
    p = tmp_path / "sys.json"
    p.write_text(json.dumps(system_to_dict(system)))
    assert load_system(p) == system
    q = tmp_path / "fc.csv"
    save_forecast(fc, q)
    back = load_forecast(q)
    assert back.unit_ids == fc.unit_ids
    np.testing.assert_array_equal(back.values, fc.values)


def test_pmin_above_pmax_names_generator():
    doc = system_to_dict(six_bus()[0])
    doc["generators"][1]["p_min"] = 500.0
    with pytest.raises(DataError, match="G2"):
        system_from_dict(doc)


def test_two_reference_buses_rejected():
    doc = system_to_dict(six_bus()[0])
    doc["reference_bus"] = [1, 2]
    with pytest.raises(DataError):
        system_from_dict(doc)


def test_disconnected_network_rejected():
    with pytest.raises(DataError, match="disconnected"):
        _net([dict(id="a", from_bus=1, to_bus=2, reactance=0.1, capacity=10)])


@pytest.mark.parametrize("field,value", [("reactance", 0.0), ("capacity", -1.0)])
def test_line_invariants(field, value):
    ln = dict(id="a", from_bus=1, to_bus=2, reactance=0.1, capacity=10)
    ln[field] = value
    with pytest.raises(DataError):
        _net([ln], buses=(1, 2))


def test_unknown_field_rejected():
    doc = system_to_dict(six_bus()[0])
    doc["generators"][0]["colour"] = "red"
    with pytest.raises(DataError, match="colour"):
        system_from_dict(doc)


def test_initial_output_invariant():
    doc = system_to_dict(six_bus()[0])
    doc["generators"][1]["initial_output"] = 5.0  # unit initially off
    with pytest.raises(DataError):
        system_from_dict(doc)


def test_ramps_default_to_capacity():
    s = single_bus(p_max=42.0)
    g = s.generators[0]
    assert g.ramp_up == g.ramp_down == g.startup_ramp == g.shutdown_ramp == 42.0


def test_non_sheddable_load_has_zero_shed_limit():
    s = single_bus(demand=(5.0, 7.0), sheddable=False)
    np.testing.assert_array_equal(s.shed_limit, 0.0)


def test_ptdf_two_bus():
    s = _net([dict(id="a", from_bus=1, to_bus=2, reactance=0.1, capacity=10)], buses=(1, 2))
    np.testing.assert_allclose(s.ptdf, [[0.0], [-1.0]])
    s2 = _net([dict(id="a", from_bus=2, to_bus=1, reactance=0.1, capacity=10)], buses=(1, 2))
    np.testing.assert_allclose(s2.ptdf, [[0.0], [1.0]])


def test_ptdf_triangle_split():
    lines = [dict(id="12", from_bus=1, to_bus=2, reactance=1, capacity=10),
             dict(id="23", from_bus=2, to_bus=3, reactance=1, capacity=10),
             dict(id="13", from_bus=1, to_bus=3, reactance=1, capacity=10)]
    F = compute_ptdf(_net(lines))
    # injection at bus 2, withdrawal at 1: 2/3 on the direct line, 1/3 around
    np.testing.assert_allclose(F[1], [-2 / 3, 1 / 3, -1 / 3], atol=1e-12)
    np.testing.assert_array_equal(F[0], 0.0)


def test_ptdf_matches_angle_solve(six):
    system, _, _ = six
    np.testing.assert_allclose(compute_ptdf(system), ptdf_via_angles(system), atol=1e-12)
    assert np.all(system.ptdf[system.bus_index[system.reference_bus]] == 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=5, max_size=5))
def test_ptdf_flows_balance_any_injection(values):
    system, _ = six_bus()
    p = np.array(values + [-sum(values)])
    flows = line_flows(system, p)
    # angle-based flows with the same injections
    ref = ptdf_via_angles(system)
    np.testing.assert_allclose(flows, p @ ref, atol=1e-9)


def test_uncertainty_box_definition():
    s = single_bus(reg_cap=100.0)
    for wf, lo, hi in [(40.0, -40.0, 60.0), (0.0, 0.0, 100.0), (100.0, -100.0, 0.0)]:
        box = uncertainty_box(s, forecast(s, [wf]))
        assert (box.lower[0, 0], box.upper[0, 0]) == (lo, hi)


def test_zero_capacity_reg_gives_degenerate_interval():
    s = single_bus(reg_cap=0.0)
    box = uncertainty_box(s, forecast(s, [0.0]))
    assert box.lower[0, 0] == box.upper[0, 0] == 0.0
    assert box.effective(0).size == 0


def test_forecast_above_capacity_rejected():
    s = single_bus(reg_cap=10.0)
    with pytest.raises(DataError, match="PV"):
        uncertainty_box(s, forecast(s, [11.0]))


@settings(max_examples=100, deadline=None)
@given(cap=st.floats(0, 500), frac=st.floats(0, 1))
def test_box_contains_zero(cap, frac):
    s = single_bus(reg_cap=cap)
    box = uncertainty_box(s, forecast(s, [cap * frac]))
    assert box.lower[0, 0] <= 0 <= box.upper[0, 0]
