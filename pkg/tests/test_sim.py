import math

import numpy as np
import pytest

from conftest import comparison, metric_of, trace_of
from indihinf.sim import (HALF_RHO_CA, Metrics, Scenario, SimTrace, compare_controllers,
                          compute_metrics, improvement_pct, load_scenario, run_scenario,
                          step_metrics, wind_force)
from indihinf.vehicle import DisturbanceInput


def attitude_scenario(nu=None, tau=None, duration=3.0, **kw):
    dist = DisturbanceInput(nu_att=[(0.5, 2.0, nu)] if nu else [],
                            tau_d=[(0.5, 2.0, tau)] if tau else [])
    return Scenario("t", duration, {"type": "attitude", "steps": [[0.0, 0, 0, 0]]}, dist,
                    {"attitude": "pd"}, **kw)


def test_hover_no_disturbance_holds_position():
    sc = Scenario("hover", 10.0, {"type": "position", "waypoints": [[0.0, 0, 0, 0]]},
                  controllers={"attitude": "hinf-structured", "guidance": "pd"})
    tr = run_scenario(sc)
    assert tr.status == "ok"
    assert np.abs(tr.xi).max() < 1e-6


def test_first_order_rise_time():
    t = np.linspace(0, 10, 100001)
    rise, overshoot, settle = step_metrics(t, 1 - np.exp(-t), 0.0, 1.0)
    assert rise == pytest.approx(math.log(9), abs=2e-4)
    assert overshoot == 0.0
    assert settle == pytest.approx(-math.log(0.02), abs=2e-4)


def test_constant_trace_metrics():
    n = 50
    z = np.zeros((n, 3))
    tr = SimTrace("c", np.arange(n) * 0.01, z, z, z, z, z, np.zeros((n, 4)), np.zeros((n, 4)),
                  z, z, z, z, z, z, z)
    m = compute_metrics(tr, (0.1, 0.4), "roll", "disturbance")
    assert m.peak_deviation == 0.0 and m.overshoot == 0.0


def test_improvement_pct():
    assert improvement_pct(0.3, 0.6) == pytest.approx(50.0)
    with pytest.raises(ValueError):
        improvement_pct(0.1, 0.0)


def test_identical_controllers_zero_improvement():
    rep = compare_controllers(attitude_scenario([10.0, 0, 0]), ["pd", "pd"], names=["a", "b"])
    assert rep.improvement[("b", "a")] == 0.0


def test_compare_needs_two():
    with pytest.raises(ValueError):
        compare_controllers(load_scenario("fig7a"), ["pd"])


def test_determinism():
    sc = load_scenario("fig7a")
    a = run_scenario(sc, {"attitude": "hinf-structured"}).to_csv()
    b = run_scenario(sc, {"attitude": "hinf-structured"}).to_csv()
    assert a == b


def test_disturbance_linearity():
    peaks = []
    for amp in (5.0, 10.0):
        tr = run_scenario(attitude_scenario([amp, 0, 0]))
        peaks.append(compute_metrics(tr, (0.5, 3.0), "roll", "disturbance").peak_deviation)
    assert peaks[1] / peaks[0] == pytest.approx(2.0, rel=0.15)


def test_output_disturbance_better_rejected(bebop):
    nu = 20.0
    tr_i = run_scenario(attitude_scenario([nu, 0, 0]))
    tr_o = run_scenario(attitude_scenario(tau=[nu * bebop.Ixx, 0, 0]))
    pk_i = compute_metrics(tr_i, (0.5, 3.0), "roll", "disturbance").peak_deviation
    pk_o = compute_metrics(tr_o, (0.5, 3.0), "roll", "disturbance").peak_deviation
    assert pk_o <= pk_i


@pytest.mark.parametrize("scale", [0.5, 2.0])
def test_effectiveness_error_keeps_stability(scale):
    d = load_scenario("fig7a").to_dict()
    d["G12_scale"] = scale
    tr = run_scenario(Scenario.from_dict(d))
    assert tr.status == "ok"
    assert abs(tr.signal("roll")[-1] - 0.2) < 0.01


def test_attitude_disturbance_ordering():
    rep = comparison("fig7b")
    pk = {k: metric_of(rep, k).peak_deviation for k in rep.names}
    assert pk["hinf-full"] <= pk["hinf-structured"] <= pk["pd"]


def test_guidance_disturbance_ordering():
    rep = comparison("fig10")
    pk = {k: metric_of(rep, k).peak_deviation for k in rep.names}
    assert pk["hinf-full"] <= pk["hinf-structured"] <= pk["pd"]


def test_fig10_layout():
    sc = load_scenario("fig10")
    wp = np.array(sc.reference["waypoints"])
    assert wp[:, 1].min() == -2.0 and wp[:, 1].max() == 2.0
    mags = [np.linalg.norm(v) for _, _, v in sc.disturbance.f_d]
    assert min(mags) >= 1.5 and max(mags) <= 6.0
    assert sc.controllers["attitude"] == "hinf-structured"


def test_wind_hover_hinf_below_pd():
    rep = comparison("wind-hover")
    pd = metric_of(rep, "pd").peak_deviation
    assert metric_of(rep, "hinf-structured").peak_deviation < pd
    assert metric_of(rep, "hinf-full").peak_deviation < pd


def test_wind_surrogate():
    assert wind_force(7.2) == pytest.approx(3.0)
    assert wind_force(3.6) == pytest.approx(0.75)
    assert HALF_RHO_CA == pytest.approx(3.0 / 7.2 ** 2)


def test_shipped_scenarios_load():
    for name in ("fig7a", "fig7b", "fig10", "wind-hover", "wind-waypoints"):
        sc = load_scenario(name)
        assert Scenario.from_text(sc.to_text()).to_dict() == sc.to_dict()
    with pytest.raises(FileNotFoundError):
        load_scenario("no-such-scenario")


def test_multi_window_metric_keeps_worst():
    tr = trace_of(comparison("fig7b"), "pd")
    a = compute_metrics(tr, (1.0, 4.5), "roll", "disturbance")
    b = compute_metrics(tr, (4.5, 8.0), "roll", "disturbance")
    both = compute_metrics(tr, [(1.0, 4.5), (4.5, 8.0)], "roll", "disturbance")
    assert both.peak_deviation == max(a.peak_deviation, b.peak_deviation)


def test_divergence_reported():
    from indihinf.synthesis.controllers import pd_controller
    sc = attitude_scenario([10.0, 0, 0], duration=2.0)
    bad = pd_controller(-50.0, 5.0, "roll")
    tr = run_scenario(sc, {"attitude": bad})
    assert tr.status in ("diverged", "error")
    assert len(tr) < int(2.0 * 500) + 1


def test_table_csv_full_precision():
    rep = comparison("fig7b")
    rows = rep.table_csv().splitlines()
    assert len(rows) == 4
    peak = float(rows[1].split(",")[5])
    assert peak == metric_of(rep, "pd").peak_deviation
