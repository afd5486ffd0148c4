import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from indihinf.analysis import (bandwidth, closed_loop_sensitivities, margins, sensitivity_csv,
                               template_compliance, weighted_channels)
from indihinf.linsys import (Block, UnstableSystemError, freq_response, gain, hinf_norm,
                             interconnect, tf)
from indihinf.sim import shipped_controller
from indihinf.synthesis.controllers import ControllerSet, pd_controller
from indihinf.synthesis.design import loop_models, preset_entry
from indihinf.synthesis.weights import weights_from_dict

GRID = np.logspace(-2, 3, 300)


def loop(preset, name, params):
    entry = preset_entry(preset, name)
    return loop_models(params, name, entry), weights_from_dict(entry)


def sensitivity_of(L):
    """``1 / (1 + L)`` as a state-space system."""
    return interconnect([Block(L, ["e"], ["y"])], {"e": [("r", 1.0), ("y", -1.0)]}, ["r"], ["e"])


@pytest.fixture(scope="module")
def att(bebop):
    (G, A, H), W = loop("bebop-sim", "attitude", bebop)
    sets = {k: closed_loop_sensitivities(G, shipped_controller("bebop-sim", "attitude", k), H, A)
            for k in ("pd", "hinf-structured", "hinf-full")}
    return G, A, H, W, sets


def test_S_plus_T_is_one(att):
    for sens in att[4].values():
        R = sens.responses(GRID)
        np.testing.assert_allclose(R["S"] + R["T"], 1.0, atol=1e-9)


def test_attitude_bandwidth_near_nine(att):
    wb = bandwidth(att[4]["hinf-structured"].S)
    assert 9 * 0.7 <= wb <= 9 * 1.3


def test_weighted_tracking_below_gamma(att):
    c = shipped_controller("bebop-sim", "attitude", "hinf-structured")
    sens = att[4]["hinf-structured"]
    assert hinf_norm(att[3].We * sens.S) <= c.gamma * 1.01


def test_S_do_relation(att):
    G, A, H, W, sets = att
    a = freq_response(A, GRID)[:, 0, 0]
    h = freq_response(H, GRID)[:, 0, 0]
    for sens in sets.values():
        R = sens.responses(GRID)
        np.testing.assert_allclose(R["S_do"], R["S_di"] * (1 - a * h) / a, rtol=1e-8, atol=1e-14)


def test_margins_modulus_two():
    # L = 4 / (s (s + 1)) has |S| peak close to 2; modulus margin is its inverse
    S = sensitivity_of(tf([4.0], [1.0, 1.0, 0.0]))
    m = margins(S)
    assert m.modulus == pytest.approx(1.0 / hinf_norm(S), rel=1e-9)


def test_margins_integrator():
    m = margins(sensitivity_of(tf([1.0], [1.0, 0.0])))
    assert m.phase_deg == pytest.approx(90.0, abs=1e-6)
    assert math.isinf(m.gain_db)
    assert m.w_gain == pytest.approx(1.0, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(k=st.floats(0.1, 20.0), a=st.floats(0.2, 5.0), b=st.floats(0.2, 5.0))
def test_modulus_margin_bounds(k, a, b):
    L = tf([k], np.polymul([1.0, a], np.polymul([1.0, b], [1.0, 0.0])))
    S = sensitivity_of(L)
    if not S.is_stable():
        return
    m = margins(S)
    Ms = 1.0 / m.modulus
    if Ms > 1:
        assert m.gain_db >= 20 * math.log10(Ms / (Ms - 1)) - 1e-6
    assert m.phase_deg >= math.degrees(2 * math.asin(0.5 / Ms)) - 1e-6


def test_synthesized_design_complies(att):
    c = shipped_controller("bebop-sim", "attitude", "hinf-structured")
    rep = template_compliance(att[4]["hinf-structured"], att[3], c.gamma)
    assert rep.passed


def test_detuned_controller_fails_KS(att):
    G, A, H, W, _ = att
    c = shipped_controller("bebop-sim", "attitude", "hinf-structured")
    # inner (rate) block x10; scaling both blocks multiplies the angle path by 100
    # and destabilizes the loop
    hot = ControllerSet("roll", "hinf-structured", c.K_outer, 10.0 * c.K_inner, gamma=c.gamma)
    sens = closed_loop_sensitivities(G, hot, H, A)
    rep = template_compliance(sens, W, c.gamma)
    assert "r->z2" in rep.failing()
    ks = rep.channels["r->z2"]
    assert ks.peak > c.gamma and math.isfinite(ks.w_peak)


def test_zero_controller_is_unstable_loop(att):
    G, A, H, W, _ = att
    with pytest.raises(UnstableSystemError):
        closed_loop_sensitivities(G, pd_controller(0.0, 0.0), H, A)


@pytest.mark.parametrize("preset", ["bebop-sim"])
@pytest.mark.parametrize("name", ["attitude", "guidance"])
def test_low_frequency_disturbance_ordering(preset, name, request):
    params = request.getfixturevalue("bebop")
    (G, A, H), _ = loop(preset, name, params)
    v = {k: abs(freq_response(closed_loop_sensitivities(
        G, shipped_controller(preset, name, k), H, A).S_di, 0.1)[0, 0])
        for k in ("pd", "hinf-structured", "hinf-full")}
    assert v["hinf-full"] < v["hinf-structured"] < v["pd"]


def test_sensitivity_csv_full_precision(att):
    text = sensitivity_csv(att[4], att[3], grid=GRID[:5])
    head, first = text.splitlines()[:2]
    assert head.startswith("w,template_S_db,pd_S_db")
    assert float(first.split(",")[0]) == GRID[0]


def test_weighted_channels_keys(att):
    assert set(weighted_channels(att[4]["pd"], att[3])) == {"r->z1", "d->z1", "r->z2", "n->z3"}
