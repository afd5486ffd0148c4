import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from indihinf.vehicle import (DisturbanceInput, MeasurementFilter, QuadcopterParams, QuadState,
                              actuator_step, body_wrench, dynamics_derivative,
                              effectiveness_matrices, load_params, rk4_step, rotation_matrix)

angles = st.floats(-math.pi, math.pi)


def test_rotation_identity():
    np.testing.assert_array_equal(rotation_matrix([0, 0, 0]), np.eye(3))


def test_rotation_yaw_only():
    psi = 0.7
    c, s = math.cos(psi), math.sin(psi)
    np.testing.assert_allclose(rotation_matrix([0, 0, psi]),
                               [[c, -s, 0], [s, c, 0], [0, 0, 1]], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(phi=angles, theta=st.floats(-1.5, 1.5), psi=angles)
def test_rotation_orthonormal(phi, theta, psi):
    R = rotation_matrix([phi, theta, psi])
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_hover_equilibrium(bebop):
    st_ = QuadState.hover(bebop)
    d = dynamics_derivative(st_, bebop, st_.w)
    np.testing.assert_allclose(d.v, 0.0, atol=1e-12)
    np.testing.assert_allclose(d.Omega, 0.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(phi=st.floats(-1, 1), theta=st.floats(-1, 1), psi=angles)
def test_motors_off_free_fall(phi, theta, psi):
    p = load_params("bebop-sim")
    st_ = QuadState(np.zeros(3), np.zeros(3), np.array([phi, theta, psi]), np.zeros(3),
                    np.zeros(4))
    d = dynamics_derivative(st_, p, np.zeros(4))
    np.testing.assert_array_equal(d.v, [0.0, 0.0, p.g])


def test_principal_axis_rotation_no_gyroscopic_term(bebop):
    st_ = QuadState.hover(bebop)
    st_.Omega = np.array([0.0, 3.0, 0.0])
    d = dynamics_derivative(st_, bebop, st_.w)
    np.testing.assert_allclose(d.Omega, 0.0, atol=1e-12)


def test_effectiveness_structure(bebop):
    G1, G2 = effectiveness_matrices(bebop)
    expect = np.array([-1, 1, 1, -1]) * bebop.ly * bebop.K_tau / bebop.Ixx
    np.testing.assert_allclose(G1[0], expect)
    assert not G2[[0, 1, 3]].any()
    w = np.full(4, 700.0)
    out = G1 @ w ** 2
    np.testing.assert_allclose(out[:3], 0.0, atol=1e-9)
    assert out[3] == pytest.approx(-4 * bebop.K_tau * 700.0 ** 2 / bebop.m)


@settings(max_examples=50, deadline=None)
@given(w=st.lists(st.floats(0, 1200), min_size=4, max_size=4),
       wdot=st.lists(st.floats(-1e4, 1e4), min_size=4, max_size=4))
def test_wrench_matches_effectiveness(w, wdot):
    p = load_params("bebop-sim")
    w, wdot = np.array(w), np.array(wdot)
    G1, G2 = effectiveness_matrices(p)
    tau, f = body_wrench(w, wdot, p)
    direct = np.concatenate([tau / np.array([p.Ixx, p.Iyy, p.Izz]), [f / p.m]])
    via = 0.5 * G1 @ w ** 2 + p.Ts * G2 @ wdot
    np.testing.assert_allclose(via, direct, rtol=1e-10, atol=1e-10)


def test_actuator_steady_and_step(bebop):
    w = np.full(4, 500.0)
    np.testing.assert_array_equal(actuator_step(w, w, 0.002, bebop.tau_m), w)
    tau = 0.02
    x = np.zeros(4)
    for _ in range(10):
        x = actuator_step(np.full(4, 100.0), x, 0.002, tau)
    np.testing.assert_allclose(x, 100.0 * (1 - math.exp(-1)), rtol=1e-12)


def test_actuator_saturation():
    out = actuator_step(np.full(4, 5000.0), np.full(4, 1199.0), 0.002, 0.01, w_max=1200.0)
    assert out.max() <= 1200.0


def test_filter_dc_gain():
    f = MeasurementFilter()
    x = f.init([3.0])
    for _ in range(10):
        y, x = f.step([3.0], x)
        assert y[0] == pytest.approx(3.0, rel=1e-12)


@pytest.mark.parametrize("w, expect, rel", [(50.0, 1 / 1.1, 0.02), (500.0, 0.01, 0.5)])
def test_filter_sinusoid_amplitude(w, expect, rel):
    f = MeasurementFilter()
    t = np.arange(0, 2.0, 0.002)
    u = np.sin(w * t)
    x = f.init([0.0])
    y = np.empty_like(u)
    for k, uk in enumerate(u):
        yk, x = f.step([uk], x)
        y[k] = yk[0]
    amp = np.abs(y[t > 1.0]).max()
    assert amp == pytest.approx(expect, rel=rel)


def test_free_fall_rk4(bebop):
    st_ = QuadState(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(4))
    for k in range(500):
        st_ = rk4_step(st_, bebop, np.zeros(4), k * bebop.Ts)
    assert st_.xi[2] == pytest.approx(0.5 * bebop.g * 1.0, abs=1e-6)


def test_orthonormal_along_trajectory(bebop):
    st_ = QuadState.hover(bebop)
    w_c = st_.w * np.array([1.02, 0.99, 1.01, 0.98])
    for k in range(500):
        st_ = rk4_step(st_, bebop, w_c, k * bebop.Ts)
        R = rotation_matrix(st_.mu)
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9


def test_hover_fixed_point(bebop):
    st0 = QuadState.hover(bebop)
    st1 = rk4_step(st0, bebop, st0.w, 0.0)
    assert np.abs(st1.vector() - st0.vector()).max() < 1e-10


def test_disturbance_schedule_adds():
    d = DisturbanceInput(f_d=[(0.0, 2.0, [1, 0, 0]), (1.0, 3.0, [1, 0, 0])])
    assert d.force(1.5)[0] == 2.0 and d.force(2.5)[0] == 1.0 and d.force(3.0)[0] == 0.0


def test_params_roundtrip_and_validation(bebop):
    back = QuadcopterParams.from_text(bebop.to_text())
    assert back == bebop
    with pytest.raises(ValueError):
        bebop.replace(m=-1.0)
    with pytest.raises(ValueError):
        QuadcopterParams.from_dict({**bebop.to_dict(), "bogus": 1})


def test_preset_time_constants(bebop, enac):
    assert bebop.tau_m == pytest.approx(1 / 53.94)
    assert enac.tau_m == pytest.approx(1 / 25.65)
    assert 2 * bebop.K_tau * bebop.w_hover ** 2 == pytest.approx(bebop.m * bebop.g)
