import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from indihinf.sysid import (FlightLog, build_increments, estimate_motor_speed,
                            estimate_parameters, first_order_actuator, fit_percentage,
                            initial_estimate, linearized_G12, synthetic_log)
from indihinf.vehicle import effectiveness_matrices


@pytest.fixture(scope="module")
def truth(bebop):
    return linearized_G12(bebop), bebop.tau_m


def rel_err(G, G0):
    return np.abs(G - G0).max() / np.abs(G0).max()


def test_stationary_log_zero_increments():
    n = 1001
    log = FlightLog(np.zeros((n, 3)), np.full(n, -9.81), np.full((n, 4), 0.5), np.full((n, 4), 400.0))
    y, dw = build_increments(log)
    assert np.abs(y).max() < 1e-9 and np.abs(dw).max() < 1e-12


def test_increment_shapes():
    log = synthetic_log(np.eye(4), 0.02, duration=2.0)
    y, dw = build_increments(log)
    assert y.shape == (len(log) - 2, 4) and dw.shape == (len(log) - 2, 4)


def test_motor_speed_constant_input():
    u = np.full((50, 4), 0.3)
    assert np.allclose(estimate_motor_speed(u, 0.02, scale=10.0), 3.0)


def test_motor_speed_63_percent_at_tau():
    fs, tau = 1000.0, 0.05
    u = np.zeros((200, 1))
    u[1:] = 1.0
    w = estimate_motor_speed(u, first_order_actuator(tau), fs)
    k = 1 + int(round(tau * fs))
    assert w[k, 0] == pytest.approx(1 - math.exp(-1), abs=1e-9)


def test_motor_speed_rejects_bad_tau():
    with pytest.raises(ValueError):
        estimate_motor_speed(np.zeros((3, 4)), -0.1)


def test_linearized_matches_finite_difference(bebop):
    from indihinf.vehicle import body_wrench
    G1, G2 = effectiveness_matrices(bebop)
    w0 = np.full(4, bebop.w_hover)
    scale = np.array([1 / bebop.Ixx, 1 / bebop.Iyy, 1 / bebop.Izz, 1 / bebop.m])

    def acc(w):
        tau, f = body_wrench(w, np.zeros(4), bebop)
        return scale * np.append(tau, f)

    h = 1e-3
    J = np.column_stack([(acc(w0 + h * e) - acc(w0 - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.allclose(J, G1 @ np.diag(w0), rtol=1e-6, atol=1e-9)
    assert np.allclose(linearized_G12(bebop) - G1 @ np.diag(w0), G2)


def test_noiseless_recovery(truth):
    G0, tau = truth
    log = synthetic_log(G0, tau, seed=0)
    res = estimate_parameters(log, init=1.0 / 40.0)
    assert abs(res.tau_m / tau - 1) < 0.01
    assert rel_err(res.G12, G0) < 0.01
    assert res.fit_pct > 99.0


@pytest.mark.parametrize("seed", [1, 2])
def test_noisy_recovery(truth, seed):
    G0, tau = truth
    res = estimate_parameters(synthetic_log(G0, tau, seed=seed, noise=0.05), init=1.0 / 40.0)
    assert abs(res.tau_m / tau - 1) < 0.10
    assert rel_err(res.G12, G0) < 0.10


def test_error_decreases_with_noise(truth):
    G0, tau = truth
    errs = []
    for noise in (0.05, 0.02, 0.01, 0.0):
        res = estimate_parameters(synthetic_log(G0, tau, seed=3, noise=noise), init=1.0 / 40.0)
        errs.append(rel_err(res.G12, G0))
    assert all(a >= b for a, b in zip(errs, errs[1:]))


def test_scale_equivariance(truth):
    G0, tau = truth
    log = synthetic_log(G0, tau, seed=4)
    a = estimate_parameters(log, init=1.0 / 40.0, speed_scale=1.0)
    b = estimate_parameters(log, init=1.0 / 40.0, speed_scale=2.0)
    assert b.tau_m == pytest.approx(a.tau_m, rel=1e-6)
    assert np.allclose(2.0 * b.G12, a.G12, rtol=1e-6, atol=1e-9 * np.abs(a.G12).max())


@pytest.mark.parametrize("noise", [0.0, 0.05])
def test_initialization_residual_close(truth, noise):
    G0, tau = truth
    log = synthetic_log(G0, tau, seed=5, noise=noise)
    init = initial_estimate(log, tau)
    opt = estimate_parameters(log, init=init)
    assert opt.residual <= init.residual
    assert init.residual <= 2.0 * opt.residual + 1e-12


def test_wrong_datasheet_tau_is_refined(truth):
    G0, tau = truth
    log = synthetic_log(G0, tau, seed=5, noise=0.01)
    init = initial_estimate(log, 1.1 * tau)
    opt = estimate_parameters(log, init=init)
    assert opt.residual < init.residual
    assert abs(opt.tau_m / tau - 1) < abs(init.tau_m / tau - 1)


def test_csv_roundtrip(tmp_path, truth):
    G0, tau = truth
    log = synthetic_log(G0, tau, duration=2.0, seed=6)
    p = tmp_path / "log.csv"
    log.to_csv(p)
    back = FlightLog.from_csv(p)
    assert back.fs == log.fs
    for a, b in ((back.gyro, log.gyro), (back.az, log.az), (back.u_m, log.u_m), (back.w, log.w)):
        assert np.array_equal(a, b)


def test_short_log_rejected(truth):
    G0, tau = truth
    with pytest.raises(ValueError):
        estimate_parameters(synthetic_log(G0, tau, duration=1.0))


def test_bad_log_shapes():
    with pytest.raises(ValueError):
        FlightLog(np.zeros((10, 3)), np.zeros(9), np.zeros((10, 4)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=40))
def test_fit_percentage_perfect(vals):
    y = np.array(vals).reshape(-1, 1)
    assert fit_percentage(y, y) == 100.0
