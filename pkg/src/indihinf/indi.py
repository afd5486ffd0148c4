"""Cascaded INDI runtime: inner rate-loop inversion, outer translational
inversion and the single-rate scheduler that wires the linear controllers
(PD or H-infinity, any :class:`ControllerSet`) to them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linsys import StateSpace, pseudo_inverse
from .synthesis.controllers import ControllerSet
from .vehicle import (MeasurementFilter, QuadcopterParams, QuadState, effectiveness_matrices,
                      rotation_matrix)

ATTITUDE_LIMIT = 0.78          # rad
COND_LIMIT = 1e10


class IndiError(RuntimeError):
    pass


def angular_accel_from_rates(Omega_f, Omega_f_prev, Ts: float) -> np.ndarray:
    """Backward difference of filtered rates."""
    return (np.asarray(Omega_f, dtype=float) - np.asarray(Omega_f_prev, dtype=float)) / Ts


@dataclass
class IndiInnerState:
    w_f: np.ndarray                      # filtered motor speeds
    Omdot_f: np.ndarray                  # filtered angular acceleration
    G12: np.ndarray                      # estimate of G1 + G2 (4x4)
    G2: np.ndarray
    lag: np.ndarray = field(default_factory=lambda: np.zeros(4))   # L(w_c - w_f)
    w_max: float = math.inf

    def __post_init__(self):
        self._pinv = None
        self._pinv_src = None

    def pinv(self) -> np.ndarray:
        if self._pinv_src is not self.G12:
            cond = np.linalg.cond(self.G12)
            if not np.isfinite(cond) or cond > COND_LIMIT:
                raise IndiError(f"effectiveness matrix rank-deficient (cond = {cond:.3g})")
            self._pinv = pseudo_inverse(self.G12)
            self._pinv_src = self.G12
        return self._pinv


def inner_indi_step(nu_Omdot, T_tilde: float, st: IndiInnerState) -> np.ndarray:
    """Commanded motor speeds; updates the lag term of ``st``."""
    v = np.empty(4)
    v[:3] = np.asarray(nu_Omdot, dtype=float) - st.Omdot_f
    v[3] = T_tilde
    w_c = st.w_f + st.pinv() @ (v + st.G2 @ st.lag)
    w_c = np.clip(w_c, 0.0, st.w_max)
    st.lag = w_c - st.w_f
    return w_c


@dataclass
class IndiOuterState:
    a_f: np.ndarray              # filtered world acceleration
    mu_f: np.ndarray             # filtered attitude
    thrust: float                # |f_B| estimate, N (positive in flight)


def thrust_jacobian(mu, thrust: float, m: float) -> np.ndarray:
    """d a / d (f_B/m, phi, theta) of ``a = g + f_B b_z / m`` with ``f_B = -thrust``."""
    phi, theta, psi = mu
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    bz = np.array([cf * st * cp + sf * sp, cf * st * sp - sf * cp, cf * ct])
    dphi = np.array([-sf * st * cp + cf * sp, -sf * st * sp - cf * cp, -sf * ct])
    dtheta = np.array([cf * ct * cp, cf * ct * sp, -cf * st])
    k = -thrust / m
    return np.column_stack([bz, k * dphi, k * dtheta])


def outer_indi_step(nu_acc, st: IndiOuterState, params: QuadcopterParams,
                    limit: float = ATTITUDE_LIMIT):
    """Incremental inversion of the translational dynamics.

    Returns ``(T_tilde, phi_c, theta_c)`` with ``T_tilde = delta f_B / m``
    (negative for more lift, same sign convention as the thrust row of G1).
    """
    if not st.thrust > 0:
        raise IndiError("thrust estimate must be positive")
    J = thrust_jacobian(st.mu_f, st.thrust, params.m)
    if np.linalg.cond(J) > COND_LIMIT:
        raise IndiError("translational Jacobian is singular")
    du = pseudo_inverse(J) @ (np.asarray(nu_acc, dtype=float) - st.a_f)
    phi_c = float(np.clip(st.mu_f[0] + du[1], -limit, limit))
    theta_c = float(np.clip(st.mu_f[1] + du[2], -limit, limit))
    return float(du[0]), phi_c, theta_c


class DiscreteController:
    """Tustin realization of a two-input ``[e, ydot] -> u`` controller."""

    def __init__(self, ctrl: ControllerSet | StateSpace, fs: float):
        if isinstance(ctrl, ControllerSet):
            ctrl = ControllerSet(ctrl.axis, ctrl.kind, ctrl.K_outer, ctrl.K_inner, ctrl.K_full,
                                 ctrl.gamma, fs, ctrl.meta).discrete()
        self.sys = ctrl
        self.x = np.zeros(ctrl.nstates)

    def step(self, e: float, yd: float) -> float:
        u = np.array([e, yd])
        y = self.sys.C @ self.x + self.sys.D @ u
        self.x = self.sys.A @ self.x + self.sys.B @ u
        return float(y[0])


@dataclass
class Measurement:
    """Raw sensor sample: state plus ideal accelerometer / gyro-derivative."""
    xi: np.ndarray
    v: np.ndarray
    mu: np.ndarray
    Omega: np.ndarray
    a: np.ndarray
    w: np.ndarray


def measure(state: QuadState, accel) -> Measurement:
    return Measurement(state.xi.copy(), state.v.copy(), state.mu.copy(), state.Omega.copy(),
                       np.asarray(accel, dtype=float).copy(), state.w.copy())


class CascadedController:
    """Cascaded position / attitude stack run at the vehicle sample rate.

    ``attitude`` maps ``roll/pitch/yaw`` to controller sets; ``guidance``
    maps ``x/y/z`` (or is None for attitude-only runs, where thrust is held).
    ``G12_scale`` multiplies the effectiveness estimate to emulate model
    error; ``linearize=True`` re-evaluates ``G1 diag(w_f)`` every sample.
    """

    def __init__(self, params: QuadcopterParams, attitude: dict, guidance: dict | None = None,
                 G12: np.ndarray | None = None, G12_scale: float = 1.0, linearize: bool = False,
                 att_limit: float = ATTITUDE_LIMIT, nu_att_max: float = 2000.0,
                 nu_acc_max: float = 30.0):
        self.p = params
        self.G1, self.G2 = effectiveness_matrices(params)
        if G12 is None:
            G12 = self.G1 @ np.diag(np.full(4, params.w_hover)) + self.G2
        self.G12 = G12_scale * np.asarray(G12, dtype=float)
        self.linearize = linearize
        self.G12_scale = G12_scale
        self.att_limit = att_limit
        self.nu_att_max, self.nu_acc_max = nu_att_max, nu_acc_max
        self.att = {ax: DiscreteController(attitude[ax], params.fs) for ax in ("roll", "pitch", "yaw")}
        self.pos = None
        if guidance is not None:
            self.pos = {ax: DiscreteController(guidance[ax], params.fs) for ax in ("x", "y", "z")}
        self.filt = MeasurementFilter.from_params(params)
        self.fstate = None
        self.inner = None
        self.last = {}

    # filters -------------------------------------------------------------
    def reset(self, meas: Measurement):
        f = self.filt
        self.fstate = {"Omega": f.init(meas.Omega), "a": f.init(meas.a), "w": f.init(meas.w),
                       "mu": f.init(meas.mu)}
        self.Omega_f_prev = meas.Omega.copy()
        self.inner = IndiInnerState(w_f=meas.w.copy(), Omdot_f=np.zeros(3), G12=self.G12,
                                    G2=self.G2, w_max=self.p.w_max)

    def filter_states(self) -> dict:
        return {k: v.copy() for k, v in self.fstate.items()}

    def _filter(self, meas: Measurement):
        out = {}
        for key in ("Omega", "a", "w", "mu"):
            y, self.fstate[key] = self.filt.step(getattr(meas, key), self.fstate[key])
            out[key] = y
        return out

    # main step -----------------------------------------------------------
    def step(self, meas: Measurement, xi_ref=None, mu_ref=None, psi_ref: float = 0.0,
             nu_att_d=None, nu_acc_d=None) -> np.ndarray:
        if self.fstate is None:
            self.reset(meas)
        f = self._filter(meas)
        Omdot_f = angular_accel_from_rates(f["Omega"], self.Omega_f_prev, self.p.Ts)
        self.Omega_f_prev = f["Omega"]
        thrust = 0.5 * self.p.K_tau * float(np.sum(np.square(f["w"])))

        T_tilde = 0.0
        nu_acc = None
        if self.pos is not None and xi_ref is not None:
            err = np.asarray(xi_ref, dtype=float) - meas.xi
            nu_acc = np.array([self.pos[ax].step(err[i], meas.v[i])
                               for i, ax in enumerate(("x", "y", "z"))])
            nu_acc = np.clip(nu_acc, -self.nu_acc_max, self.nu_acc_max)
            if nu_acc_d is not None:
                nu_acc = nu_acc + nu_acc_d
            outer = IndiOuterState(a_f=f["a"], mu_f=f["mu"], thrust=thrust)
            T_tilde, phi_c, theta_c = outer_indi_step(nu_acc, outer, self.p, self.att_limit)
            mu_c = np.array([phi_c, theta_c, psi_ref])
        else:
            mu_c = np.zeros(3) if mu_ref is None else np.asarray(mu_ref, dtype=float)

        err = mu_c - meas.mu
        err[2] = math.remainder(err[2], 2 * math.pi)
        nu = np.array([self.att[ax].step(err[i], meas.Omega[i])
                       for i, ax in enumerate(("roll", "pitch", "yaw"))])
        nu = np.clip(nu, -self.nu_att_max, self.nu_att_max)
        if nu_att_d is not None:
            nu = nu + nu_att_d

        st = self.inner
        st.w_f, st.Omdot_f = f["w"], Omdot_f
        if self.linearize:
            st.G12 = self.G12_scale * (self.G1 @ np.diag(f["w"]) + self.G2)
        w_c = inner_indi_step(nu, T_tilde, st)
        self.last = {"mu_c": mu_c, "nu_att": nu, "nu_acc": nu_acc, "T_tilde": T_tilde,
                     "Omega_f": f["Omega"], "a_f": f["a"], "w_f": f["w"], "Omdot_f": Omdot_f}
        return w_c


def sine_sweep(params: QuadcopterParams, freqs, amplitude: float = 2.0, cycles: int = 2,
               settle: float = 0.5, attitude: dict | None = None, G12_scale: float = 1.0,
               axis: int = 0) -> np.ndarray:
    """Empirical ``nu -> Omegadot`` response of the closed inner loop.

    A sinusoid of ``amplitude`` rad/s^2 is added to the virtual control of
    ``axis`` while the attitude controllers (PD at ``(1, 1)`` by default)
    keep the vehicle near hover.  The ratio of the Fourier coefficients of
    the true angular acceleration and of the total virtual control, over
    ``cycles`` periods after ``settle`` seconds, is returned per frequency.
    """
    from .synthesis.controllers import pd_controller
    from .vehicle import acceleration, rk4_step
    if attitude is None:
        attitude = {ax: pd_controller(1.0, 1.0, ax, params.fs) for ax in ("roll", "pitch", "yaw")}
    out = []
    for w in np.atleast_1d(np.asarray(freqs, dtype=float)):
        n0 = int(round(settle * params.fs))
        n1 = int(round(cycles * 2.0 * math.pi / w * params.fs))
        ctrl = CascadedController(params, attitude, G12_scale=G12_scale)
        state = QuadState.hover(params)
        w_c = state.w.copy()
        nu_log, acc_log = np.empty(n0 + n1), np.empty(n0 + n1)
        d = np.zeros(3)
        for k in range(n0 + n1):
            t = k * params.Ts
            vdot, _ = acceleration(state, params, w_c, t)
            d[axis] = amplitude * math.sin(w * t)
            w_c = ctrl.step(measure(state, vdot), mu_ref=np.zeros(3), nu_att_d=d)
            _, Omdot = acceleration(state, params, w_c, t)
            nu_log[k], acc_log[k] = ctrl.last["nu_att"][axis], Omdot[axis]
            state = rk4_step(state, params, w_c, t)
        t = np.arange(n0, n0 + n1) * params.Ts
        ph = np.exp(-1j * w * t)
        out.append(np.sum(acc_log[n0:] * ph) / np.sum(nu_log[n0:] * ph))
    return np.array(out)
