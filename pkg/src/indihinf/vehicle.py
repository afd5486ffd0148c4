"""Nonlinear quadcopter model: rigid body, motors, disturbances and sensor filters.

Frames: world NED (z down), body FRD, ZYX Euler angles ``mu = (phi, theta, psi)``.
Motor layout (seen from above): 1 front-right, 2 front-left, 3 back-left,
4 back-right.  Motors 1 and 3 produce a positive yaw reaction torque.

Each rotor produces ``0.5 K_tau w^2`` of thrust along ``-b_z`` and
``0.5 K_q w^2`` of drag torque, so the body wrench is::

    [tau_B / I_B ; f_B / m] = 0.5 G1 w^2 + Ts G2 wdot

whose Jacobian with respect to ``w`` is ``G1 diag(w)`` (plus the ``G2`` term).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources

import numpy as np

from .linsys import discretize_tustin, tf

GRAVITY = 9.81
THETA_LIMIT = math.radians(85.0)


class SingularityError(RuntimeError):
    """Pitch too close to +/-90 deg for the ZYX Euler kinematics."""


@dataclass(frozen=True)
class QuadcopterParams:
    m: float                 # kg
    Ixx: float               # kg m^2
    Iyy: float
    Izz: float
    lx: float                # m, motor arm along x_B
    ly: float                # m, motor arm along y_B
    K_tau: float             # N s^2/rad^2, thrust = 0.5 K_tau w^2
    K_q: float               # N m s^2/rad^2, drag torque = 0.5 K_q w^2
    I_rzz: float             # kg m^2, motor + propeller
    tau_m: float             # s, motor time constant
    w_max: float             # rad/s
    Ts: float = 0.002        # s
    filter_xi: float = 0.55
    filter_wn: float = 50.0  # rad/s
    g: float = GRAVITY
    name: str = ""
    note: str = ""

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not (v > 0 and math.isfinite(v)):
                raise ValueError(f"parameter {f.name} must be positive and finite, got {v}")

    @property
    def fs(self) -> float:
        return 1.0 / self.Ts

    @property
    def inertia(self) -> np.ndarray:
        return np.diag([self.Ixx, self.Iyy, self.Izz])

    @property
    def w_hover(self) -> float:
        """Motor speed at which four rotors carry the weight."""
        return math.sqrt(self.m * self.g / (2.0 * self.K_tau))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QuadcopterParams":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names - {"units"}
        if unknown:
            raise ValueError(f"unknown parameter fields {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_text(self) -> str:
        d = self.to_dict()
        d["units"] = PARAM_UNITS
        return json.dumps(d, indent=1)

    @classmethod
    def from_text(cls, text: str) -> "QuadcopterParams":
        return cls.from_dict(json.loads(text))

    def replace(self, **kw) -> "QuadcopterParams":
        return replace(self, **kw)


PARAM_UNITS = {
    "m": "kg", "Ixx": "kg m^2", "Iyy": "kg m^2", "Izz": "kg m^2", "lx": "m", "ly": "m",
    "K_tau": "N s^2/rad^2", "K_q": "N m s^2/rad^2", "I_rzz": "kg m^2", "tau_m": "s",
    "w_max": "rad/s", "Ts": "s", "filter_xi": "-", "filter_wn": "rad/s", "g": "m/s^2",
}


def load_params(preset: str) -> QuadcopterParams:
    """Shipped presets: ``bebop-sim`` and ``enac-exp``."""
    path = resources.files("indihinf.data").joinpath(f"params-{preset}.json")
    if not path.is_file():
        raise KeyError(f"unknown vehicle preset {preset!r}")
    return QuadcopterParams.from_text(path.read_text())


@dataclass
class QuadState:
    xi: np.ndarray                       # position, m (NED)
    v: np.ndarray                        # velocity, m/s
    mu: np.ndarray                       # (phi, theta, psi), rad
    Omega: np.ndarray                    # body rates, rad/s
    w: np.ndarray                        # motor speeds, rad/s
    filters: dict = field(default_factory=dict)

    def copy(self) -> "QuadState":
        return QuadState(self.xi.copy(), self.v.copy(), self.mu.copy(), self.Omega.copy(),
                         self.w.copy(), {k: f.copy() for k, f in self.filters.items()})

    def vector(self) -> np.ndarray:
        return np.concatenate([self.xi, self.v, self.mu, self.Omega, self.w])

    @classmethod
    def from_vector(cls, x, filters=None) -> "QuadState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3].copy(), x[3:6].copy(), x[6:9].copy(), x[9:12].copy(), x[12:16].copy(),
                   filters or {})

    @classmethod
    def hover(cls, params: QuadcopterParams, xi=(0.0, 0.0, 0.0), psi: float = 0.0) -> "QuadState":
        return cls(np.array(xi, dtype=float), np.zeros(3), np.array([0.0, 0.0, psi]),
                   np.zeros(3), np.full(4, params.w_hover))


@dataclass
class DisturbanceInput:
    """Piecewise-constant step disturbances.

    Each schedule is a list of ``(t_start, t_end, vector)``; overlapping
    steps add.  ``f_d`` is a world-frame force (N), ``tau_d`` a body torque
    (N m).  ``nu_att`` and ``nu_acc`` are input disturbances added to the
    virtual controls (rad/s^2, m/s^2) before the inversion blocks.
    """

    f_d: list = field(default_factory=list)
    tau_d: list = field(default_factory=list)
    nu_att: list = field(default_factory=list)
    nu_acc: list = field(default_factory=list)

    @staticmethod
    def _eval(sched, t) -> np.ndarray:
        out = np.zeros(3)
        for t0, t1, vec in sched:
            if t0 <= t < t1:
                out += np.asarray(vec, dtype=float)
        return out

    def force(self, t: float) -> np.ndarray:
        return self._eval(self.f_d, t)

    def torque(self, t: float) -> np.ndarray:
        return self._eval(self.tau_d, t)

    def virtual_att(self, t: float) -> np.ndarray:
        return self._eval(self.nu_att, t)

    def virtual_acc(self, t: float) -> np.ndarray:
        return self._eval(self.nu_acc, t)

    def to_dict(self) -> dict:
        return {k: [[float(a), float(b), [float(c) for c in v]] for a, b, v in getattr(self, k)]
                for k in ("f_d", "tau_d", "nu_att", "nu_acc")}

    @classmethod
    def from_dict(cls, d: dict) -> "DisturbanceInput":
        return cls(**{k: [(float(a), float(b), list(map(float, v))) for a, b, v in d.get(k, [])]
                      for k in ("f_d", "tau_d", "nu_att", "nu_acc")})


def rotation_matrix(mu) -> np.ndarray:
    """Body-to-world rotation for ZYX Euler angles; columns are b_x, b_y, b_z."""
    phi, theta, psi = mu
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array([
        [ct * cp, sf * st * cp - cf * sp, cf * st * cp + sf * sp],
        [ct * sp, sf * st * sp + cf * cp, cf * st * sp - sf * cp],
        [-st, sf * ct, cf * ct],
    ])


def euler_rates(mu, Omega) -> np.ndarray:
    phi, theta, _ = mu
    if abs(theta) > THETA_LIMIT:
        raise SingularityError(f"pitch {math.degrees(theta):.1f} deg beyond the Euler-angle guard")
    cf, sf = math.cos(phi), math.sin(phi)
    ct, tt = math.cos(theta), math.tan(theta)
    p, q, r = Omega
    return np.array([p + (q * sf + r * cf) * tt, q * cf - r * sf, (q * sf + r * cf) / ct])


def effectiveness_matrices(params: QuadcopterParams):
    """``(G1, G2)`` in acceleration units.

    The yaw row of ``G2`` is divided by ``Izz`` like the rows of ``G1`` so
    that ``G1 + G2`` is a consistent acceleration map.
    """
    p = params
    lyk, lxk = p.ly * p.K_tau, p.lx * p.K_tau
    M = np.array([
        [-lyk, lyk, lyk, -lyk],
        [lxk, lxk, -lxk, -lxk],
        [p.K_q, -p.K_q, p.K_q, -p.K_q],
        [-p.K_tau, -p.K_tau, -p.K_tau, -p.K_tau],
    ])
    scale = np.array([1.0 / p.Ixx, 1.0 / p.Iyy, 1.0 / p.Izz, 1.0 / p.m])
    G1 = scale[:, None] * M
    G2 = np.zeros((4, 4))
    G2[2] = np.array([1.0, -1.0, 1.0, -1.0]) * p.I_rzz / (p.Izz * p.Ts)
    return G1, G2


def body_wrench(w, wdot, params: QuadcopterParams):
    """Physical ``(tau_B, f_B)`` from motor speeds and accelerations.

    ``f_B`` is the signed thrust along ``b_z`` (negative when lifting).
    """
    p = params
    T = 0.5 * p.K_tau * np.square(w)
    Q = 0.5 * p.K_q * np.square(w)
    spin = np.array([1.0, -1.0, 1.0, -1.0])
    tau = np.array([
        p.ly * (-T[0] + T[1] + T[2] - T[3]),
        p.lx * (T[0] + T[1] - T[2] - T[3]),
        spin @ Q + p.I_rzz * (spin @ wdot),
    ])
    return tau, -T.sum()


def actuator_step(w_c, w, Ts: float, tau_m: float, w_max: float = math.inf) -> np.ndarray:
    """Exact zero-order-hold step of ``1 / (tau_m s + 1)``, clamped to ``[0, w_max]``."""
    a = math.exp(-Ts / tau_m)
    w_next = a * np.asarray(w, dtype=float) + (1.0 - a) * np.asarray(w_c, dtype=float)
    return np.clip(w_next, 0.0, w_max)


def dynamics_derivative(state: QuadState, params: QuadcopterParams, w_c, t: float = 0.0,
                        disturbance: DisturbanceInput | None = None) -> QuadState:
    """Time derivative of the continuous state (filters excluded)."""
    p = params
    wdot = (np.asarray(w_c, dtype=float) - state.w) / p.tau_m
    tau_B, f_B = body_wrench(state.w, wdot, p)
    f_d = disturbance.force(t) if disturbance else np.zeros(3)
    tau_d = disturbance.torque(t) if disturbance else np.zeros(3)
    R = rotation_matrix(state.mu)
    vdot = np.array([0.0, 0.0, p.g]) + (f_B * R[:, 2] + f_d) / p.m
    I = p.inertia
    Om = state.Omega
    Omdot = np.linalg.solve(I, tau_B - np.cross(Om, I @ Om) + tau_d)
    return QuadState(state.v.copy(), vdot, euler_rates(state.mu, Om), Omdot, wdot)


def _deriv_vec(x, params, w_c, t, dist):
    return dynamics_derivative(QuadState.from_vector(x), params, w_c, t, dist).vector()


def rk4_step(state: QuadState, params: QuadcopterParams, w_c, t: float,
             disturbance: DisturbanceInput | None = None) -> QuadState:
    """Advance one sample with ``w_c`` held; motor speeds use the exact
    zero-order-hold update so they stay within ``[0, w_max]``."""
    w_c = np.clip(np.asarray(w_c, dtype=float), 0.0, params.w_max)
    h = params.Ts
    x = state.vector()
    k1 = _deriv_vec(x, params, w_c, t, disturbance)
    k2 = _deriv_vec(x + 0.5 * h * k1, params, w_c, t + 0.5 * h, disturbance)
    k3 = _deriv_vec(x + 0.5 * h * k2, params, w_c, t + 0.5 * h, disturbance)
    k4 = _deriv_vec(x + h * k3, params, w_c, t + h, disturbance)
    xn = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    new = QuadState.from_vector(xn, state.filters)
    new.w = actuator_step(w_c, state.w, h, params.tau_m, params.w_max)
    return new


def acceleration(state: QuadState, params: QuadcopterParams, w_c, t: float = 0.0,
                 disturbance: DisturbanceInput | None = None):
    """``(vdot, Omegadot)`` at the current state (what ideal sensors see)."""
    d = dynamics_derivative(state, params, w_c, t, disturbance)
    return d.v, d.Omega


# --- measurement filter --------------------------------------------------

class MeasurementFilter:
    """Tustin realization of ``H(s) = wn^2 / (s^2 + 2 xi wn s + wn^2)`` applied
    channel-wise to a vector signal.  The state is a ``(2, nch)`` array."""

    def __init__(self, xi: float = 0.55, wn: float = 50.0, fs: float = 500.0):
        self.xi, self.wn, self.fs = xi, wn, fs
        d = discretize_tustin(tf([wn * wn], [1.0, 2.0 * xi * wn, wn * wn]), fs)
        self.A, self.B, self.C, self.D = d.A, d.B[:, 0], d.C[0], float(d.D[0, 0])
        self._x_unit = np.linalg.solve(np.eye(2) - self.A, self.B)

    @classmethod
    def from_params(cls, params: QuadcopterParams) -> "MeasurementFilter":
        return cls(params.filter_xi, params.filter_wn, params.fs)

    def init(self, u) -> np.ndarray:
        """Steady-state filter state for a constant input ``u``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.outer(self._x_unit, u)

    def step(self, u, x):
        """Return ``(y, x_next)``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        y = self.C @ x + self.D * u
        return y, self.A @ x + np.outer(self.B, u)


def measurement_filter_step(raw, filter_state, params: QuadcopterParams,
                            filt: MeasurementFilter | None = None):
    """One filtered sample of ``raw``; returns ``(filtered, new_state)``."""
    filt = filt or MeasurementFilter.from_params(params)
    return filt.step(raw, filter_state)
