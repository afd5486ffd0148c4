"""Grey-box identification of the actuator time constant and the
effectiveness matrix from logged increments.

Model (yaw gyroscopic lag term dropped)::

    [d Omegadot_f ; d a_z_f] = G12 d w_f,     w_hat = A_hat(s) (scale * u_m)

For a fixed time constant the effectiveness matrix is a linear
least-squares solution; the time constant is found by a golden-section
search on ``log(tau)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linsys import StateSpace, pseudo_inverse
from .vehicle import MeasurementFilter

FS = 500.0
TAU_BRACKET = (1.0 / 200.0, 1.0)
LOG_COLUMNS = ("t", "p", "q", "r", "az", "u1", "u2", "u3", "u4")


@dataclass
class FlightLog:
    gyro: np.ndarray                 # (N, 3) rad/s
    az: np.ndarray                   # (N,) body z acceleration, m/s^2
    u_m: np.ndarray                  # (N, 4) normalized throttle
    w: np.ndarray | None = None      # (N, 4) true motor speeds if available
    fs: float = FS

    def __post_init__(self):
        self.gyro = np.asarray(self.gyro, dtype=float)
        self.az = np.asarray(self.az, dtype=float).ravel()
        self.u_m = np.asarray(self.u_m, dtype=float)
        n = len(self.az)
        if self.gyro.shape != (n, 3) or self.u_m.shape != (n, 4):
            raise ValueError("log channels must have equal length (gyro Nx3, az N, u_m Nx4)")
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=float)
            if self.w.shape != (n, 4):
                raise ValueError("motor-speed channel must be Nx4")
        if not self.fs > 0:
            raise ValueError("sampling frequency must be positive")

    def __len__(self) -> int:
        return len(self.az)

    @property
    def duration(self) -> float:
        return (len(self) - 1) / self.fs

    def to_csv(self, path=None) -> str:
        t = np.arange(len(self)) / self.fs
        cols = list(LOG_COLUMNS) + (["w1", "w2", "w3", "w4"] if self.w is not None else [])
        data = [t, self.gyro, self.az, self.u_m] + ([self.w] if self.w is not None else [])
        arr = np.column_stack(data)
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(cols)
        for row in arr:
            wr.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "FlightLog":
        p = Path(str(path_or_text)) if "\n" not in str(path_or_text) else None
        text = p.read_text() if p is not None else str(path_or_text)
        rows = list(csv.reader(io.StringIO(text)))
        head, body = rows[0], np.array(rows[1:], dtype=float)
        missing = [c for c in LOG_COLUMNS if c not in head]
        if missing:
            raise ValueError(f"log is missing columns {missing}")
        col = {c: body[:, head.index(c)] for c in head}
        t = col["t"]
        fs = 1.0 / float(np.median(np.diff(t))) if len(t) > 1 else FS
        w = np.column_stack([col[f"w{i}"] for i in range(1, 5)]) if "w1" in col else None
        return cls(np.column_stack([col["p"], col["q"], col["r"]]), col["az"],
                   np.column_stack([col[f"u{i}"] for i in range(1, 5)]), w, round(fs, 9))


@dataclass
class EstimationResult:
    tau_m: float
    G12: np.ndarray
    residual: float
    fit_pct: float
    converged: bool = True
    iterations: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"tau_m": self.tau_m, "G12": self.G12.tolist(), "residual": self.residual,
                "fit_pct": self.fit_pct, "converged": self.converged,
                "iterations": self.iterations, "notes": self.notes}


def first_order_actuator(tau: float) -> StateSpace:
    from .linsys import tf
    return tf([1.0], [tau, 1.0])


def estimate_motor_speed(u_m, A_hat, fs: float = FS, scale: float = 1.0) -> np.ndarray:
    """``w_hat = A_hat(s) (scale u_m)`` with a zero-order hold on ``u_m``;
    ``A_hat`` is a first-order StateSpace or a time constant.  The filter
    starts converged on the first command."""
    if isinstance(A_hat, StateSpace):
        if A_hat.nstates != 1:
            raise ValueError("actuator model must be first order")
        tau = -1.0 / float(A_hat.A[0, 0])
    else:
        tau = float(A_hat)
    if not tau > 0:
        raise ValueError("actuator time constant must be positive")
    u = scale * np.asarray(u_m, dtype=float)
    a = math.exp(-1.0 / (fs * tau))
    out = np.empty_like(u)
    x = u[0].copy()
    # output at k is the speed reached at sample k with u[k-1] held over the interval
    for k in range(len(u)):
        out[k] = x
        x = a * x + (1.0 - a) * u[k]
    return out


def _filter(sig, filt: MeasurementFilter) -> np.ndarray:
    sig = np.asarray(sig, dtype=float)
    flat = sig.reshape(len(sig), -1)
    x = filt.init(flat[0])
    out = np.empty_like(flat)
    for k in range(len(flat)):
        out[k], x = filt.step(flat[k], x)
    return out.reshape(sig.shape)


def build_increments(log: FlightLog, filt: MeasurementFilter | None = None,
                     w_hat: np.ndarray | None = None):
    """``(y, dw_f)`` with rows per sample (the first two samples are dropped
    because the angular acceleration needs two filtered rates)."""
    filt = filt or MeasurementFilter(fs=log.fs)
    if w_hat is None:
        if log.w is None:
            raise ValueError("need w_hat or logged motor speeds")
        w_hat = log.w
    Om_f = _filter(log.gyro, filt)
    az_f = _filter(log.az, filt)
    w_f = _filter(w_hat, filt)
    Omdot_f = np.diff(Om_f, axis=0) * log.fs              # index k -> sample k+1
    acc = np.column_stack([Omdot_f, az_f[1:]])
    y = np.diff(acc, axis=0)
    dw = np.diff(w_f[1:], axis=0)
    return y, dw


def _lstsq(y, dw):
    """``G`` minimizing ``||y - dw G^T||``; returns ``(G, residual)``."""
    G = (pseudo_inverse(dw) @ y).T
    r = y - dw @ G.T
    return G, float(np.linalg.norm(r))


def fit_percentage(y, yhat) -> float:
    y, yhat = np.asarray(y), np.asarray(yhat)
    den = np.linalg.norm(y - y.mean(axis=0))
    if den == 0:
        return 100.0 if np.allclose(y, yhat) else -math.inf
    return float(100.0 * (1.0 - np.linalg.norm(y - yhat) / den))


def _objective(log, tau, filt, scale):
    w_hat = estimate_motor_speed(log.u_m, tau, log.fs, scale)
    y, dw = build_increments(log, filt, w_hat)
    G, res = _lstsq(y, dw)
    return res, G, y, dw


def estimate_parameters(log: FlightLog, init: EstimationResult | float | None = None,
                        speed_scale: float = 1.0, bracket=TAU_BRACKET, tol: float = 1e-6,
                        max_iter: int = 200) -> EstimationResult:
    """Minimize ``||y - y_hat||`` over ``(tau_m, G12)``.

    ``init`` is the datasheet time constant (or a previous result); the
    effectiveness matrix at that time constant is the analytic
    pseudo-inverse solution and is kept if the search does not improve on it.
    """
    if log.duration < 2.0 - 1e-9:
        raise ValueError("need at least 2 s of log")
    filt = MeasurementFilter(fs=log.fs)
    tau0 = init.tau_m if isinstance(init, EstimationResult) else (init or 1.0 / 50.0)
    res0, G0, _, _ = _objective(log, tau0, filt, speed_scale)
    notes = ["yaw row low-confidence: yaw dynamics unexcited and gyroscopic lag term dropped"]

    lo, hi = math.log(bracket[0]), math.log(bracket[1])
    gr = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = hi - gr * (hi - lo), lo + gr * (hi - lo)
    fc = _objective(log, math.exp(c), filt, speed_scale)[0]
    fd = _objective(log, math.exp(d), filt, speed_scale)[0]
    it = 0
    while (hi - lo) > tol and it < max_iter:
        it += 1
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - gr * (hi - lo)
            fc = _objective(log, math.exp(c), filt, speed_scale)[0]
        else:
            lo, c, fc = c, d, fd
            d = lo + gr * (hi - lo)
            fd = _objective(log, math.exp(d), filt, speed_scale)[0]
    converged = (hi - lo) <= tol
    tau = math.exp(0.5 * (lo + hi))
    res, G, y, dw = _objective(log, tau, filt, speed_scale)
    if res0 < res:
        tau, res, G = tau0, res0, G0
        _, _, y, dw = _objective(log, tau, filt, speed_scale)
        notes.append("search did not improve on the initialization")
    if not converged:
        notes.append(f"golden-section search stopped after {it} iterations")
    return EstimationResult(tau, G, res, fit_percentage(y, dw @ G.T), converged, it, notes)


def initial_estimate(log: FlightLog, tau_datasheet: float, speed_scale: float = 1.0
                     ) -> EstimationResult:
    """Pseudo-inverse solution at the datasheet time constant."""
    filt = MeasurementFilter(fs=log.fs)
    res, G, y, dw = _objective(log, tau_datasheet, filt, speed_scale)
    return EstimationResult(tau_datasheet, G, res, fit_percentage(y, dw @ G.T), True, 0,
                            ["analytic pseudo-inverse initialization"])


def linearized_G12(params) -> np.ndarray:
    """Effectiveness of motor-speed increments at hover, ``G1 diag(w_h) + G2``
    (thrust is ``K_tau w^2 / 2`` per rotor, so ``G1`` already carries the 1/2)."""
    from .vehicle import effectiveness_matrices
    G1, G2 = effectiveness_matrices(params)
    return G1 @ np.diag(np.full(4, params.w_hover)) + G2


def synthetic_log(G12, tau_m: float, duration: float = 4.0, fs: float = FS, seed: int = 0,
                  noise: float = 0.0, u0: float = 0.5, amp: float = 0.1,
                  hold: float = 0.05, speed_scale: float = 1.0) -> FlightLog:
    """Log generated from the increment model itself.

    Each throttle channel is a random staircase around ``u0``; motor speeds
    follow the exact zero-order-hold lag; body accelerations are
    ``G12 (w - w0)`` (plus ``-g`` on ``az``) and the gyro integrates the
    angular accelerations so its backward difference reproduces them.
    ``noise`` is the standard deviation of white noise on the measured
    angular and vertical accelerations, relative to each channel's own
    standard deviation (the gyro integrates the noisy angular acceleration).
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs)) + 1
    nhold = max(1, int(round(hold * fs)))
    levels = u0 + amp * rng.uniform(-1.0, 1.0, size=(n // nhold + 1, 4))
    u = np.repeat(levels, nhold, axis=0)[:n]
    w = estimate_motor_speed(u, tau_m, fs, speed_scale)
    acc = (np.asarray(G12, dtype=float) @ (w - w[0]).T).T
    if noise > 0:
        acc = acc + noise * acc.std(axis=0) * rng.standard_normal(acc.shape)
    gyro = np.cumsum(acc[:, :3], axis=0) / fs
    az = acc[:, 3] - 9.81
    return FlightLog(gyro, az, u, w, fs)
