"""Closed-loop sensitivities of the INDI-linearized loops, margins and
template compliance.

Linearized loop of one axis, with ``nu`` the virtual control produced by
``K`` from ``[r - y, ydot]``::

    acc = A (nu + d_i) + (1 - A H) d_o
    [y, ydot] = G acc

The input disturbance ``d_i`` acts on the commanded virtual control, the
output disturbance ``d_o`` on the measured acceleration, whose low-frequency
part the inversion removes through the filtered feedback (``1 - A H``).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .linsys import (Block, FrequencyGrid, StateSpace, UnstableSystemError, freq_response, gain,
                     hinf_norm, interconnect)
from .synthesis.controllers import ControllerSet

DEFAULT_GRID = FrequencyGrid.log(1e-2, 1e3, 600)


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class SensitivitySet:
    S: StateSpace        # r -> e
    T: StateSpace        # r -> y
    KS: StateSpace       # r -> nu
    S_di: StateSpace     # d_i -> e
    S_do: StateSpace     # d_o -> e
    S_n: StateSpace      # rate noise -> y
    S_in: StateSpace     # loop broken at the virtual control: d_i -> nu + d_i
    closed_loop: StateSpace

    def responses(self, grid=None) -> dict:
        w = np.asarray(getattr(grid, "points", grid if grid is not None else DEFAULT_GRID.points))
        R = freq_response(self.closed_loop, w)
        out = {"w": w}
        for name, (i, j) in _PORTS.items():
            out[name] = R[:, i, j]
        return out


# closed-loop outputs [e, y, nu, nu_tot]; inputs [r, d_i, d_o, n]
_PORTS = {"S": (0, 0), "T": (1, 0), "KS": (2, 0), "S_di": (0, 1), "S_do": (0, 2),
          "S_n": (1, 3), "S_in": (3, 1)}


def _as_system(K) -> StateSpace:
    return K.combined() if isinstance(K, ControllerSet) else K


def closed_loop_sensitivities(G: StateSpace, K, H: StateSpace | None,
                              A_act: StateSpace) -> SensitivitySet:
    """All loop transfers for rigid-body model ``G`` (acc -> [y, ydot]),
    controller ``K`` ([e, ydot] -> nu), filter ``H`` and actuator ``A_act``.

    ``H=None`` means an unfiltered inversion (``1 - A``).
    """
    K = _as_system(K)
    Hs = gain(1.0) if H is None else H
    Do = gain(1.0) - A_act * Hs
    blocks = [
        Block(A_act, ["nu_tot"], ["acc_i"]),
        Block(Do, ["d_o"], ["acc_o"]),
        Block(G, ["acc"], ["y", "yd"]),
        Block(K, ["e", "ydm"], ["nu"]),
    ]
    sums = {
        "nu_tot": [("nu", 1.0), ("d_i", 1.0)],
        "acc": [("acc_i", 1.0), ("acc_o", 1.0)],
        "e": [("r", 1.0), ("y", -1.0)],
        "ydm": [("yd", 1.0), ("n", 1.0)],
    }
    cl = interconnect(blocks, sums, ["r", "d_i", "d_o", "n"], ["e", "y", "nu", "nu_tot"])
    if not cl.is_stable():
        bad = [complex(p) for p in cl.poles() if p.real >= 0]
        raise UnstableSystemError(f"closed loop unstable, eigenvalues {bad}")
    parts = {name: cl[i, j] for name, (i, j) in _PORTS.items()}
    return SensitivitySet(closed_loop=cl, **parts)


def bandwidth(S: StateSpace, grid=None) -> float | None:
    """First frequency where ``|S|`` crosses -3 dB from below."""
    w = np.asarray(getattr(grid, "points", grid if grid is not None else DEFAULT_GRID.points))
    mag = np.abs(freq_response(S, w)[:, 0, 0])
    lvl = 1.0 / math.sqrt(2.0)
    idx = np.flatnonzero((mag[:-1] < lvl) & (mag[1:] >= lvl))
    if idx.size == 0:
        return None
    i = idx[0]
    f = lambda lw: abs(freq_response(S, 10.0 ** lw)[0, 0]) - lvl
    return float(10.0 ** brentq(f, math.log10(w[i]), math.log10(w[i + 1]), xtol=1e-12))


@dataclass(frozen=True)
class Margins:
    modulus: float
    gain_db: float           # upward gain margin, inf if none
    phase_deg: float         # inf if |L| never crosses 1
    lower_gain_db: float     # downward gain margin (conditionally stable loops), inf if none
    w_gain: float | None
    w_phase: float | None


def margins(S: StateSpace, wmin: float = 1e-4, wmax: float = 1e5, n: int = 4000) -> Margins:
    """Margins of the loop whose sensitivity is ``S = 1 / (1 + L)``."""
    if not S.is_stable():
        raise UnstableSystemError("sensitivity must be stable")
    ms = hinf_norm(S)

    def L(w):
        s = freq_response(S, w)[..., 0, 0]
        return 1.0 / s - 1.0

    w = np.logspace(math.log10(wmin), math.log10(wmax), n)
    Lw = L(w)
    # phase crossovers: Im L changes sign with Re L < 0
    gm_up, gm_low, w_pc = math.inf, math.inf, None
    im = Lw.imag
    for i in np.flatnonzero(np.sign(im[:-1]) * np.sign(im[1:]) < 0):
        wc = 10.0 ** brentq(lambda lw: L(10.0 ** lw).imag, math.log10(w[i]), math.log10(w[i + 1]),
                            xtol=1e-13)
        Lc = L(wc)
        if Lc.real >= 0:
            continue
        g = -Lc.real
        db = -20.0 * math.log10(g)
        if g < 1 and db < gm_up:
            gm_up, w_pc = db, wc
        elif g > 1 and -db < gm_low:
            gm_low = -db
    # gain crossovers
    pm, w_gc = math.inf, None
    mag = np.abs(Lw) - 1.0
    for i in np.flatnonzero(np.sign(mag[:-1]) * np.sign(mag[1:]) < 0):
        wc = 10.0 ** brentq(lambda lw: abs(L(10.0 ** lw)) - 1.0, math.log10(w[i]),
                            math.log10(w[i + 1]), xtol=1e-13)
        ph = math.degrees(np.angle(L(wc)))
        m = 180.0 + ph if ph <= 0 else 180.0 - ph
        if m < pm:
            pm, w_gc = m, wc
    return Margins(1.0 / ms, gm_up, pm, gm_low, w_gc, w_pc)


@dataclass
class ChannelReport:
    channel: str
    peak: float
    w_peak: float
    passed: bool
    margin_db: np.ndarray      # 20 log10(gamma / |W T|) per grid point


@dataclass
class ComplianceReport:
    gamma: float
    grid: np.ndarray
    channels: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.channels.values())

    def failing(self) -> list:
        return [c.channel for c in self.channels.values() if not c.passed]


def weighted_channels(sens: SensitivitySet, weights) -> dict:
    """The four weighted closed-loop channels."""
    return {
        "r->z1": weights.We * sens.S,
        "d->z1": weights.We * sens.S_di * weights.Wd,
        "r->z2": weights.Wu * sens.KS,
        "n->z3": weights.Wn * sens.S_n,
    }


def template_compliance(sens: SensitivitySet, weights, gamma: float, grid=None,
                        rtol: float = 1e-2) -> ComplianceReport:
    """Per-channel worst weighted gain against ``gamma``.

    The peak is the exact H-infinity norm of the weighted channel; the
    per-frequency margin is evaluated on ``grid``.
    """
    w = np.asarray(getattr(grid, "points", grid if grid is not None else DEFAULT_GRID.points))
    out = {}
    for name, sysw in weighted_channels(sens, weights).items():
        peak, wpk = hinf_norm(sysw, return_peak=True)
        mag = np.abs(freq_response(sysw, w)[:, 0, 0])
        with np.errstate(divide="ignore"):
            mdb = 20.0 * np.log10(gamma / mag)
        out[name] = ChannelReport(name, peak, wpk, peak <= gamma * (1.0 + rtol), mdb)
    return ComplianceReport(gamma, w, out)


def sensitivity_csv(sets: dict, weights=None, gamma: float = 1.0, grid=None) -> str:
    """Plot-ready CSV: one row per frequency, ``|.|`` in dB per controller.

    The template column is ``gamma / |We|`` (the bound on ``|S|``).
    """
    w = np.asarray(getattr(grid, "points", grid if grid is not None else DEFAULT_GRID.points))
    cols = ["w"]
    data = [w]
    if weights is not None:
        cols.append("template_S_db")
        data.append(20 * np.log10(gamma / np.abs(freq_response(weights.We, w)[:, 0, 0])))
    for name, sens in sets.items():
        R = sens.responses(w)
        for key in ("S", "KS", "S_di", "S_do"):
            cols.append(f"{name}_{key}_db")
            data.append(20 * np.log10(np.abs(R[key])))
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(cols)
    for row in np.column_stack(data):
        wr.writerow([repr(float(x)) for x in row])
    return buf.getvalue()
