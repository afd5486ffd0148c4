"""Cascaded controller containers and the modal PD baseline."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..linsys import (Block, LinsysError, StateSpace, discretize_tustin, from_dict, gain,
                      interconnect, tf, to_dict)

KINDS = ("pd", "hinf-full", "hinf-structured")
AXES = ("roll", "pitch", "yaw", "x", "y", "z")


def cascade(K_outer: StateSpace, K_inner: StateSpace) -> StateSpace:
    """Two-input controller ``u = K_inner (K_outer e - ydot)``, inputs ``[e, ydot]``."""
    return interconnect(
        [Block(K_outer, ["e"], ["a"]), Block(K_inner, ["v"], ["u"])],
        {"v": [("a", 1.0), ("yd", -1.0)]}, ["e", "yd"], ["u"])


def lead_lag(k: float, z: float | None = None, p: float | None = None) -> StateSpace:
    """``k (s + z) / (s + p)``; a static gain when ``z`` and ``p`` are None."""
    if z is None and p is None:
        return gain(k)
    return tf([k, k * z], [1.0, p])


@dataclass(frozen=True)
class ControllerSet:
    """Controller of one axis: cascade ``K_inner [K_outer, -1]`` or a full-order
    two-input ``K_full``.  ``fs`` is the rate the runtime discretizes at."""

    axis: str
    kind: str
    K_outer: StateSpace | None = None
    K_inner: StateSpace | None = None
    K_full: StateSpace | None = None
    gamma: float = math.nan
    fs: float = 500.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown axis {self.axis!r}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        if self.K_full is None and (self.K_outer is None or self.K_inner is None):
            raise ValueError("need either K_full or both cascade blocks")
        for K in (self.K_outer, self.K_inner):
            if K is not None and K.nstates:
                unstable = [p for p in K.poles() if p.real > 1e-9]
                if unstable:
                    raise ValueError("sub-controllers must be stable (one integrator allowed)")

    @property
    def order(self) -> int:
        if self.K_full is not None:
            return self.K_full.nstates
        return self.K_outer.nstates + self.K_inner.nstates

    def combined(self) -> StateSpace:
        """Continuous two-input controller ``[e, ydot] -> u``."""
        if self.K_full is not None:
            return self.K_full
        return cascade(self.K_outer, self.K_inner)

    def discrete(self) -> StateSpace:
        return discretize_tustin(self.combined(), self.fs)

    def with_axis(self, axis: str) -> "ControllerSet":
        return ControllerSet(axis, self.kind, self.K_outer, self.K_inner, self.K_full,
                             self.gamma, self.fs, dict(self.meta))

    def to_dict(self) -> dict:
        d = {"axis": self.axis, "kind": self.kind, "gamma": self.gamma, "fs": self.fs,
             "order": self.order, "meta": self.meta}
        for name in ("K_outer", "K_inner", "K_full"):
            K = getattr(self, name)
            d[name] = None if K is None else to_dict(K)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerSet":
        Ks = {name: (None if d.get(name) is None else from_dict(d[name]))
              for name in ("K_outer", "K_inner", "K_full")}
        return cls(axis=d["axis"], kind=d["kind"], gamma=d.get("gamma", math.nan),
                   fs=d.get("fs", 500.0), meta=d.get("meta", {}), **Ks)

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_text(cls, text: str) -> "ControllerSet":
        return cls.from_dict(json.loads(text))


def pd_controller(k_pos: float, k_rate: float, axis: str = "roll", fs: float = 500.0,
                  **meta) -> ControllerSet:
    return ControllerSet(axis, "pd", gain(k_pos), gain(k_rate), fs=fs, meta=meta)


def actuator_time_constant(A_act: StateSpace) -> float:
    """Time constant of a unit-DC-gain first-order lag."""
    if A_act.nstates != 1 or A_act.ninputs != 1 or A_act.noutputs != 1:
        raise LinsysError("actuator model must be first order SISO")
    pole = float(A_act.A[0, 0])
    if pole >= 0:
        raise LinsysError("actuator model must be stable")
    if abs(A_act.dcgain()[0, 0] - 1.0) > 1e-9 or abs(A_act.D[0, 0]) > 1e-12:
        raise LinsysError("actuator model must be 1/(tau s + 1)")
    return -1.0 / pole


@dataclass(frozen=True)
class ModalDesign:
    k_pos: float
    k_rate: float
    poles: np.ndarray
    controller: ControllerSet


def design_pd_modal(A_act: StateSpace, zeta: float, wn: float, axis: str = "roll",
                    fs: float = 500.0) -> ModalDesign:
    """Static cascade gains placing the dominant pair at ``(zeta, wn)``.

    Closed loop of ``u = Kr (Kp (r - y) - ydot)`` around ``1 / (s^2 (tau s + 1))``
    has characteristic polynomial ``tau s^3 + s^2 + Kr s + Kr Kp``; with two
    gains the third pole is forced to ``1/tau - 2 zeta wn``.
    """
    tau = actuator_time_constant(A_act)
    if not (zeta > 0 and wn > 0):
        raise ValueError("zeta and wn must be positive")
    a = 1.0 / tau - 2.0 * zeta * wn
    if a <= 0:
        raise ValueError(
            f"unachievable placement: third pole would be at {-a:.4g} rad/s "
            f"(need 2*zeta*wn < 1/tau = {1 / tau:.4g})")
    k_rate = tau * (wn * wn + 2.0 * zeta * wn * a)
    k_pos = tau * wn * wn * a / k_rate
    poles = np.roots([tau, 1.0, k_rate, k_rate * k_pos])
    poles = poles[np.lexsort((poles.imag, poles.real))]
    ctrl = pd_controller(k_pos, k_rate, axis=axis, fs=fs, zeta=zeta, wn=wn, tau=tau)
    return ModalDesign(k_pos, k_rate, poles, ctrl)
