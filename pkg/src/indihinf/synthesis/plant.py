"""Loop models and the generalized plant of the cascaded mixed-sensitivity
problem.

Signals of the generalized plant ``P``::

    inputs   w = [r, d, n],   u
    outputs  z = [z1, z2, z3], ybar = [r - y, ydot + n]

with ``z1 = We (r - y)``, ``z2 = Wu u``, ``z3 = Wn y`` and the disturbance
entering the plant input as ``u + Wd d``.  The noise ``n`` corrupts the rate
measurement (gyro / velocity), which keeps ``D21`` full row rank.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..linsys import Block, LinsysError, StateSpace, interconnect, lft, ss, tf

W_NAMES = ("r", "d", "n")
Z_NAMES = ("z1", "z2", "z3")
Y_NAMES = ("e", "yd")

CHANNEL_PORTS = {
    # channel -> (output index in z, input index in w)
    "r->z1": (0, 0),
    "d->z1": (0, 1),
    "r->z2": (1, 0),
    "n->z3": (2, 2),
}


def double_integrator() -> StateSpace:
    """Acceleration -> [position, rate]."""
    return ss([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], np.eye(2), np.zeros((2, 1)))


def first_order_lag(tau: float) -> StateSpace:
    """``1 / (tau s + 1)``."""
    if not tau > 0:
        raise ValueError("time constant must be positive")
    return tf([1.0], [tau, 1.0])


def second_order_filter(xi: float, wn: float) -> StateSpace:
    """``wn^2 / (s^2 + 2 xi wn s + wn^2)``."""
    return tf([wn * wn], [1.0, 2.0 * xi * wn, wn * wn])


def loop_plant(G: StateSpace, A_act: StateSpace) -> StateSpace:
    """Virtual control -> [y, ydot]: actuator followed by the rigid-body part."""
    return G * A_act


@dataclass(frozen=True)
class GeneralizedPlant:
    P: StateSpace
    G: StateSpace
    A_act: StateSpace
    weights: object
    H: StateSpace | None = None
    nw: int = 3
    nz: int = 3
    ny: int = 2
    nu: int = 1

    def __post_init__(self):
        if self.P.ninputs != self.nw + self.nu or self.P.noutputs != self.nz + self.ny:
            raise LinsysError("port partition inconsistent with P")

    @property
    def order(self) -> int:
        return self.P.nstates

    def close(self, K: StateSpace) -> StateSpace:
        """Closed loop ``w -> z`` for a controller ``K: [e, ydot] -> u``."""
        return lft(self.P, K, self.nu, self.ny)

    def channels(self, K: StateSpace) -> dict:
        """The four weighted SISO channels of the closed loop."""
        T = self.close(K)
        return {name: T[i, j] for name, (i, j) in CHANNEL_PORTS.items()}


def build_generalized_plant(G: StateSpace, A_act: StateSpace, weights,
                            H: StateSpace | None = None) -> GeneralizedPlant:
    """Assemble ``P`` from the rigid-body model ``G`` (acceleration ->
    [y, ydot]), actuator ``A_act`` and a :class:`WeightSet`.

    The measurement filter ``H`` is carried along for the analysis layer but
    kept out of ``P``, which is what makes the attitude problem order 4
    (3 plant states plus the first-order ``We``).
    """
    if G.ninputs != 1 or G.noutputs != 2:
        raise LinsysError("G must map one acceleration input to [y, ydot]")
    if np.any(G.D != 0):
        raise LinsysError("G must be strictly proper")
    if A_act.ninputs != 1 or A_act.noutputs != 1:
        raise LinsysError("actuator model must be SISO")
    for name in ("We", "Wu", "Wd", "Wn"):
        W = getattr(weights, name)
        if W.is_discrete:
            raise LinsysError(f"{name} must be continuous")
    blocks = [
        Block(A_act, ["up"], ["acc"]),
        Block(G, ["acc"], ["y", "yd"]),
        Block(weights.We, ["err"], ["z1"]),
        Block(weights.Wu, ["u"], ["z2"]),
        Block(weights.Wd, ["d"], ["dw"]),
        Block(weights.Wn, ["y"], ["z3"]),
    ]
    sums = {
        "up": [("u", 1.0), ("dw", 1.0)],
        "e": [("r", 1.0), ("y", -1.0)],
        "err": [("e", 1.0)],
        "ydm": [("yd", 1.0), ("n", 1.0)],
    }
    P = interconnect(blocks, sums, list(W_NAMES) + ["u"], list(Z_NAMES) + ["e", "ydm"])
    return GeneralizedPlant(P=P, G=G, A_act=A_act, weights=weights, H=H)
