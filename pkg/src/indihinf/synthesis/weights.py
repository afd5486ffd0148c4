"""Weighting templates for the mixed-sensitivity problem."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources

from ..linsys import StateSpace, gain, tf

CHANNELS = ("r->z1", "d->z1", "r->z2", "n->z3")


class WeightError(ValueError):
    pass


def make_tracking_weight(Ms: float, wb: float, eps_e: float) -> StateSpace:
    """``We(s) = (s/Ms + wb) / (s + wb*eps_e)``.

    DC gain is ``1/eps_e`` (steady-state error bound), high-frequency gain
    ``1/Ms`` (modulus margin), crossover near ``wb``.
    """
    if not Ms >= 1.0:
        raise WeightError(f"Ms must be >= 1, got {Ms}")
    if not wb > 0.0:
        raise WeightError(f"wb must be positive, got {wb}")
    if not 0.0 < eps_e <= 1.0:
        raise WeightError(f"eps_e must lie in (0, 1], got {eps_e}")
    return tf([1.0 / Ms, wb], [1.0, wb * eps_e])


@dataclass(frozen=True)
class WeightSet:
    """Templates of the four channels plus the parameters that built them.

    ``Wd`` is the extra weight on the disturbance input, so the template
    of the ``d -> z1`` channel is ``We * Wd``.  It is the static ``Md`` by
    default; with a corner ``wd_corner`` it becomes the high-pass
    ``Md (s + wd_floor*wd_corner) / (s + wd_corner)`` whose DC gain is
    ``Md * wd_floor``.
    """

    We: StateSpace
    Wu: StateSpace
    Wd: StateSpace
    Wn: StateSpace
    Ms: float
    wb: float
    eps_e: float
    Md: float
    reconstructed: bool = False
    channels: tuple = CHANNELS
    wd_corner: float | None = None
    wd_floor: float = 1.0

    def __post_init__(self):
        if self.Ms < 1 or self.wb <= 0 or not 0 < self.eps_e < 1 or self.Md < 1:
            raise WeightError("weight parameters out of range (Ms>=1, wb>0, 0<eps_e<1, Md>=1)")
        if not self.We.is_stable():
            raise WeightError("We must be stable")
        if not self.Wu.is_static or not self.Wn.is_static:
            raise WeightError("Wu and Wn are static gains")
        if not set(self.channels) <= set(CHANNELS) or not self.channels:
            raise WeightError(f"channels must be a nonempty subset of {CHANNELS}")
        if self.wd_corner is not None and not (self.wd_corner > 0 and 0 < self.wd_floor <= 1):
            raise WeightError("wd_corner must be positive and wd_floor in (0, 1]")

    @classmethod
    def build(cls, Ms, wb, eps_e, Md, wu, wn, reconstructed=False, wd_corner=None,
              wd_floor=1.0) -> "WeightSet":
        if wd_corner is None:
            Wd = gain(Md)
        else:
            Wd = tf([Md, Md * wd_floor * wd_corner], [1.0, wd_corner])
        return cls(We=make_tracking_weight(Ms, wb, eps_e), Wu=gain(wu), Wd=Wd,
                   Wn=gain(wn), Ms=Ms, wb=wb, eps_e=eps_e, Md=Md,
                   reconstructed=reconstructed, wd_corner=wd_corner, wd_floor=wd_floor)

    @property
    def wu(self) -> float:
        return float(self.Wu.D[0, 0])

    @property
    def wn(self) -> float:
        return float(self.Wn.D[0, 0])

    def templates(self) -> dict:
        """Channel templates (the inverse bound shapes) keyed by channel name."""
        return {"r->z1": self.We, "d->z1": self.We * self.Wd,
                "r->z2": self.Wu, "n->z3": self.Wn}

    def without(self, *channels: str) -> "WeightSet":
        """Copy whose optimizer objective ignores the named channels."""
        return replace(self, channels=tuple(c for c in self.channels if c not in channels))

    def to_dict(self) -> dict:
        return {"Ms": self.Ms, "wb": self.wb, "eps_e": self.eps_e, "Md": self.Md,
                "wu": self.wu, "wn": self.wn, "reconstructed": self.reconstructed,
                "channels": list(self.channels), "wd_corner": self.wd_corner,
                "wd_floor": self.wd_floor}


def load_weight_presets() -> dict:
    text = resources.files("indihinf.data").joinpath("weights.json").read_text()
    return json.loads(text)


def preset_weights(name: str, loop: str) -> WeightSet:
    """Weights shipped in ``data/weights.json`` for ``name`` ("bebop-sim",
    "enac-exp") and ``loop`` ("attitude", "guidance")."""
    presets = load_weight_presets()
    try:
        w = presets[name][loop]
    except KeyError:
        raise WeightError(f"no weight preset {name!r}/{loop!r}") from None
    return weights_from_dict(w)


def weights_from_dict(w: dict) -> WeightSet:
    wb = w["wb"] if "wb" in w else 2 * math.pi * w["wb_hz"]
    ws = WeightSet.build(w["Ms"], wb, w["eps_e"], w["Md"], w["wu"], w["wn"],
                         reconstructed=w.get("reconstructed", False),
                         wd_corner=w.get("wd_corner"), wd_floor=w.get("wd_floor", 1.0))
    return replace(ws, channels=tuple(w.get("channels", CHANNELS)))
