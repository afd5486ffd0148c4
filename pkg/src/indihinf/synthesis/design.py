"""Loop-level design entry points: preset weights and vehicle parameters in,
a :class:`ControllerSet` plus a synthesis report out."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from ..linsys import StateSpace, hinf_norm
from .controllers import ControllerSet, design_pd_modal, pd_controller
from .plant import (GeneralizedPlant, build_generalized_plant, double_integrator,
                    first_order_lag, second_order_filter)
from .riccati import hinf_synthesis
from .structured import Structure, synth_structured
from .weights import WeightSet, load_weight_presets, weights_from_dict

LOOPS = ("attitude", "guidance")
LOOP_AXIS = {"attitude": "roll", "guidance": "x"}


class DesignError(ValueError):
    pass


def preset_entry(preset: str, loop: str) -> dict:
    if loop not in LOOPS:
        raise DesignError(f"loop must be one of {LOOPS}, got {loop!r}")
    presets = load_weight_presets()
    if preset not in presets or loop not in presets[preset]:
        raise DesignError(f"no weight preset {preset!r}/{loop!r}")
    return presets[preset][loop]


def loop_models(params, loop: str, entry: dict):
    """``(G, A_act, H)`` of the INDI-linearized loop.

    The attitude loop sees the motor lag; the guidance loop sees the closed
    attitude loop, modelled as the first-order lag ``actuator_tau`` of the
    preset.
    """
    G = double_integrator()
    if loop == "attitude":
        A_act = first_order_lag(params.tau_m)
    else:
        A_act = first_order_lag(entry["actuator_tau"])
    H = second_order_filter(params.filter_xi, params.filter_wn)
    return G, A_act, H


@dataclass
class DesignResult:
    controller: ControllerSet
    plant: GeneralizedPlant
    weights: WeightSet
    gamma: float
    channel_norms: dict
    joint_norm: float
    preset: str
    loop: str
    notes: list = field(default_factory=list)

    def report(self) -> str:
        """Structured text: gammas, per-channel norms, controller, seed, starts."""
        c = self.controller
        lines = [
            f"preset: {self.preset}",
            f"loop: {self.loop}",
            f"kind: {c.kind}",
            f"order: {c.order}",
            f"gamma: {self.gamma:.6g}",
            f"joint_norm: {self.joint_norm:.6g}",
        ]
        for name, v in self.channel_norms.items():
            lines.append(f"channel {name}: {v:.6g}")
        lines.append(f"meets_templates: {self.gamma <= 1.0}")
        for key in ("seed", "starts", "structure"):
            if key in c.meta:
                lines.append(f"{key}: {c.meta[key]}")
        lines.append("weights: " + json.dumps(self.weights.to_dict()))
        for n in self.notes:
            lines.append(f"note: {n}")
        lines.append("controller:")
        lines.append(c.to_text())
        return "\n".join(lines) + "\n"


def channel_norms(gp: GeneralizedPlant, K: StateSpace, channels=None) -> dict:
    """Per-channel weighted norms, recomputed with :func:`hinf_norm`."""
    chans = gp.channels(K)
    names = channels or gp.weights.channels
    return {n: hinf_norm(chans[n]) for n in names}


def design(preset: str, loop: str, kind: str, params=None, weights: WeightSet | None = None,
           seed: int = 0, starts: int = 20, structure: Structure | None = None) -> DesignResult:
    """Design one loop controller from the shipped presets.

    ``kind`` is ``pd`` (baseline gains of the preset, or the modal design
    when the preset gives ``pd_modal``), ``hinf-full`` or ``hinf-structured``.
    """
    from ..vehicle import load_params
    entry = preset_entry(preset, loop)
    params = params or load_params(preset)
    W = weights or weights_from_dict(entry)
    G, A_act, H = loop_models(params, loop, entry)
    gp = build_generalized_plant(G, A_act, W, H)
    axis, fs = LOOP_AXIS[loop], params.fs
    notes = []

    if "pd" in entry:
        k_pos, k_rate = entry["pd"]
        pd = pd_controller(k_pos, k_rate, axis, fs)
    else:
        zeta, wn = entry["pd_modal"]
        md = design_pd_modal(A_act, zeta, wn, axis, fs)
        pd, k_pos, k_rate = md.controller, md.k_pos, md.k_rate

    if kind == "pd":
        ctrl = pd
        gamma = math.nan
    elif kind == "hinf-full":
        fo = hinf_synthesis(gp.P, gp.nu, gp.ny)
        ctrl = ControllerSet(axis, "hinf-full", K_full=fo.K, gamma=fo.gamma, fs=fs,
                             meta={"iterations": fo.iterations})
        gamma = fo.gamma
        notes += list(fo.notes)
    elif kind == "hinf-structured":
        st = structure or Structure(1, 1)
        res = synth_structured(gp, st, starts=starts, seed=seed, warm_start=(k_pos, k_rate),
                               axis=axis, fs=fs)
        ctrl, gamma = res.controller, res.gamma
        if not res.meets_templates:
            notes.append("templates not met: gamma > 1")
    else:
        raise DesignError(f"unknown controller kind {kind!r}")

    K = ctrl.combined()
    norms = channel_norms(gp, K)
    joint = hinf_norm(gp.close(K))
    if kind == "pd":
        gamma = max(norms.values())
    ctrl = ControllerSet(ctrl.axis, ctrl.kind, ctrl.K_outer, ctrl.K_inner, ctrl.K_full, gamma,
                         ctrl.fs, dict(ctrl.meta, preset=preset, loop=loop))
    return DesignResult(ctrl, gp, W, gamma, norms, joint, preset, loop, notes)


def write_shipped_controllers(out_dir, presets=("bebop-sim", "enac-exp"), seed: int = 0,
                              starts: int = 20) -> list:
    """Regenerate ``{preset}-{loop}-{kind}.json`` for every preset, loop and kind."""
    from pathlib import Path
    from .controllers import KINDS
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for preset in presets:
        for loop in LOOPS:
            for kind in KINDS:
                res = design(preset, loop, kind, seed=seed, starts=starts)
                path = out / f"{preset}-{loop}-{kind}.json"
                path.write_text(res.controller.to_text() + "\n")
                written.append(path)
    return written
