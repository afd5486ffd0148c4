from importlib import resources

import pytest

from indihinf.synthesis.controllers import ControllerSet
from indihinf.synthesis.design import channel_norms, design, loop_models, preset_entry
from indihinf.synthesis.plant import build_generalized_plant
from indihinf.synthesis.weights import weights_from_dict
from indihinf.vehicle import load_params

PRESETS = ("bebop-sim", "enac-exp")
LOOPS = ("attitude", "guidance")


def shipped_text(preset, loop, kind):
    return (resources.files("indihinf") / "data" / "controllers"
            / f"{preset}-{loop}-{kind}.json").read_text()


@pytest.mark.parametrize("preset", PRESETS)
@pytest.mark.parametrize("loop", LOOPS)
@pytest.mark.parametrize("kind,order", [("hinf-full", 4), ("hinf-structured", 2), ("pd", 0)])
def test_shipped_controller(preset, loop, kind, order):
    c = ControllerSet.from_text(shipped_text(preset, loop, kind))
    assert c.kind == kind
    if kind == "hinf-full" and loop == "guidance":
        assert c.order >= 4
    else:
        assert c.order == order
    if kind == "pd":
        return
    entry = preset_entry(preset, loop)
    G, A, H = loop_models(load_params(preset), loop, entry)
    gp = build_generalized_plant(G, A, weights_from_dict(entry), H)
    norms = channel_norms(gp, c.combined())
    assert max(norms.values()) <= c.gamma * 1.01


@pytest.mark.parametrize("kind", ["hinf-full", "hinf-structured"])
def test_regeneration_reproduces_shipped(kind):
    res = design("bebop-sim", "attitude", kind, seed=0, starts=20)
    assert res.controller.to_text() + "\n" == shipped_text("bebop-sim", "attitude", kind)
