"""Scenario runner, time-domain metrics and controller comparison."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .indi import CascadedController, IndiError, measure
from .synthesis.controllers import ControllerSet
from .vehicle import (DisturbanceInput, QuadcopterParams, QuadState, SingularityError,
                      acceleration, load_params, rk4_step)

XI_BOUND = 100.0
OMEGA_BOUND = 200.0

# default drag surrogate: half rho C A, chosen so that 7.2 m/s gives 3 N
HALF_RHO_CA = 3.0 / 7.2 ** 2

ATT_AXES = ("roll", "pitch", "yaw")
POS_AXES = ("x", "y", "z")


def wind_force(speed: float, half_rho_ca: float = HALF_RHO_CA) -> float:
    """Drag-surrogate force (N) for a wind speed (m/s); not a measured model."""
    return half_rho_ca * speed * abs(speed)


@dataclass
class Scenario:
    """A simulated experiment.

    ``reference`` is either ``{"type": "attitude", "steps": [[t, phi, theta, psi], ...]}``
    (attitude-only stack, thrust held) or
    ``{"type": "position", "waypoints": [[t, x, y, z], ...]}``; references
    are piecewise constant from each listed time.  ``controllers`` maps a
    loop (``attitude`` / ``guidance``) to a kind (pd, hinf-full,
    hinf-structured) or a controller-file path.
    """

    name: str
    duration: float
    reference: dict
    disturbance: DisturbanceInput = field(default_factory=DisturbanceInput)
    controllers: dict = field(default_factory=lambda: {"attitude": "pd", "guidance": "pd"})
    preset: str = "bebop-sim"
    seed: int = 0
    gyro_noise: float = 0.0          # rad/s standard deviation
    metric: dict = field(default_factory=dict)
    G12_scale: float = 1.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        kind = self.reference.get("type")
        if kind not in ("attitude", "position"):
            raise ValueError(f"reference type must be 'attitude' or 'position', got {kind!r}")
        key = "steps" if kind == "attitude" else "waypoints"
        pts = np.asarray(self.reference.get(key, []), dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 4 or not np.all(np.isfinite(pts)):
            raise ValueError(f"reference {key} must be finite rows [t, a, b, c]")
        for sched in (self.disturbance.f_d, self.disturbance.tau_d, self.disturbance.nu_att,
                      self.disturbance.nu_acc):
            for t0, t1, _ in sched:
                if not 0 <= t0 < t1 <= self.duration:
                    raise ValueError("disturbance schedule must lie within the duration")

    @property
    def loop(self) -> str:
        return "attitude" if self.reference["type"] == "attitude" else "guidance"

    def ref_table(self) -> np.ndarray:
        key = "steps" if self.reference["type"] == "attitude" else "waypoints"
        return np.asarray(self.reference[key], dtype=float)

    def to_dict(self) -> dict:
        return {"name": self.name, "duration": self.duration, "reference": self.reference,
                "disturbance": self.disturbance.to_dict(), "controllers": self.controllers,
                "preset": self.preset, "seed": self.seed, "gyro_noise": self.gyro_noise,
                "metric": self.metric, "G12_scale": self.G12_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        d["disturbance"] = DisturbanceInput.from_dict(d.get("disturbance", {}))
        return cls(**d)

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_text(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    def with_controllers(self, **loops) -> "Scenario":
        d = self.to_dict()
        d["controllers"] = {**self.controllers, **loops}
        return Scenario.from_dict(d)


def load_scenario(name_or_path: str) -> Scenario:
    """A shipped scenario (``fig7a``, ``fig7b``, ``fig10``, ``wind-hover``,
    ``wind-waypoints``) or a path to a scenario file."""
    p = Path(name_or_path)
    if p.is_file():
        return Scenario.from_text(p.read_text())
    res = resources.files("indihinf.data").joinpath("scenarios", f"{name_or_path}.scenario")
    if not res.is_file():
        raise FileNotFoundError(f"no scenario {name_or_path!r}")
    return Scenario.from_text(res.read_text())


def shipped_controller(preset: str, loop: str, kind: str) -> ControllerSet:
    res = resources.files("indihinf.data").joinpath("controllers", f"{preset}-{loop}-{kind}.json")
    if not res.is_file():
        raise FileNotFoundError(f"no shipped controller {preset}/{loop}/{kind}")
    return ControllerSet.from_text(res.read_text())


def resolve_controller(spec, preset: str, loop: str) -> ControllerSet:
    if isinstance(spec, ControllerSet):
        return spec
    if isinstance(spec, str) and Path(spec).is_file():
        return ControllerSet.from_text(Path(spec).read_text())
    return shipped_controller(preset, loop, spec)


def _axis_map(ctrl: ControllerSet, axes) -> dict:
    return {ax: ctrl.with_axis(ax) for ax in axes}


@dataclass
class SimTrace:
    name: str
    t: np.ndarray
    ref: np.ndarray          # (N, 3): attitude or position reference
    xi: np.ndarray
    v: np.ndarray
    mu: np.ndarray
    Omega: np.ndarray
    w: np.ndarray
    w_c: np.ndarray
    mu_c: np.ndarray
    nu_att: np.ndarray
    nu_acc: np.ndarray
    f_d: np.ndarray
    tau_d: np.ndarray
    Omega_f: np.ndarray
    a_f: np.ndarray
    loop: str = "attitude"
    status: str = "ok"
    error: str = ""

    COLUMNS = ("t", "ref", "xi", "v", "mu", "Omega", "w", "w_c", "mu_c", "nu_att", "nu_acc",
               "f_d", "tau_d", "Omega_f", "a_f")

    def __len__(self) -> int:
        return len(self.t)

    def signal(self, name: str) -> np.ndarray:
        """Named scalar signal: roll/pitch/yaw, x/y/z, or e.g. ``theta_c``."""
        names = {"roll": ("mu", 0), "pitch": ("mu", 1), "yaw": ("mu", 2),
                 "x": ("xi", 0), "y": ("xi", 1), "z": ("xi", 2),
                 "phi_c": ("mu_c", 0), "theta_c": ("mu_c", 1), "psi_c": ("mu_c", 2)}
        arr, i = names[name]
        return getattr(self, arr)[:, i]

    def reference(self, name: str) -> np.ndarray:
        i = {"roll": 0, "pitch": 1, "yaw": 2, "x": 0, "y": 1, "z": 2}[name]
        return self.ref[:, i]

    def header(self) -> list:
        cols = ["t"]
        for c in self.COLUMNS[1:]:
            n = getattr(self, c).shape[1]
            cols += [f"{c}_{i}" for i in range(n)]
        return cols

    def to_csv(self, path_or_buf=None) -> str:
        data = np.column_stack([self.t] + [getattr(self, c) for c in self.COLUMNS[1:]])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for row in data:
            w.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if path_or_buf is not None:
            Path(path_or_buf).write_text(text)
        return text


def _ref_at(table: np.ndarray, t: float) -> np.ndarray:
    idx = np.searchsorted(table[:, 0], t, side="right") - 1
    if idx < 0:
        return np.zeros(3)
    return table[idx, 1:]


def run_scenario(scenario: Scenario, controllers: dict | None = None,
                 params: QuadcopterParams | None = None) -> SimTrace:
    """Simulate ``scenario``; ``controllers`` overrides the scenario's
    selection with explicit :class:`ControllerSet` objects per loop.

    Divergence or an Euler singularity stops the run and returns the
    partial trace with ``status`` set.
    """
    p = params or load_params(scenario.preset)
    sel = dict(scenario.controllers)
    if controllers:
        sel.update(controllers)
    att = resolve_controller(sel["attitude"], scenario.preset, "attitude")
    guid = None
    if scenario.loop == "guidance":
        guid = _axis_map(resolve_controller(sel["guidance"], scenario.preset, "guidance"), POS_AXES)
    ctrl = CascadedController(p, _axis_map(att, ATT_AXES), guid, G12_scale=scenario.G12_scale)
    rng = np.random.default_rng(scenario.seed)
    table = scenario.ref_table()
    dist = scenario.disturbance

    n = int(round(scenario.duration * p.fs)) + 1
    rec = {c: np.full((n, k), np.nan) for c, k in
           (("ref", 3), ("xi", 3), ("v", 3), ("mu", 3), ("Omega", 3), ("w", 4), ("w_c", 4),
            ("mu_c", 3), ("nu_att", 3), ("nu_acc", 3), ("f_d", 3), ("tau_d", 3),
            ("Omega_f", 3), ("a_f", 3))}
    t_arr = np.arange(n) * p.Ts

    x0 = table[0, 1:] if scenario.loop == "guidance" and table[0, 0] <= 0 else np.zeros(3)
    state = QuadState.hover(p, xi=x0)
    w_c = state.w.copy()
    status, error = "ok", ""
    last = n
    for k in range(n):
        t = t_arr[k]
        ref = _ref_at(table, t)
        try:
            vdot, _ = acceleration(state, p, w_c, t, dist)
            meas = measure(state, vdot)
            if scenario.gyro_noise > 0:
                meas.Omega = meas.Omega + rng.normal(0.0, scenario.gyro_noise, 3)
            if scenario.loop == "guidance":
                w_c = ctrl.step(meas, xi_ref=ref, psi_ref=0.0, nu_att_d=dist.virtual_att(t),
                                nu_acc_d=dist.virtual_acc(t))
            else:
                w_c = ctrl.step(meas, mu_ref=ref, nu_att_d=dist.virtual_att(t))
        except (SingularityError, IndiError) as exc:
            status, error, last = "error", str(exc), k
            break
        L = ctrl.last
        rec["ref"][k] = ref
        rec["xi"][k], rec["v"][k], rec["mu"][k] = state.xi, state.v, state.mu
        rec["Omega"][k], rec["w"][k], rec["w_c"][k] = state.Omega, state.w, w_c
        rec["mu_c"][k], rec["nu_att"][k] = L["mu_c"], L["nu_att"]
        rec["nu_acc"][k] = L["nu_acc"] if L["nu_acc"] is not None else 0.0
        rec["f_d"][k], rec["tau_d"][k] = dist.force(t), dist.torque(t)
        rec["Omega_f"][k], rec["a_f"][k] = L["Omega_f"], L["a_f"]
        if k == n - 1:
            break
        try:
            state = rk4_step(state, p, w_c, t, dist)
        except SingularityError as exc:
            status, error, last = "error", str(exc), k + 1
            break
        if (np.max(np.abs(state.xi)) > XI_BOUND or np.max(np.abs(state.Omega)) > OMEGA_BOUND
                or not np.all(np.isfinite(state.vector()))):
            status, error, last = "diverged", f"state bound exceeded at t={t + p.Ts:.3f} s", k + 1
            break
    state.filters = ctrl.filter_states()
    sl = slice(0, last)
    return SimTrace(name=scenario.name, t=t_arr[sl], loop=scenario.loop, status=status,
                    error=error, **{c: a[sl] for c, a in rec.items()})


# --- metrics ----------------------------------------------------------------

@dataclass
class Metrics:
    rise_time: float | None
    overshoot: float
    settling_time: float | None
    peak_deviation: float
    recovery_time: float | None
    improvement_pct: float | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("rise_time", "overshoot", "settling_time",
                                              "peak_deviation", "recovery_time", "improvement_pct")}


def improvement_pct(peak_new: float, peak_base: float) -> float:
    """``100 (1 - peak_new / peak_base)``."""
    if peak_base <= 0:
        raise ValueError("baseline peak deviation must be positive")
    return 100.0 * (1.0 - peak_new / peak_base)


def step_metrics(t, y, y0: float, y1: float, band: float = 0.02):
    """Rise time (10-90 %), overshoot fraction and settling time for a step
    from ``y0`` to ``y1`` starting at ``t[0]``.  Times that are never
    reached are reported as None."""
    t = np.asarray(t, dtype=float)
    span = y1 - y0
    if span == 0:
        return None, 0.0, None
    s = (np.asarray(y, dtype=float) - y0) / span
    i10 = np.flatnonzero(s >= 0.1)
    i90 = np.flatnonzero(s >= 0.9)
    rise = float(t[i90[0]] - t[i10[0]]) if i10.size and i90.size else None
    overshoot = float(max(0.0, s.max() - 1.0))
    outside = np.flatnonzero(np.abs(s - 1.0) > band)
    if outside.size == 0:
        settling = 0.0
    elif outside[-1] == len(s) - 1:
        settling = None
    else:
        settling = float(t[outside[-1] + 1] - t[0])
    return rise, overshoot, settling


def compute_metrics(trace: SimTrace, window=None, signal: str = "roll",
                    kind: str = "auto") -> Metrics:
    """Metrics of ``signal`` over ``window = (t0, t1)``.

    ``kind="step"`` reports step-response figures for the reference change
    at ``t0``; ``kind="disturbance"`` reports the peak deviation from the
    reference held just before ``t0`` and the recovery time back inside 10 %
    of that peak; ``kind="tracking"`` reports the peak of ``|y - ref|``.
    ``auto`` picks "step" when the reference moves inside the window.
    A list of windows returns the metrics of the window with the largest
    peak deviation.
    """
    if window is not None and len(window) and np.ndim(window[0]) == 1:
        ms = [compute_metrics(trace, w, signal, kind) for w in window]
        return max(ms, key=lambda m: m.peak_deviation)
    t = trace.t
    t0, t1 = window if window is not None else (t[0], t[-1])
    if t0 < t[0] - 1e-9 or t1 > t[-1] + 1e-9 or t1 <= t0:
        raise ValueError("window outside the trace")
    sel = (t >= t0 - 1e-9) & (t <= t1 + 1e-9)
    tt, y, r = t[sel], trace.signal(signal)[sel], trace.reference(signal)[sel]
    pre = np.flatnonzero(t < t0 - 1e-9)
    y0 = float(trace.signal(signal)[pre[-1]]) if pre.size else float(y[0])
    r0 = float(trace.reference(signal)[pre[-1]]) if pre.size else float(r[0])
    if kind == "auto":
        kind = "step" if np.any(r != r[0]) or r[0] != r0 else "disturbance"
    if kind == "tracking":
        return Metrics(None, 0.0, None, float(np.max(np.abs(y - r))), None)
    if kind == "step":
        r1 = float(r[-1])
        rise, os_, settle = step_metrics(tt, y, y0, r1)
        peak = float(np.max(np.abs(y - r1)))
        return Metrics(rise, os_, settle, peak, settle)
    dev = np.abs(y - r0)
    peak = float(dev.max())
    if peak == 0.0:
        return Metrics(None, 0.0, 0.0, 0.0, 0.0)
    outside = np.flatnonzero(dev > 0.1 * peak)
    recovery = None if outside[-1] == len(dev) - 1 else float(tt[outside[-1] + 1] - tt[0])
    return Metrics(None, 0.0, None, peak, recovery)


@dataclass
class ComparisonReport:
    scenario: str
    names: list
    traces: list
    metrics: list
    improvement: dict          # (a, b) -> pct of a relative to baseline b
    baseline: str

    @property
    def diverged(self) -> list:
        return [n for n, tr in zip(self.names, self.traces) if tr.status != "ok"]

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["controller", "status", "rise_time", "overshoot", "settling_time",
                    "peak_deviation", "recovery_time", f"improvement_vs_{self.baseline}_pct"])
        for n, tr, m in zip(self.names, self.traces, self.metrics):
            imp = self.improvement.get((n, self.baseline))
            w.writerow([n, tr.status] + ["" if v is None else repr(float(v)) for v in
                                          (m.rise_time, m.overshoot, m.settling_time,
                                           m.peak_deviation, m.recovery_time, imp)])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"scenario {self.scenario} (baseline {self.baseline})"]
        for n, tr, m in zip(self.names, self.traces, self.metrics):
            imp = self.improvement.get((n, self.baseline))
            lines.append(f"  {n:<18s} status={tr.status:<8s} peak={m.peak_deviation:.4g}"
                         + ("" if imp is None else f" improvement={imp:.4g}%"))
        return "\n".join(lines)


def _run_one(args):
    scenario, over, params = args
    return run_scenario(scenario, over, params)


def compare_controllers(scenario: Scenario, controller_list, names=None,
                        window=None, signal=None, jobs: int = 1,
                        params: QuadcopterParams | None = None) -> ComparisonReport:
    """Run ``scenario`` once per entry of ``controller_list`` (a kind string,
    a file path or a ``{loop: ControllerSet}`` dict) and tabulate metrics.
    The first entry is the baseline for the improvement percentages.
    ``jobs > 1`` runs the simulations in worker processes; results keep the
    order of ``controller_list``."""
    if len(controller_list) < 2:
        raise ValueError("a comparison needs at least two controllers")
    names = list(names) if names else [c if isinstance(c, str) else f"c{i}"
                                       for i, c in enumerate(controller_list)]
    window = window or scenario.metric.get("window")
    signal = signal or scenario.metric.get("signal", "roll" if scenario.loop == "attitude" else "x")
    kind = scenario.metric.get("kind", "auto")
    work = [(scenario, c if isinstance(c, dict) else {scenario.loop: c}, params)
            for c in controller_list]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=min(jobs, len(work))) as ex:
            traces = list(ex.map(_run_one, work))
    else:
        traces = [_run_one(a) for a in work]
    metrics = []
    for tr in traces:
        if tr.status == "ok":
            metrics.append(compute_metrics(tr, window, signal, kind))
        else:
            metrics.append(Metrics(None, math.nan, None, math.nan, None))
    improvement = {}
    base = metrics[0].peak_deviation
    for n, m in zip(names, metrics):
        if math.isfinite(base) and base > 0 and math.isfinite(m.peak_deviation):
            improvement[(n, names[0])] = improvement_pct(m.peak_deviation, base)
            m.improvement_pct = improvement[(n, names[0])]
    return ComparisonReport(scenario.name, names, traces, metrics, improvement, names[0])
