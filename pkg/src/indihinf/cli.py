"""Command-line entry points: ``indihinf {synth,analyze,simulate,compare,estimate}``.

Every command writes into one output directory, built in a temporary
sibling and renamed into place, so a failed run leaves nothing behind.
Numeric files are deterministic; the wall-clock time and argv live only in
``metadata.json``.

Exit codes: 0 success, 1 failed to run, 2 invalid input, 3 ran but at
least one simulation diverged.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__

OUT_ENV = "INDIHINF_OUT"
EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3
COMMANDS = ("synth", "analyze", "simulate", "compare", "estimate")
TARGET_PCT = 50.0


class InputError(ValueError):
    """Bad or missing input; reported with exit code 2."""


@dataclass
class RunConfig:
    command: str
    out: Path
    inputs: list = field(default_factory=list)
    seed: int = 0
    preset: str | None = None
    overrides: dict = field(default_factory=dict)

    def check(self):
        if self.command not in COMMANDS:
            raise InputError(f"unknown command {self.command!r}")
        for p in self.inputs:
            if not Path(p).is_file():
                raise InputError(f"input file not found: {p}")


def parse_overrides(items) -> dict:
    """``["Md=200", "tau_m=0.02"]`` -> dict; values parsed as JSON when possible."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise InputError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def fmt4(x) -> str:
    if x is None:
        return "-"
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.4g}"


def rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else repr(float(v)) if isinstance(v, (float, np.floating))
                    else v for v in r])
    return buf.getvalue()


# --- output directory -------------------------------------------------------

class OutputDir:
    """Collects files in a temporary directory and publishes them atomically."""

    def __init__(self, final: Path):
        self.final = Path(final).resolve()
        self.final.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.final.name}.", dir=self.final.parent))

    def write(self, name: str, text: str):
        (self.tmp / name).write_text(text)

    def commit(self, cfg: RunConfig, argv):
        meta = {"command": cfg.command, "argv": list(argv), "version": __version__,
                "seed": cfg.seed, "preset": cfg.preset, "overrides": cfg.overrides,
                "created_unix": time.time(),
                "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
        self.write("metadata.json", json.dumps(meta, indent=1) + "\n")
        old = None
        if self.final.exists():
            old = self.final.with_name(f".{self.final.name}.old-{os.getpid()}")
            os.rename(self.final, old)
        os.rename(self.tmp, self.final)
        if old is not None:
            shutil.rmtree(old, ignore_errors=True)

    def discard(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def default_out(command: str, label: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "runs")) / f"{command}-{label}"


# --- inputs -----------------------------------------------------------------

def _split_overrides(overrides: dict):
    """Route overrides to vehicle parameters, weights or scenario fields."""
    from .synthesis.weights import WeightSet
    from .vehicle import QuadcopterParams
    pnames = {f.name for f in fields(QuadcopterParams)}
    wnames = {f.name for f in fields(WeightSet)} | {"Ms", "wb_hz", "eps_e", "Md", "wu", "wn",
                                                     "wb", "actuator_tau", "pd", "pd_modal"}
    snames = {"duration", "seed", "gyro_noise", "G12_scale"}
    par, wts, scn = {}, {}, {}
    for k, v in overrides.items():
        if k in pnames:
            par[k] = v
        elif k in wnames:
            wts[k] = v
        elif k in snames:
            scn[k] = v
        else:
            raise InputError(f"unknown override {k!r}")
    return par, wts, scn


def _params(preset: str, overrides: dict):
    from .vehicle import load_params
    try:
        p = load_params(preset)
    except KeyError as exc:
        raise InputError(str(exc)) from None
    return p.replace(**overrides) if overrides else p


def _weight_entry(preset: str, loop: str, path, overrides: dict) -> dict:
    """Preset weight entry, optionally replaced by a weight file.

    A weight file holds either one loop entry or the full
    ``{preset: {loop: entry}}`` table.
    """
    from .synthesis.design import DesignError, preset_entry
    try:
        entry = dict(preset_entry(preset, loop))
    except DesignError as exc:
        raise InputError(str(exc)) from None
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"weight file {path}: {exc}") from None
        if preset in d and loop in d[preset]:
            d = d[preset][loop]
        entry.update(d)
    entry.update(overrides)
    return entry


def _controller_list(text: str | None, default):
    items = [c.strip() for c in text.split(",")] if text else list(default)
    return [c for c in items if c]


def _controller_label(spec: str) -> str:
    return Path(spec).stem if Path(spec).is_file() else spec


# --- commands ---------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig, out: OutputDir) -> int:
    from .synthesis.design import LOOP_AXIS, design
    from .synthesis.structured import Structure
    from .synthesis.weights import weights_from_dict
    par, wts, _ = _split_overrides(cfg.overrides)
    params = _params(cfg.preset, par)
    entry = _weight_entry(cfg.preset, args.loop, args.weights, wts)
    try:
        W = weights_from_dict(entry)
        st = Structure.parse(args.structure) if args.structure else None
    except ValueError as exc:
        raise InputError(str(exc)) from None
    kind = args.kind or "hinf-structured"
    res = design(cfg.preset, args.loop, kind, params=params, weights=W, seed=cfg.seed,
                 starts=args.starts, structure=st)
    if not all(math.isfinite(v) for v in res.channel_norms.values()):
        raise RuntimeError("synthesis produced an unstable closed loop")
    axes = ("roll", "pitch", "yaw") if args.loop == "attitude" else ("x", "y", "z")
    for ax in axes:
        out.write(f"controller-{ax}.json", res.controller.with_axis(ax).to_text() + "\n")
    out.write("report.txt", res.report())
    print(f"{kind} {cfg.preset}/{args.loop}: gamma {fmt4(res.gamma)}, order "
          f"{res.controller.order}, axis {LOOP_AXIS[args.loop]}")
    return EXIT_OK


def cmd_analyze(args, cfg: RunConfig, out: OutputDir) -> int:
    from .analysis import (bandwidth, closed_loop_sensitivities, margins, sensitivity_csv,
                           template_compliance)
    from .linsys import freq_response
    from .sim import resolve_controller
    from .synthesis.design import loop_models
    from .synthesis.weights import weights_from_dict
    par, wts, _ = _split_overrides(cfg.overrides)
    params = _params(cfg.preset, par)
    entry = _weight_entry(cfg.preset, args.loop, args.weights, wts)
    W = weights_from_dict(entry)
    G, A_act, H = loop_models(params, args.loop, entry)
    specs = _controller_list(args.controllers, ("pd", "hinf-structured", "hinf-full"))
    sets, rows, lines = {}, [], [f"preset: {cfg.preset}", f"loop: {args.loop}"]
    for spec in specs:
        try:
            K = resolve_controller(spec, cfg.preset, args.loop)
        except FileNotFoundError as exc:
            raise InputError(str(exc)) from None
        name = _controller_label(spec)
        sens = closed_loop_sensitivities(G, K, H, A_act)
        sets[name] = sens
        m, m_in = margins(sens.S), margins(sens.S_in)
        wb = bandwidth(sens.S)
        sdi = abs(freq_response(sens.S_di, 0.1)[0, 0])
        comp = template_compliance(sens, W, 1.0)
        gamma = K.gamma
        rows.append([name, K.kind, K.order, gamma, wb, sdi, m.modulus, m.gain_db, m.phase_deg,
                     m_in.modulus, m_in.gain_db, m_in.phase_deg, int(comp.passed)])
        lines.append(f"{name}: kind {K.kind}, order {K.order}, gamma {fmt4(gamma)}, "
                     f"bandwidth {fmt4(wb)} rad/s, |S_di(j0.1)| {fmt4(sdi)}, "
                     f"modulus margin {fmt4(m.modulus)}, gain margin {fmt4(m.gain_db)} dB, "
                     f"phase margin {fmt4(m.phase_deg)} deg, templates "
                     f"{'met' if comp.passed else 'violated: ' + ', '.join(comp.failing())}")
    out.write("margins.csv", rows_csv(
        ["controller", "kind", "order", "gamma", "bandwidth", "S_di_0.1", "modulus_margin",
         "gain_margin_db", "phase_margin_deg", "modulus_margin_in", "gain_margin_in_db",
         "phase_margin_in_deg", "templates_met"],
        [[r[0], r[1], r[2]] + [None if v is None else float(v) for v in r[3:12]] + [r[12]]
         for r in rows]))
    out.write("sensitivities.csv", sensitivity_csv(sets, W))
    out.write("report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines[2:]))
    return EXIT_OK


def _scenario(args, cfg: RunConfig):
    from .sim import Scenario, load_scenario
    try:
        sc = load_scenario(args.scenario)
    except (FileNotFoundError, ValueError, KeyError) as exc:
        raise InputError(str(exc)) from None
    par, _, scn = _split_overrides(cfg.overrides)
    d = sc.to_dict()
    if args.preset:
        d["preset"] = args.preset
    if args.seed is not None:
        d["seed"] = args.seed
    d.update(scn)
    try:
        sc = Scenario.from_dict(d)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(str(exc)) from None
    win = (sc.metric or {}).get("window")
    if win is not None:
        ends = [w[1] for w in win] if len(win) and isinstance(win[0], (list, tuple)) else [win[1]]
        if max(ends) > sc.duration + 1e-9:
            raise InputError(f"metric window ends at {max(ends)} s, after the {sc.duration} s run")
    cfg.preset = sc.preset
    return sc, _params(sc.preset, par)


def _metrics_row(name, tr, m):
    return [name, tr.status, m.rise_time, m.overshoot, m.settling_time, m.peak_deviation,
            m.recovery_time, m.improvement_pct]


METRIC_HEADER = ["controller", "status", "rise_time", "overshoot", "settling_time",
                 "peak_deviation", "recovery_time", "improvement_pct"]


def cmd_simulate(args, cfg: RunConfig, out: OutputDir) -> int:
    from .sim import Metrics, compute_metrics, run_scenario
    sc, params = _scenario(args, cfg)
    specs = _controller_list(args.controllers, ())
    if len(specs) > 1:
        raise InputError("simulate takes one controller; use compare for several")
    over = {sc.loop: specs[0]} if specs else None
    tr = run_scenario(sc, over, params=params)
    name = _controller_label(specs[0]) if specs else sc.controllers[sc.loop]
    if tr.status == "ok":
        m = compute_metrics(tr, sc.metric.get("window"), sc.metric.get(
            "signal", "roll" if sc.loop == "attitude" else "x"), sc.metric.get("kind", "auto"))
    else:
        m = Metrics(None, math.nan, None, math.nan, None)
    out.write("trace.csv", tr.to_csv())
    out.write("metrics.csv", rows_csv(METRIC_HEADER, [_metrics_row(name, tr, m)]))
    summary = (f"scenario {sc.name}, controller {name}: status {tr.status}, peak deviation "
               f"{fmt4(m.peak_deviation)}, rise time {fmt4(m.rise_time)} s, settling "
               f"{fmt4(m.settling_time)} s" + (f", {tr.error}" if tr.error else ""))
    out.write("summary.txt", summary + "\n")
    print(summary)
    return EXIT_OK if tr.status == "ok" else EXIT_DIVERGED


def cmd_compare(args, cfg: RunConfig, out: OutputDir) -> int:
    from .sim import compare_controllers
    sc, params = _scenario(args, cfg)
    specs = _controller_list(args.controllers, ("pd", "hinf-structured", "hinf-full"))
    if len(specs) < 2:
        raise InputError("a comparison needs at least two controllers")
    if len(set(specs)) != len(specs):
        raise InputError("controllers must be distinct")
    for s in specs:
        if ("/" in s or s.endswith(".json")) and not Path(s).is_file():
            raise InputError(f"controller file not found: {s}")
    names = [_controller_label(s) for s in specs]
    rep = compare_controllers(sc, specs, names=names, jobs=args.jobs, params=params)
    rows = [_metrics_row(n, tr, m) for n, tr, m in zip(rep.names, rep.traces, rep.metrics)]
    out.write("comparison.csv", rows_csv(METRIC_HEADER, rows))
    for n, tr in zip(rep.names, rep.traces):
        out.write(f"trace-{n}.csv", tr.to_csv())
    lines = [f"scenario {sc.name}, baseline {rep.baseline}"]
    for n, tr, m in zip(rep.names, rep.traces, rep.metrics):
        lines.append(f"{n}: status {tr.status}, peak deviation {fmt4(m.peak_deviation)}, "
                     f"improvement {fmt4(m.improvement_pct)}%")
    imps = {n: m.improvement_pct for n, m in zip(rep.names[1:], rep.metrics[1:])
            if m.improvement_pct is not None}
    best = max(imps, key=imps.get) if imps else None
    met = best is not None and imps[best] >= TARGET_PCT
    lines.append(f"improvement target >= {TARGET_PCT:g}% met: {'yes' if met else 'no'}"
                 + (f" (best {best} {fmt4(imps[best])}%)" if best else ""))
    if rep.diverged:
        lines.append("diverged: " + ", ".join(rep.diverged))
    text = "\n".join(lines) + "\n"
    out.write("summary.txt", text)
    print(text, end="")
    return EXIT_DIVERGED if rep.diverged else EXIT_OK


def cmd_estimate(args, cfg: RunConfig, out: OutputDir) -> int:
    from .sysid import (FlightLog, estimate_parameters, initial_estimate, linearized_G12,
                        synthetic_log)
    par, _, _ = _split_overrides(cfg.overrides)
    params = _params(cfg.preset, par)
    # throttle-to-speed scale: identity for logs, hover at half throttle for synthetic logs
    scale = args.speed_scale or (1.0 if args.log else 2.0 * params.w_hover)
    tau0 = args.tau0 or params.tau_m
    if args.log:
        try:
            log = FlightLog.from_csv(args.log)
        except (ValueError, IndexError) as exc:
            raise InputError(f"log {args.log}: {exc}") from None
    else:
        log = synthetic_log(linearized_G12(params), params.tau_m, duration=args.duration,
                            seed=cfg.seed, noise=args.noise, speed_scale=scale)
        out.write("log.csv", log.to_csv())
    try:
        init = initial_estimate(log, tau0, scale)
        res = estimate_parameters(log, init, speed_scale=scale)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    d = res.to_dict()
    d["speed_scale"] = scale
    out.write("estimate.json", json.dumps(d, indent=1) + "\n")
    out.write("params.json", params.replace(tau_m=res.tau_m).to_text() + "\n")
    lines = [f"tau_m {fmt4(res.tau_m)} s (1/{fmt4(1.0 / res.tau_m)}), fit {fmt4(res.fit_pct)}%, "
             f"converged {res.converged}, iterations {res.iterations}",
             f"initial tau_m {fmt4(tau0)} s, fit {fmt4(init.fit_pct)}%"]
    lines += [f"note: {n}" for n in res.notes]
    out.write("report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .synthesis.controllers import KINDS
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command>-<label>,"
                                      " or ./runs)")
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a vehicle, weight or scenario field")

    ap = argparse.ArgumentParser(prog="indihinf", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="design a loop controller")
    s.add_argument("--preset", default="bebop-sim")
    s.add_argument("--loop", choices=("attitude", "guidance"), default="attitude")
    s.add_argument("--kind", choices=KINDS, default=None,
                   help="controller kind (default hinf-structured)")
    s.add_argument("--structure", help="sub-controller orders 'outer,inner', e.g. 1,1")
    s.add_argument("--weights", help="weight file (JSON) replacing the preset templates")
    s.add_argument("--starts", type=int, default=20, help="structured random restarts")

    a = sub.add_parser("analyze", parents=[common], help="sensitivities and margins")
    a.add_argument("--preset", default="bebop-sim")
    a.add_argument("--loop", choices=("attitude", "guidance"), default="attitude")
    a.add_argument("--controllers", help="comma list of kinds or controller files")
    a.add_argument("--weights", help="weight file (JSON) for the template columns")

    for name, hlp in (("simulate", "run one scenario"), ("compare", "compare controllers")):
        p = sub.add_parser(name, parents=[common], help=hlp)
        p.add_argument("--scenario", required=True, help="shipped name or scenario file")
        p.add_argument("--preset", default=None, help="vehicle preset (default: scenario's)")
        p.add_argument("--controllers", help="comma list of kinds or controller files for the"
                                             " scenario's outer loop")
        if name == "compare":
            p.add_argument("--jobs", type=int, default=1, help="parallel simulations")

    e = sub.add_parser("estimate", parents=[common], help="identify tau_m and G12 from a log")
    e.add_argument("--log", help="CSV log (t,p,q,r,az,u1..u4); omitted: synthetic log")
    e.add_argument("--preset", default="bebop-sim")
    e.add_argument("--tau0", type=float, help="datasheet time constant (default: preset)")
    e.add_argument("--speed-scale", type=float, help="motor speed per unit throttle (default 1 for logs)")
    e.add_argument("--noise", type=float, default=0.0, help="synthetic log noise level")
    e.add_argument("--duration", type=float, default=4.0, help="synthetic log length, s")
    return ap


def _label(args) -> str:
    if args.command in ("synth", "analyze"):
        return f"{args.preset}-{args.loop}" + (f"-{args.kind}" if getattr(args, "kind", None)
                                               else "")
    if args.command in ("simulate", "compare"):
        return Path(args.scenario).stem
    return Path(args.log).stem if args.log else f"{args.preset}-synthetic"


HANDLERS = {"synth": cmd_synth, "analyze": cmd_analyze, "simulate": cmd_simulate,
            "compare": cmd_compare, "estimate": cmd_estimate}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    inputs = [p for p in (getattr(args, "weights", None), getattr(args, "log", None)) if p]
    sc = getattr(args, "scenario", None)
    if sc and ("/" in sc or sc.endswith(".scenario")):
        inputs.append(sc)
    out = None
    try:
        cfg = RunConfig(args.command, Path(args.out) if args.out else
                        default_out(args.command, _label(args)), inputs,
                        0 if args.seed is None else args.seed, getattr(args, "preset", None),
                        parse_overrides(args.set))
        cfg.check()
        out = OutputDir(cfg.out)
        code = HANDLERS[args.command](args, cfg, out)
        out.commit(cfg, argv)
        return code
    except InputError as exc:
        print(f"indihinf {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - any failure must leave no outputs
        print(f"indihinf {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    finally:
        if out is not None and out.tmp.exists():
            out.discard()


if __name__ == "__main__":
    sys.exit(main())
