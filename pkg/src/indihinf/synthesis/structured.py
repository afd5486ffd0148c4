"""Fixed-structure H-infinity tuning by multi-start pattern search.

The controller is the cascade ``K_inner [K_outer, -1]`` where each block is
either a static gain ``k`` or a first-order lead/lag ``k (s + z) / (s + p)``.
Parameters are searched in log10 space, so gains, zeros and poles stay
positive; ``p -> 0`` approaches an integrator.  The objective is the largest
of the active weighted channel norms, ``inf`` when the loop is unstable.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..linsys import StateSpace, hinf_norm
from .controllers import ControllerSet, lead_lag
from .plant import CHANNEL_PORTS, GeneralizedPlant

log = logging.getLogger(__name__)


# bounds of the log10 parameters; p at the lower end is an integrator
LOG_BOUNDS = (-8.0, 6.0)


class StructuredSynthesisError(RuntimeError):
    pass


@dataclass
class SearchResult:
    x: np.ndarray
    f: float
    evals: int


def pattern_search(f, x0, step: float = 0.5, min_step: float = 1e-4,
                   max_evals: int = 2000, expand: float = 2.0) -> SearchResult:
    """Compass search with pattern moves.

    Polls ``x +/- h e_i`` coordinate-wise, accepts the first improvement,
    tries an extrapolation along the last successful displacement and halves
    ``h`` after an unsuccessful sweep.
    """
    x = np.array(x0, dtype=float)
    fx = f(x)
    evals = 1
    h = step
    while h > min_step and evals < max_evals:
        base = x.copy()
        improved = False
        for i in range(x.size):
            for sgn in (1.0, -1.0):
                y = x.copy()
                y[i] += sgn * h
                fy = f(y)
                evals += 1
                if fy < fx:
                    x, fx, improved = y, fy, True
                    break
        if improved:
            y = x + (x - base)
            fy = f(y)
            evals += 1
            if fy < fx:
                x, fx = y, fy
                h *= expand
                h = min(h, step)
        else:
            h *= 0.5
    return SearchResult(x, fx, evals)


@dataclass(frozen=True)
class Structure:
    outer_order: int = 1
    inner_order: int = 1

    def __post_init__(self):
        if self.outer_order not in (0, 1) or self.inner_order not in (0, 1):
            raise ValueError("sub-controller orders must be 0 or 1")

    @property
    def nparams(self) -> int:
        return (1 + 2 * self.outer_order) + (1 + 2 * self.inner_order)

    @classmethod
    def parse(cls, text: str) -> "Structure":
        a, b = (int(t) for t in str(text).split(","))
        return cls(a, b)


def _split(theta, order):
    n = 1 + 2 * order
    return theta[:n], theta[n:]


def _block(theta, order) -> StateSpace:
    k = 10.0 ** theta[0]
    if order == 0:
        return lead_lag(k)
    return lead_lag(k, 10.0 ** theta[1], 10.0 ** theta[2])


def _block_matrices(theta, order):
    """(a, c, d) of ``d + c / (s + a)``; ``a`` and ``c`` None when static."""
    k = 10.0 ** theta[0]
    if order == 0:
        return None, None, k
    z, p = 10.0 ** theta[1], 10.0 ** theta[2]
    return p, k * (z - p), k


def controller_matrices(theta, structure: Structure):
    """State-space matrices of the two-input cascade for parameters ``theta``."""
    to, ti = _split(np.asarray(theta, dtype=float), structure.outer_order)
    ao, co, do = _block_matrices(to, structure.outer_order)
    ai, ci, di = _block_matrices(ti, structure.inner_order)
    # v = co xo + do e - yd ;  u = ci xi + di v
    n = structure.outer_order + structure.inner_order
    A = np.zeros((n, n))
    B = np.zeros((n, 2))
    C = np.zeros((1, n))
    D = np.array([[di * do, -di]])
    j = 0
    if ao is not None:
        A[0, 0] = -ao
        B[0, 0] = 1.0
        C[0, 0] = di * co
        j = 1
    if ai is not None:
        A[j, j] = -ai
        if ao is not None:
            A[j, 0] = co
        B[j, :] = [do, -1.0]
        C[0, j] = ci
    return A, B, C, D


def theta_to_controllers(theta, structure: Structure):
    to, ti = _split(np.asarray(theta, dtype=float), structure.outer_order)
    return _block(to, structure.outer_order), _block(ti, structure.inner_order)


class ChannelObjective:
    """Max of the active weighted channel norms on a fixed grid.

    The grid is augmented at every call with the closed-loop natural
    frequencies so that resonant peaks are not skipped.
    """

    def __init__(self, gp: GeneralizedPlant, structure: Structure, channels=None,
                 wmin: float = 1e-6, wmax: float = 1e4, per_decade: int = 40):
        P = gp.P
        if np.any(P.D[gp.nz:, gp.nw:]):
            raise StructuredSynthesisError("plant must have D22 = 0")
        self.gp, self.structure = gp, structure
        self.channels = tuple(channels or gp.weights.channels)
        nw, nz = gp.nw, gp.nz
        self.A = P.A
        self.B1, self.B2 = P.B[:, :nw], P.B[:, nw:]
        self.C1, self.C2 = P.C[:nz, :], P.C[nz:, :]
        self.D11, self.D12 = P.D[:nz, :nw], P.D[:nz, nw:]
        self.D21 = P.D[nz:, :nw]
        rows = sorted({CHANNEL_PORTS[c][0] for c in self.channels})
        cols = sorted({CHANNEL_PORTS[c][1] for c in self.channels})
        self._rows, self._cols = rows, cols
        self._pairs = [(rows.index(CHANNEL_PORTS[c][0]), cols.index(CHANNEL_PORTS[c][1]))
                       for c in self.channels]
        self.grid = np.concatenate([[0.0], np.logspace(math.log10(wmin), math.log10(wmax),
                                                       int(per_decade * math.log10(wmax / wmin)) + 1)])
        self.nevals = 0

    def closed_loop(self, theta):
        Ak, Bk, Ck, Dk = controller_matrices(theta, self.structure)
        A, B2, C2 = self.A, self.B2, self.C2
        Acl = np.block([[A + B2 @ Dk @ C2, B2 @ Ck], [Bk @ C2, Ak]])
        Bcl = np.vstack([self.B1 + B2 @ Dk @ self.D21, Bk @ self.D21])
        Ccl = np.hstack([self.C1 + self.D12 @ Dk @ C2, self.D12 @ Ck])
        Dcl = self.D11 + self.D12 @ Dk @ self.D21
        return StateSpace(Acl, Bcl, Ccl, Dcl)

    def channel_values(self, theta, exact: bool = False) -> dict | None:
        if np.any(np.asarray(theta) < LOG_BOUNDS[0]) or np.any(np.asarray(theta) > LOG_BOUNDS[1]):
            return None
        T = self.closed_loop(theta)
        poles = np.linalg.eigvals(T.A)
        if np.any(poles.real >= -1e-9):
            return None
        if exact:
            return {c: hinf_norm(T[CHANNEL_PORTS[c][0], CHANNEL_PORTS[c][1]])
                    for c in self.channels}
        w = np.concatenate([self.grid, np.abs(poles)])
        Tr = T[self._rows, self._cols]
        s = 1j * w
        X = np.linalg.solve(s[:, None, None] * np.eye(Tr.nstates) - Tr.A,
                            np.broadcast_to(Tr.B, (w.size,) + Tr.B.shape))
        R = Tr.C @ X + Tr.D
        return {c: float(np.abs(R[:, i, j]).max()) for c, (i, j) in zip(self.channels, self._pairs)}

    def __call__(self, theta) -> float:
        self.nevals += 1
        vals = self.channel_values(theta)
        return math.inf if vals is None else max(vals.values())


@dataclass
class StructuredResult:
    controller: ControllerSet
    gamma: float
    channel_norms: dict
    theta: np.ndarray
    meets_templates: bool
    starts: int
    seed: int
    evals: int
    history: list = field(default_factory=list)


def _pd_theta(k_pos, k_rate, structure: Structure, far: float):
    th = []
    for k, order in ((k_pos, structure.outer_order), (k_rate, structure.inner_order)):
        th.append(math.log10(k))
        if order:
            th += [math.log10(far), math.log10(far)]
    return np.array(th)


def synth_structured(gp: GeneralizedPlant, structure: Structure = Structure(1, 1),
                     starts: int = 20, seed: int = 0, warm_start=(None, None),
                     axis: str = "roll", fs: float = 500.0, max_evals: int = 1500,
                     channels=None) -> StructuredResult:
    """Multi-start direct search over the cascade parameters.

    ``warm_start`` is a ``(k_pos, k_rate)`` PD pair lifted into the structure
    with pole/zero pairs cancelling far away; the remaining starts are
    log-uniform in a box around it.  Deterministic for a given ``seed``.
    """
    obj = ChannelObjective(gp, structure, channels)
    rng = np.random.default_rng(seed)
    k_pos, k_rate = warm_start
    if k_pos is None:
        k_pos, k_rate = 1.0, 1.0
    far = 100.0 * max(gp.weights.wb, 1.0)
    x_warm = _pd_theta(k_pos, k_rate, structure, far)

    def random_start():
        th = []
        for k, order in ((k_pos, structure.outer_order), (k_rate, structure.inner_order)):
            th.append(math.log10(k) + rng.uniform(-1.0, 1.0))
            if order:
                th += [rng.uniform(-3.0, 2.5), rng.uniform(-5.0, 2.5)]
        return np.array(th)

    best = None
    history = []
    total = 0
    for i in range(starts):
        if i == 0:
            x0 = x_warm
        else:
            for _ in range(50):
                x0 = random_start()
                total += 1
                if math.isfinite(obj(x0)):
                    break
            else:
                history.append((i, math.inf))
                continue
        res = pattern_search(obj, x0, step=0.5, min_step=1e-3, max_evals=max_evals)
        total += res.evals
        history.append((i, res.f))
        log.debug("start %d: f=%.6g after %d evals", i, res.f, res.evals)
        if math.isfinite(res.f) and (best is None or res.f < best.f):
            best = res
    if best is None:
        raise StructuredSynthesisError(
            f"no stabilizing point found after {starts} starts "
            f"(warm-start objective {obj(x_warm):.4g})")

    # polish with exact norms
    def exact(theta):
        vals = obj.channel_values(theta, exact=True)
        return math.inf if vals is None else max(vals.values())

    pol = pattern_search(exact, best.x, step=0.01, min_step=1e-4, max_evals=200)
    theta = pol.x
    norms = obj.channel_values(theta, exact=True)
    gamma = max(norms.values())
    K_outer, K_inner = theta_to_controllers(theta, structure)
    ctrl = ControllerSet(axis, "hinf-structured", K_outer, K_inner, gamma=gamma, fs=fs,
                         meta={"structure": [structure.outer_order, structure.inner_order],
                               "seed": seed, "starts": starts,
                               "channels": list(obj.channels)})
    return StructuredResult(controller=ctrl, gamma=gamma, channel_norms=norms, theta=theta,
                            meets_templates=gamma <= 1.0, starts=starts, seed=seed,
                            evals=total + pol.evals, history=history)
