"""Minimal LTI toolkit: state-space systems, interconnection, frequency
response, H-infinity norm, Tustin discretization and a pseudo-inverse.

Everything is state-space internally; transfer functions are realized
immediately with :func:`tf`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "LinsysError", "PoleOnContourError", "UnstableSystemError", "AlgebraicLoopError",
    "StateSpace", "FrequencyGrid", "Block", "ss", "gain", "tf", "freq_response",
    "sigma_max", "hinf_norm", "series", "parallel", "append", "feedback", "lft",
    "interconnect", "discretize_tustin", "pseudo_inverse", "pinv_cutoff",
    "to_text", "from_text",
]


class LinsysError(ValueError):
    pass


class PoleOnContourError(LinsysError):
    pass


class UnstableSystemError(LinsysError):
    pass


class AlgebraicLoopError(LinsysError):
    pass


def _as_matrix(x, rows=None, cols=None) -> np.ndarray:
    a = np.array(x, dtype=float, copy=True)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1) if rows is None or rows == 1 else a.reshape(-1, 1)
    if a.size == 0:
        a = np.zeros((rows or 0, cols or 0))
    return a


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Continuous (``dt is None``) or discrete LTI system ``(A, B, C, D)``.

    Arrays are copied and made read-only so instances can be shared freely.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float | None = None

    def __post_init__(self):
        D = _as_matrix(self.D)
        p, m = D.shape
        A = np.atleast_2d(np.array(self.A, dtype=float)) if np.size(self.A) else np.zeros((0, 0))
        n = A.shape[0]
        B = np.array(self.B, dtype=float).reshape(n, m) if n else np.zeros((0, m))
        C = np.array(self.C, dtype=float).reshape(p, n) if n else np.zeros((p, 0))
        if A.shape != (n, n):
            raise LinsysError(f"A must be square, got {A.shape}")
        if self.dt is not None and not self.dt > 0:
            raise LinsysError("sampling period must be positive for a discrete system")
        for name, arr in zip("ABCD", (A, B, C, D)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def nstates(self) -> int:
        return self.A.shape[0]

    @property
    def ninputs(self) -> int:
        return self.D.shape[1]

    @property
    def noutputs(self) -> int:
        return self.D.shape[0]

    @property
    def is_discrete(self) -> bool:
        return self.dt is not None

    @property
    def is_static(self) -> bool:
        return self.nstates == 0

    def poles(self) -> np.ndarray:
        return np.linalg.eigvals(self.A) if self.nstates else np.zeros(0, dtype=complex)

    def is_stable(self, margin: float = 0.0) -> bool:
        p = self.poles()
        if p.size == 0:
            return True
        if self.is_discrete:
            return bool(np.all(np.abs(p) < 1.0 - margin))
        return bool(np.all(p.real < -margin))

    def dcgain(self) -> np.ndarray:
        return freq_response(self, 0.0)

    def __call__(self, w):
        return freq_response(self, w)

    def __getitem__(self, idx) -> "StateSpace":
        rows, cols = idx
        rows = np.atleast_1d(np.arange(self.noutputs)[rows])
        cols = np.atleast_1d(np.arange(self.ninputs)[cols])
        return StateSpace(self.A, self.B[:, cols], self.C[rows, :],
                          self.D[np.ix_(rows, cols)], self.dt)

    def __mul__(self, other):
        # self * other: other's output drives self
        if np.isscalar(other):
            return StateSpace(self.A, self.B, other * self.C, other * self.D, self.dt)
        return series(other, self)

    def __rmul__(self, other):
        if np.isscalar(other):
            return StateSpace(self.A, self.B * other, self.C, self.D * other, self.dt)
        return series(self, other)

    def __add__(self, other):
        if np.isscalar(other):
            other = gain(other * np.ones((self.noutputs, self.ninputs)), self.dt)
        return parallel(self, other)

    __radd__ = __add__

    def __neg__(self):
        return StateSpace(self.A, self.B, -self.C, -self.D, self.dt)

    def __sub__(self, other):
        return self + (-other)

    def __repr__(self):
        dom = "continuous" if self.dt is None else f"discrete(Ts={self.dt:g})"
        return f"StateSpace(n={self.nstates}, m={self.ninputs}, p={self.noutputs}, {dom})"


def ss(A, B, C, D, dt=None) -> StateSpace:
    return StateSpace(A, B, C, D, dt)


def gain(D, dt=None) -> StateSpace:
    D = _as_matrix(D)
    return StateSpace(np.zeros((0, 0)), np.zeros((0, D.shape[1])),
                      np.zeros((D.shape[0], 0)), D, dt)


def tf(num: Sequence[float], den: Sequence[float], dt=None) -> StateSpace:
    """SISO transfer function -> controllable canonical realization.

    Coefficients are in descending powers of ``s`` (or ``z``).
    """
    num = np.trim_zeros(np.atleast_1d(np.asarray(num, dtype=float)), "f")
    den = np.trim_zeros(np.atleast_1d(np.asarray(den, dtype=float)), "f")
    if den.size == 0:
        raise LinsysError("denominator is zero")
    if num.size == 0:
        num = np.zeros(1)
    if num.size > den.size:
        raise LinsysError("improper transfer function")
    num = np.concatenate([np.zeros(den.size - num.size), num]) / den[0]
    den = den / den[0]
    n = den.size - 1
    d = num[0]
    if n == 0:
        return gain(d, dt)
    rem = num[1:] - d * den[1:]
    A = np.zeros((n, n))
    A[0, :] = -den[1:]
    A[1:, :-1] = np.eye(n - 1)
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    C = rem.reshape(1, n)
    return StateSpace(A, B, C, [[d]], dt)


# ---------------------------------------------------------------- frequency response

def _contour_points(sys: StateSpace, w: np.ndarray) -> np.ndarray:
    if sys.is_discrete:
        return np.exp(1j * w * sys.dt)
    return 1j * w


def freq_response(sys: StateSpace, w, method: str = "solve") -> np.ndarray:
    """Evaluate ``C (sI - A)^-1 B + D`` on ``s = jw`` (or ``z = e^{jwTs}``).

    Scalar ``w`` gives a ``(p, m)`` array, a vector gives ``(len(w), p, m)``.
    ``method="eig"`` uses a modal expansion (fast on dense grids) and falls
    back to direct solves when ``A`` is badly conditioned for diagonalization.
    """
    scalar = np.ndim(w) == 0
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if np.any(w < 0):
        raise LinsysError("frequencies must be nonnegative")
    n, p, m = sys.nstates, sys.noutputs, sys.ninputs
    out = np.empty((w.size, p, m), dtype=complex)
    out[:] = sys.D
    if n:
        s = _contour_points(sys, w)
        poles = sys.poles()
        gap = np.min(np.abs(s[:, None] - poles[None, :]), axis=1)
        scale = np.maximum(1.0, np.abs(s))
        if np.any(gap <= 1e-13 * scale):
            bad = w[np.argmin(gap / scale)]
            raise PoleOnContourError(f"pole on evaluation contour at w={bad:g} rad/s")
        done = False
        if method == "eig":
            lam, V = np.linalg.eig(sys.A)
            if np.linalg.cond(V) < 1e6:
                CV = sys.C @ V
                VB = np.linalg.solve(V, sys.B)
                R = 1.0 / (s[:, None] - lam[None, :])
                out += np.einsum("pk,nk,km->npm", CV, R, VB)
                done = True
        if not done:
            eye = np.eye(n)
            for lo in range(0, w.size, 4096):
                sl = slice(lo, lo + 4096)
                M = s[sl, None, None] * eye - sys.A
                X = np.linalg.solve(M, np.broadcast_to(sys.B, (M.shape[0], n, m)))
                out[sl] += sys.C @ X
    return out[0] if scalar else out


def sigma_max(resp: np.ndarray) -> np.ndarray:
    """Largest singular value of each response matrix."""
    resp = np.asarray(resp)
    if resp.shape[-1] == 1 or resp.shape[-2] == 1:
        return np.sqrt(np.sum(np.abs(resp) ** 2, axis=(-1, -2)))
    return np.linalg.svd(resp, compute_uv=False)[..., 0]


@dataclass(frozen=True)
class FrequencyGrid:
    points: np.ndarray
    spacing: str = "log"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size == 0:
            raise LinsysError("frequency grid must be a nonempty vector")
        if np.any(pts <= 0) or np.any(np.diff(pts) <= 0):
            raise LinsysError("frequency grid must be positive and strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def log(cls, wmin: float, wmax: float, n: int) -> "FrequencyGrid":
        return cls(np.logspace(np.log10(wmin), np.log10(wmax), n), "log")

    @classmethod
    def linear(cls, wmin: float, wmax: float, n: int) -> "FrequencyGrid":
        return cls(np.linspace(wmin, wmax, n), "linear")

    def __len__(self):
        return self.points.size

    def __iter__(self):
        return iter(self.points)


def _norm_grid(sys: StateSpace, per_decade: int) -> np.ndarray:
    poles = sys.poles()
    if sys.is_discrete:
        nat = np.abs(np.log(poles[np.abs(poles) > 0] + 0j)) / sys.dt
        wmax = math.pi / sys.dt
    else:
        nat = np.abs(poles)
        wmax = None
    nat = nat[nat > 1e-12]
    lo = (nat.min() if nat.size else 1.0) * 1e-3
    hi = (nat.max() if nat.size else 1.0) * 1e3
    if wmax is not None:
        hi = wmax
        lo = min(lo, wmax * 1e-6)
    decades = max(np.log10(hi / lo), 1.0)
    grid = np.logspace(np.log10(lo), np.log10(hi), int(per_decade * decades) + 1)
    extra = np.concatenate([nat, np.abs(poles.imag) / (sys.dt or 1.0) if sys.is_discrete
                            else np.abs(poles.imag)])
    extra = extra[(extra > lo) & (extra < hi)]
    return np.unique(np.concatenate([grid, extra]))


def _golden_max(f, a: float, b: float, rtol: float = 1e-10, maxiter: int = 200):
    """Golden-section maximization of ``f`` over ``log w`` on ``[a, b]``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    la, lb = math.log(a), math.log(b)
    lc = lb - invphi * (lb - la)
    ld = la + invphi * (lb - la)
    fc, fd = f(math.exp(lc)), f(math.exp(ld))
    for _ in range(maxiter):
        if lb - la < rtol:
            break
        if fc > fd:
            lb, ld, fd = ld, lc, fc
            lc = lb - invphi * (lb - la)
            fc = f(math.exp(lc))
        else:
            la, lc, fc = lc, ld, fd
            ld = la + invphi * (lb - la)
            fd = f(math.exp(ld))
    return (math.exp(lc), fc) if fc > fd else (math.exp(ld), fd)


def hinf_norm(sys: StateSpace, tol: float = 1e-6, *, per_decade: int = 400,
              return_peak: bool = False):
    """H-infinity norm of a stable system.

    Coarse log-grid scan spanning the pole frequencies, followed by a
    golden-section refinement around every local maximum of the grid.
    """
    if not sys.is_stable():
        raise UnstableSystemError("norm undefined for unstable system")
    if sys.is_static:
        val = float(sigma_max(sys.D[None])[0]) if sys.D.size else 0.0
        return (val, math.inf) if return_peak else val

    def smax(wk: float) -> float:
        return float(sigma_max(freq_response(sys, wk)[None])[0])

    grid = _norm_grid(sys, per_decade)
    vals = sigma_max(freq_response(sys, grid, method="eig"))
    best_w, best = 0.0, smax(0.0)
    if sys.is_discrete:
        edge = smax(math.pi / sys.dt)
        if edge > best:
            best_w, best = math.pi / sys.dt, edge
    else:
        dval = float(sigma_max(sys.D[None])[0]) if sys.D.size else 0.0
        if dval > best:
            best_w, best = math.inf, dval
    interior = np.flatnonzero((vals[1:-1] >= vals[:-2]) & (vals[1:-1] >= vals[2:])) + 1
    # limit refinement to the strongest candidates
    order = interior[np.argsort(vals[interior])[::-1][:8]]
    for i in order:
        wk, val = _golden_max(smax, grid[i - 1], grid[i + 1], rtol=max(tol * 1e-3, 1e-12))
        val = max(val, float(vals[i]))
        if val > best:
            best_w, best = wk, val
    for i in (0, grid.size - 1):
        if vals[i] > best:
            best_w, best = float(grid[i]), float(vals[i])
    return (best, best_w) if return_peak else best


# ---------------------------------------------------------------- interconnection

def _common_dt(*systems: StateSpace):
    dts = {s.dt for s in systems if not s.is_static}
    if len(dts) > 1:
        raise LinsysError("cannot connect systems with different time domains")
    if dts:
        return dts.pop()
    dts = {s.dt for s in systems}
    return dts.pop() if len(dts) == 1 else None


def append(*systems: StateSpace) -> StateSpace:
    """Block-diagonal stacking: inputs and outputs concatenated."""
    dt = _common_dt(*systems)
    n = sum(s.nstates for s in systems)
    m = sum(s.ninputs for s in systems)
    p = sum(s.noutputs for s in systems)
    A, B, C, D = np.zeros((n, n)), np.zeros((n, m)), np.zeros((p, n)), np.zeros((p, m))
    i = j = k = 0
    for s in systems:
        ni, mi, pi = s.nstates, s.ninputs, s.noutputs
        A[i:i + ni, i:i + ni] = s.A
        B[i:i + ni, j:j + mi] = s.B
        C[k:k + pi, i:i + ni] = s.C
        D[k:k + pi, j:j + mi] = s.D
        i, j, k = i + ni, j + mi, k + pi
    return StateSpace(A, B, C, D, dt)


def series(first: StateSpace, second: StateSpace) -> StateSpace:
    """``second(first(u))``."""
    if first.noutputs != second.ninputs:
        raise LinsysError("series: dimension mismatch")
    dt = _common_dt(first, second)
    n1 = first.nstates
    A = np.block([[first.A, np.zeros((n1, second.nstates))],
                  [second.B @ first.C, second.A]])
    B = np.vstack([first.B, second.B @ first.D])
    C = np.hstack([second.D @ first.C, second.C])
    D = second.D @ first.D
    return StateSpace(A, B, C, D, dt)


def parallel(a: StateSpace, b: StateSpace) -> StateSpace:
    if (a.ninputs, a.noutputs) != (b.ninputs, b.noutputs):
        raise LinsysError("parallel: dimension mismatch")
    s = append(a, b)
    m, p = a.ninputs, a.noutputs
    return StateSpace(s.A, s.B @ np.vstack([np.eye(m), np.eye(m)]),
                      np.hstack([np.eye(p), np.eye(p)]) @ s.C, a.D + b.D, s.dt)


@dataclass(frozen=True)
class Block:
    """A system with named input and output signals for :func:`interconnect`."""

    sys: StateSpace
    inputs: tuple
    outputs: tuple

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if len(self.inputs) != self.sys.ninputs or len(self.outputs) != self.sys.noutputs:
            raise LinsysError("block signal names do not match system dimensions")


def interconnect(blocks: Sequence[Block], sums: Mapping[str, Iterable] | None = None,
                 inputs: Sequence[str] = (), outputs: Sequence[str] = ()) -> StateSpace:
    """Close a named block diagram.

    ``sums`` maps a signal name to a list of ``(signal, gain)`` pairs, so
    ``{"e": [("r", 1), ("y", -1)]}`` defines ``e = r - y``.  Every block
    input and every requested output must name a block output, an external
    input or a sum.  Raises :class:`AlgebraicLoopError` when a direct
    feedthrough loop is not invertible.
    """
    sums = dict(sums or {})
    inputs, outputs = list(inputs), list(outputs)
    big = append(*[b.sys for b in blocks])
    ny, nw = big.noutputs, len(inputs)
    out_index = {}
    for b in blocks:
        for name in b.outputs:
            if name in out_index:
                raise LinsysError(f"signal {name!r} driven twice")
            out_index[name] = len(out_index)
    in_index = {name: i for i, name in enumerate(inputs)}
    cache: dict = {}

    def resolve(name, stack=()):
        # returns (row over block outputs, row over external inputs)
        if name in cache:
            return cache[name]
        if name in stack:
            raise LinsysError(f"sum definition cycle through {name!r}")
        qy, qw = np.zeros(ny), np.zeros(nw)
        if name in sums:
            for sig, g in sums[name]:
                ry, rw = resolve(sig, stack + (name,))
                qy += g * ry
                qw += g * rw
        elif name in out_index:
            qy[out_index[name]] = 1.0
        elif name in in_index:
            qw[in_index[name]] = 1.0
        else:
            raise LinsysError(f"unknown signal {name!r}")
        cache[name] = (qy, qw)
        return qy, qw

    rows = [resolve(name) for b in blocks for name in b.inputs]
    Q = np.array([r[0] for r in rows]).reshape(-1, ny)
    E = np.array([r[1] for r in rows]).reshape(-1, nw)
    orow = [resolve(name) for name in outputs]
    F = np.array([r[0] for r in orow]).reshape(-1, ny)
    G = np.array([r[1] for r in orow]).reshape(-1, nw)

    L = np.eye(ny) - big.D @ Q
    if np.linalg.cond(L) > 1e12:
        raise AlgebraicLoopError("algebraic loop: direct-feedthrough loop is not invertible")
    M = np.linalg.inv(L)
    A = big.A + big.B @ Q @ M @ big.C
    B = big.B @ Q @ M @ big.D @ E + big.B @ E
    C = F @ M @ big.C
    D = F @ M @ big.D @ E + G
    return StateSpace(A, B, C, D, big.dt)


def feedback(G: StateSpace, K: StateSpace | None = None, sign: int = -1) -> StateSpace:
    """Closed loop ``y = G (r + sign * K y)``; unity feedback when ``K`` is None."""
    if K is None:
        K = gain(np.eye(G.noutputs), G.dt)
    m, p = G.ninputs, G.noutputs
    ins = [f"r{i}" for i in range(m)]
    gu = [f"u{i}" for i in range(m)]
    gy = [f"y{i}" for i in range(p)]
    ky = [f"f{i}" for i in range(m)]
    sums = {gu[i]: [(ins[i], 1.0), (ky[i], float(sign))] for i in range(m)}
    return interconnect([Block(G, gu, gy), Block(K, gy, ky)], sums, ins, gy)


def lft(P: StateSpace, K: StateSpace, nu: int | None = None, ny: int | None = None) -> StateSpace:
    """Lower linear fractional transformation ``F_l(P, K)``.

    The last ``nu`` inputs of ``P`` are driven by ``K`` whose inputs are the
    last ``ny`` outputs of ``P``.
    """
    nu = K.noutputs if nu is None else nu
    ny = K.ninputs if ny is None else ny
    nw, nz = P.ninputs - nu, P.noutputs - ny
    w = [f"w{i}" for i in range(nw)]
    u = [f"u{i}" for i in range(nu)]
    z = [f"z{i}" for i in range(nz)]
    y = [f"y{i}" for i in range(ny)]
    return interconnect([Block(P, w + u, z + y), Block(K, y, u)], {}, w, z)


# ---------------------------------------------------------------- discretization

def discretize_tustin(sys: StateSpace, fs: float) -> StateSpace:
    """Bilinear map ``s <- (2/Ts)(z-1)/(z+1)`` without prewarping."""
    if sys.is_discrete:
        raise LinsysError("system is already discrete")
    Ts = 1.0 / fs
    n = sys.nstates
    if n == 0:
        return gain(sys.D, Ts)
    alpha = Ts / 2.0
    ima = np.eye(n) - alpha * sys.A
    if np.any(np.abs(np.linalg.eigvals(sys.A) - 1.0 / alpha) < 1e-9 / alpha) or \
            np.linalg.cond(ima) > 1e14:
        raise LinsysError("eigenvalue at 2/Ts: bilinear map undefined")
    Ad = np.linalg.solve(ima, np.eye(n) + alpha * sys.A)
    Bd = np.linalg.solve(ima, Ts * sys.B)
    Cd = np.linalg.solve(ima.T, sys.C.T).T
    Dd = sys.D + alpha * sys.C @ np.linalg.solve(ima, sys.B)
    return StateSpace(Ad, Bd, Cd, Dd, Ts)


# ---------------------------------------------------------------- pseudo-inverse

def pinv_cutoff(s: np.ndarray, shape) -> float:
    return max(shape) * (s[0] if s.size else 0.0) * 2.0 ** -40


def pseudo_inverse(M) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values below ``max(dim) * sigma_max * 2**-40`` are treated as zero.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > pinv_cutoff(s, M.shape)
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (Vt.T * inv_s) @ U.T


# ---------------------------------------------------------------- serialization

def to_dict(sys: StateSpace) -> dict:
    return {
        "type": "StateSpace",
        "domain": "discrete" if sys.is_discrete else "continuous",
        "Ts": sys.dt,
        "shape": [sys.nstates, sys.ninputs, sys.noutputs],
        "A": sys.A.tolist(), "B": sys.B.tolist(), "C": sys.C.tolist(), "D": sys.D.tolist(),
    }


def from_dict(d: dict) -> StateSpace:
    if d.get("type") != "StateSpace":
        raise LinsysError("not a StateSpace record")
    n, m, p = d["shape"]
    dt = d["Ts"] if d["domain"] == "discrete" else None
    A = np.array(d["A"], dtype=float).reshape(n, n)
    B = np.array(d["B"], dtype=float).reshape(n, m)
    C = np.array(d["C"], dtype=float).reshape(p, n)
    D = np.array(d["D"], dtype=float).reshape(p, m)
    return StateSpace(A, B, C, D, dt)


def to_text(sys: StateSpace) -> str:
    """JSON record, matrices row-major, floats at full round-trip precision."""
    return json.dumps(to_dict(sys), indent=1)


def from_text(text: str) -> StateSpace:
    return from_dict(json.loads(text))
