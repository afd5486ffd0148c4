"""Full-order H-infinity synthesis by gamma-iteration on two Riccati equations.

General-D11 central controller formulas (Glover-Doyle) after normalizing the
plant to ``D12 = [0; I]``, ``D21 = [0 I]``.  Singular D12/D21 blocks are
regularized with a small feedthrough ``eps`` before normalization.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ..linsys import StateSpace, feedback, hinf_norm, lft

log = logging.getLogger(__name__)


class SynthesisError(RuntimeError):
    pass


def _inv(M):
    return np.linalg.inv(M) if M.size else M


def riccati_from_hamiltonian(H: np.ndarray, tol: float = 1e-9):
    """Stabilizing solution ``X = U21 U11^-1`` from an ordered Schur form.

    Returns None when ``H`` has eigenvalues on the imaginary axis or the
    stable invariant subspace is not complementary.
    """
    n = H.shape[0] // 2
    scale = 1.0 + np.linalg.norm(H, 1)
    ev = np.linalg.eigvals(H)
    if np.min(np.abs(ev.real)) < tol * scale:
        return None
    T, U, sdim = sla.schur(H, output="real", sort="lhp")
    if sdim != n:
        return None
    U11, U21 = U[:n, :n], U[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        return None
    X = np.linalg.solve(U11.T, U21.T).T
    return (X + X.T) / 2.0


@dataclass
class _Normalized:
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D22: np.ndarray
    Tu: np.ndarray      # u = Tu @ u_tilde
    Ty: np.ndarray      # y_tilde = Ty @ y
    regularized: list = field(default_factory=list)


def _normalize(P: StateSpace, nu: int, ny: int, eps: float) -> _Normalized:
    n = P.nstates
    nw, nz = P.ninputs - nu, P.noutputs - ny
    A = P.A
    B1, B2 = P.B[:, :nw], P.B[:, nw:]
    C1, C2 = P.C[:nz, :], P.C[nz:, :]
    D11, D12 = P.D[:nz, :nw], P.D[:nz, nw:]
    D21, D22 = P.D[nz:, :nw], P.D[nz:, nw:]
    notes = []
    if np.linalg.matrix_rank(D12) < nu:
        C1 = np.vstack([C1, np.zeros((nu, n))])
        D11 = np.vstack([D11, np.zeros((nu, D11.shape[1]))])
        D12 = np.vstack([D12, eps * np.eye(nu)])
        notes.append(f"D12 rank-deficient: appended {eps:g}*I control penalty")
    if np.linalg.matrix_rank(D21) < ny:
        B1 = np.hstack([B1, np.zeros((n, ny))])
        D11 = np.hstack([D11, np.zeros((D11.shape[0], ny))])
        D21 = np.hstack([D21, eps * np.eye(ny)])
        notes.append(f"D21 rank-deficient: appended {eps:g}*I measurement noise")
    p1, m1 = D11.shape

    Uz, s12, Vt12 = np.linalg.svd(D12)
    Theta = np.hstack([Uz[:, nu:], Uz[:, :nu]])
    Tu = Vt12.T @ np.diag(1.0 / s12)
    Uy, s21, Vt21 = np.linalg.svd(D21)
    Vw = Vt21.T
    Psi = np.hstack([Vw[:, ny:], Vw[:, :ny]])
    Ty = np.diag(1.0 / s21) @ Uy.T

    return _Normalized(
        A=A, B1=B1 @ Psi, B2=B2 @ Tu, C1=Theta.T @ C1, C2=Ty @ C2,
        D11=Theta.T @ D11 @ Psi, D22=Ty @ D22 @ Tu, Tu=Tu, Ty=Ty, regularized=notes,
    )


def _gamma_floor(N: _Normalized, nu: int, ny: int) -> float:
    p1, m1 = N.D11.shape
    top = N.D11[: p1 - nu, :]
    left = N.D11[:, : m1 - ny]
    a = np.linalg.norm(top, 2) if top.size else 0.0
    b = np.linalg.norm(left, 2) if left.size else 0.0
    return max(a, b)


def _central_controller(N: _Normalized, nu: int, ny: int, gamma: float):
    """Return ``(K_tilde, X, Y)`` at ``gamma`` or None when infeasible."""
    A, B1, B2, C1, C2, D11 = N.A, N.B1, N.B2, N.C1, N.C2, N.D11
    n = A.shape[0]
    p1, m1 = D11.shape
    g2 = gamma * gamma
    B = np.hstack([B1, B2])
    C = np.vstack([C1, C2])
    D12 = np.vstack([np.zeros((p1 - nu, nu)), np.eye(nu)])
    D21 = np.hstack([np.zeros((ny, m1 - ny)), np.eye(ny)])
    D1d = np.hstack([D11, D12])
    Dd1 = np.vstack([D11, D21])

    R = D1d.T @ D1d
    R[:m1, :m1] -= g2 * np.eye(m1)
    Rt = Dd1 @ Dd1.T
    Rt[:p1, :p1] -= g2 * np.eye(p1)
    try:
        Ri, Rti = np.linalg.inv(R), np.linalg.inv(Rt)
    except np.linalg.LinAlgError:
        return None

    Hx = np.block([[A, np.zeros((n, n))], [-C1.T @ C1, -A.T]]) \
        - np.vstack([B, -C1.T @ D1d]) @ Ri @ np.hstack([D1d.T @ C1, B.T])
    Jy = np.block([[A.T, np.zeros((n, n))], [-B1 @ B1.T, -A]]) \
        - np.vstack([C.T, -B1 @ Dd1.T]) @ Rti @ np.hstack([Dd1 @ B1.T, C])
    X = riccati_from_hamiltonian(Hx)
    if X is None:
        return None
    Y = riccati_from_hamiltonian(Jy)
    if Y is None:
        return None
    tolp = -1e-8 * max(1.0, np.abs(X).max())
    if np.linalg.eigvalsh(X).min() < tolp:
        return None
    tolp = -1e-8 * max(1.0, np.abs(Y).max())
    if np.linalg.eigvalsh(Y).min() < tolp:
        return None
    rho = np.max(np.abs(np.linalg.eigvals(X @ Y)))
    if rho >= g2:
        return None

    F = -Ri @ (D1d.T @ C1 + B.T @ X)
    L = -(B1 @ Dd1.T + Y @ C.T) @ Rti
    F1, F2 = F[:m1, :], F[m1:, :]
    F12 = F1[m1 - ny:, :]
    L1, L2 = L[:, :p1], L[:, p1:]
    L12 = L1[:, p1 - nu:]

    D1111 = D11[: p1 - nu, : m1 - ny]
    D1112 = D11[: p1 - nu, m1 - ny:]
    D1121 = D11[p1 - nu:, : m1 - ny]
    D1122 = D11[p1 - nu:, m1 - ny:]
    M1 = g2 * np.eye(p1 - nu) - D1111 @ D1111.T
    M2 = g2 * np.eye(m1 - ny) - D1111.T @ D1111
    Dh11 = -D1121 @ D1111.T @ _inv(M1) @ D1112 - D1122 if D1111.size else -D1122
    S12 = np.eye(nu) - (D1121 @ _inv(M2) @ D1121.T if D1121.size else 0.0)
    S21 = np.eye(ny) - (D1112.T @ _inv(M1) @ D1112 if D1112.size else 0.0)
    try:
        Dh12 = np.linalg.cholesky(S12)
        Dh21 = np.linalg.cholesky(S21).T
    except np.linalg.LinAlgError:
        return None
    Z = np.linalg.inv(np.eye(n) - Y @ X / g2)
    Bh2 = Z @ (B2 + L12) @ Dh12
    Ch2 = -Dh21 @ (C2 + F12)
    Bh1 = -Z @ L2 + Bh2 @ np.linalg.solve(Dh12, Dh11)
    Ch1 = F2 + Dh11 @ np.linalg.solve(Dh21, Ch2)
    Ah = A + B @ F + Bh1 @ np.linalg.solve(Dh21, Ch2)
    return StateSpace(Ah, Bh1, Ch1, Dh11), X, Y


@dataclass
class FullOrderResult:
    K: StateSpace
    gamma: float
    closed_loop_norm: float
    iterations: int
    notes: list


def hinf_synthesis(P: StateSpace, nu: int, ny: int, gamma_tol: float = 1e-3,
                   eps: float = 1e-6, gamma_max: float = 1e8) -> FullOrderResult:
    """Suboptimal full-order H-infinity controller for ``P`` (last ``nu``
    inputs are controls, last ``ny`` outputs are measurements).

    Bisects on gamma to relative precision ``gamma_tol`` and returns the
    central controller at the smallest feasible gamma found.  The achieved
    closed-loop norm is recomputed independently with
    :func:`~indihinf.linsys.hinf_norm`.
    """
    if P.is_discrete:
        raise SynthesisError("continuous-time plants only")
    N = _normalize(P, nu, ny, eps)
    lo = _gamma_floor(N, nu, ny)
    hi = max(2.0 * lo, 1.0)
    best = None
    it = 0
    while hi <= gamma_max:
        it += 1
        best = _central_controller(N, nu, ny, hi)
        if best is not None:
            break
        lo, hi = hi, hi * 2.0
    if best is None:
        raise SynthesisError(
            f"no feasible gamma below {gamma_max:g}: check stabilizability of (A, B2) "
            "and detectability of (C2, A), or jw-axis zeros in P12/P21")
    best_gamma = hi
    while (hi - lo) > gamma_tol * hi:
        it += 1
        mid = 0.5 * (lo + hi)
        res = _central_controller(N, nu, ny, mid)
        if res is None:
            lo = mid
        else:
            hi, best, best_gamma = mid, res, mid
    Kt = best[0]
    if np.any(N.D22):
        Kt = feedback(Kt, StateSpace(np.zeros((0, 0)), np.zeros((0, nu)),
                                     np.zeros((ny, 0)), N.D22), sign=-1)
    K = StateSpace(Kt.A, Kt.B @ N.Ty, N.Tu @ Kt.C, N.Tu @ Kt.D @ N.Ty)
    cl = lft(P, K)
    if not cl.is_stable():
        raise SynthesisError("central controller does not stabilize the plant "
                             "(numerical breakdown near optimal gamma)")
    cl_norm = hinf_norm(cl)
    log.debug("full-order synthesis: gamma=%.6g, closed-loop norm=%.6g", best_gamma, cl_norm)
    return FullOrderResult(K=K, gamma=best_gamma, closed_loop_norm=cl_norm,
                           iterations=it, notes=N.regularized)
