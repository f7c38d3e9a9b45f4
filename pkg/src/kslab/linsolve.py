"""Sparse linear solvers with max-norm residual control.

All convergence tests are relative max-norm: ||b - A x||_inf <= rtol * ||b||_inf.
That is the currency of every comparison-principle check in this package, so
the solvers enforce it directly rather than relying on 2-norm heuristics.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.sparse.linalg import splu

from .errors import NumericalError


def iteration_cap(n: int) -> int:
    return 10 * int(math.isqrt(n)) + 200


def _resid_inf(A, x, b):
    return float(np.max(np.abs(b - A @ x)))


def cg(A, b, x0=None, rtol=1e-10, maxiter=None):
    """Conjugate gradients for symmetric positive definite A.

    Returns (x, resid, iters, converged); never raises on non-convergence.
    """
    n = b.shape[0]
    maxiter = iteration_cap(n) if maxiter is None else maxiter
    bnorm = float(np.max(np.abs(b)))
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0, 0, True
    target = rtol * bnorm
    x = np.zeros_like(b) if x0 is None else x0.astype(float, copy=True)
    r = b - A @ x
    if float(np.max(np.abs(r))) <= target:
        return x, float(np.max(np.abs(r))), 0, True
    p = r.copy()
    rs = float(r @ r)
    best_x, best_r = x.copy(), float(np.max(np.abs(r)))
    stall = 0
    for k in range(1, maxiter + 1):
        Ap = A @ p
        denom = float(p @ Ap)
        if denom <= 0.0 or not math.isfinite(denom):
            break
        alpha = rs / denom
        x += alpha * p
        r -= alpha * Ap
        rinf = float(np.max(np.abs(r)))
        if rinf < best_r:
            best_x, best_r, stall = x.copy(), rinf, 0
        else:
            stall += 1
        if rinf <= target:
            return x, rinf, k, True
        if stall > 50:
            break
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return best_x, best_r, maxiter, best_r <= target


def bicgstab(A, b, x0=None, rtol=1e-10, maxiter=None):
    """Stabilized bi-conjugate gradients for nonsymmetric A.

    Returns (x, resid, iters, converged); never raises on non-convergence.
    """
    n = b.shape[0]
    maxiter = iteration_cap(n) if maxiter is None else maxiter
    bnorm = float(np.max(np.abs(b)))
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0, 0, True
    target = rtol * bnorm
    x = np.zeros_like(b) if x0 is None else x0.astype(float, copy=True)
    r = b - A @ x
    rinf = float(np.max(np.abs(r)))
    if rinf <= target:
        return x, rinf, 0, True
    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    best_x, best_r = x.copy(), rinf
    stall = 0
    for k in range(1, maxiter + 1):
        rho_new = float(rhat @ r)
        if abs(rho_new) < 1e-300 or abs(omega) < 1e-300:
            break  # breakdown
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        v = A @ p
        denom = float(rhat @ v)
        if abs(denom) < 1e-300:
            break
        alpha = rho / denom
        s = r - alpha * v
        if float(np.max(np.abs(s))) <= target:
            x += alpha * p
            rinf = _resid_inf(A, x, b)
            if rinf <= target:
                return x, rinf, k, True
            r = b - A @ x
        else:
            t = A @ s
            tt = float(t @ t)
            if tt == 0.0:
                break
            omega = float(t @ s) / tt
            x += alpha * p + omega * s
            r = s - omega * t
        rinf = float(np.max(np.abs(r)))
        if not math.isfinite(rinf):
            break
        if rinf < best_r:
            best_x, best_r, stall = x.copy(), rinf, 0
        else:
            stall += 1
        if rinf <= target:
            # Recompute the true residual before accepting.
            true_r = _resid_inf(A, x, b)
            if true_r <= target:
                return x, true_r, k, True
            r = b - A @ x
            best_r = min(best_r, true_r)
        if stall > 50:
            break
    return best_x, best_r, maxiter, best_r <= target


class LuSolver:
    """Sparse LU factorization with iterative refinement to a max-norm target."""

    def __init__(self, A_csr):
        self.A = A_csr
        self._lu = splu(A_csr.tocsc())

    def solve(self, b, rtol=1e-12, max_refine=3):
        bnorm = float(np.max(np.abs(b)))
        if bnorm == 0.0:
            return np.zeros_like(b), 0.0
        x = self._lu.solve(b)
        resid = _resid_inf(self.A, x, b)
        for _ in range(max_refine):
            if resid <= rtol * bnorm:
                break
            x = x + self._lu.solve(b - self.A @ x)
            resid = _resid_inf(self.A, x, b)
        return x, resid


def solve_mmatrix(A, b, x0=None, rtol=1e-12, symmetric=False, lu_fallback=True):
    """Solve A x = b for a (possibly nonsymmetric) M-matrix system.

    Tries the Krylov method first (cheap when x0 is a good guess), then falls
    back to a direct sparse factorization.  Raises NumericalError when neither
    path reaches the residual target.
    """
    method = cg if symmetric else bicgstab
    x, resid, _, ok = method(A, b, x0=x0, rtol=rtol)
    if ok:
        return x, resid
    if lu_fallback:
        x, resid = LuSolver(A).solve(b, rtol=rtol)
        bnorm = float(np.max(np.abs(b)))
        if resid <= rtol * bnorm:
            return x, resid
    raise NumericalError("linear solve failed to reach residual target", residual=resid)
