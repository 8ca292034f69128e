"""Entrywise reference solvers used as ground truth for the stochastic method.

These need the entries of ``A`` and are meant for desk-scale problems.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .core import DEFAULT_GAMMA, EquilibrationParams, objective
from .linops import ExplicitMatrix

__all__ = [
    "NotEquilibratableError",
    "ConvergenceError",
    "lambert_w",
    "lambert_w_exp",
    "block_argmin",
    "SinkhornResult",
    "sinkhorn_knopp",
    "regularized_block_min",
    "alternating_block_min",
    "newton_oracle",
    "symmetric_newton_oracle",
    "tensor_block_min",
    "NEWTON_SIZE_LIMIT",
]

log = logging.getLogger(__name__)

NEWTON_SIZE_LIMIT = 4000
ARMIJO = 1e-4
SHRINK = 0.5


class NotEquilibratableError(ValueError):
    """Matrix has a zero row or column."""


class ConvergenceError(RuntimeError):
    pass


def lambert_w(x, tol: float = 1e-15, max_iter: int = 60):
    """Principal branch of the Lambert W function for ``x >= 0``.

    Halley iteration on ``w e^w = x`` from ``w0 = log(1 + x)``.
    Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("lambert_w is only implemented for x >= 0")
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    w = np.log1p(x)
    active = x > 0
    w[~active] = 0.0
    for _ in range(max_iter):
        if not active.any():
            break
        wa = w[active]
        ew = np.exp(wa)
        f = wa * ew - x[active]
        wp1 = wa + 1.0
        step = f / (ew * wp1 - (wa + 2.0) * f / (2.0 * wp1))
        w[active] = wa - step
        done = np.abs(step) <= tol * np.abs(w[active])
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return float(w[0]) if scalar else w


def lambert_w_exp(L, tol: float = 1e-15, max_iter: int = 60):
    """``W(exp(L))`` without forming ``exp(L)``; ``L = -inf`` gives 0.

    For large ``L`` this solves ``w + log(w) = L`` by Newton's method.
    """
    L = np.asarray(L, dtype=np.float64)
    scalar = L.ndim == 0
    L = np.atleast_1d(L)
    w = np.empty_like(L)
    small = L <= 3.0
    if small.any():
        w[small] = lambert_w(np.exp(L[small]))
    big = ~small
    if big.any():
        Lb = L[big]
        wb = Lb - np.log(Lb)
        for _ in range(max_iter):
            step = (wb + np.log(wb) - Lb) * wb / (wb + 1.0)
            wb = wb - step
            if np.all(np.abs(step) <= tol * wb):
                break
        w[big] = wb
    return float(w[0]) if scalar else w


def block_argmin(q, a, gamma: float, M: float = math.inf):
    """Minimizer over ``x in [-M, M]`` of ``q/2 e^(2x) - a x + gamma/2 x^2``, elementwise.

    Closed form ``x = a/gamma - W(2 q e^(2a/gamma) / gamma) / 2``.  When
    ``W > 1`` the equivalent ``x = (log W - log(2q/gamma)) / 2`` is used; it
    avoids cancelling two huge terms when ``gamma`` is tiny.
    """
    q, a = np.broadcast_arrays(np.asarray(q, dtype=np.float64), np.asarray(a, dtype=np.float64))
    with np.errstate(divide="ignore"):
        log_ratio = np.log(2.0 * q / gamma)
        W = lambert_w_exp(log_ratio + 2.0 * a / gamma)
        x_direct = a / gamma - 0.5 * W
        x_log = 0.5 * (np.log(np.maximum(W, 1.0)) - log_ratio)
    x = np.where(W > 1.0, x_log, x_direct)
    return np.clip(x, -M, M)


@dataclass
class SinkhornResult:
    d: np.ndarray
    e: np.ndarray
    converged: bool
    residual: float
    iterations: int

    def __iter__(self):
        yield self.d
        yield self.e


def _check_equilibratable(A2):
    rows = np.asarray(A2.sum(axis=1)).ravel()
    cols = np.asarray(A2.sum(axis=0)).ravel()
    if np.any(rows == 0) or np.any(cols == 0):
        raise NotEquilibratableError(
            f"not equilibratable: {int(np.sum(rows == 0))} zero rows, "
            f"{int(np.sum(cols == 0))} zero columns"
        )


def sinkhorn_knopp(A, alpha=None, beta=None, max_iters: int = 10000, tol: float = 1e-10):
    """Alternating exact row/column normalization (Sinkhorn-Knopp).

    Starts from ``E = I`` and alternates ``D`` then ``E`` updates until the RMS
    equilibration error of ``DAE`` is at most ``tol``.  Non-convergence is
    reported through ``SinkhornResult.converged``, not raised.
    """
    from .metrics import rms_error

    A = A if isinstance(A, ExplicitMatrix) else ExplicitMatrix(A)
    m, n = A.shape
    p = EquilibrationParams(alpha=alpha, beta=beta).resolve(m, n)
    A2 = A.squared()
    _check_equilibratable(A2)
    e = np.ones(n)
    d = np.ones(m)
    residual = math.inf
    for it in range(1, max_iters + 1):
        d = p.alpha / np.sqrt(np.asarray(A2 @ (e * e)).ravel())
        e = p.beta / np.sqrt(np.asarray(A2.T @ (d * d)).ravel())
        residual = rms_error(A, np.log(d), np.log(e), p.alpha, p.beta)
        if residual <= tol:
            return SinkhornResult(d, e, True, residual, it)
    return SinkhornResult(d, e, False, residual, max_iters)


def _projected_grad_norm(x, g, M):
    return float(np.linalg.norm(x - np.clip(x - g, -M, M)))


def alternating_block_min(
    A,
    row_linear,
    col_linear,
    gamma: float,
    M: float = math.inf,
    row_groups=None,
    col_groups=None,
    max_iters: int = 100000,
    tol: float = 1e-10,
):
    """Exact alternating minimization over grouped log-scalings.

    Minimizes ``1/2 1^T |DAE|^2 1 - row_linear^T u - col_linear^T v +
    gamma/2 (|u|^2 + |v|^2)`` over ``|u|, |v| <= M`` where ``D`` repeats
    ``exp(u_g)`` over the rows of group ``g`` (``row_groups`` is a list of
    group sizes; ``None`` means one row per group), likewise for ``E``.

    Returns ``(u, v, iterations, converged)``.
    """
    A = A if isinstance(A, ExplicitMatrix) else ExplicitMatrix(A)
    m, n = A.shape
    row_groups = np.ones(m, dtype=int) if row_groups is None else np.asarray(row_groups, dtype=int)
    col_groups = np.ones(n, dtype=int) if col_groups is None else np.asarray(col_groups, dtype=int)
    if row_groups.sum() != m or col_groups.sum() != n:
        raise ValueError("group sizes do not match matrix dimensions")
    rstart = np.concatenate(([0], np.cumsum(row_groups)[:-1]))
    cstart = np.concatenate(([0], np.cumsum(col_groups)[:-1]))
    a = np.asarray(row_linear, dtype=np.float64)
    b = np.asarray(col_linear, dtype=np.float64)
    A2 = A.squared()
    u = np.zeros(len(row_groups))
    v = np.zeros(len(col_groups))
    for it in range(1, max_iters + 1):
        ev2 = np.repeat(np.exp(2.0 * v), col_groups)
        q = np.add.reduceat(np.asarray(A2 @ ev2).ravel(), rstart)
        u = block_argmin(q, a, gamma, M)
        du2 = np.repeat(np.exp(2.0 * u), row_groups)
        r = np.add.reduceat(np.asarray(A2.T @ du2).ravel(), cstart)
        v = block_argmin(r, b, gamma, M)
        # v is blockwise optimal, so only the u-gradient can be nonzero
        ev2 = np.repeat(np.exp(2.0 * v), col_groups)
        q = np.add.reduceat(np.asarray(A2 @ ev2).ravel(), rstart)
        gu = q * np.exp(2.0 * u) - a + gamma * u
        if _projected_grad_norm(u, gu, M) <= tol:
            return u, v, it, True
    return u, v, max_iters, False


def regularized_block_min(A, params: EquilibrationParams, max_iters: int = 100000, tol: float = 1e-10):
    """Solve the regularized, boxed equilibration problem by exact block minimization.

    Each half step minimizes over ``u`` (resp. ``v``) in closed form with the
    Lambert W function and clamps to ``[-M, M]``.  Returns ``(u, v)``.
    """
    A = A if isinstance(A, ExplicitMatrix) else ExplicitMatrix(A)
    m, n = A.shape
    p = params.resolve(m, n)
    u, v, it, ok = alternating_block_min(
        A, np.full(m, p.alpha**2), np.full(n, p.beta**2), p.gamma, p.max_log_scale,
        max_iters=max_iters, tol=tol,
    )
    if not ok:
        warnings.warn(f"regularized_block_min: no convergence to tol={tol} in {it} sweeps")
    return u, v


def _dense_scaled_squares(A, u, v):
    K = A.scaled_squares(u, v)
    return K.toarray() if hasattr(K, "toarray") else K


def _newton_minimize(fun, grad_hess, x0, tol, max_iter):
    """Damped Newton with Armijo backtracking; returns ``(x, fx, grad_norm)``."""
    x = x0
    fx = fun(x)
    g, H = grad_hess(x)
    gnorm = float(np.linalg.norm(g))
    for _ in range(max_iter):
        if gnorm <= tol:
            break
        step = -sla.cho_solve(sla.cho_factor(H), g)
        slope = float(g @ step)
        if -slope <= 1e3 * np.finfo(float).eps * max(1.0, abs(fx)):
            # decrease below roundoff in f: judge the full step by the gradient instead
            x_new = x + step
            g_new, H_new = grad_hess(x_new)
            gn_new = float(np.linalg.norm(g_new))
            if not gn_new < gnorm:
                break
            x, fx, g, H, gnorm = x_new, fun(x_new), g_new, H_new, gn_new
            continue
        t = 1.0
        while True:
            x_new = x + t * step
            f_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= fx + ARMIJO * t * slope:
                break
            t *= SHRINK
            if t < 1e-20:
                return x, fx, gnorm
        x, fx = x_new, f_new
        g, H = grad_hess(x)
        gnorm = float(np.linalg.norm(g))
    return x, fx, gnorm


def newton_oracle(A, params: EquilibrationParams, tol: float = 1e-9, max_iter: int = 500):
    """High-accuracy optimum of the regularized problem by Newton's method.

    Runs unconstrained damped Newton; if the box turns out to be active it
    falls back to exact block minimization followed by projected gradient
    polishing.

    Returns
    -------
    (p_star, u_star, v_star)
    """
    A = A if isinstance(A, ExplicitMatrix) else ExplicitMatrix(A)
    m, n = A.shape
    if m + n > NEWTON_SIZE_LIMIT:
        raise ValueError(f"newton_oracle: m + n = {m + n} exceeds {NEWTON_SIZE_LIMIT}")
    p = params.resolve(m, n)
    a2, b2, gamma, M = p.alpha**2, p.beta**2, p.gamma, p.max_log_scale

    def fun(x):
        with np.errstate(over="ignore"):
            return objective(A, x[:m], x[m:], p)

    def grad_hess(x):
        u, v = x[:m], x[m:]
        K = _dense_scaled_squares(A, u, v)
        rs, cs = K.sum(axis=1), K.sum(axis=0)
        g = np.concatenate((rs - a2 + gamma * u, cs - b2 + gamma * v))
        H = np.empty((m + n, m + n))
        H[:m, :m] = np.diag(2.0 * rs + gamma)
        H[m:, m:] = np.diag(2.0 * cs + gamma)
        H[:m, m:] = 2.0 * K
        H[m:, :m] = 2.0 * K.T
        return g, H

    x, fx, gnorm = _newton_minimize(fun, grad_hess, np.zeros(m + n), tol, max_iter)
    if np.max(np.abs(x)) <= M and gnorm <= tol:
        return fx, x[:m].copy(), x[m:].copy()

    if np.max(np.abs(x)) <= M:
        raise ConvergenceError(f"newton_oracle: gradient norm {gnorm:.3e} > tol {tol:.1e}")
    log.info("newton_oracle: box active at unconstrained solution; polishing")
    u, v, _, _ = alternating_block_min(
        A, np.full(m, a2), np.full(n, b2), gamma, M, max_iters=20000, tol=tol
    )
    x = np.concatenate((u, v))
    fx = fun(x)
    for _ in range(20000):
        g, H = grad_hess(x)
        pg = _projected_grad_norm(x, g, M)
        if pg <= tol:
            return fx, x[:m].copy(), x[m:].copy()
        t = 1.0 / np.max(np.diag(H))
        while True:
            x_new = np.clip(x - t * g, -M, M)
            f_new = fun(x_new)
            if f_new <= fx - ARMIJO / t * float((x - x_new) @ (x - x_new)) or t < 1e-20:
                break
            t *= SHRINK
        x, fx = x_new, f_new
    raise ConvergenceError("newton_oracle: projected gradient polishing did not converge")


def symmetric_newton_oracle(A, alpha: float = 1.0, gamma: float = DEFAULT_GAMMA,
                            M: float = math.inf, tol: float = 1e-10, max_iter: int = 500):
    """Optimum of the regularized symmetric problem.

    Minimizes ``1/4 sum_ij A_ij^2 e^(2u_i + 2u_j) - alpha^2 1^T u + gamma/2 |u|^2``
    by damped Newton and returns ``(p_star, u_star)``.  Raises if the box
    ``|u| <= M`` is active at the unconstrained solution.
    """
    A = A if isinstance(A, ExplicitMatrix) else ExplicitMatrix(A)
    n = A.rows
    if A.cols != n:
        raise ValueError("symmetric equilibration needs a square matrix")
    A2 = A.squared()
    A2 = A2.toarray() if hasattr(A2, "toarray") else np.asarray(A2)
    a2 = alpha**2

    def fun(u):
        with np.errstate(over="ignore"):
            eu = np.exp(2.0 * u)
            return 0.25 * float(eu @ A2 @ eu) - a2 * float(u.sum()) + 0.5 * gamma * float(u @ u)

    def grad_hess(u):
        eu = np.exp(2.0 * u)
        K = A2 * np.outer(eu, eu)
        rs = K.sum(axis=1)
        g = rs - a2 + gamma * u
        H = 2.0 * K + np.diag(2.0 * rs + gamma)
        return g, H

    u, fu, gnorm = _newton_minimize(fun, grad_hess, np.zeros(n), tol, max_iter)
    if gnorm > tol:
        raise ConvergenceError(f"symmetric_newton_oracle: gradient norm {gnorm:.3e} > {tol:.1e}")
    if np.max(np.abs(u)) > M:
        raise ConvergenceError("symmetric_newton_oracle: box constraint active at solution")
    return fu, u


def tensor_block_min(T, alpha, beta, gamma_norm, gamma: float, M: float = math.inf,
                     max_iters: int = 100000, tol: float = 1e-10):
    """Exact cyclic block minimization for 3-tensor equilibration.

    Returns ``(u, v, w, iterations, converged)`` (log-scalings for the three axes).
    """
    A = np.asarray(getattr(T, "data", T), dtype=np.float64)
    A2 = A * A
    m, n, p = A2.shape
    u, v, w = np.zeros(m), np.zeros(n), np.zeros(p)
    ca, cb, cc = alpha**2, beta**2, gamma_norm**2
    for it in range(1, max_iters + 1):
        q = np.einsum("ijk,j,k->i", A2, np.exp(2 * v), np.exp(2 * w))
        u = block_argmin(q, ca, gamma, M)
        q = np.einsum("ijk,i,k->j", A2, np.exp(2 * u), np.exp(2 * w))
        v = block_argmin(q, cb, gamma, M)
        q = np.einsum("ijk,i,j->k", A2, np.exp(2 * u), np.exp(2 * v))
        w = block_argmin(q, cc, gamma, M)
        gu = np.einsum("ijk,j,k->i", A2, np.exp(2 * v), np.exp(2 * w)) * np.exp(2 * u) - ca + gamma * u
        gv = np.einsum("ijk,i,k->j", A2, np.exp(2 * u), np.exp(2 * w)) * np.exp(2 * v) - cb + gamma * v
        if math.hypot(_projected_grad_norm(u, gu, M), _projected_grad_norm(v, gv, M)) <= tol:
            return u, v, w, it, True
    return u, v, w, max_iters, False
