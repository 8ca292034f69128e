"""Equilibration quality and conditioning diagnostics (entrywise access)."""

from __future__ import annotations

import math

import numpy as np

from .core import EquilibrationParams, gradient
from .linops import ExplicitMatrix

__all__ = [
    "rms_error",
    "rms_error_symmetric",
    "condition_number",
    "singular_values",
    "log_phi",
    "phi",
    "kappa_bounds",
    "tight_construction",
    "convergence_constant_bound",
    "SVD_SIZE_LIMIT",
]

SVD_SIZE_LIMIT = 4000
SINGULAR_RTOL = 1e-12


def _explicit(A):
    return A if isinstance(A, ExplicitMatrix) else ExplicitMatrix(A)


def rms_error(A, u, v, alpha, beta) -> float:
    """RMS deviation of the row norms of ``DAE`` from ``alpha`` and column norms from ``beta``."""
    A = _explicit(A)
    m, n = A.shape
    K = A.scaled_squares(u, v)
    rows = np.sqrt(np.asarray(K.sum(axis=1)).ravel())
    cols = np.sqrt(np.asarray(K.sum(axis=0)).ravel())
    total = float(np.sum((rows - alpha) ** 2) + np.sum((cols - beta) ** 2))
    return math.sqrt(total / (m + n))


def rms_error_symmetric(A, u, alpha) -> float:
    """RMS deviation of the row norms of ``DAD`` from ``alpha``."""
    A = _explicit(A)
    K = A.scaled_squares(u, u)
    rows = np.sqrt(np.asarray(K.sum(axis=1)).ravel())
    return math.sqrt(float(np.mean((rows - alpha) ** 2)))


def singular_values(A) -> np.ndarray:
    A = _explicit(A)
    if max(A.shape) > SVD_SIZE_LIMIT:
        raise ValueError(f"dense SVD refused above {SVD_SIZE_LIMIT} rows/columns")
    return np.linalg.svd(A.toarray(), compute_uv=False)


def _square_sv(A):
    A = _explicit(A)
    if A.rows != A.cols:
        raise ValueError(f"expected a square matrix, got {A.shape}")
    return singular_values(A)


def condition_number(A) -> float:
    """``sigma_max / sigma_min``; ``inf`` when numerically singular."""
    s = _square_sv(A)
    if s[-1] <= SINGULAR_RTOL * s[0]:
        return math.inf
    return float(s[0] / s[-1])


def _nonsingular_sv(U):
    s = _square_sv(U)
    if s[-1] <= SINGULAR_RTOL * s[0]:
        raise np.linalg.LinAlgError("matrix is numerically singular")
    return s


def log_phi(U) -> float:
    """``log(exp(|U|_F^2 / 2) / det(U^T U)^(1/2))`` from the singular values."""
    s = _nonsingular_sv(U)
    return float(0.5 * np.sum(s * s) - np.sum(np.log(s)))


def phi(U) -> float:
    """Exponentiated :func:`log_phi`; may overflow to ``inf`` for large inputs."""
    with np.errstate(over="ignore"):
        return float(np.exp(log_phi(U)))


def kappa_bounds(A):
    """``(lower, upper)`` bounds on the condition number of a square nonsingular matrix.

    ``lower`` is the larger of the max/min ratios of row norms and of column
    norms; ``upper`` is ``2 exp(-n/2) phi(A)``.
    """
    A = _explicit(A)
    n = A.rows
    lp = log_phi(A)
    sq = A.squared()
    rows = np.sqrt(np.asarray(sq.sum(axis=1)).ravel())
    cols = np.sqrt(np.asarray(sq.sum(axis=0)).ravel())
    lower = max(rows.max() / rows.min(), cols.max() / cols.min())
    with np.errstate(over="ignore"):
        upper = float(np.exp(math.log(2.0) - 0.5 * n + lp))
    return float(lower), upper


def tight_construction(kappa: float, n: int, rng=None) -> np.ndarray:
    """Square matrix with condition number ``kappa`` attaining ``phi = e^(n/2)/2 (kappa + 1/kappa)``.

    Singular values are ``sqrt(2 kappa^2/(1+kappa^2))``, ``sqrt(2/(1+kappa^2))``
    and ones in between; random orthogonal factors are applied when ``rng`` is given.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    s = np.ones(n)
    s[0] = math.sqrt(2 * kappa**2 / (1 + kappa**2))
    s[-1] = math.sqrt(2 / (1 + kappa**2))
    if rng is None:
        return np.diag(s)
    Q1, _ = np.linalg.qr(rng.standard_normal((n, n)))
    Q2, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q1 @ np.diag(s) @ Q2.T


def convergence_constant_bound(A, params: EquilibrationParams) -> float:
    """Explicit upper bound on the constant ``C`` in the SGD convergence rate.

    Evaluates ``2 * (|grad f(M1, M1)|^2 + 4 gamma M (alpha^2 m + beta^2 n)
    + e^(8M) (3 (sum_i r_i^2 + sum_j c_j^2) - 4 sum_ij A_ij^4))`` where
    ``r``, ``c`` are the squared row and column norms of ``A``.  Diagnostic
    only; the bound is very loose.
    """
    A = _explicit(A)
    m, n = A.shape
    p = params.resolve(m, n)
    M = p.max_log_scale
    gu, gv = gradient(A, np.full(m, M), np.full(n, M), p)
    sq = A.squared()
    r = np.asarray(sq.sum(axis=1)).ravel()
    c = np.asarray(sq.sum(axis=0)).ravel()
    fourth = float(sq.multiply(sq).sum()) if hasattr(sq, "multiply") else float(np.sum(sq * sq))
    spread = 3.0 * (float(r @ r) + float(c @ c)) - 4.0 * fourth
    half = (
        float(gu @ gu + gv @ gv)
        + 4.0 * p.gamma * M * (p.alpha**2 * m + p.beta**2 * n)
        + math.exp(8.0 * M) * spread
    )
    return 2.0 * half
