"""Regularized equilibration objective and the projected stochastic gradient method.

The objective over log-scalings ``u`` (rows) and ``v`` (columns) is

    f(u, v) = 1/2 sum_ij A_ij^2 exp(2 u_i + 2 v_j) - alpha^2 sum(u) - beta^2 sum(v)
              + gamma/2 (|u|^2 + |v|^2),     subject to |u|_inf, |v|_inf <= M.

:func:`sgd_equilibrate` minimizes it using only products with ``A`` and ``A.T``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .linops import CountingOperator, ExplicitMatrix, aslinearoperator
from .sampling import COL_PROBE, ROW_PROBE, make_rng, rademacher

__all__ = [
    "EquilibrationParams",
    "ScalingResult",
    "IterationRecord",
    "InvariantViolation",
    "objective",
    "gradient",
    "stochastic_gradient_estimate",
    "project_box",
    "averaging_weights",
    "run_projected_sgd",
    "sgd_equilibrate",
    "default_stride",
]

log = logging.getLogger(__name__)

DEFAULT_GAMMA = 1e-1
DEFAULT_MAX_LOG_SCALE = math.log(1e4)


class InvariantViolation(RuntimeError):
    """An iterate left the box or exceeded its a-priori upper bound."""


@dataclass(frozen=True)
class EquilibrationParams:
    """Scalars of the regularized equilibration problem plus run controls.

    ``alpha``/``beta`` left as ``None`` are filled in by :meth:`resolve`:
    both missing gives ``alpha = (n/m)^(1/4)``, ``beta = (m/n)^(1/4)``; one
    missing is derived from ``m alpha^2 = n beta^2``.
    """

    alpha: Optional[float] = None
    beta: Optional[float] = None
    gamma: float = DEFAULT_GAMMA
    max_log_scale: float = DEFAULT_MAX_LOG_SCALE
    iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.max_log_scale > 0:
            raise ValueError(f"max_log_scale must be positive, got {self.max_log_scale}")
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError(f"iterations must be a nonnegative integer, got {self.iterations}")
        for name in ("alpha", "beta"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive, got {val}")

    @property
    def resolved(self) -> bool:
        return self.alpha is not None and self.beta is not None

    def resolve(self, m: int, n: int, check: bool = True) -> "EquilibrationParams":
        """Concrete copy for an ``m x n`` operator."""
        alpha, beta = self.alpha, self.beta
        if alpha is None and beta is None:
            alpha, beta = (n / m) ** 0.25, (m / n) ** 0.25
        elif alpha is None:
            alpha = math.sqrt(n * beta**2 / m)
        elif beta is None:
            beta = math.sqrt(m * alpha**2 / n)
        elif check:
            lhs, rhs = m * alpha**2, n * beta**2
            if abs(lhs - rhs) > 1e-8 * max(abs(lhs), abs(rhs)):
                raise ValueError(
                    f"inconsistent targets: m*alpha^2 = {lhs:.17g} but n*beta^2 = {rhs:.17g}"
                )
        return replace(self, alpha=float(alpha), beta=float(beta))

    @property
    def strong_convexity(self) -> float:
        return self.gamma


@dataclass
class IterationRecord:
    iteration: int
    objective: Optional[float] = None
    rms_error: Optional[float] = None
    cond_number: Optional[float] = None


@dataclass
class ScalingResult:
    """Averaged log-scalings and the diagonal scalings ``d = exp(u_bar)``, ``e = exp(v_bar)``."""

    u_bar: np.ndarray
    v_bar: np.ndarray
    params: EquilibrationParams
    history: list = field(default_factory=list)
    n_apply: int = 0
    n_adjoint: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def d(self) -> np.ndarray:
        return np.exp(self.u_bar)

    @property
    def e(self) -> np.ndarray:
        return np.exp(self.v_bar)

    @property
    def iterations(self) -> int:
        return self.params.iterations


def _check_dims(A, u, v):
    m, n = A.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != (m,) or v.shape != (n,):
        raise ValueError(f"u, v must have shapes ({m},), ({n},); got {u.shape}, {v.shape}")
    return u, v


def _explicit(A) -> ExplicitMatrix:
    return A if isinstance(A, ExplicitMatrix) else ExplicitMatrix(A)


def objective(A, u, v, params: EquilibrationParams) -> float:
    """Value of the regularized objective (box constraint not checked)."""
    A = _explicit(A)
    u, v = _check_dims(A, u, v)
    p = params.resolve(*A.shape)
    K = A.scaled_squares(u, v)
    quad = 0.5 * float(K.sum())
    return (
        quad
        - p.alpha**2 * float(u.sum())
        - p.beta**2 * float(v.sum())
        + 0.5 * p.gamma * (float(u @ u) + float(v @ v))
    )


def gradient(A, u, v, params: EquilibrationParams):
    """Exact gradient ``(|DAE|^2 1 - alpha^2 + gamma u, |EA^TD|^2 1 - beta^2 + gamma v)``."""
    A = _explicit(A)
    u, v = _check_dims(A, u, v)
    p = params.resolve(*A.shape)
    K = A.scaled_squares(u, v)
    rows = np.asarray(K.sum(axis=1)).ravel()
    cols = np.asarray(K.sum(axis=0)).ravel()
    return rows - p.alpha**2 + p.gamma * u, cols - p.beta**2 + p.gamma * v


def stochastic_gradient_estimate(op, u, v, params: EquilibrationParams, rng_s, rng_w=None):
    """Unbiased gradient estimate from one product with ``A`` and one with ``A.T``.

    ``rng_s`` draws the probe ``s`` (length n) and ``rng_w`` the probe ``w``
    (length m); a single generator may be passed for both.
    """
    op = aslinearoperator(op)
    m, n = op.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    p = params.resolve(m, n)
    rng_w = rng_s if rng_w is None else rng_w
    row_sq, col_sq = _probe_core(op, np.exp(u), np.exp(v), rng_s, rng_w)
    return row_sq - p.alpha**2 + p.gamma * u, col_sq - p.beta**2 + p.gamma * v


def _probe_core(op, d, e, rng_s, rng_w):
    s = rademacher(op.cols, rng_s)
    w = rademacher(op.rows, rng_w)
    row_sq = np.square(d * op.apply(e * s))
    col_sq = np.square(e * op.apply_adjoint(d * w))
    return row_sq, col_sq


def project_box(x, M: float) -> np.ndarray:
    """Euclidean projection onto ``[-M, M]^k``."""
    if not M > 0:
        raise ValueError(f"M must be positive, got {M}")
    return np.clip(np.asarray(x, dtype=np.float64), -M, M)


def averaging_weights(T: int) -> np.ndarray:
    """Weights ``2(t+1)/((T+1)(T+2))``, t = 0..T, implied by the running average."""
    t = np.arange(T + 1, dtype=np.float64)
    return 2.0 * (t + 1.0) / ((T + 1.0) * (T + 2.0))


def default_stride(T: int) -> int:
    return 1 if T <= 1000 else int(math.ceil(T / 1000))


def run_projected_sgd(
    sample: Callable[[int, list], Sequence[np.ndarray]],
    linear_terms: Sequence[np.ndarray],
    gamma: float,
    max_log_scale: float,
    iterations: int,
    *,
    callback=None,
    monitor=None,
    stride: int = 1,
    check_invariants: bool = True,
):
    """Shared projected stochastic gradient loop for all equilibration variants.

    Each block ``k`` has iterate ``x_k`` and gradient estimate
    ``z_k - c_k + gamma x_k`` where ``z_k = sample(t, xs)[k]`` is a nonnegative
    unbiased estimate of the block's norm-squared term and ``c_k =
    linear_terms[k]``.  ``sample`` always sees the previous iterates.

    ``monitor(t, xbars)`` runs at ``t = 0`` and every ``stride`` iterations;
    its return values are collected in the returned history.  ``callback(t,
    xs, xbars)`` runs after every update.

    Returns ``(xbars, history)``.
    """
    cs = [np.asarray(c, dtype=np.float64) for c in linear_terms]
    xs = [np.zeros_like(c) for c in cs]
    xbars = [np.zeros_like(c) for c in cs]
    # z_k >= 0 makes every iterate satisfy x_k <= c_k / gamma
    upper = [c / gamma for c in cs]
    history = []
    if monitor is not None:
        history.append(monitor(0, xbars))
    M = max_log_scale
    for t in range(1, iterations + 1):
        zs = sample(t, xs)
        step = 2.0 / (gamma * (t + 1))
        new = []
        for x, z, c in zip(xs, zs, cs):
            g = z - c + gamma * x
            new.append(np.clip(x - step * g, -M, M))
        xs = new
        if check_invariants:
            for x, ub in zip(xs, upper):
                if np.any(np.abs(x) > M):
                    raise InvariantViolation(f"iterate outside box at t={t}")
                slack = 1e-12 * (1.0 + np.abs(ub))
                if np.any(x > ub + slack):
                    k = int(np.argmax(x - ub))
                    raise InvariantViolation(
                        f"iterate bound violated at t={t}: x[{k}]={x[k]!r} > {ub[k]!r}"
                    )
        xbars = [2.0 * x / (t + 2) + t * xb / (t + 2) for x, xb in zip(xs, xbars)]
        if callback is not None:
            callback(t, xs, xbars)
        if monitor is not None and t % stride == 0:
            history.append(monitor(t, xbars))
    return xbars, history


def matrix_monitor(A, params: EquilibrationParams, track_condition: bool = False):
    """Diagnostics (objective, RMS error, optional condition number) at ``(u_bar, v_bar)``."""
    from . import metrics

    A = _explicit(A)

    def monitor(t, xbars):
        u, v = xbars
        rec = IterationRecord(
            iteration=t,
            objective=objective(A, u, v, params),
            rms_error=metrics.rms_error(A, u, v, params.alpha, params.beta),
        )
        if track_condition:
            rec.cond_number = metrics.condition_number(A.scaled(np.exp(u), np.exp(v)))
        return rec

    return monitor


def sgd_equilibrate(
    op,
    params: Optional[EquilibrationParams] = None,
    *,
    matrix=None,
    stride: Optional[int] = None,
    track_condition: bool = False,
    callback=None,
    check_invariants: bool = True,
) -> ScalingResult:
    """Approximately equilibrate ``op`` by projected stochastic gradient descent.

    Every iteration uses exactly one product with ``A`` and one with ``A.T``;
    ``op`` is never accessed otherwise.

    Parameters
    ----------
    op : LinearOperator or matrix-like
        The operator to equilibrate.
    params : EquilibrationParams, optional
        Problem scalars, iteration count and seed.  Defaults to
        ``EquilibrationParams()``.
    matrix : ExplicitMatrix, optional
        Entrywise view of the same matrix, used only for per-iteration
        diagnostics (objective, RMS error, condition number).
    stride : int, optional
        Diagnostic stride; defaults to every iteration for ``T <= 1000``.
    track_condition : bool
        Also record ``cond(DAE)`` (dense SVD; square matrices only).
    callback : callable, optional
        ``callback(t, (u, v), (u_bar, v_bar))`` after each iteration.

    Returns
    -------
    ScalingResult
    """
    counted = CountingOperator(op)
    m, n = counted.shape
    params = (params or EquilibrationParams()).resolve(m, n)
    rng_s = make_rng(params.seed, ROW_PROBE)
    rng_w = make_rng(params.seed, COL_PROBE)

    def sample(t, xs):
        u, v = xs
        return _probe_core(counted, np.exp(u), np.exp(v), rng_s, rng_w)

    linear = [np.full(m, params.alpha**2), np.full(n, params.beta**2)]
    monitor = None
    if matrix is not None:
        monitor = matrix_monitor(matrix, params, track_condition)
    stride = stride or default_stride(params.iterations)
    (u_bar, v_bar), history = run_projected_sgd(
        sample,
        linear,
        params.gamma,
        params.max_log_scale,
        params.iterations,
        callback=None if callback is None else (lambda t, xs, xb: callback(t, tuple(xs), tuple(xb))),
        monitor=monitor,
        stride=stride,
        check_invariants=check_invariants,
    )
    return ScalingResult(
        u_bar=u_bar,
        v_bar=v_bar,
        params=params,
        history=history,
        n_apply=counted.n_apply,
        n_adjoint=counted.n_adjoint,
    )
