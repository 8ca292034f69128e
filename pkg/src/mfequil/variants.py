"""Symmetric, target-norm, block and 3-tensor equilibration.

All variants drive :func:`mfequil.core.run_projected_sgd`; they differ only
in the norm-squared estimator and the linear coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_GAMMA,
    DEFAULT_MAX_LOG_SCALE,
    EquilibrationParams,
    IterationRecord,
    ScalingResult,
    _probe_core,
    default_stride,
    run_projected_sgd,
)
from .linops import CountingOperator, ExplicitMatrix, aslinearoperator
from .sampling import CHECK_PROBE, COL_PROBE, ROW_PROBE, make_rng, rademacher

__all__ = [
    "AsymmetryError",
    "BlockStructure",
    "Tensor3",
    "TensorParams",
    "TensorScalingResult",
    "check_symmetric",
    "symmetric_objective",
    "sgd_equilibrate_symmetric",
    "sgd_equilibrate_targets",
    "sgd_equilibrate_block",
    "tensor_contract",
    "tensor_axis_estimate",
    "tensor_objective",
    "sgd_equilibrate_tensor",
]

TENSOR_STREAMS = ((10, 11), (12, 13), (14, 15))


class AsymmetryError(ValueError):
    pass


def check_symmetric(op, seed=0, probes: int = 3, rtol: float = 1e-10):
    """Probabilistic check ``<Ax, y> == <x, Ay>`` on random Gaussian probes."""
    op = aslinearoperator(op)
    if op.rows != op.cols:
        raise AsymmetryError(f"operator is not square: {op.shape}")
    rng = make_rng(seed, CHECK_PROBE)
    for _ in range(probes):
        x = rng.standard_normal(op.cols)
        y = rng.standard_normal(op.cols)
        Ax, Ay = op.apply(x), op.apply(y)
        lhs, rhs = float(Ax @ y), float(x @ Ay)
        scale = np.linalg.norm(Ax) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(Ay)
        if abs(lhs - rhs) > rtol * max(scale, np.finfo(float).tiny):
            raise AsymmetryError(f"operator is not symmetric: <Ax,y>={lhs!r}, <x,Ay>={rhs!r}")


def symmetric_objective(A, u, alpha, gamma) -> float:
    """``1/4 sum A_ij^2 e^(2u_i+2u_j) - alpha^2 1^T u + gamma/2 |u|^2``."""
    A = A if isinstance(A, ExplicitMatrix) else ExplicitMatrix(A)
    u = np.asarray(u, dtype=np.float64)
    K = A.scaled_squares(u, u)
    return 0.25 * float(K.sum()) - alpha**2 * float(u.sum()) + 0.5 * gamma * float(u @ u)


def sgd_equilibrate_symmetric(op, params: Optional[EquilibrationParams] = None, *,
                              matrix=None, stride=None, check_invariants=True) -> ScalingResult:
    """Symmetric equilibration: ``D = E``, one product with ``A`` per iteration.

    ``op`` must be square and symmetric (checked on three random probes
    before the run; those products are not counted).
    """
    op = aslinearoperator(op)
    params = params or EquilibrationParams()
    check_symmetric(op, seed=params.seed)
    counted = CountingOperator(op)
    n = counted.rows
    params = params.resolve(n, n)
    alpha, gamma = params.alpha, params.gamma
    rng = make_rng(params.seed, ROW_PROBE)

    def sample(t, xs):
        (u,) = xs
        d = np.exp(u)
        s = rademacher(n, rng)
        return [np.square(d * counted.apply(d * s))]

    monitor = None
    if matrix is not None:
        from .metrics import rms_error_symmetric

        A = matrix if isinstance(matrix, ExplicitMatrix) else ExplicitMatrix(matrix)

        def monitor(t, xbars):
            return IterationRecord(
                iteration=t,
                objective=symmetric_objective(A, xbars[0], alpha, gamma),
                rms_error=rms_error_symmetric(A, xbars[0], alpha),
            )

    (u_bar,), history = run_projected_sgd(
        sample, [np.full(n, alpha**2)], gamma, params.max_log_scale, params.iterations,
        monitor=monitor, stride=stride or default_stride(params.iterations),
        check_invariants=check_invariants,
    )
    return ScalingResult(u_bar=u_bar, v_bar=u_bar.copy(), params=params, history=history,
                         n_apply=counted.n_apply, n_adjoint=counted.n_adjoint)


def _targets_monitor(matrix, r, c, gamma):
    A = matrix if isinstance(matrix, ExplicitMatrix) else ExplicitMatrix(matrix)
    sr, sc = np.sqrt(r), np.sqrt(c)
    m, n = A.shape

    def monitor(t, xbars):
        u, v = xbars
        K = A.scaled_squares(u, v)
        rows = np.sqrt(np.asarray(K.sum(axis=1)).ravel())
        cols = np.sqrt(np.asarray(K.sum(axis=0)).ravel())
        obj = (0.5 * float(K.sum()) - float(r @ u) - float(c @ v)
               + 0.5 * gamma * (float(u @ u) + float(v @ v)))
        rms = math.sqrt((float(np.sum((rows - sr) ** 2)) + float(np.sum((cols - sc) ** 2))) / (m + n))
        return IterationRecord(iteration=t, objective=obj, rms_error=rms)

    return monitor


def sgd_equilibrate_targets(op, r, c, params: Optional[EquilibrationParams] = None, *,
                            matrix=None, stride=None, check_invariants=True) -> ScalingResult:
    """Equilibrate toward prescribed squared row norms ``r`` and column norms ``c``.

    Requires ``sum(r) == sum(c)`` (relative tolerance 1e-8), the Frobenius
    consistency of squared-norm targets.  ``params.alpha``/``beta`` are ignored.
    """
    counted = CountingOperator(op)
    m, n = counted.shape
    r = np.asarray(r, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if r.shape != (m,) or c.shape != (n,):
        raise ValueError(f"targets must have shapes ({m},), ({n},)")
    if not (np.all(r > 0) and np.all(c > 0)):
        raise ValueError("targets must be strictly positive")
    sr, sc = float(r.sum()), float(c.sum())
    if abs(sr - sc) > 1e-8 * max(sr, sc):
        raise ValueError(f"inconsistent targets: sum(r) = {sr!r} but sum(c) = {sc!r}")
    params = (params or EquilibrationParams()).resolve(m, n, check=False)
    rng_s = make_rng(params.seed, ROW_PROBE)
    rng_w = make_rng(params.seed, COL_PROBE)

    def sample(t, xs):
        u, v = xs
        return _probe_core(counted, np.exp(u), np.exp(v), rng_s, rng_w)

    monitor = None if matrix is None else _targets_monitor(matrix, r, c, params.gamma)
    (u_bar, v_bar), history = run_projected_sgd(
        sample, [r, c], params.gamma, params.max_log_scale, params.iterations,
        monitor=monitor, stride=stride or default_stride(params.iterations),
        check_invariants=check_invariants,
    )
    return ScalingResult(u_bar=u_bar, v_bar=v_bar, params=params, history=history,
                         n_apply=counted.n_apply, n_adjoint=counted.n_adjoint)


@dataclass(frozen=True)
class BlockStructure:
    """Row and column block sizes; scalings are constant within a block."""

    row_blocks: tuple
    col_blocks: tuple

    def __post_init__(self):
        rb = tuple(int(b) for b in self.row_blocks)
        cb = tuple(int(b) for b in self.col_blocks)
        if not rb or not cb or min(rb) < 1 or min(cb) < 1:
            raise ValueError("block sizes must be positive and non-empty")
        object.__setattr__(self, "row_blocks", rb)
        object.__setattr__(self, "col_blocks", cb)

    @property
    def shape(self):
        return sum(self.row_blocks), sum(self.col_blocks)

    @classmethod
    def trivial(cls, m, n) -> "BlockStructure":
        return cls((1,) * m, (1,) * n)

    def expand_rows(self, x):
        return np.repeat(x, self.row_blocks)

    def expand_cols(self, x):
        return np.repeat(x, self.col_blocks)

    def row_starts(self):
        return np.concatenate(([0], np.cumsum(self.row_blocks)[:-1]))

    def col_starts(self):
        return np.concatenate(([0], np.cumsum(self.col_blocks)[:-1]))


def sgd_equilibrate_block(op, blocks: BlockStructure, params: Optional[EquilibrationParams] = None,
                          *, check_invariants=True) -> ScalingResult:
    """Block equilibration: one log-scaling per row block and per column block.

    Row block ``i`` of size ``m_i`` targets squared norm ``m_i alpha^2``; its
    gradient estimate sums the row estimates over the block.  The returned
    ``u_bar``/``v_bar`` are expanded to full length; the block values are in
    ``result.extras``.
    """
    counted = CountingOperator(op)
    m, n = counted.shape
    if blocks.shape != (m, n):
        raise ValueError(f"block structure covers {blocks.shape}, operator is {(m, n)}")
    params = (params or EquilibrationParams()).resolve(m, n)
    rng_s = make_rng(params.seed, ROW_PROBE)
    rng_w = make_rng(params.seed, COL_PROBE)
    rstart, cstart = blocks.row_starts(), blocks.col_starts()

    def sample(t, xs):
        u, v = xs
        d = blocks.expand_rows(np.exp(u))
        e = blocks.expand_cols(np.exp(v))
        row_sq, col_sq = _probe_core(counted, d, e, rng_s, rng_w)
        return [np.add.reduceat(row_sq, rstart), np.add.reduceat(col_sq, cstart)]

    linear = [params.alpha**2 * np.asarray(blocks.row_blocks, dtype=np.float64),
              params.beta**2 * np.asarray(blocks.col_blocks, dtype=np.float64)]
    (ub, vb), history = run_projected_sgd(
        sample, linear, params.gamma, params.max_log_scale, params.iterations,
        check_invariants=check_invariants,
    )
    return ScalingResult(u_bar=blocks.expand_rows(ub), v_bar=blocks.expand_cols(vb), params=params,
                         history=history, n_apply=counted.n_apply, n_adjoint=counted.n_adjoint,
                         extras={"block_u": ub, "block_v": vb})


@dataclass(frozen=True)
class Tensor3:
    """Dense 3-way array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 3:
            raise ValueError(f"expected a 3-way array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self):
        return self.data.shape

    def scaled(self, d, e, f) -> "Tensor3":
        return Tensor3(self.data * np.einsum("i,j,k->ijk", d, e, f))


_CONTRACT = {0: "ijk,jk->i", 1: "ijk,ik->j", 2: "ijk,ij->k"}


def tensor_contract(T: Tensor3, axis: int, X) -> np.ndarray:
    """Contract ``T`` with matrix ``X`` over the two axes other than ``axis``.

    ``axis=2``: ``X (m x n) -> sum_ij A_ijk X_ij``; ``axis=1``: ``X (m x p)``;
    ``axis=0``: ``X (n x p)``.
    """
    A = T.data if isinstance(T, Tensor3) else np.asarray(T, dtype=np.float64)
    if axis not in _CONTRACT:
        raise ValueError(f"axis must be 0, 1 or 2, got {axis}")
    other = tuple(s for k, s in enumerate(A.shape) if k != axis)
    X = np.asarray(X, dtype=np.float64)
    if X.shape != other:
        raise ValueError(f"contraction matrix must have shape {other}, got {X.shape}")
    return np.einsum(_CONTRACT[axis], A, X)


def tensor_axis_estimate(T, scalings, axis, s1, s2):
    """``|A o (d x e x f)|^2`` contracted against the rank-one sign pattern ``s1 s2^T``.

    ``s1``, ``s2`` are sign vectors over the two non-free axes in increasing
    axis order.  Unbiased for the squared norms of the slices along ``axis``.
    """
    others = [k for k in range(3) if k != axis]
    X = np.outer(scalings[others[0]] * s1, scalings[others[1]] * s2)
    return np.square(scalings[axis] * tensor_contract(T, axis, X))


@dataclass(frozen=True)
class TensorParams:
    """Targets ``alpha, beta, gamma_norm`` for the three axes plus SGD controls.

    Targets must satisfy ``m alpha^2 = n beta^2 = p gamma_norm^2``; missing
    ones default to ``(mnp)^(1/3) / dim`` squared-norm targets.
    """

    alpha: Optional[float] = None
    beta: Optional[float] = None
    gamma_norm: Optional[float] = None
    gamma: float = DEFAULT_GAMMA
    max_log_scale: float = DEFAULT_MAX_LOG_SCALE
    iterations: int = 1000
    seed: int = 0

    def resolve(self, shape) -> "TensorParams":
        m, n, p = shape
        total = (m * n * p) ** (1.0 / 3.0)
        vals = [self.alpha, self.beta, self.gamma_norm]
        given = [(v, d) for v, d in zip(vals, shape) if v is not None]
        if given:
            total = given[0][1] * given[0][0] ** 2
        out = [v if v is not None else math.sqrt(total / d) for v, d in zip(vals, shape)]
        prods = [d * v**2 for v, d in zip(out, shape)]
        if max(prods) - min(prods) > 1e-8 * max(prods):
            raise ValueError(f"inconsistent tensor targets: m a^2, n b^2, p c^2 = {prods}")
        if not self.gamma > 0 or not self.max_log_scale > 0 or self.iterations < 0:
            raise ValueError("invalid regularization, box or iteration count")
        return replace(self, alpha=out[0], beta=out[1], gamma_norm=out[2])


@dataclass
class TensorScalingResult:
    u_bar: np.ndarray
    v_bar: np.ndarray
    w_bar: np.ndarray
    params: TensorParams
    history: list = field(default_factory=list)
    n_contractions: int = 0

    @property
    def d(self):
        return np.exp(self.u_bar)

    @property
    def e(self):
        return np.exp(self.v_bar)

    @property
    def f(self):
        return np.exp(self.w_bar)

    def __iter__(self):
        yield self.d
        yield self.e
        yield self.f


def tensor_objective(T, u, v, w, params: TensorParams) -> float:
    A = T.data if isinstance(T, Tensor3) else np.asarray(T, dtype=np.float64)
    p = params.resolve(A.shape)
    K = A * A * np.exp(2.0 * (u[:, None, None] + v[None, :, None] + w[None, None, :]))
    return (0.5 * float(K.sum()) - p.alpha**2 * float(u.sum()) - p.beta**2 * float(v.sum())
            - p.gamma_norm**2 * float(w.sum())
            + 0.5 * p.gamma * (float(u @ u) + float(v @ v) + float(w @ w)))


def sgd_equilibrate_tensor(T: Tensor3, params: Optional[TensorParams] = None, *,
                           check_invariants=True, monitor_objective=False) -> TensorScalingResult:
    """Projected SGD for 3-tensor equilibration.

    The tensor is touched only through :func:`tensor_contract`, one
    contraction per axis per iteration.
    """
    T = T if isinstance(T, Tensor3) else Tensor3(T)
    params = (params or TensorParams()).resolve(T.shape)
    dims = T.shape
    rngs = [(make_rng(params.seed, a), make_rng(params.seed, b)) for a, b in TENSOR_STREAMS]
    calls = [0]

    def sample(t, xs):
        scalings = [np.exp(x) for x in xs]
        out = []
        for axis in range(3):
            others = [k for k in range(3) if k != axis]
            s1 = rademacher(dims[others[0]], rngs[axis][0])
            s2 = rademacher(dims[others[1]], rngs[axis][1])
            out.append(tensor_axis_estimate(T, scalings, axis, s1, s2))
            calls[0] += 1
        return out

    linear = [np.full(dims[0], params.alpha**2), np.full(dims[1], params.beta**2),
              np.full(dims[2], params.gamma_norm**2)]
    monitor = None
    if monitor_objective:
        def monitor(t, xbars):
            return IterationRecord(iteration=t, objective=tensor_objective(T, *xbars, params))

    (ub, vb, wb), history = run_projected_sgd(
        sample, linear, params.gamma, params.max_log_scale, params.iterations,
        monitor=monitor, stride=default_stride(params.iterations),
        check_invariants=check_invariants,
    )
    return TensorScalingResult(ub, vb, wb, params, history, calls[0])
