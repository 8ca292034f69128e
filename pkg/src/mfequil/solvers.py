"""Matrix-free LSQR and Chambolle-Cremers-Pock (Lasso), plain and equilibrated.

Accuracy is always reported for the original problem.  Products used only
to measure that accuracy go to the uncounted inner operator; every solver
budget counts only the products the algorithm itself needs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import EquilibrationParams, sgd_equilibrate
from .linops import CountingOperator, ExplicitMatrix, ScaledOperator, aslinearoperator
from .sampling import make_rng

__all__ = [
    "LsqrRun",
    "lsqr",
    "lsqr_preconditioned",
    "spectral_norm",
    "LassoProblem",
    "lasso_objective",
    "soft_threshold",
    "weighted_dual_prox",
    "CcpRun",
    "ccp_lasso",
    "ccp_lasso_preconditioned",
    "lasso_oracle",
    "default_lambda",
]

log = logging.getLogger(__name__)

POWER_STREAM = 20


@dataclass
class LsqrRun:
    """LSQR trajectory; ``residual_history[k]`` is ``|A x_k - b| / |b|`` after k LSQR steps."""

    x: np.ndarray
    residual_history: list
    iterations: int
    equil_iterations: int = 0
    breakdown: bool = False
    n_apply: int = 0
    n_adjoint: int = 0
    scaling: Optional[object] = None

    @property
    def total_iterations(self) -> int:
        return self.equil_iterations + self.iterations

    def trajectory(self):
        """``(total_iter, rel_residual)`` with the equilibration iterations as a flat prefix."""
        k = self.equil_iterations
        first = self.residual_history[0]
        iters = list(range(k)) + [k + j for j in range(len(self.residual_history))]
        values = [first] * k + list(self.residual_history)
        return iters, values

    def iterations_to(self, level: float):
        """Total iterations (equilibration charged) to reach ``level``, or None."""
        for j, r in enumerate(self.residual_history):
            if r <= level:
                return self.equil_iterations + j
        return None


def _lsqr_core(op, rhs, max_iters, measure, atol):
    """Golub-Kahan LSQR from x = 0, one ``apply`` and one ``apply_adjoint`` per step.

    ``measure(x)`` returns the reported accuracy of iterate ``x``; iteration
    stops once it is ``<= atol``.
    """
    n = op.cols
    x = np.zeros(n)
    history = [measure(x)]
    beta = float(np.linalg.norm(rhs))
    if beta == 0.0:
        return x, history, 0, False
    u = rhs / beta
    v = np.zeros(n)
    phibar = beta
    w = None
    rho = c = s = None
    breakdown = False
    it = 0
    for it in range(1, max_iters + 1):
        v = op.apply_adjoint(u) - beta * v
        alpha = float(np.linalg.norm(v))
        if alpha == 0.0:
            breakdown = True
            it -= 1
            break
        v = v / alpha
        if w is None:
            rhobar = alpha
            w = v.copy()
        else:
            theta = s * alpha
            rhobar = -c * alpha
            w = v - (theta / rho) * w

        u = op.apply(v) - alpha * u
        beta = float(np.linalg.norm(u))
        if beta > 0.0:
            u = u / beta
        rho = math.hypot(rhobar, beta)
        c = rhobar / rho
        s = beta / rho
        phi = c * phibar
        phibar = s * phibar
        x = x + (phi / rho) * w
        history.append(measure(x))
        if history[-1] <= atol:
            break
        if beta == 0.0:
            breakdown = True
            break
    return x, history, it, breakdown


def lsqr(op, b, max_iters: int = 1000, atol: float = 0.0) -> LsqrRun:
    """Solve ``min |Ax - b|`` by LSQR from ``x = 0``.

    Stops after ``max_iters`` or once ``|Ax - b| / |b| <= atol``.  A zero
    Golub-Kahan vector ends the run with ``breakdown=True``.
    """
    inner = aslinearoperator(op)
    counted = CountingOperator(inner)
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        raise ValueError("right-hand side must be nonzero")

    def measure(x):
        return float(np.linalg.norm(inner.apply(x) - b)) / bnorm

    x, hist, it, bd = _lsqr_core(counted, b, max_iters, measure, atol)
    return LsqrRun(x=x, residual_history=hist, iterations=it, breakdown=bd,
                   n_apply=counted.n_apply, n_adjoint=counted.n_adjoint)


def lsqr_preconditioned(op, b, equil_params: EquilibrationParams, lsqr_iters: int = 1000,
                        atol: float = 0.0) -> LsqrRun:
    """LSQR on ``(DAE) xbar = D b`` after matrix-free equilibration, with ``x = E xbar``.

    Equilibration iterations are charged to the run (``equil_iterations``) and
    residuals are those of the original system.
    """
    inner = aslinearoperator(op)
    counted = CountingOperator(inner)
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        raise ValueError("right-hand side must be nonzero")
    scaling = sgd_equilibrate(counted, equil_params)
    d, e = scaling.d, scaling.e
    scaled = ScaledOperator(counted, d, e)

    def measure(xbar):
        return float(np.linalg.norm(inner.apply(e * xbar) - b)) / bnorm

    xbar, hist, it, bd = _lsqr_core(scaled, d * b, lsqr_iters, measure, atol)
    return LsqrRun(x=e * xbar, residual_history=hist, iterations=it,
                   equil_iterations=scaling.iterations, breakdown=bd,
                   n_apply=counted.n_apply, n_adjoint=counted.n_adjoint, scaling=scaling)


def spectral_norm(op, iters: int = 100, tol: float = 1e-6, seed: int = 0) -> float:
    """Largest singular value by power iteration on ``A^T A`` from a seeded random start."""
    op = aslinearoperator(op)
    rng = make_rng(seed, POWER_STREAM)
    x = rng.standard_normal(op.cols)
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(iters):
        y = op.apply(x)
        new_sigma = float(np.linalg.norm(y))
        z = op.apply_adjoint(y)
        znorm = float(np.linalg.norm(z))
        if znorm == 0.0:
            return 0.0
        x = z / znorm
        if abs(new_sigma - sigma) <= tol * new_sigma:
            return new_sigma
        sigma = new_sigma
    return sigma


def default_lambda(op, b) -> float:
    """``1e-3 |A^T b|_inf``."""
    return 1e-3 * float(np.max(np.abs(aslinearoperator(op).apply_adjoint(np.asarray(b, float)))))


@dataclass
class LassoProblem:
    """``minimize |Ax - b|^2 / sqrt(lam) + sqrt(lam) |x|_1``."""

    op: object
    b: np.ndarray
    lam: float

    def __post_init__(self):
        self.op = aslinearoperator(self.op)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.b.shape != (self.op.rows,):
            raise ValueError(f"b must have length {self.op.rows}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")


def lasso_objective(prob: LassoProblem, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    r = prob.op.apply(x) - prob.b
    sl = math.sqrt(prob.lam)
    return float(r @ r) / sl + sl * float(np.sum(np.abs(x)))


def soft_threshold(x, thresh):
    """Prox of ``thresh * |.|_1`` (``thresh`` may be a vector of weights)."""
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def weighted_dual_prox(p, b, d, sigma, lam):
    """Prox of ``sigma * g_D^*`` where ``g_D(z) = |z / d - b|^2 / sqrt(lam)``.

    Closed form ``(p - sigma d b) / (1 + sigma sqrt(lam) d^2 / 2)``.
    """
    return (p - sigma * d * b) / (1.0 + 0.5 * sigma * math.sqrt(lam) * d * d)


@dataclass
class CcpRun:
    x: np.ndarray
    objective_history: list
    gap_history: Optional[list]
    tau: float
    sigma: float
    theta: float
    iterations: int
    equil_iterations: int = 0
    p_star: Optional[float] = None
    n_apply: int = 0
    n_adjoint: int = 0
    scaling: Optional[object] = None

    @property
    def total_iterations(self) -> int:
        return self.equil_iterations + self.iterations

    def trajectory(self):
        """``(total_iter, rel_gap)`` with the equilibration iterations as a flat prefix."""
        if self.gap_history is None:
            raise ValueError("no reference optimum; gap history unavailable")
        k = self.equil_iterations
        first = self.gap_history[0]
        iters = list(range(k)) + [k + j for j in range(len(self.gap_history))]
        return iters, [first] * k + list(self.gap_history)

    def iterations_to(self, level: float):
        if self.gap_history is None:
            raise ValueError("no reference optimum; gap history unavailable")
        for j, g in enumerate(self.gap_history):
            if g <= level:
                return self.equil_iterations + j
        return None


def _ccp_core(K, prob: LassoProblem, d, e, tau, sigma, theta, max_iters, p_star, target_gap):
    """Primal-dual iteration on ``min_xbar g_D(K xbar) + sqrt(lam) |e * xbar|_1``."""
    m, n = K.shape
    sl = math.sqrt(prob.lam)
    f0 = float(prob.b @ prob.b) / sl
    x = np.zeros(n)
    xbar = np.zeros(n)
    y = np.zeros(m)
    objs = [f0]
    gaps = None if p_star is None else [(f0 - p_star) / f0]
    it = 0
    for it in range(1, max_iters + 1):
        y = weighted_dual_prox(y + sigma * K.apply(xbar), prob.b, d, sigma, prob.lam)
        x_new = soft_threshold(x - tau * K.apply_adjoint(y), tau * sl * e)
        xbar = x_new + theta * (x_new - x)
        x = x_new
        fx = lasso_objective(prob, e * x)
        objs.append(fx)
        if gaps is not None:
            gaps.append((fx - p_star) / f0)
            if target_gap is not None and gaps[-1] <= target_gap:
                break
    return e * x, objs, gaps, it


def ccp_lasso(prob: LassoProblem, max_iters: int = 1000, tau: Optional[float] = None,
              sigma: Optional[float] = None, theta: float = 1.0, p_star: Optional[float] = None,
              target_gap: Optional[float] = None) -> CcpRun:
    """Chambolle-Cremers-Pock for the Lasso, all iterates starting at zero.

    ``tau``/``sigma`` default to ``0.9 / |A|_2`` (power iteration, not charged).
    With ``p_star`` the relative gap ``(f(x) - p_star) / f(0)`` is recorded and
    ``target_gap`` allows stopping early.
    """
    counted = CountingOperator(prob.op)
    if tau is None or sigma is None:
        step = 0.9 / spectral_norm(prob.op)
        tau = step if tau is None else tau
        sigma = step if sigma is None else sigma
    if not (tau > 0 and sigma > 0):
        raise ValueError("step sizes must be positive")
    m, n = counted.shape
    x, objs, gaps, it = _ccp_core(counted, prob, np.ones(m), np.ones(n), tau, sigma, theta,
                                  max_iters, p_star, target_gap)
    return CcpRun(x=x, objective_history=objs, gap_history=gaps, tau=tau, sigma=sigma,
                  theta=theta, iterations=it, p_star=p_star,
                  n_apply=counted.n_apply, n_adjoint=counted.n_adjoint)


def ccp_lasso_preconditioned(prob: LassoProblem, equil_params: EquilibrationParams,
                             max_iters: int = 1000, theta: float = 1.0,
                             p_star: Optional[float] = None,
                             target_gap: Optional[float] = None) -> CcpRun:
    """CCP on the equilibrated Lasso, reporting the original objective.

    With ``x = E xbar`` the problem becomes ``g_D((DAE) xbar) + sqrt(lam)
    |E xbar|_1`` where ``g_D(z) = |D^-1 z - b|^2 / sqrt(lam)``; this has the
    same optimal value as the original.  Steps are ``0.9 / |DAE|_2``.
    """
    counted = CountingOperator(prob.op)
    if equil_params.iterations == 0:
        m, n = counted.shape
        d, e = np.ones(m), np.ones(n)
        K, scaling = counted, None
    else:
        scaling = sgd_equilibrate(counted, equil_params)
        d, e = scaling.d, scaling.e
        K = ScaledOperator(counted, d, e)
    spec_op = prob.op if scaling is None else ScaledOperator(prob.op, d, e)
    step = 0.9 / spectral_norm(spec_op)
    x, objs, gaps, it = _ccp_core(K, prob, d, e, step, step, theta, max_iters, p_star, target_gap)
    return CcpRun(x=x, objective_history=objs, gap_history=gaps, tau=step, sigma=step,
                  theta=theta, iterations=it, equil_iterations=equil_params.iterations,
                  p_star=p_star, n_apply=counted.n_apply, n_adjoint=counted.n_adjoint,
                  scaling=scaling)


def _gradient_map_norm(A, b, lam, x, L):
    sl = math.sqrt(lam)
    grad = 2.0 * (A.T @ (A @ x - b)) / sl
    return L * float(np.linalg.norm(x - soft_threshold(x - grad / L, sl / L)))


def lasso_oracle(A, b, lam: float, tol: float = 1e-12, max_iters: int = 200000):
    """Reference Lasso optimum by accelerated proximal gradient (entrywise access).

    FISTA with gradient restarts, then an exact solve on the detected support
    with the detected signs.  Converged when the proximal-gradient-map norm
    is at most ``tol * max(1, |G(0)|)``.

    Returns ``(p_star, x_star, grad_map_norm)``.
    """
    A = A if isinstance(A, ExplicitMatrix) else ExplicitMatrix(A)
    M = A.tocsr() if A.is_sparse else A.toarray()
    b = np.asarray(b, dtype=np.float64)
    sl = math.sqrt(lam)
    sig = np.linalg.norm(A.toarray(), 2) if max(A.shape) <= 4000 else spectral_norm(A, iters=500, tol=1e-12)
    L = 2.0 * sig**2 / sl
    prob = LassoProblem(A, b, lam)
    g0 = _gradient_map_norm(M, b, lam, np.zeros(A.cols), L)
    goal = tol * max(1.0, g0)

    x = np.zeros(A.cols)
    y = x.copy()
    t = 1.0
    gm = g0
    for k in range(max_iters):
        grad = 2.0 * (M.T @ (M @ y - b)) / sl
        x_new = soft_threshold(y - grad / L, sl / L)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if float((y - x_new) @ (x_new - x)) > 0.0:
            # restart momentum
            t_new = 1.0
            y = x_new.copy()
        else:
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if k % 50 == 0:
            gm = _gradient_map_norm(M, b, lam, x, L)
            if gm <= goal:
                break
            if k % 1000 != 0:
                continue
            x_pol = _polish(M, b, lam, x)
            if x_pol is not None:
                gp = _gradient_map_norm(M, b, lam, x_pol, L)
                if gp <= goal:
                    x, gm = x_pol, gp
                    break
    else:
        gm = _gradient_map_norm(M, b, lam, x, L)
        log.warning("lasso_oracle: gradient map %.3e above goal %.3e", gm, goal)
    return lasso_objective(prob, x), x, gm


def _polish(M, b, lam, x):
    """Solve the optimality conditions on the support of ``x`` with its signs."""
    S = np.flatnonzero(x)
    if S.size == 0 or S.size > M.shape[0]:
        return None
    AS = M[:, S]
    AS = AS.toarray() if hasattr(AS, "toarray") else AS
    sgn = np.sign(x[S])
    rhs = AS.T @ b - 0.5 * lam * sgn
    try:
        xs = np.linalg.solve(AS.T @ AS, rhs)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.sign(xs) != sgn):
        return None
    out = np.zeros_like(x)
    out[S] = xs
    return out
