"""Desk-scale experiment drivers: matrix generation, equilibration traces, solver benchmarks.

Every driver returns its rows and, when ``config.out`` is set, writes a CSV
whose leading ``#`` lines record the full configuration.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .core import (
    DEFAULT_GAMMA,
    DEFAULT_MAX_LOG_SCALE,
    EquilibrationParams,
    default_stride,
    objective,
    sgd_equilibrate,
)
from .exact import NEWTON_SIZE_LIMIT, newton_oracle
from .linops import ExplicitMatrix
from .metrics import SVD_SIZE_LIMIT, condition_number
from .mmio import read_matrix_market
from .sampling import make_rng
from .solvers import (
    LassoProblem,
    ccp_lasso,
    ccp_lasso_preconditioned,
    default_lambda,
    lasso_oracle,
    lsqr,
    lsqr_preconditioned,
)

__all__ = [
    "ExperimentConfig",
    "gen_matrix",
    "load_config_file",
    "fit_loglog_slope",
    "run_equilibration_experiment",
    "run_lsqr_experiment",
    "run_ccp_experiment",
    "EQUIL_HEADER",
    "LSQR_HEADER",
    "CCP_HEADER",
]

log = logging.getLogger(__name__)

EQUIL_HEADER = ("iter", "rel_gap", "rms_error", "cond_number")
LSQR_HEADER = ("variant", "total_iter", "rel_residual")
CCP_HEADER = ("variant", "total_iter", "rel_gap")
DEFAULT_BUDGETS = (0, 10, 30, 100, 300)

GEN_STREAM = 30
RHS_STREAM = 40


@dataclass
class ExperimentConfig:
    rows: int = 2000
    cols: int = 1000
    density: float = 0.01
    seed: int = 0
    alpha: Optional[float] = None
    beta: Optional[float] = None
    gamma: float = DEFAULT_GAMMA
    max_scale_log: float = DEFAULT_MAX_LOG_SCALE
    iters: int = 1000
    stride: Optional[int] = None
    cond_stride: Optional[int] = None
    matrix: Optional[str] = None
    out: Optional[str] = None
    plot: Optional[str] = None
    equil_budgets: tuple = DEFAULT_BUDGETS
    target: Optional[float] = None
    lam: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.density <= 1.0):
            raise ValueError(f"density must lie in (0, 1], got {self.density}")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be positive")
        self.equil_budgets = tuple(int(b) for b in self.equil_budgets)
        if any(b < 0 for b in self.equil_budgets):
            raise ValueError("equilibration budgets must be nonnegative")

    def equil_params(self, iterations=None) -> EquilibrationParams:
        return EquilibrationParams(
            alpha=self.alpha, beta=self.beta, gamma=self.gamma,
            max_log_scale=self.max_scale_log,
            iterations=self.iters if iterations is None else iterations,
            seed=self.seed,
        )

    def header_lines(self, kind):
        lines = [f"mfequil {kind}"]
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "equil_budgets":
                val = ",".join(str(b) for b in val)
            elif val is None:
                val = "auto" if f.name in ("alpha", "beta", "lam") else ""
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{f.name} = {val}")
        return lines


_CONFIG_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key, text):
    text = text.strip()
    if key in ("alpha", "beta", "lam"):
        return None if text.lower() in ("auto", "") else float(text)
    if key in ("stride", "cond_stride", "target"):
        if text.lower() in ("", "none", "auto"):
            return None
        return float(text) if key == "target" else int(text)
    if key in ("matrix", "out", "plot"):
        return text or None
    if key == "equil_budgets":
        return tuple(int(t) for t in text.split(",") if t.strip())
    if key in ("rows", "cols", "seed", "iters"):
        return int(text)
    if key in ("density", "gamma", "max_scale_log"):
        return float(text)
    raise KeyError(key)


def load_config_file(path) -> dict:
    """Parse a ``key = value`` file (``#`` comments) into config overrides."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _CONFIG_TYPES:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                out[key] = _coerce(key, value)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad value for {key}: {exc}") from None
    return out


def gen_matrix(m: int, n: int, density: float, seed: int) -> ExplicitMatrix:
    """Random badly scaled sparse test matrix.

    ``floor(density m n)`` distinct positions chosen uniformly, standard
    normal values, then rows and columns scaled by ``exp`` of IID N(1, 1)
    draws.
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive")
    if not (0.0 < density <= 1.0):
        raise ValueError(f"density must lie in (0, 1], got {density}")
    rng = make_rng(seed, GEN_STREAM)
    k = int(math.floor(density * m * n * (1.0 + 1e-12)))
    k = min(k, m * n)
    pos = np.sort(rng.choice(m * n, size=k, replace=False))
    vals = rng.standard_normal(k)
    u_hat = rng.normal(1.0, 1.0, size=m)
    v_hat = rng.normal(1.0, 1.0, size=n)
    rows, cols = np.divmod(pos, n)
    vals = vals * np.exp(u_hat[rows] + v_hat[cols])
    A = ExplicitMatrix(sp.csr_matrix((vals, (rows, cols)), shape=(m, n)))
    sq = A.squared()
    zr = int(np.sum(np.asarray(sq.sum(axis=1)).ravel() == 0))
    zc = int(np.sum(np.asarray(sq.sum(axis=0)).ravel() == 0))
    if zr or zc:
        warnings.warn(
            f"generated matrix has {zr} zero rows and {zc} zero columns; "
            "it cannot be equilibrated exactly (the regularized problem is still solvable)"
        )
    return A


def fit_loglog_slope(t, y, t_min=10, t_max=1000):
    """Least-squares slope of ``log10 y`` against ``log10 t`` over ``[t_min, t_max]``, positive y only."""
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sel = (t >= t_min) & (t <= t_max) & (y > 0) & np.isfinite(y)
    if sel.sum() < 2:
        return math.nan
    slope, _ = np.polyfit(np.log10(t[sel]), np.log10(y[sel]), 1)
    return float(slope)


def _fmt(val):
    if val is None:
        return ""
    if isinstance(val, float):
        if math.isnan(val):
            return ""
        return repr(val)
    return str(val)


def write_csv(path, header, rows, comments):
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def _load_matrix(config, m=None, n=None):
    if config.matrix:
        return read_matrix_market(config.matrix)
    return gen_matrix(m or config.rows, n or config.cols, config.density, config.seed)


@dataclass
class EquilibrationReport:
    rows: list
    slope: float
    p_star: Optional[float]
    f0: float
    scaling: object
    cond_initial: Optional[float] = None


def run_equilibration_experiment(config: ExperimentConfig, matrix: Optional[ExplicitMatrix] = None,
                                 callback=None):
    """Equilibrate one matrix with per-iteration diagnostics.

    Rows are ``(iter, rel_gap, rms_error, cond_number)`` at ``t = 0`` and every
    ``stride`` iterations; ``rel_gap`` needs the Newton oracle (``m + n`` within
    its guard) and ``cond_number`` a square matrix within the SVD guard.
    ``callback(t, (u, v), (u_bar, v_bar))`` is forwarded to the SGD loop.
    """
    A = matrix if matrix is not None else _load_matrix(config)
    m, n = A.shape
    params = config.equil_params().resolve(m, n)
    T = params.iterations
    stride = config.stride or default_stride(T)

    p_star = None
    if m + n <= NEWTON_SIZE_LIMIT:
        p_star, _, _ = newton_oracle(A, params)
    f0 = objective(A, np.zeros(m), np.zeros(n), params)

    track_cond = m == n and n <= SVD_SIZE_LIMIT
    cond_stride = None
    conds = {}
    if track_cond:
        cond_stride = config.cond_stride or max(stride, T // 20)
        cond_stride = max(stride, stride * math.ceil(cond_stride / stride))
        conds[0] = condition_number(A)

    def on_iter(t, xs, xbars):
        if callback is not None:
            callback(t, xs, xbars)
        if track_cond and t % cond_stride == 0:
            conds[t] = condition_number(A.scaled(np.exp(xbars[0]), np.exp(xbars[1])))

    result = sgd_equilibrate(A, params, matrix=A, stride=stride, callback=on_iter)
    rows = []
    for rec in result.history:
        gap = None if p_star is None else (rec.objective - p_star) / f0
        rows.append((rec.iteration, gap, rec.rms_error, conds.get(rec.iteration)))
    slope = math.nan
    if p_star is not None:
        slope = fit_loglog_slope([r[0] for r in rows], [r[1] for r in rows])
    report = EquilibrationReport(rows=rows, slope=slope, p_star=p_star, f0=f0, scaling=result,
                                 cond_initial=conds.get(0))
    comments = config.header_lines("equilibrate") + [f"loglog_gap_slope = {slope!r}"]
    if config.out:
        write_csv(config.out, EQUIL_HEADER, rows, comments)
    if config.plot:
        from .plotting import plot_equilibration

        plot_equilibration(rows, config.plot, slope=slope)
    return report


def _variant_name(budget):
    return "plain" if budget == 0 else f"equil_{budget}"


@dataclass
class BenchReport:
    rows: list
    runs: dict
    extras: dict = field(default_factory=dict)

    def iterations_to(self, level):
        return {k: run.iterations_to(level) for k, run in self.runs.items()}


def lsqr_instance(config: ExperimentConfig):
    A = _load_matrix(config, config.rows, config.cols)
    rng = make_rng(config.seed, RHS_STREAM)
    x_star = rng.standard_normal(A.cols)
    b = A.as_operator().apply(x_star)
    return A, b


def run_lsqr_experiment(config: ExperimentConfig, instance=None) -> BenchReport:
    """LSQR with and without equilibration on one ``b = A x*`` system.

    ``config.iters`` caps LSQR iterations per variant; ``config.target``
    optionally stops each variant once its relative residual reaches it.
    """
    A, b = instance if instance is not None else lsqr_instance(config)
    atol = config.target or 0.0
    rows, runs = [], {}
    for budget in config.equil_budgets:
        if budget == 0:
            run = lsqr(A, b, max_iters=config.iters, atol=atol)
        else:
            run = lsqr_preconditioned(A, b, config.equil_params(budget), lsqr_iters=config.iters,
                                      atol=atol)
        runs[budget] = run
        name = _variant_name(budget)
        rows.extend((name, t, r) for t, r in zip(*run.trajectory()))
    if config.out:
        write_csv(config.out, LSQR_HEADER, rows, config.header_lines("bench-lsqr"))
    if config.plot:
        from .plotting import plot_bench

        plot_bench(rows, config.plot, ylabel="relative residual")
    return BenchReport(rows=rows, runs=runs)


def ccp_instance(config: ExperimentConfig):
    A = _load_matrix(config, config.rows, config.cols)
    m, n = A.shape
    rng = make_rng(config.seed, RHS_STREAM)
    x_hat = np.zeros(n)
    support = rng.choice(n, size=max(1, n // 10), replace=False)
    x_hat[np.sort(support)] = rng.standard_normal(support.size)
    b = A.as_operator().apply(x_hat) + rng.standard_normal(m)
    lam = config.lam if config.lam is not None else default_lambda(A, b)
    return A, b, lam


def run_ccp_experiment(config: ExperimentConfig, instance=None) -> BenchReport:
    """CCP on a Lasso instance with and without equilibration.

    The reference optimum comes from :func:`mfequil.solvers.lasso_oracle`.
    """
    A, b, lam = instance if instance is not None else ccp_instance(config)
    p_star, _, gmap = lasso_oracle(A, b, lam)
    prob = LassoProblem(A, b, lam)
    rows, runs = [], {}
    for budget in config.equil_budgets:
        if budget == 0:
            run = ccp_lasso(prob, max_iters=config.iters, p_star=p_star, target_gap=config.target)
        else:
            run = ccp_lasso_preconditioned(prob, config.equil_params(budget), max_iters=config.iters,
                                           p_star=p_star, target_gap=config.target)
        runs[budget] = run
        name = _variant_name(budget)
        rows.extend((name, t, g) for t, g in zip(*run.trajectory()))
    comments = config.header_lines("bench-ccp") + [
        f"lambda = {lam!r}",
        f"p_star = {p_star!r}",
        f"oracle_grad_map_norm = {gmap!r}",
        "step sizes: power iteration on the (scaled) operator, 100 iterations, not charged",
    ]
    if config.out:
        write_csv(config.out, CCP_HEADER, rows, comments)
    if config.plot:
        from .plotting import plot_bench

        plot_bench(rows, config.plot, ylabel="relative optimality gap")
    return BenchReport(rows=rows, runs=runs, extras={"lam": lam, "p_star": p_star})
