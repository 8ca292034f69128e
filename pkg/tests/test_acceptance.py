"""Acceptance suite: one PASS/FAIL line per criterion (see the terminal summary).

Every SGD run below either goes through :class:`IterateGuard`, which asserts
box feasibility and the bound ``u <= alpha^2 / gamma`` after each iteration,
or through a solver whose internal equilibration runs with
``check_invariants=True`` (the library raises on any violation).
"""

import itertools
import math
import statistics
import time
import warnings

import numpy as np
import pytest

from conftest import random_dense, record_acceptance
from mfequil.core import EquilibrationParams, gradient, objective, sgd_equilibrate
from mfequil.exact import lambert_w, newton_oracle, regularized_block_min, tensor_block_min
from mfequil.experiments import (
    ExperimentConfig,
    gen_matrix,
    run_ccp_experiment,
    run_equilibration_experiment,
    run_lsqr_experiment,
)
from mfequil.linops import ExplicitMatrix, MatrixOperator
from mfequil.metrics import condition_number, kappa_bounds, log_phi, rms_error_symmetric, tight_construction
from mfequil.sampling import estimate_row_norms_sq
from mfequil.variants import (
    BlockStructure,
    Tensor3,
    sgd_equilibrate_block,
    sgd_equilibrate_symmetric,
    sgd_equilibrate_targets,
    tensor_axis_estimate,
)


class IterateGuard:
    """Per-iteration check of the box and of the a-priori upper bound."""

    checked = 0

    def __init__(self, params):
        self.params = params
        self.M = params.max_log_scale
        self.ub = params.alpha**2 / params.gamma
        self.vb = params.beta**2 / params.gamma

    def __call__(self, t, xs, xbars):
        u, v = xs
        assert np.all(np.abs(u) <= self.M) and np.all(np.abs(v) <= self.M), f"box violated at t={t}"
        assert np.all(u <= self.ub * (1 + 1e-12)), f"row bound violated at t={t}"
        assert np.all(v <= self.vb * (1 + 1e-12)), f"column bound violated at t={t}"
        IterateGuard.checked += 1


def guarded_sgd(A, params, **kw):
    m, n = (A.shape if hasattr(A, "shape") else (A.rows, A.cols))
    guard = IterateGuard(params.resolve(m, n))
    return sgd_equilibrate(A, params, callback=guard, **kw)


class _SignStub:
    """Generator stand-in that hands out one fixed sign pattern as 0/1 bits."""

    def __init__(self, signs):
        self.bits = ((np.asarray(signs) + 1) // 2).astype(np.int8)

    def integers(self, low, high, size=None, dtype=None):
        return self.bits.copy()


def test_criterion_01_estimator_unbiased():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(20):
        m, n = int(rng.integers(1, 9)), int(rng.integers(1, 13))
        A = ExplicitMatrix(random_dense(rng, m, n, spread=0.5))
        op = MatrixOperator(A.toarray())
        acc = np.zeros(m)
        for signs in itertools.product([-1, 1], repeat=n):
            acc += estimate_row_norms_sq(op, _SignStub(signs))
        exact = (A.toarray() ** 2).sum(axis=1)
        worst = max(worst, float(np.max(np.abs(acc / 2**n - exact) / exact)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 10
    record_acceptance(1, ok, f"max rel err {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_02_gradient_finite_differences():
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(20):
        m, n = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        A = random_dense(rng, m, n, spread=0.5)
        p = EquilibrationParams(alpha=None, beta=None, gamma=float(rng.uniform(0.01, 1))).resolve(m, n)
        u, v = 0.5 * rng.standard_normal(m), 0.5 * rng.standard_normal(n)
        g = np.concatenate(gradient(A, u, v, p))
        x = np.concatenate([u, v])
        fd = np.empty_like(x)
        for k in range(x.size):
            h = 1e-5 * max(1.0, abs(x[k]))
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            fd[k] = (objective(A, xp[:m], xp[m:], p) - objective(A, xm[:m], xm[m:], p)) / (2 * h)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(g)))
    ok = worst <= 1e-6
    record_acceptance(2, ok, f"max rel err {worst:.2e}")
    assert ok


def test_criterion_03_oracle_concordance():
    rng = np.random.default_rng(303)
    worst_p = 0.0
    for _ in range(10):
        A = random_dense(rng, 8, 6)
        p = EquilibrationParams().resolve(8, 6)
        p_newton, _, _ = newton_oracle(A, p)
        ub, vb = regularized_block_min(A, p)
        p_block = objective(A, ub, vb, p)
        worst_p = max(worst_p, abs(p_newton - p_block) / abs(p_newton))
    x = np.concatenate([[0.0], np.logspace(-12, 6, 400)])
    w = lambert_w(x)
    resid = np.abs(w * np.exp(w) - x)
    worst_w = float(np.max(resid[1:] / x[1:]))
    ok = worst_p <= 1e-10 and worst_w <= 1e-14 and resid[0] == 0.0
    record_acceptance(3, ok, f"p* rel diff {worst_p:.2e}, W residual {worst_w:.2e}")
    assert ok


def test_criterion_04_sgd_solves_regularized_problem():
    t0 = time.perf_counter()
    A = gen_matrix(20, 15, 1.0, 0)
    p = EquilibrationParams().resolve(20, 15)
    p_star, _, _ = newton_oracle(A, p)
    f0 = objective(A, np.zeros(20), np.zeros(15), p)
    gaps = {100: [], 1000: []}
    for seed in range(50):
        for T in gaps:
            res = guarded_sgd(A, EquilibrationParams(iterations=T, seed=seed))
            gaps[T].append((objective(A, res.u_bar, res.v_bar, p) - p_star) / f0)
    g100, g1000 = float(np.mean(gaps[100])), float(np.mean(gaps[1000]))
    elapsed = time.perf_counter() - t0
    ok = g1000 <= 1e-3 and g1000 < g100 and elapsed < 30
    record_acceptance(4, ok, f"mean gap T=100 {g100:.2e}, T=1000 {g1000:.2e}, {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def desk_instance():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return gen_matrix(2000, 1000, 0.01, 0)


def test_criterion_05_gap_slope(desk_instance):
    cfg = ExperimentConfig(rows=2000, cols=1000, density=0.01, seed=0, iters=1000)
    p = cfg.equil_params().resolve(2000, 1000)
    rep = run_equilibration_experiment(cfg, matrix=desk_instance, callback=IterateGuard(p))
    rms = {r[0]: r[2] for r in rep.rows}
    ratio = rms[1000] / rms[1]
    ok = rep.slope <= -1.0 and ratio < 0.2
    record_acceptance(5, ok, f"slope {rep.slope:.2f}, rms(1000)/rms(1) {ratio:.2e}")
    assert ok


def test_criterion_06_condition_number(desk_instance):
    t0 = time.perf_counter()
    A = ExplicitMatrix(desk_instance.tocsr()[:1000])
    k0 = condition_number(A)
    res = guarded_sgd(A, EquilibrationParams(iterations=300))
    k1 = condition_number(A.scaled(res.d, res.e))
    elapsed = time.perf_counter() - t0
    ok = k1 <= k0 / 10 and elapsed < 120
    record_acceptance(6, ok, f"kappa {k0:.3e} -> {k1:.3e} (x{k0 / k1:.0f}), {elapsed:.1f}s")
    assert ok


def test_criterion_07_kappa_bounds():
    rng = np.random.default_rng(707)
    ok_random = True
    for _ in range(50):
        A = rng.standard_normal((10, 10))
        lo, hi = kappa_bounds(A)
        k = condition_number(A)
        ok_random &= lo <= k * (1 + 1e-12) and k <= hi * (1 + 1e-12)
    worst = 0.0
    ok_tight = True
    for kappa in (2.0, 3.0, 10.0):
        U = tight_construction(kappa, 10, rng)
        _, hi = kappa_bounds(U)
        worst = max(worst, abs(hi - (kappa + 1 / kappa)) / (kappa + 1 / kappa))
        ok_tight &= kappa <= hi <= 2 * kappa
    ok = ok_random and ok_tight and worst <= 1e-10
    record_acceptance(7, ok, f"random brackets hold: {ok_random}; tight rel err {worst:.2e}")
    assert ok


def test_criterion_08_phi_minimality():
    rng = np.random.default_rng(808)
    worst = math.inf
    for _ in range(10):
        A = rng.standard_normal((8, 8))
        p = EquilibrationParams(alpha=1.0, beta=1.0, gamma=1e-8).resolve(8, 8)
        _, u, v = newton_oracle(A, p)
        base = log_phi(np.exp(u)[:, None] * A * np.exp(v)[None, :])
        for _ in range(1000):
            du, dv = rng.uniform(-0.5, 0.5, 8), rng.uniform(-0.5, 0.5, 8)
            val = log_phi(np.exp(u + du)[:, None] * A * np.exp(v + dv)[None, :])
            worst = min(worst, val - base)
    ok = worst >= -1e-9
    record_acceptance(8, ok, f"min log-phi increase over perturbations {worst:.3e}")
    assert ok


def test_criterion_09_lsqr():
    t0 = time.perf_counter()
    wins, detail = 0, []
    for seed in range(3):
        cfg = ExperimentConfig(rows=500, cols=500, density=0.01, seed=seed, iters=20000,
                               equil_budgets=(0, 30), target=1e-6)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = run_lsqr_experiment(cfg)
        hit = rep.iterations_to(1e-6)
        plain = math.inf if hit[0] is None else hit[0]
        pre = math.inf if hit[30] is None else hit[30]
        wins += pre < plain
        detail.append(f"{plain}/{pre}")
    elapsed = time.perf_counter() - t0
    ok = wins >= 2 and elapsed < 120
    record_acceptance(9, ok, f"plain/equil iterations {', '.join(detail)}; {wins}/3 wins, {elapsed:.1f}s")
    assert ok


def test_criterion_10_ccp():
    t0 = time.perf_counter()
    wins, detail = 0, []
    for seed in range(3):
        cfg = ExperimentConfig(rows=500, cols=1000, density=0.01, seed=seed, iters=5000,
                               equil_budgets=(0, 100), target=1e-4)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = run_ccp_experiment(cfg)
        hit = rep.iterations_to(1e-4)
        plain = math.inf if hit[0] is None else hit[0]
        pre = math.inf if hit[100] is None else hit[100]
        wins += pre < plain
        detail.append(f"{plain}/{pre}")
    elapsed = time.perf_counter() - t0
    ok = wins >= 2 and elapsed < 180
    record_acceptance(10, ok, f"plain/equil iterations {', '.join(detail)}; {wins}/3 wins, {elapsed:.1f}s")
    assert ok


def test_criterion_11_variants():
    rng = np.random.default_rng(1111)
    B = random_dense(rng, 200, 200, spread=0.0)
    s = np.exp(rng.standard_normal(200))
    A = ExplicitMatrix(s[:, None] * (B + B.T) * s[None, :])
    res = sgd_equilibrate_symmetric(A, EquilibrationParams(iterations=1000))
    same = np.array_equal(res.d, res.e)
    r0 = rms_error_symmetric(A, np.zeros(200), 1.0)
    r1 = rms_error_symmetric(A, res.u_bar, 1.0)

    C = rng.standard_normal((9, 7))
    p = EquilibrationParams(iterations=200, seed=5)
    q = p.resolve(9, 7)
    core = guarded_sgd(C, p)
    tgt = sgd_equilibrate_targets(C, np.full(9, q.alpha**2), np.full(7, q.beta**2), p)
    blk = sgd_equilibrate_block(C, BlockStructure.trivial(9, 7), p)
    replay = all(np.array_equal(a, b) for a, b in
                 [(core.u_bar, tgt.u_bar), (core.v_bar, tgt.v_bar), (core.u_bar, blk.u_bar),
                  (core.v_bar, blk.v_bar)])

    T = rng.standard_normal((2, 2, 2))
    sc = [np.exp(0.5 * rng.standard_normal(2)) for _ in range(3)]
    S = T * sc[0][:, None, None] * sc[1][None, :, None] * sc[2][None, None, :]
    worst = 0.0
    for axis in range(3):
        acc = np.zeros(2)
        for s1 in itertools.product([-1.0, 1.0], repeat=2):
            for s2 in itertools.product([-1.0, 1.0], repeat=2):
                acc += tensor_axis_estimate(Tensor3(T), sc, axis, np.array(s1), np.array(s2))
        exact = np.sum(S**2, axis=tuple(k for k in range(3) if k != axis))
        worst = max(worst, float(np.max(np.abs(acc / 16 - exact) / exact)))

    u, v, w, _, _ = tensor_block_min(np.ones((2, 2, 2)), 1.0, 1.0, 1.0, gamma=0.1)
    c = 4 ** (-1 / 6)
    cerr = max(float(np.max(np.abs(np.exp(x) - c))) for x in (u, v, w))

    ok = same and r1 < 0.2 * r0 and replay and worst <= 1e-12 and cerr <= 1e-2
    record_acceptance(11, ok, f"d==e {same}, sym rms {r0:.3g}->{r1:.3g}, replay {replay}, "
                              f"tensor est err {worst:.1e}, |c - 4^(-1/6)| {cerr:.1e}")
    assert ok


def test_criterion_12_iterate_bounds():
    # earlier acceptance runs asserted inline; make sure something was checked
    if IterateGuard.checked == 0:
        guarded_sgd(gen_matrix(20, 15, 1.0, 0), EquilibrationParams(iterations=1000))
    ok = IterateGuard.checked > 0
    record_acceptance(12, ok, f"{IterateGuard.checked} guarded iterations, no violation")
    assert ok
