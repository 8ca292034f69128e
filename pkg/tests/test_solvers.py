import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import brentq

from conftest import random_dense
from mfequil.core import EquilibrationParams
from mfequil.linops import ExplicitMatrix
from mfequil.solvers import (
    LassoProblem,
    ccp_lasso,
    ccp_lasso_preconditioned,
    default_lambda,
    lasso_objective,
    lasso_oracle,
    lsqr,
    lsqr_preconditioned,
    soft_threshold,
    spectral_norm,
    weighted_dual_prox,
)


def test_lsqr_solves_consistent_system(rng):
    A = rng.standard_normal((30, 20))
    x = rng.standard_normal(20)
    run = lsqr(A, A @ x, max_iters=200, atol=1e-12)
    np.testing.assert_allclose(run.x, x, rtol=1e-8)
    assert run.residual_history[0] == 1.0
    assert run.n_apply == run.iterations and run.n_adjoint == run.iterations


def test_lsqr_least_squares_matches_lstsq(rng):
    A = rng.standard_normal((40, 10))
    b = rng.standard_normal(40)
    run = lsqr(A, b, max_iters=100)
    np.testing.assert_allclose(run.x, np.linalg.lstsq(A, b, rcond=None)[0], rtol=1e-8)


def test_lsqr_zero_rhs_rejected():
    # the relative residual is undefined for b = 0
    with pytest.raises(ValueError):
        lsqr(np.eye(3), np.zeros(3))


def test_lsqr_budget_zero_equals_plain(rng):
    A = random_dense(rng, 15, 15)
    b = A @ rng.standard_normal(15)
    plain = lsqr(A, b, max_iters=50)
    pre = lsqr_preconditioned(A, b, EquilibrationParams(iterations=0), lsqr_iters=50)
    assert plain.residual_history == pre.residual_history


def test_lsqr_flat_prefix_and_charging(rng):
    A = random_dense(rng, 12, 12)
    b = A @ rng.standard_normal(12)
    run = lsqr_preconditioned(A, b, EquilibrationParams(iterations=25), lsqr_iters=10)
    iters, vals = run.trajectory()
    assert iters[:26] == list(range(26))
    assert vals[:26] == [1.0] * 26
    assert run.total_iterations == 35
    assert run.n_apply == 35 and run.n_adjoint == 35


def test_spectral_norm(rng):
    A = rng.standard_normal((20, 12))
    assert spectral_norm(A, iters=500, tol=1e-12) == pytest.approx(np.linalg.norm(A, 2), rel=1e-6)


def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold(np.array([-3.0, 0.5, 2.0]), 1.0), [-2.0, 0.0, 1.0])


def test_weighted_dual_prox_moreau(rng):
    # prox_{s g*}(p) = p - s prox_{g/s}(p/s), g(z) = sum (z_i/d_i - b_i)^2 / sqrt(lam)
    lam, s = 0.3, 0.7
    sl = math.sqrt(lam)
    for _ in range(10):
        p, b, d = rng.standard_normal(), rng.standard_normal(), math.exp(rng.standard_normal())
        q = p / s
        z = brentq(lambda z: 2 * (z / d - b) / (d * sl * s) + (z - q), -1e6, 1e6, xtol=1e-14)
        expected = p - s * z
        assert float(weighted_dual_prox(np.array([p]), np.array([b]), np.array([d]), s, lam)[0]) == \
            pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_lasso_oracle_kkt(rng):
    A = rng.standard_normal((30, 50))
    b = rng.standard_normal(30)
    lam = default_lambda(A, b) * 100
    p_star, x, gm = lasso_oracle(A, b, lam)
    sl = math.sqrt(lam)
    g = 2 * A.T @ (A @ x - b) / sl
    on = x != 0
    np.testing.assert_allclose(g[on], -sl * np.sign(x[on]), atol=1e-8)
    assert np.all(np.abs(g[~on]) <= sl + 1e-8)
    assert lasso_objective(LassoProblem(A, b, lam), x) == pytest.approx(p_star, rel=1e-12)


def test_ccp_converges_plain_and_preconditioned(rng):
    A = ExplicitMatrix(sp.csr_matrix(random_dense(rng, 30, 60, spread=0.7)))
    b = rng.standard_normal(30)
    lam = default_lambda(A, b) * 10
    p_star, _, _ = lasso_oracle(A, b, lam)
    prob = LassoProblem(A, b, lam)
    plain = ccp_lasso(prob, max_iters=20000, p_star=p_star, target_gap=1e-7)
    pre = ccp_lasso_preconditioned(prob, EquilibrationParams(iterations=50), max_iters=20000,
                                   p_star=p_star, target_gap=1e-7)
    assert plain.gap_history[-1] <= 1e-7 and pre.gap_history[-1] <= 1e-7
    assert min(plain.gap_history) >= -1e-10
    assert pre.n_apply == pre.total_iterations


def test_ccp_budget_zero_equals_plain(rng):
    A = random_dense(rng, 10, 20)
    b = rng.standard_normal(10)
    prob = LassoProblem(A, b, default_lambda(A, b))
    a = ccp_lasso(prob, max_iters=30)
    c = ccp_lasso_preconditioned(prob, EquilibrationParams(iterations=0), max_iters=30)
    assert a.objective_history == c.objective_history


def test_lasso_problem_validation():
    with pytest.raises(ValueError):
        LassoProblem(np.eye(2), np.ones(3), 1.0)
    with pytest.raises(ValueError):
        LassoProblem(np.eye(2), np.ones(2), 0.0)


def test_lsqr_diag_example():
    A = np.diag(np.arange(1.0, 6.0))
    run = lsqr(A, A @ np.ones(5), max_iters=5)
    np.testing.assert_allclose(run.x, np.ones(5), atol=1e-12)


def test_lsqr_well_conditioned_dense(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((30, 30)))
    A = Q @ np.diag(np.linspace(1, 3, 30))
    b = rng.standard_normal(30)
    run = lsqr(A, b, max_iters=60)
    np.testing.assert_allclose(run.x, np.linalg.solve(A, b), rtol=1e-8, atol=1e-10)


def test_spectral_norm_sv(rng):
    A = rng.standard_normal((20, 15))
    assert spectral_norm(A) == pytest.approx(np.linalg.svd(A, compute_uv=False)[0], rel=1e-4)


def test_lasso_identity_example():
    prob = LassoProblem(np.eye(2), np.array([3.0, 0.0]), 4.0)
    x = soft_threshold(prob.b, 4.0 / 2)
    np.testing.assert_array_equal(x, [1.0, 0.0])
    assert lasso_objective(prob, x) == 4.0
    p_star, xo, _ = lasso_oracle(np.eye(2), prob.b, 4.0)
    assert p_star == pytest.approx(4.0, rel=1e-12)
    run = ccp_lasso(prob, max_iters=2000)
    np.testing.assert_allclose(run.x, [1.0, 0.0], atol=1e-8)


def test_lasso_large_lambda_gives_zero(rng):
    A = rng.standard_normal((8, 12))
    b = rng.standard_normal(8)
    lam = 2 * np.abs(A.T @ b).max() * 1.01
    _, x, _ = lasso_oracle(A, b, lam)
    np.testing.assert_array_equal(x, 0.0)
    run = ccp_lasso(LassoProblem(A, b, lam), max_iters=3000)
    assert np.abs(run.x).max() < 1e-8


def test_ccp_gap_reaches_oracle(rng):
    A = rng.standard_normal((20, 30))
    b = rng.standard_normal(20)
    lam = default_lambda(A, b) * 50
    p_star, _, gm = lasso_oracle(A, b, lam)
    assert gm <= 1e-12 * max(1.0, float(b @ b) / math.sqrt(lam)) * 10
    prob = LassoProblem(A, b, lam)
    plain = ccp_lasso(prob, max_iters=50000, p_star=p_star, target_gap=1e-8)
    pre = ccp_lasso_preconditioned(prob, EquilibrationParams(iterations=100), max_iters=50000,
                                   p_star=p_star, target_gap=1e-8)
    assert plain.gap_history[-1] <= 1e-8 and pre.gap_history[-1] <= 1e-8
    assert lasso_objective(prob, pre.x) == pytest.approx(lasso_objective(prob, plain.x), rel=1e-6)
