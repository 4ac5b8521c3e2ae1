import numpy as np
import pytest

from natvb.errors import MissingHessian, SolverFailure
from natvb.gaussian import DiagGaussian, ExpFamDistribution, FullGaussian
from natvb.losses import LossModel, QuadraticLoss, ZeroLoss
from natvb.natgrad import (EstimatorSpec, estimate_natgrad, expected_loss,
                           linear_loss_natgrad, natgrad_delta_method,
                           natgrad_exact, natgrad_gaussian_identity,
                           natgrad_via_dual, reparam_hessian_diag_estimate)
from natvb.numdiff import central_diff_gradient
from natvb.quadrature import gaussian_expectation
from natvb.seeding import make_rng

from conftest import random_instance, random_lam


def full_dist(rng, p):
    fam = FullGaussian(p)
    return ExpFamDistribution.from_coords(fam, random_lam(rng, fam))


def diag_dist(rng, p):
    fam = DiagGaussian(p)
    return ExpFamDistribution.from_coords(fam, random_lam(rng, fam))


# -- Thm-1 fast path: losses linear in T ----------------------------------

def test_linear_loss_natgrad_zero():
    fam = FullGaussian(2)
    np.testing.assert_array_equal(linear_loss_natgrad(fam, np.zeros(5)), np.zeros(5))


def test_linear_loss_natgrad_is_minus_coeff_bitwise(rng):
    # independent of the query distribution, bitwise equal across 10 of them
    for _ in range(10):
        fam, _ = random_instance(rng, max_dim=4)
        coeff = rng.standard_normal(fam.param_dim)
        results = []
        for _ in range(10):
            lam = random_lam(rng, fam)  # never consulted, by Thm-1 exactness
            loss = QuadraticLoss.from_natural_coeff(fam, coeff)
            est = natgrad_exact(ExpFamDistribution.from_coords(fam, lam), loss)
            results.append(est.tilde_lambda)
        for r in results:
            np.testing.assert_array_equal(r, coeff)
        np.testing.assert_array_equal(linear_loss_natgrad(fam, coeff), -coeff)


def test_linear_loss_natgrad_matches_mc(rng):
    fam = FullGaussian(2)
    coeff = rng.standard_normal(fam.param_dim)
    loss = QuadraticLoss.from_natural_coeff(fam, coeff)
    dist = ExpFamDistribution.from_coords(fam, random_lam(rng, fam))
    mc = natgrad_gaussian_identity(dist, loss, 50_000, seed=3)
    # quadratic block is exact per sample; linear block is unbiased
    np.testing.assert_allclose(mc.tilde_lambda[2:], coeff[2:], atol=1e-12)
    np.testing.assert_allclose(mc.tilde_lambda[:2], coeff[:2], atol=0.1)


# -- dual-coordinate identity ----------------------------------------------

def test_natgrad_via_dual_zero():
    fam = FullGaussian(1)
    out = natgrad_via_dual(fam, [0.0, -0.5], np.zeros(2))
    np.testing.assert_array_equal(out, np.zeros(2))


def test_natgrad_via_dual_quadratic_1d():
    # loss theta^2/2 on N(0,1): E[-loss] = -mu_2/2, so grad_mu E[-loss] = (0, -1/2)
    fam = FullGaussian(1)
    lam = np.array([0.0, -0.5])
    loss = QuadraticLoss(np.array([[1.0]]), np.zeros(1))
    tilde = natgrad_exact(ExpFamDistribution.from_coords(fam, lam), loss)
    np.testing.assert_allclose(tilde.tilde_lambda, [0.0, -0.5], atol=1e-12)

    def neg_expected(lam_vec):
        mean, cov = fam.to_mean_cov(lam_vec)
        return -loss.expected_value(mean, cov)

    grad_lam = central_diff_gradient(neg_expected, lam)
    solved = natgrad_via_dual(fam, lam, tilde.tilde_lambda, grad_lam, rtol=1e-8)
    np.testing.assert_allclose(solved, tilde.tilde_lambda, atol=1e-8)


def test_natgrad_via_dual_random_instances(rng):
    for _ in range(10):
        p = int(rng.integers(1, 4))
        dist = full_dist(rng, p)
        a = rng.standard_normal((p, p))
        loss = QuadraticLoss(a @ a.T + np.eye(p), rng.standard_normal(p))
        tilde = natgrad_exact(dist, loss).tilde_lambda

        def neg_expected(lam_vec):
            mean, cov = dist.family.to_mean_cov(lam_vec)
            return -loss.expected_value(mean, cov)

        grad_lam = central_diff_gradient(neg_expected, dist.coords)
        solved = natgrad_via_dual(dist.family, dist.coords, tilde, grad_lam,
                                  rtol=1e-6)
        scale = max(1.0, np.max(np.abs(tilde)))
        assert np.max(np.abs(solved - tilde)) / scale < 1e-6


def test_natgrad_via_dual_detects_inconsistent_gradient():
    fam = FullGaussian(1)
    with pytest.raises(SolverFailure):
        natgrad_via_dual(fam, [0.0, -0.5], np.array([1.0, 1.0]),
                         np.array([5.0, 5.0]), rtol=1e-6)


# -- Gaussian identity estimator --------------------------------------------

def test_gaussian_identity_zero_loss(rng):
    dist = full_dist(rng, 2)
    est = natgrad_gaussian_identity(dist, ZeroLoss(2), 3, seed=1)
    np.testing.assert_array_equal(est.tilde_lambda, np.zeros(5))


def test_gaussian_identity_quadratic_block_exact_per_sample(rng):
    # constant Hessian: the quadratic block equals -A/2 for every sample;
    # the linear block is unbiased with per-sample noise -A (theta - m)
    p = 2
    dist = full_dist(rng, p)
    a = rng.standard_normal((p, p))
    loss = QuadraticLoss(a @ a.T + np.eye(p), rng.standard_normal(p))
    exact = natgrad_exact(dist, loss).tilde_lambda
    for seed in range(5):
        single = natgrad_gaussian_identity(dist, loss, 1, seed=seed).tilde_lambda
        np.testing.assert_allclose(single[p:], exact[p:], atol=1e-12)
    many = natgrad_gaussian_identity(dist, loss, 200_000, seed=11).tilde_lambda
    np.testing.assert_allclose(many, exact, atol=0.05)


def test_gaussian_identity_requires_hessian(rng):
    class GradOnly(LossModel):
        dim = 2

        def value(self, theta, batch=None):
            return 0.0

        def gradient(self, theta, batch=None):
            return np.zeros(2)

    with pytest.raises(MissingHessian):
        natgrad_gaussian_identity(full_dist(rng, 2), GradOnly(), 2, seed=0)


def test_gaussian_identity_matches_quadrature_oracle_logistic():
    # 1-D logistic-style loss: compare against finite differences of the
    # quadrature-computed expected negative loss with respect to mu
    from natvb.models import make_logistic_data
    loss = make_logistic_data(2, 30, 1)
    fam = FullGaussian(1)
    lam = fam.from_moment([0.2], [[1.5]])
    dist = ExpFamDistribution.from_coords(fam, lam)

    def neg_expected_wrt_mu(mu):
        lam_mu = fam.dual_to_natural(mu)
        mean, cov = fam.to_mean_cov(lam_mu)
        return -gaussian_expectation(lambda ts: loss.value_batch(ts), mean, cov)

    oracle = central_diff_gradient(neg_expected_wrt_mu, fam.natural_to_dual(lam))
    n = 100_000
    est = natgrad_gaussian_identity(dist, loss, n, seed=21).tilde_lambda
    # crude 3-SE gate from a second independent estimate
    est2 = natgrad_gaussian_identity(dist, loss, n, seed=22).tilde_lambda
    spread = np.abs(est - est2) + 1e-4
    assert np.all(np.abs(est - oracle) < 3.0 * spread)


def test_estimator_consistency_mc_rate():
    # quadrupling K roughly halves the linear-block error (within noise)
    rng = make_rng(31)
    fam = FullGaussian(1)
    lam = fam.from_moment([0.3], [[0.8]])
    dist = ExpFamDistribution.from_coords(fam, lam)
    loss = QuadraticLoss(np.array([[2.0]]), np.array([1.0]))
    exact = natgrad_exact(dist, loss).tilde_lambda

    def rms_error(k, reps=60):
        errs = []
        for r in range(reps):
            est = natgrad_gaussian_identity(dist, loss, k, seed=1000 + r)
            errs.append((est.tilde_lambda[0] - exact[0]) ** 2)
        return np.sqrt(np.mean(errs))

    coarse, fine = rms_error(64), rms_error(256)
    assert fine < coarse * 0.75  # ~0.5 expected, generous noise allowance


# -- delta method -------------------------------------------------------------

def test_delta_equals_exact_on_quadratics(rng):
    p = 3
    dist = full_dist(rng, p)
    a = rng.standard_normal((p, p))
    loss = QuadraticLoss(a @ a.T + np.eye(p), rng.standard_normal(p))
    np.testing.assert_allclose(natgrad_delta_method(dist, loss).tilde_lambda,
                               natgrad_exact(dist, loss).tilde_lambda, atol=1e-12)


def test_delta_zero_loss(rng):
    dist = diag_dist(rng, 2)
    np.testing.assert_array_equal(natgrad_delta_method(dist, ZeroLoss(2)).tilde_lambda,
                                  np.zeros(4))


def test_delta_gap_on_cubic_loss():
    # loss theta^3/3 on N(0,1): delta gives (0, 0); the exact linear block is
    # -E[theta^2] = -1, an approximation gap of exactly 1
    class Cubic(LossModel):
        dim = 1

        def value(self, theta, batch=None):
            return float(np.asarray(theta).reshape(-1)[0] ** 3 / 3.0)

        def gradient(self, theta, batch=None):
            return np.asarray(theta, dtype=float).reshape(-1) ** 2

        def hessian_full(self, theta, batch=None):
            return 2.0 * np.asarray(theta, dtype=float).reshape(1, 1)

    fam = FullGaussian(1)
    dist = ExpFamDistribution.from_coords(fam, [0.0, -0.5])
    delta = natgrad_delta_method(dist, Cubic()).tilde_lambda
    np.testing.assert_allclose(delta, [0.0, 0.0], atol=1e-14)
    mc = natgrad_gaussian_identity(dist, Cubic(), 400_000, seed=5).tilde_lambda
    assert abs(mc[0] - (-1.0)) < 0.02   # exact E[grad] = E[theta^2] = 1
    assert abs(mc[1] - 0.0) < 0.02      # E[H] = E[2 theta] = 0


# -- reparameterization estimator ----------------------------------------------

def test_reparam_zero_cases(rng):
    dist = diag_dist(rng, 3)
    lin, prec = dist.family.split_natural(dist.coords)
    mean = lin / prec
    np.testing.assert_array_equal(
        reparam_hessian_diag_estimate(dist, ZeroLoss(3), mean + 1.0), np.zeros(3))
    loss = QuadraticLoss(np.diag([1.0, 2.0, 3.0]), np.zeros(3))
    np.testing.assert_array_equal(
        reparam_hessian_diag_estimate(dist, loss, mean), np.zeros(3))


def test_reparam_needs_diagonal_family(rng):
    with pytest.raises(ValueError):
        reparam_hessian_diag_estimate(full_dist(rng, 2), ZeroLoss(2), np.zeros(2))


def test_reparam_unbiased_for_constant_hessian():
    rng = make_rng(41)
    p = 3
    hess = rng.uniform(0.5, 3.0, p)
    loss = QuadraticLoss(np.diag(hess), rng.standard_normal(p))
    fam = DiagGaussian(p)
    lam = fam.from_moment(rng.standard_normal(p), rng.uniform(0.5, 2.0, p))
    dist = ExpFamDistribution.from_coords(fam, lam)
    draws = fam.sample(lam, 1_000_000, make_rng(42))
    lin, prec = fam.split_natural(lam)
    mean = lin / prec
    grads = draws * hess - loss.lin  # diagonal quadratic gradient, vectorized
    estimates = grads * prec * (draws - mean)
    avg = estimates.mean(axis=0)
    se = estimates.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(avg - hess) < 3.0 * se)
    # the library path agrees with the vectorized reference on single samples
    single = reparam_hessian_diag_estimate(dist, loss, draws[0])
    np.testing.assert_allclose(single, estimates[0], rtol=1e-12)


# -- dispatch and expected loss --------------------------------------------------

def test_estimator_spec_validation():
    with pytest.raises(ValueError):
        EstimatorSpec(kind="bogus")
    with pytest.raises(ValueError):
        EstimatorSpec(n_samples=0)


def test_estimate_dispatch_matches_direct_calls(rng):
    p = 2
    fam = DiagGaussian(p)
    lam = random_lam(rng, fam)
    dist = ExpFamDistribution.from_coords(fam, lam)
    loss = QuadraticLoss(np.diag([1.0, 2.0]), np.ones(2))
    exact = estimate_natgrad(fam, lam, loss, EstimatorSpec("exact"))
    np.testing.assert_array_equal(exact.tilde_lambda,
                                  natgrad_exact(dist, loss).tilde_lambda)
    delta = estimate_natgrad(fam, lam, loss, EstimatorSpec("delta"))
    assert delta.kind == "delta"
    mc = estimate_natgrad(fam, lam, loss, EstimatorSpec("mc", 8, seed=5), step=3)
    assert mc.kind == "mc" and mc.n_samples == 8
    rep = estimate_natgrad(fam, lam, loss, EstimatorSpec("reparam", 8, seed=5))
    assert rep.kind == "reparam"


def test_estimate_mc_seed_differs_by_step(rng):
    fam = DiagGaussian(2)
    lam = random_lam(rng, fam)
    loss = QuadraticLoss(np.diag([1.0, 2.0]), np.ones(2))
    spec = EstimatorSpec("mc", 4, seed=5)
    a = estimate_natgrad(fam, lam, loss, spec, step=0).tilde_lambda
    b = estimate_natgrad(fam, lam, loss, spec, step=1).tilde_lambda
    assert not np.array_equal(a, b)
    a2 = estimate_natgrad(fam, lam, loss, spec, step=0).tilde_lambda
    np.testing.assert_array_equal(a, a2)


def test_expected_loss_routes(rng):
    # analytic for quadratics, quadrature for P<=2, MC above
    fam = FullGaussian(2)
    lam = random_lam(rng, fam)
    loss = QuadraticLoss(np.eye(2), np.zeros(2))
    mean, cov = fam.to_mean_cov(lam)
    assert np.isclose(expected_loss(fam, lam, loss), loss.expected_value(mean, cov))

    from natvb.models import make_logistic_data
    logi = make_logistic_data(9, 25, 2)
    via_quad = expected_loss(fam, lam, logi)
    direct = gaussian_expectation(lambda ts: logi.value_batch(ts), mean, cov)
    assert np.isclose(via_quad, direct, rtol=1e-12)

    logi5 = make_logistic_data(9, 25, 5)
    fam5 = FullGaussian(5)
    lam5 = random_lam(rng, fam5)
    mc = expected_loss(fam5, lam5, logi5, EstimatorSpec("mc", 50_000, seed=3))
    draws = fam5.sample(lam5, 200_000, make_rng(99))
    ref = logi5.value_batch(draws).mean()
    assert abs(mc - ref) / abs(ref) < 0.05
