"""Self-check suite behind the `verify` CLI subcommand.

Each check re-derives one of the package's structural identities from an
independent route (finite differences, Monte Carlo, dense linear
algebra, or a second code path) and reports PASS/FAIL with a numeric
diagnostic. Checks are grouped into scopes so subsets can run alone, and
a fault-injection hook flips a sign inside a named check to demonstrate
that the suite actually detects breakage.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .blr import (BLRConfig, blr_init, blr_run, blr_step, conjugate_posterior,
                  fixed_point_residual, mirror_descent_step_numeric,
                  multiplicative_form_check, newton_recovery_step)
from .deep import (VONState, ema, ivon_init, ivon_step,
                   preconditioned_step, rmsprop_init, rmsprop_step, von_step)
from .expfam import ExpFamily
from .gaussian import DiagGaussian, ExpFamDistribution, FullGaussian
from .losses import QuadraticLoss
from .models import (make_logistic_data, make_ridge_data, ridge_conjugate_model,
                     ridge_exact_posterior, ridge_loss)
from .natgrad import EstimatorSpec, linear_loss_natgrad
from .numdiff import central_diff_gradient, central_diff_jacobian
from .seeding import make_rng

SABOTAGE_IDS = ("eq4",)


@dataclass(frozen=True)
class CheckResult:
    name: str
    scope: str
    passed: bool
    message: str


def _random_family_instances(rng, count, max_dim=6):
    """Random (family, lam) pairs across both Gaussian families."""
    out = []
    for _ in range(count):
        p = int(rng.integers(1, max_dim + 1))
        mean = rng.standard_normal(p)
        if rng.uniform() < 0.5:
            fam = DiagGaussian(p)
            lam = fam.from_moment(mean, rng.uniform(0.3, 3.0, p))
        else:
            fam = FullGaussian(p)
            a = rng.standard_normal((p, p))
            lam = fam.from_moment(mean, a @ a.T + (0.5 + p * 0.3) * np.eye(p))
        out.append((fam, lam))
    return out


def check_duality_roundtrip(sabotage=None):
    rng = make_rng(101)
    worst = 0.0
    for fam, lam in _random_family_instances(rng, 40):
        back = fam.dual_to_natural(fam.natural_to_dual(lam))
        worst = max(worst, float(np.max(np.abs(back - lam)))
                    / max(1.0, float(np.max(np.abs(lam)))))
    return worst <= 1e-10, f"max_rel_err={worst:.3e} (tol 1e-10)"


def check_fisher_finite_diff(sabotage=None):
    rng = make_rng(102)
    worst = 0.0
    for fam, lam in _random_family_instances(rng, 10, max_dim=4):
        fisher = fam.fisher(lam)
        fd = central_diff_jacobian(fam.natural_to_dual, lam)
        worst = max(worst, float(np.max(np.abs(fisher - fd)))
                    / max(1.0, float(np.max(np.abs(fd)))))
    return worst <= 1e-4, f"max_rel_err={worst:.3e} (tol 1e-4)"


def check_entropy_gradient(sabotage=None):
    rng = make_rng(103)
    worst = 0.0
    for fam, lam in _random_family_instances(rng, 15, max_dim=4):
        grad = fam.entropy_gradient(lam)
        if sabotage == "eq4":
            # flip the first quadratic-block coordinate (the linear block
            # is identically zero: Gaussian entropy ignores the mean)
            grad = grad.copy()
            grad[fam.theta_dim] = -grad[fam.theta_dim]
        exact = -(fam.fisher(lam) @ lam)
        if sabotage != "eq4" and np.max(np.abs(grad - exact)) != 0.0:
            return False, "analytic form is not -F(lam) lam"
        fd = central_diff_gradient(fam.entropy, lam)
        worst = max(worst, float(np.max(np.abs(grad - fd)))
                    / max(1.0, float(np.max(np.abs(fd)))))
    return worst <= 1e-5, f"max_rel_err={worst:.3e} (tol 1e-5)"


def check_fenchel_duality(sabotage=None):
    rng = make_rng(104)
    worst = 0.0
    for fam, lam in _random_family_instances(rng, 20):
        gap = fam.entropy(lam) + fam.fenchel_conjugate(fam.natural_to_dual(lam))
        worst = max(worst, abs(gap))
    return worst <= 1e-10, f"max_gap={worst:.3e} (tol 1e-10)"


def check_kl_bregman(sabotage=None):
    rng = make_rng(105)
    min_kl = np.inf
    worst_grad = 0.0
    for fam, lam_a in _random_family_instances(rng, 15, max_dim=3):
        lam_b = _random_same_family(rng, fam)
        kl = fam.kl_divergence(lam_a, lam_b)
        min_kl = min(min_kl, kl)
        grad = fam.kl_gradient_wrt_dual(lam_a, lam_b)
        fd = central_diff_gradient(
            lambda mu: fam.kl_divergence(fam.dual_to_natural(mu), lam_b),
            fam.natural_to_dual(lam_a))
        worst_grad = max(worst_grad, float(np.max(np.abs(grad - fd)))
                         / max(1.0, float(np.max(np.abs(fd)))))
    ok = min_kl >= -1e-12 and worst_grad <= 1e-5
    return ok, f"min_kl={min_kl:.3e}, grad_err={worst_grad:.3e}"


def _random_same_family(rng, fam: ExpFamily):
    p = fam.theta_dim
    mean = rng.standard_normal(p)
    if isinstance(fam, DiagGaussian):
        return fam.from_moment(mean, rng.uniform(0.3, 3.0, p))
    a = rng.standard_normal((p, p))
    return fam.from_moment(mean, a @ a.T + (0.5 + 0.3 * p) * np.eye(p))


def check_linear_loss_natgrad(sabotage=None):
    rng = make_rng(106)
    for _ in range(10):
        fam, _ = _random_family_instances(rng, 1, max_dim=3)[0]
        coeff = rng.standard_normal(fam.param_dim)
        base = linear_loss_natgrad(fam, coeff)
        for _ in range(10):
            again = linear_loss_natgrad(fam, coeff)
            if not np.array_equal(base, again) or not np.array_equal(base, -coeff):
                return False, "natural gradient of a linear-in-T loss is not -coeff"
    return True, "bitwise -coeff across query distributions"


def check_one_step_bayes(sabotage=None):
    rng = make_rng(107)
    worst = 0.0
    worst_res = 0.0
    for trial in range(20):
        n, p = int(rng.integers(3, 40)), int(rng.integers(1, 6))
        model = make_ridge_data(2000 + trial, n, p)
        fam = FullGaussian(p)
        loss = ridge_loss(model)
        target = conjugate_posterior(ridge_conjugate_model(model)).coords
        post = ridge_exact_posterior(model)
        oracle = fam.from_moment(post.mean, post.precision)
        if np.max(np.abs(target - oracle)) > 1e-10 * max(1.0, np.max(np.abs(oracle))):
            return False, "conjugate addition disagrees with the dense solve"
        lam0 = _random_same_family(rng, fam)
        cfg = BLRConfig(learning_rate=1.0, max_iter=1, estimator=EstimatorSpec("exact"))
        state = blr_step(blr_init(fam, lam0), loss, cfg)
        worst = max(worst, float(np.max(np.abs(state.lam.coords - target)))
                    / max(1.0, float(np.max(np.abs(target)))))
        worst_res = max(worst_res, fixed_point_residual(fam, state.lam, loss,
                                                        cfg.estimator))
    ok = worst <= 1e-10 and worst_res <= 1e-10
    return ok, f"max_err={worst:.3e}, max_residual={worst_res:.3e} (tol 1e-10)"


def check_multiplicative_form(sabotage=None):
    model = make_ridge_data(31, 25, 3)
    fam = FullGaussian(3)
    run = blr_run(fam, fam.from_moment(np.zeros(3), np.eye(3)), ridge_loss(model),
                  BLRConfig(learning_rate=0.4, max_iter=30,
                            estimator=EstimatorSpec("exact")))
    spread = max(r.spread for r in run.multiplicative_reports)
    if not all(r.passed for r in run.multiplicative_reports):
        return False, f"a step failed the Bayes-filter form (spread {spread:.3e})"
    # sensitivity: a corrupted iterate must fail
    state0 = blr_init(fam, fam.from_moment(np.zeros(3), np.eye(3)))
    cfg = BLRConfig(learning_rate=0.5, max_iter=1, estimator=EstimatorSpec("exact"))
    state1 = blr_step(state0, ridge_loss(model), cfg)
    bad_lam = state1.lam.coords.copy()
    bad_lam[0] += 1e-3
    corrupted = replace(state1, lam=fam.natural(bad_lam),
                        mu=fam.natural_to_dual(bad_lam))
    if multiplicative_form_check(state0, corrupted, 0.5).passed:
        return False, "corrupted iterate passed the check"
    return True, f"max_spread={spread:.3e} (tol 1e-8); corruption detected"


def check_mirror_descent(sabotage=None):
    rng = make_rng(108)
    worst = 0.0
    for _ in range(10):
        fam, lam_t = _random_family_instances(rng, 1, max_dim=2)[0]
        tilde = _random_same_family(rng, fam)
        rho = float(rng.uniform(0.1, 1.0))
        numeric = mirror_descent_step_numeric(fam, lam_t, tilde, rho)
        closed = (1.0 - rho) * lam_t + rho * tilde
        worst = max(worst, float(np.max(np.abs(numeric - closed)))
                    / max(1.0, float(np.max(np.abs(closed)))))
    return worst <= 1e-6, f"max_rel_err={worst:.3e} (tol 1e-6)"


def check_delta_newton(sabotage=None):
    loss = make_logistic_data(41, 40, 2)
    fam = FullGaussian(2)
    mean = np.zeros(2)
    state = blr_init(fam, fam.from_moment(mean, np.eye(2)))
    cfg = BLRConfig(learning_rate=1.0, max_iter=1, estimator=EstimatorSpec("delta"))
    worst = 0.0
    for _ in range(5):
        mean, prec = newton_recovery_step(loss, mean)
        state = blr_step(state, loss, cfg)
        mom = fam.to_moment(state.lam)
        worst = max(worst, float(np.max(np.abs(mom.mean - mean))),
                    float(np.max(np.abs(mom.precision - prec))))
    return worst <= 1e-10, f"max_abs_err={worst:.3e} (tol 1e-10)"


def check_reparam_unbiased(sabotage=None):
    rng = make_rng(109)
    p = 3
    fam = DiagGaussian(p)
    hess = rng.uniform(0.5, 2.5, p)
    loss = QuadraticLoss(np.diag(hess), rng.standard_normal(p))
    dist = ExpFamDistribution.from_coords(
        fam, fam.from_moment(rng.standard_normal(p), rng.uniform(0.5, 2.0, p)))
    draws = fam.sample(dist.coords, 200_000, make_rng(110))
    lin, prec = fam.split_natural(dist.coords)
    mean = lin / prec
    grads = draws @ np.diag(hess) - loss.lin
    estimates = grads * prec * (draws - mean)
    avg = estimates.mean(axis=0)
    se = estimates.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
    z = np.max(np.abs(avg - hess) / se)
    return z <= 3.0, f"max_z={z:.2f} over {p} coordinates (tol 3 SE)"


def check_von_blr(sabotage=None):
    rng = make_rng(111)
    p = 4
    hess = rng.uniform(0.5, 3.0, p)
    loss = QuadraticLoss(np.diag(hess), rng.standard_normal(p))
    fam = DiagGaussian(p)
    mean0, prec0 = rng.standard_normal(p), rng.uniform(0.5, 2.0, p)
    von = VONState(mean0, prec0, learning_rate=0.3)
    blr = blr_init(fam, fam.from_moment(mean0, prec0))
    cfg = BLRConfig(learning_rate=0.3, max_iter=1, estimator=EstimatorSpec("exact"),
                    check_multiplicative=False)
    worst = 0.0
    for _ in range(20):
        von = von_step(von, loss)
        blr = blr_step(blr, loss, cfg)
        lam_von = fam.from_moment(von.mean, von.prec)
        worst = max(worst, float(np.max(np.abs(lam_von - blr.lam.coords)
                                        / np.maximum(1.0, np.abs(blr.lam.coords)))))
    return worst <= 1e-12, f"max_rel_err={worst:.3e} over 20 steps (tol 1e-12)"


def check_ivon_positivity(sabotage=None):
    rng = make_rng(112)
    loss = QuadraticLoss(np.diag(rng.uniform(0.2, 4.0, 3)), rng.standard_normal(3))
    state = ivon_init(rng.standard_normal(3), step_size=0.2, hess_init=0.3,
                      hess_rate=0.9, weight_decay=1e-3, ess=5.0, seed=7)
    min_prec = np.inf
    for _ in range(2000):
        state = ivon_step(state, loss)
        min_prec = min(min_prec, float(np.min(state.hess + state.weight_decay)))
    # no-square-root probe: quadrupling the scale must quarter the step
    step4 = preconditioned_step(np.zeros(1), np.ones(1), np.array([4.0]), 1.0)
    step1 = preconditioned_step(np.zeros(1), np.ones(1), np.array([1.0]), 1.0)
    ratio = float(step4[0] / step1[0])
    ok = min_prec > 0.0 and abs(ratio - 0.25) < 1e-12
    return ok, f"min(h+delta0)={min_prec:.3e}, scale-4 step ratio={ratio}"


def check_rmsprop_correspondence(sabotage=None):
    rng = make_rng(113)
    for _ in range(5):
        p = int(rng.integers(1, 6))
        state = rmsprop_init(rng.standard_normal(p), step_size=0.05,
                             scale_rate=0.3, damping=1e-8)
        state = replace(state, scale=rng.uniform(0.0, 2.0, p))
        for _ in range(4):
            grad = rng.standard_normal(p)
            # VON arithmetic with squared-gradient curvature, a square root,
            # and sampling disabled is exactly the RMSprop update
            scale = ema(state.scale, grad ** 2, state.scale_rate)
            theta = preconditioned_step(state.theta, grad, scale, state.step_size,
                                        state.damping, sqrt_scale=True)
            state = rmsprop_step(state, grad)
            if not (np.array_equal(theta, state.theta)
                    and np.array_equal(scale, state.scale)):
                return False, "substituted update diverged from rmsprop_step"
    return True, "exact match on 5 random traces"


CHECKS: list[tuple[str, str, Callable]] = [
    ("duality-roundtrip", "duality", check_duality_roundtrip),
    ("fisher-finite-diff", "fisher", check_fisher_finite_diff),
    ("entropy-gradient", "entropy", check_entropy_gradient),
    ("fenchel-duality", "fenchel", check_fenchel_duality),
    ("kl-bregman", "kl", check_kl_bregman),
    ("linear-loss-natgrad", "conjugate", check_linear_loss_natgrad),
    ("one-step-bayes", "conjugate", check_one_step_bayes),
    ("multiplicative-form", "blr", check_multiplicative_form),
    ("mirror-descent", "mirror", check_mirror_descent),
    ("delta-newton", "newton", check_delta_newton),
    ("reparam-unbiased", "estimators", check_reparam_unbiased),
    ("von-blr", "von", check_von_blr),
    ("ivon-positivity", "ivon", check_ivon_positivity),
    ("rmsprop-correspondence", "deep", check_rmsprop_correspondence),
]


def run_verify(scope: str | None = None, sabotage: str | None = None,
               print_fn=print) -> list[CheckResult]:
    """Run (a scope of) the checks and print one PASS/FAIL line per check."""
    if sabotage is not None and sabotage not in SABOTAGE_IDS:
        raise ValueError(f"unknown sabotage id {sabotage!r}; known: {SABOTAGE_IDS}")
    selected = [(n, s, f) for n, s, f in CHECKS if scope is None or s == scope]
    if not selected:
        scopes = sorted({s for _, s, _ in CHECKS})
        raise ValueError(f"unknown scope {scope!r}; known: {scopes}")
    results = []
    for name, check_scope, fn in selected:
        try:
            passed, message = fn(sabotage)
        except Exception as exc:  # a crashed check is a failed check
            passed, message = False, f"error={exc!r}"
        results.append(CheckResult(name, check_scope, passed, message))
        print_fn(f"{'PASS' if passed else 'FAIL'}  {name} [{check_scope}]: {message}")
    failures = sum(not r.passed for r in results)
    print_fn(f"{len(results)} checks, {failures} failures")
    return results
