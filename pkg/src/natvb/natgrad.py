"""Natural gradients of expected losses.

The central quantity is

    tilde_lam = grad_mu E_q[-loss(theta)],

the gradient of the expected negative loss in dual coordinates, which
equals the Fisher-preconditioned gradient in natural coordinates. Four
estimators are provided:

  exact   - closed form: either the loss is linear in T(theta) (the
            natural-coefficient fast path) or it has affine gradient so
            the Gaussian moment identities apply with exact expectations;
  delta   - expectations replaced by point evaluation at the mean;
  mc      - Monte Carlo over K posterior samples using the loss Hessian
            (full matrix for full-covariance families, diagonal for
            diagonal ones);
  reparam - Monte Carlo with the Hessian diagonal estimated from
            gradients alone via grad(theta) * s * (theta - m), the
            reparameterization-trick identity (diagonal families).

For Gaussians the assembly uses the gradient/Hessian identity

    tilde_lam = -E_q[ (grad loss(theta) - H(theta) m ;  H(theta)/2) ].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import MissingHessian, SingularFisher, SolverFailure
from .expfam import ExpFamily
from .gaussian import DiagGaussian, ExpFamDistribution, FullGaussian, sym_to_coeff
from .losses import LossModel
from .quadrature import gaussian_expectation
from .seeding import make_rng

ESTIMATOR_KINDS = ("exact", "delta", "mc", "reparam")


@dataclass(frozen=True)
class EstimatorSpec:
    """How to estimate natural gradients: kind, sample count K, base seed."""

    kind: str = "exact"
    n_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass(frozen=True)
class NatGradEstimate:
    """tilde_lam with provenance: estimator kind, sample count, seed."""

    tilde_lambda: np.ndarray
    kind: str
    n_samples: int = 0
    seed: int | None = None

    def __post_init__(self):
        vec = np.asarray(self.tilde_lambda, dtype=float).reshape(-1)
        if not np.all(np.isfinite(vec)):
            raise ValueError("natural-gradient estimate must be finite")
        object.__setattr__(self, "tilde_lambda", vec)


def linear_loss_natgrad(family: ExpFamily, coeff) -> np.ndarray:
    """grad_mu E_q[loss] for loss = <-coeff, T(theta)> (+ additive constant).

    Equals -coeff exactly, independent of the query distribution:
    E_q[<-coeff, T>] = <-coeff, mu> is linear in mu.
    """
    coeff = np.asarray(coeff, dtype=float).reshape(-1)
    if coeff.size != family.param_dim:
        raise ValueError("coefficient length does not match the family")
    return -coeff


def natgrad_via_dual(family: ExpFamily, lam, grad_wrt_mu,
                     grad_wrt_lambda=None, rtol: float = 1e-6) -> np.ndarray:
    """Cross-check of the dual-coordinate identity F(lam)^-1 grad_lam = grad_mu.

    Solves F(lam) x = grad_lam (grad_lam defaults to the chain-rule image
    F(lam) grad_mu) and verifies x matches grad_wrt_mu within rtol before
    returning it. Raises SingularFisher if the factorization fails and
    SolverFailure if the identity is violated.
    """
    lam = family._check_natural(lam)
    grad_mu = np.asarray(grad_wrt_mu, dtype=float).reshape(-1)
    fisher = family.fisher(lam)
    if grad_wrt_lambda is None:
        grad_lam = fisher @ grad_mu
    else:
        grad_lam = np.asarray(grad_wrt_lambda, dtype=float).reshape(-1)
    try:
        factor = cho_factor(fisher, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularFisher("Cholesky of the Fisher matrix failed") from exc
    solved = cho_solve(factor, grad_lam)
    err = float(np.linalg.norm(solved - grad_mu)) / max(1.0, float(np.linalg.norm(grad_mu)))
    if err > rtol:
        raise SolverFailure(
            f"dual-coordinate identity violated: relative error {err:.3e} > {rtol:.1e}")
    return solved


def _assemble_tilde(family: ExpFamily, mean: np.ndarray, grad: np.ndarray,
                    hess) -> np.ndarray:
    """Map (E[grad], E[H]) into tilde_lam for a Gaussian family."""
    if isinstance(family, FullGaussian):
        hess = np.atleast_2d(np.asarray(hess, dtype=float))
        lin = -grad + hess @ mean
        return np.concatenate([lin, sym_to_coeff(-0.5 * hess)])
    if isinstance(family, DiagGaussian):
        hdiag = np.asarray(hess, dtype=float).reshape(-1)
        lin = -grad + hdiag * mean
        return np.concatenate([lin, -0.5 * hdiag])
    raise ValueError(f"Gaussian identity needs a Gaussian family, got {family.name!r}")


def natgrad_exact(dist: ExpFamDistribution, loss: LossModel) -> NatGradEstimate:
    """Closed-form tilde_lam; available for linear-in-T and affine-gradient losses."""
    family = dist.family
    coeff = loss.natural_coefficients(family)
    if coeff is not None:
        return NatGradEstimate(-linear_loss_natgrad(family, coeff), "exact")
    if loss.provides_expectations:
        mean, cov = family.to_mean_cov(dist.coords)
        grad = loss.expected_gradient(mean, cov)
        hess = loss.expected_hessian(mean, cov)
        if isinstance(family, DiagGaussian):
            hess = np.diag(np.atleast_2d(hess))
        return NatGradEstimate(_assemble_tilde(family, mean, grad, hess), "exact")
    raise ValueError(
        f"{type(loss).__name__} supports no exact estimator; use delta, mc, or reparam")


def natgrad_delta_method(dist: ExpFamDistribution, loss: LossModel) -> NatGradEstimate:
    """Gaussian identity with expectations replaced by evaluation at the mean."""
    family = dist.family
    mean, _ = family.to_mean_cov(dist.coords)
    grad = loss.gradient(mean)
    if isinstance(family, FullGaussian):
        hess = loss.hessian_full(mean)
    else:
        hess = loss.hessian_diag(mean)
    return NatGradEstimate(_assemble_tilde(family, mean, grad, hess), "delta")


def reparam_hessian_diag_estimate(dist: ExpFamDistribution, loss: LossModel,
                                  theta_sample, batch=None) -> np.ndarray:
    """Hessian-diagonal estimate grad(theta) * s * (theta - m) at one sample.

    Unbiased for diag(E_q[H]) when theta_sample ~ q and q is the diagonal
    Gaussian with mean m and precision s.
    """
    family = dist.family
    if not isinstance(family, DiagGaussian):
        raise ValueError("reparameterization estimator needs a diagonal Gaussian")
    theta = np.asarray(theta_sample, dtype=float).reshape(-1)
    lin, prec = family.split_natural(dist.coords)
    mean = lin / prec
    return loss.gradient(theta, batch) * prec * (theta - mean)


def natgrad_gaussian_identity(dist: ExpFamDistribution, loss: LossModel,
                              n_samples: int, seed: int, batch=None,
                              curvature: str = "hessian") -> NatGradEstimate:
    """Monte Carlo tilde_lam over K samples from q.

    Full-covariance families need loss.hessian_full. Diagonal families
    use loss.hessian_diag when curvature="hessian" and the gradient-only
    reparameterization estimate when curvature="reparam".
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    family = dist.family
    rng = make_rng(seed)
    thetas = family.sample(dist.coords, n_samples, rng)
    mean, _ = family.to_mean_cov(dist.coords)
    if isinstance(family, FullGaussian):
        if curvature != "hessian":
            raise ValueError("reparam curvature is only defined for diagonal families")
        if not loss.provides_hessian_full:
            raise MissingHessian("Gaussian-identity estimator needs hessian_full")
        grad_sum = np.zeros(family.theta_dim)
        hess_sum = np.zeros((family.theta_dim, family.theta_dim))
        for theta in thetas:
            grad_sum += loss.gradient(theta, batch)
            hess_sum += loss.hessian_full(theta, batch)
        tilde = _assemble_tilde(family, mean, grad_sum / n_samples, hess_sum / n_samples)
        return NatGradEstimate(tilde, "mc", n_samples, seed)
    if isinstance(family, DiagGaussian):
        lin, prec = family.split_natural(dist.coords)
        grad_sum = np.zeros(family.theta_dim)
        hdiag_sum = np.zeros(family.theta_dim)
        for theta in thetas:
            grad = loss.gradient(theta, batch)
            grad_sum += grad
            if curvature == "hessian":
                if not loss.provides_hessian_diag:
                    raise MissingHessian("mc estimator on a diagonal family needs hessian_diag")
                hdiag_sum += loss.hessian_diag(theta, batch)
            else:
                hdiag_sum += grad * prec * (theta - mean)
        kind = "mc" if curvature == "hessian" else "reparam"
        tilde = _assemble_tilde(family, mean, grad_sum / n_samples, hdiag_sum / n_samples)
        return NatGradEstimate(tilde, kind, n_samples, seed)
    raise ValueError(f"Gaussian identity needs a Gaussian family, got {family.name!r}")


def estimate_natgrad(family: ExpFamily, lam, loss: LossModel,
                     spec: EstimatorSpec, step: int = 0,
                     batch=None) -> NatGradEstimate:
    """Dispatch on spec.kind; stochastic kinds fold the step into the seed."""
    dist = ExpFamDistribution.from_coords(family, lam)
    if spec.kind == "exact":
        return natgrad_exact(dist, loss)
    if spec.kind == "delta":
        return natgrad_delta_method(dist, loss)
    seed = _fold_seed(spec.seed, step)
    curvature = "hessian" if spec.kind == "mc" else "reparam"
    return natgrad_gaussian_identity(dist, loss, spec.n_samples, seed,
                                     batch=batch, curvature=curvature)


def _fold_seed(seed: int, step: int) -> int:
    # stable per-step stream id; SeedSequence does the real mixing
    return (int(seed) << 20) ^ int(step)


def expected_loss(family: ExpFamily, lam, loss: LossModel,
                  spec: EstimatorSpec | None = None) -> float:
    """E_q[loss]: closed form when available, quadrature for P <= 2, else MC."""
    lam = family._check_natural(lam)
    mean, cov = family.to_mean_cov(lam)
    try:
        return loss.expected_value(mean, cov)
    except NotImplementedError:
        pass
    if family.theta_dim <= 2:
        return gaussian_expectation(lambda ts: loss.value_batch(ts), mean, cov)
    spec = spec or EstimatorSpec(kind="mc", n_samples=10_000, seed=0)
    rng = make_rng(spec.seed, 0xE)
    thetas = family.sample(lam, max(spec.n_samples, 2), rng)
    return float(np.mean([loss.value(t) for t in thetas]))
