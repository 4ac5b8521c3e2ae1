"""Full-covariance and diagonal-covariance Gaussian families.

A Gaussian N(m, S^-1) with precision S is the exponential-family member

    q(theta) ~ exp[ (Sm)' theta + <-S/2, theta theta'> ],

so the natural parameter has a linear block Sm and a quadratic block
-S/2. Parameter vectors are flattened as (linear block, then the upper
triangle of the quadratic block in row-major order). Two layouts share
that ordering:

  * coefficient layout (natural side): off-diagonal entries are stored
    doubled, so that <lam, T(theta)> is an ordinary dot product;
  * moment layout (statistic/dual side): plain entries, T(theta) carries
    theta_i theta_j once per (i, j) pair with i <= j.

With these layouts mu = grad A(lam) holds coordinate-wise and the Fisher
matrix Cov[T] is the exact Jacobian of natural_to_dual.

The precision parameterization is primary throughout: sampling runs a
triangular solve against the Cholesky factor of S, and nothing inverts a
covariance on the hot path. Validity is decided by Cholesky success
alone; the domain is open, so boundary cases fail rather than being
nudged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import DomainError
from .expfam import ExpFamily, NaturalParams
from .seeding import RNG_ALGORITHM, make_rng

_LOG_2PI = float(np.log(2.0 * np.pi))


# -- symmetric-matrix flattening -------------------------------------

def triu_pairs(dim: int) -> list[tuple[int, int]]:
    """Upper-triangular index pairs in row-major order."""
    return [(i, j) for i in range(dim) for j in range(i, dim)]


def sym_to_coeff(mat: np.ndarray) -> np.ndarray:
    """Coefficient layout of a symmetric matrix (off-diagonals doubled)."""
    mat = np.asarray(mat, dtype=float)
    dim = mat.shape[0]
    out = np.empty(dim * (dim + 1) // 2)
    for a, (i, j) in enumerate(triu_pairs(dim)):
        out[a] = mat[i, j] if i == j else 2.0 * mat[i, j]
    return out


def coeff_to_sym(vec: np.ndarray, dim: int) -> np.ndarray:
    """Inverse of sym_to_coeff."""
    mat = np.zeros((dim, dim))
    for a, (i, j) in enumerate(triu_pairs(dim)):
        if i == j:
            mat[i, i] = vec[a]
        else:
            mat[i, j] = mat[j, i] = 0.5 * vec[a]
    return mat


def sym_to_moment(mat: np.ndarray) -> np.ndarray:
    """Moment layout of a symmetric matrix (plain upper triangle)."""
    mat = np.asarray(mat, dtype=float)
    dim = mat.shape[0]
    return np.array([mat[i, j] for i, j in triu_pairs(dim)])


def moment_to_sym(vec: np.ndarray, dim: int) -> np.ndarray:
    """Inverse of sym_to_moment."""
    mat = np.zeros((dim, dim))
    for a, (i, j) in enumerate(triu_pairs(dim)):
        mat[i, j] = mat[j, i] = vec[a]
    return mat


def _chol_pd(mat: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, or DomainError if not symmetric PD."""
    mat = np.asarray(mat, dtype=float)
    if not np.all(np.isfinite(mat)):
        raise DomainError("matrix must be finite")
    if np.max(np.abs(mat - mat.T)) > 1e-12 * max(1.0, np.max(np.abs(mat))):
        raise DomainError("matrix must be symmetric")
    try:
        return cholesky(mat, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DomainError("matrix not positive definite") from exc


# -- families ---------------------------------------------------------

class FullGaussian(ExpFamily):
    """Full-covariance Gaussians on R^P, T(theta) = (theta, theta theta')."""

    def __init__(self, theta_dim: int):
        if theta_dim < 1:
            raise ValueError("theta_dim must be >= 1")
        self.theta_dim = int(theta_dim)
        self.param_dim = self.theta_dim + self.theta_dim * (self.theta_dim + 1) // 2
        self.name = f"gaussian_full_{self.theta_dim}"
        self._pairs = triu_pairs(self.theta_dim)

    def split_natural(self, lam) -> tuple[np.ndarray, np.ndarray]:
        """(linear block, precision matrix S); raises if S is not PD."""
        lam = self._coords(lam, "natural")
        p = self.theta_dim
        lin = lam[:p]
        prec = -2.0 * coeff_to_sym(lam[p:], p)
        _chol_pd(prec)
        return lin, prec

    def contains_natural(self, lam) -> bool:
        lam = np.asarray(lam, dtype=float).reshape(-1)
        if lam.size != self.param_dim or not np.all(np.isfinite(lam)):
            return False
        p = self.theta_dim
        try:
            _chol_pd(-2.0 * coeff_to_sym(lam[p:], p))
        except DomainError:
            return False
        return True

    def contains_expectation(self, mu) -> bool:
        mu = np.asarray(mu, dtype=float).reshape(-1)
        if mu.size != self.param_dim or not np.all(np.isfinite(mu)):
            return False
        p = self.theta_dim
        mean = mu[:p]
        second = moment_to_sym(mu[p:], p)
        try:
            _chol_pd(second - np.outer(mean, mean))
        except DomainError:
            return False
        return True

    def _mean_prec_chol(self, lam):
        lam = self._check_natural(lam)
        p = self.theta_dim
        lin = lam[:p]
        prec = -2.0 * coeff_to_sym(lam[p:], p)
        low = _chol_pd(prec)
        mean = cho_solve((low, True), lin)
        return lin, prec, low, mean

    def to_mean_cov(self, lam) -> tuple[np.ndarray, np.ndarray]:
        """(mean, covariance) of q_lam."""
        _, _, low, mean = self._mean_prec_chol(lam)
        cov = cho_solve((low, True), np.eye(self.theta_dim))
        return mean, 0.5 * (cov + cov.T)

    def to_moment(self, lam) -> "GaussianMoment":
        """(mean, precision) of q_lam."""
        lam = self._check_natural(lam)
        p = self.theta_dim
        prec = -2.0 * coeff_to_sym(lam[p:], p)
        mean = cho_solve((_chol_pd(prec), True), lam[:p])
        return GaussianMoment(mean, prec)

    def from_moment(self, mean, precision) -> np.ndarray:
        """Natural coordinates (Sm, -S/2) for mean m and precision S."""
        mean = np.asarray(mean, dtype=float).reshape(-1)
        prec = np.asarray(precision, dtype=float)
        if mean.size != self.theta_dim or prec.shape != (self.theta_dim,) * 2:
            raise DomainError("moment parameters have the wrong shape")
        _chol_pd(prec)
        return np.concatenate([prec @ mean, sym_to_coeff(-0.5 * prec)])

    def cumulant(self, lam) -> float:
        lin, _, low, mean = self._mean_prec_chol(lam)
        p = self.theta_dim
        logdet = 2.0 * np.sum(np.log(np.diag(low)))
        return float(0.5 * lin @ mean - 0.5 * logdet + 0.5 * p * _LOG_2PI)

    def natural_to_dual(self, lam) -> np.ndarray:
        mean, cov = self.to_mean_cov(lam)
        return np.concatenate([mean, sym_to_moment(cov + np.outer(mean, mean))])

    def dual_to_natural(self, mu) -> np.ndarray:
        mu = self._check_expectation(mu)
        p = self.theta_dim
        mean = mu[:p]
        cov = moment_to_sym(mu[p:], p) - np.outer(mean, mean)
        low = _chol_pd(cov)
        prec = cho_solve((low, True), np.eye(p))
        prec = 0.5 * (prec + prec.T)
        return np.concatenate([prec @ mean, sym_to_coeff(-0.5 * prec)])

    def fisher(self, lam) -> np.ndarray:
        # Cov[T] from Gaussian moment identities (Isserlis with mean shift):
        #   Cov(th_i, th_j th_k)      = m_j C_ik + m_k C_ij
        #   Cov(th_i th_j, th_k th_l) = C_ik C_jl + C_il C_jk
        #                             + m_i m_k C_jl + m_i m_l C_jk
        #                             + m_j m_k C_il + m_j m_l C_ik
        mean, cov = self.to_mean_cov(lam)
        p = self.theta_dim
        pairs = self._pairs
        n_quad = len(pairs)
        fish = np.zeros((p + n_quad, p + n_quad))
        fish[:p, :p] = cov
        for a, (j, k) in enumerate(pairs):
            cross = mean[j] * cov[:, k] + mean[k] * cov[:, j]
            fish[:p, p + a] = cross
            fish[p + a, :p] = cross
        for a, (i, j) in enumerate(pairs):
            for b, (k, l) in enumerate(pairs):
                if b < a:
                    continue
                val = (cov[i, k] * cov[j, l] + cov[i, l] * cov[j, k]
                       + mean[i] * mean[k] * cov[j, l]
                       + mean[i] * mean[l] * cov[j, k]
                       + mean[j] * mean[k] * cov[i, l]
                       + mean[j] * mean[l] * cov[i, k])
                fish[p + a, p + b] = val
                fish[p + b, p + a] = val
        return fish

    def sufficient_stats(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.theta_dim:
            raise ValueError(f"theta must have length {self.theta_dim}")
        return np.concatenate([theta, [theta[i] * theta[j] for i, j in self._pairs]])

    def sample(self, lam, size: int, rng: np.random.Generator) -> np.ndarray:
        _, _, low, mean = self._mean_prec_chol(lam)
        z = rng.standard_normal((size, self.theta_dim))
        # theta = m + L^-T z  has covariance (L L')^-1 = S^-1
        return mean + solve_triangular(low.T, z.T, lower=False).T


class DiagGaussian(ExpFamily):
    """Diagonal-covariance Gaussians, T(theta) = (theta, theta^2) elementwise.

    The restriction of the full family to diagonal precisions; every
    quantity agrees with FullGaussian on the shared coordinates.
    """

    def __init__(self, theta_dim: int):
        if theta_dim < 1:
            raise ValueError("theta_dim must be >= 1")
        self.theta_dim = int(theta_dim)
        self.param_dim = 2 * self.theta_dim
        self.name = f"gaussian_diag_{self.theta_dim}"

    def split_natural(self, lam) -> tuple[np.ndarray, np.ndarray]:
        """(linear block, precision diagonal s)."""
        lam = self._coords(lam, "natural")
        p = self.theta_dim
        lin, prec = lam[:p], -2.0 * lam[p:]
        if not np.all(prec > 0.0):
            raise DomainError("precision diagonal must be positive")
        return lin, prec

    def contains_natural(self, lam) -> bool:
        lam = np.asarray(lam, dtype=float).reshape(-1)
        return (lam.size == self.param_dim and np.all(np.isfinite(lam))
                and np.all(lam[self.theta_dim:] < 0.0))

    def contains_expectation(self, mu) -> bool:
        mu = np.asarray(mu, dtype=float).reshape(-1)
        if mu.size != self.param_dim or not np.all(np.isfinite(mu)):
            return False
        p = self.theta_dim
        return bool(np.all(mu[p:] - mu[:p] ** 2 > 0.0))

    def to_mean_var(self, lam) -> tuple[np.ndarray, np.ndarray]:
        lin, prec = self.split_natural(self._check_natural(lam))
        return lin / prec, 1.0 / prec

    def to_mean_cov(self, lam) -> tuple[np.ndarray, np.ndarray]:
        mean, var = self.to_mean_var(lam)
        return mean, np.diag(var)

    def to_moment(self, lam) -> "GaussianMoment":
        lin, prec = self.split_natural(self._check_natural(lam))
        return GaussianMoment(lin / prec, prec)

    def from_moment(self, mean, precision) -> np.ndarray:
        mean = np.asarray(mean, dtype=float).reshape(-1)
        prec = np.asarray(precision, dtype=float).reshape(-1)
        if mean.size != self.theta_dim or prec.size != self.theta_dim:
            raise DomainError("moment parameters have the wrong shape")
        if not np.all(np.isfinite(prec)) or not np.all(prec > 0.0):
            raise DomainError("precision diagonal must be positive")
        return np.concatenate([prec * mean, -0.5 * prec])

    def cumulant(self, lam) -> float:
        lam = self._check_natural(lam)
        lin, prec = self.split_natural(lam)
        return float(np.sum(0.5 * lin ** 2 / prec - 0.5 * np.log(prec)
                            + 0.5 * _LOG_2PI))

    def natural_to_dual(self, lam) -> np.ndarray:
        mean, var = self.to_mean_var(lam)
        return np.concatenate([mean, var + mean ** 2])

    def dual_to_natural(self, mu) -> np.ndarray:
        mu = self._check_expectation(mu)
        p = self.theta_dim
        mean = mu[:p]
        var = mu[p:] - mean ** 2
        prec = 1.0 / var
        return np.concatenate([prec * mean, -0.5 * prec])

    def fisher(self, lam) -> np.ndarray:
        mean, var = self.to_mean_var(self._check_natural(lam))
        p = self.theta_dim
        fish = np.zeros((2 * p, 2 * p))
        idx = np.arange(p)
        fish[idx, idx] = var
        fish[idx, p + idx] = 2.0 * mean * var
        fish[p + idx, idx] = 2.0 * mean * var
        fish[p + idx, p + idx] = 2.0 * var ** 2 + 4.0 * mean ** 2 * var
        return fish

    def sufficient_stats(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.theta_dim:
            raise ValueError(f"theta must have length {self.theta_dim}")
        return np.concatenate([theta, theta ** 2])

    def sample(self, lam, size: int, rng: np.random.Generator) -> np.ndarray:
        mean, var = self.to_mean_var(lam)
        z = rng.standard_normal((size, self.theta_dim))
        return mean + np.sqrt(var) * z


# -- moment-side types and conversions --------------------------------

@dataclass(frozen=True)
class GaussianMoment:
    """Mean/precision pair: precision is a PD matrix (full) or positive vector (diag)."""

    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        prec = np.asarray(self.precision, dtype=float)
        if prec.ndim == 1:
            if prec.size != mean.size:
                raise DomainError("mean and precision sizes differ")
            if not np.all(np.isfinite(prec)) or not np.all(prec > 0.0):
                raise DomainError("precision diagonal must be positive")
        elif prec.ndim == 2:
            if prec.shape != (mean.size, mean.size):
                raise DomainError("mean and precision sizes differ")
            _chol_pd(prec)
        else:
            raise DomainError("precision must be a vector or a square matrix")
        if not np.all(np.isfinite(mean)):
            raise DomainError("mean must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", prec)

    @property
    def diagonal(self) -> bool:
        return self.precision.ndim == 1

    def family(self) -> ExpFamily:
        cls = DiagGaussian if self.diagonal else FullGaussian
        return cls(self.mean.size)


def moment_to_natural(mean, precision) -> NaturalParams:
    """Natural parameters (Sm, -S/2) for N(m, S^-1); family from precision shape."""
    moment = GaussianMoment(mean, precision)
    family = moment.family()
    return family.natural(family.from_moment(moment.mean, moment.precision))


# -- distribution and sampling wrappers --------------------------------

@dataclass(frozen=True)
class GaussianSampleBatch:
    """K i.i.d. draws with the seed and RNG algorithm that produced them."""

    samples: np.ndarray
    seed: int
    count: int
    algorithm: str = RNG_ALGORITHM


@dataclass(frozen=True)
class ExpFamDistribution:
    """A family member q_lam: family plus validated natural parameters."""

    family: ExpFamily
    natural: NaturalParams

    @classmethod
    def from_coords(cls, family: ExpFamily, coords) -> "ExpFamDistribution":
        return cls(family, family.natural(coords))

    @property
    def theta_dim(self) -> int:
        return self.family.theta_dim

    @property
    def param_dim(self) -> int:
        return self.family.param_dim

    @property
    def coords(self) -> np.ndarray:
        return self.natural.coords

    def log_density(self, theta) -> float:
        return self.family.log_density(self.natural, theta)

    def entropy(self) -> float:
        return self.family.entropy(self.natural)

    def sample(self, count: int, seed: int) -> GaussianSampleBatch:
        if count < 1:
            raise ValueError("count must be >= 1")
        rng = make_rng(seed)
        draws = self.family.sample(self.natural, count, rng)
        return GaussianSampleBatch(draws, int(seed), int(count))
