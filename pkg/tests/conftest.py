import numpy as np
import pytest

from natvb.gaussian import DiagGaussian, FullGaussian, triu_pairs
from natvb.seeding import make_rng


def suffstats_batch(fam, thetas):
    """Vectorized T(theta) rows for a batch of draws (test-side speedup)."""
    thetas = np.atleast_2d(thetas)
    if isinstance(fam, DiagGaussian):
        return np.concatenate([thetas, thetas ** 2], axis=1)
    pairs = triu_pairs(fam.theta_dim)
    quad = np.stack([thetas[:, i] * thetas[:, j] for i, j in pairs], axis=1)
    return np.concatenate([thetas, quad], axis=1)


def log_density_batch(fam, lam, thetas):
    lam = np.asarray(lam, dtype=float).reshape(-1)
    return suffstats_batch(fam, thetas) @ lam - fam.cumulant(lam)


def random_instance(rng, max_dim=6, kind=None):
    """One random (family, lam) pair with well-conditioned parameters."""
    p = int(rng.integers(1, max_dim + 1))
    mean = rng.standard_normal(p)
    if kind is None:
        kind = "diag" if rng.uniform() < 0.5 else "full"
    if kind == "diag":
        fam = DiagGaussian(p)
        return fam, fam.from_moment(mean, rng.uniform(0.3, 3.0, p))
    fam = FullGaussian(p)
    a = rng.standard_normal((p, p))
    return fam, fam.from_moment(mean, a @ a.T + (0.5 + 0.3 * p) * np.eye(p))


def random_lam(rng, fam):
    """Another valid natural-parameter vector of the same family."""
    p = fam.theta_dim
    mean = rng.standard_normal(p)
    if isinstance(fam, DiagGaussian):
        return fam.from_moment(mean, rng.uniform(0.3, 3.0, p))
    a = rng.standard_normal((p, p))
    return fam.from_moment(mean, a @ a.T + (0.5 + 0.3 * p) * np.eye(p))


@pytest.fixture
def rng():
    return make_rng(20240817)
