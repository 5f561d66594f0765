"""Multivariate Gaussian and Normal-Inverse-Wishart primitives.

Clusters are (mean, covariance) pairs; the zero-covariance cluster is a
legitimate value (a point mass) and is handled by branching, never by
jitter, so that spike atoms stay exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import mvn_logpdf_core, psd_factor
from .rng import RngStream


class DegenerateDensityError(ValueError):
    """Raised when a density evaluation hits a singular covariance."""


def _as_matrix(x) -> np.ndarray:
    a = np.atleast_2d(np.asarray(x, dtype=float))
    return a


def _as_vector(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class GaussianCluster:
    """A (mean, covariance) pair; the latent cluster value of a noise DPM."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean)
        cov = _as_matrix(self.cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))
        if self.cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"cov shape {cov.shape} incompatible with mean dim {mean.size}"
            )
        tr = float(np.trace(self.cov))
        evs = np.linalg.eigvalsh(self.cov)
        if evs[0] < -1e-10 * max(tr, 1.0):
            raise ValueError("covariance is not positive semidefinite")

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def is_degenerate(self) -> bool:
        """True for a point mass (exactly zero covariance)."""
        return not np.any(self.cov)


@dataclass(frozen=True)
class NIWParams:
    """Normal-Inverse-Wishart hyperparameters (mu0, kappa0, nu0, lambda0)."""

    mu0: np.ndarray
    kappa0: float
    nu0: float
    lambda0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu0", _as_vector(self.mu0))
        object.__setattr__(self, "lambda0", _as_matrix(self.lambda0))
        d = self.mu0.size
        if self.kappa0 <= 0:
            raise ValueError("kappa0 must be positive")
        if self.nu0 <= d - 1:
            raise ValueError("nu0 must exceed dim - 1")
        if self.lambda0.shape != (d, d):
            raise ValueError("lambda0 shape incompatible with mu0")
        if not np.allclose(self.lambda0, self.lambda0.T):
            raise ValueError("lambda0 must be symmetric")
        if np.linalg.eigvalsh(self.lambda0)[0] <= 0:
            raise ValueError("lambda0 must be positive definite")

    @property
    def dim(self) -> int:
        return self.mu0.size


def mvn_logpdf(x, cluster: GaussianCluster) -> float:
    """log N(x; cluster.mean, cluster.cov).

    Raises DegenerateDensityError for a singular covariance; callers that
    carry point-mass atoms must branch before calling.
    """
    x = _as_vector(x)
    if x.size != cluster.dim:
        raise ValueError("dimension mismatch")
    if cluster.is_degenerate:
        raise DegenerateDensityError("degenerate density: zero covariance atom")
    val, ok = mvn_logpdf_core(x, cluster.mean, cluster.cov)
    if not ok:
        raise DegenerateDensityError("degenerate density: singular covariance")
    return float(val)


def sample_mvn(cluster: GaussianCluster, rng: RngStream) -> np.ndarray:
    """One draw from N(mean, cov); an exactly zero cov returns the mean."""
    if cluster.is_degenerate:
        return cluster.mean.copy()
    L = psd_factor(cluster.cov, 1e-14)
    return cluster.mean + L @ rng.standard_normal(cluster.dim)


def _wishart_bartlett(nu: float, scale_chol: np.ndarray, rng: RngStream) -> np.ndarray:
    """Draw W ~ Wishart(nu, S) via Bartlett, with S = scale_chol scale_chol^T."""
    d = scale_chol.shape[0]
    A = np.zeros((d, d))
    for i in range(d):
        A[i, i] = np.sqrt(rng.chisquare(nu - i))
        for j in range(i):
            A[i, j] = rng.standard_normal()
    LA = scale_chol @ A
    return LA @ LA.T


def _cluster_unchecked(mean: np.ndarray, cov: np.ndarray) -> GaussianCluster:
    """Build a cluster skipping validation (caller guarantees PSD symmetry)."""
    out = object.__new__(GaussianCluster)
    object.__setattr__(out, "mean", mean)
    object.__setattr__(out, "cov", cov)
    return out


def sample_niw(psi: NIWParams, rng: RngStream) -> GaussianCluster:
    """Draw (mu, Sigma) with Sigma^-1 ~ Wishart(nu0, lambda0^-1), mu | Sigma
    ~ N(mu0, Sigma / kappa0)."""
    d = psi.dim
    if d == 1:
        # scalar case: the Wishart collapses to a chi-square draw
        var = float(psi.lambda0[0, 0]) / rng.chisquare(psi.nu0)
        mu = psi.mu0[0] + np.sqrt(var / psi.kappa0) * rng.standard_normal()
        return _cluster_unchecked(np.array([mu]), np.array([[var]]))
    lam_inv = np.linalg.inv(psi.lambda0)
    scale_chol = np.linalg.cholesky(0.5 * (lam_inv + lam_inv.T))
    prec = _wishart_bartlett(psi.nu0, scale_chol, rng)
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    Lc = np.linalg.cholesky(cov)
    mu = psi.mu0 + (Lc @ rng.standard_normal(d)) / np.sqrt(psi.kappa0)
    return GaussianCluster(mean=mu, cov=cov)


def niw_logpdf(cluster: GaussianCluster, psi: NIWParams) -> float:
    """log NIW density of (mu, Sigma), via N(mu; mu0, Sigma/kappa0) and the
    inverse-Wishart density of Sigma with scale lambda0."""
    from scipy.stats import invwishart

    if cluster.is_degenerate:
        raise DegenerateDensityError("NIW density undefined at a point-mass atom")
    d = psi.dim
    lw = invwishart.logpdf(cluster.cov, df=psi.nu0, scale=psi.lambda0)
    gauss = GaussianCluster(mean=psi.mu0, cov=cluster.cov / psi.kappa0)
    return float(lw) + mvn_logpdf(cluster.mean, gauss)
