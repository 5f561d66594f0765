import numpy as np
import pytest
from scipy.stats import invwishart, multivariate_normal

from dpmkalman.gaussian import (
    DegenerateDensityError,
    GaussianCluster,
    NIWParams,
    mvn_logpdf,
    niw_logpdf,
    sample_mvn,
    sample_niw,
)
from dpmkalman.rng import RngStream


def test_cluster_symmetrizes_and_validates():
    c = GaussianCluster(np.zeros(2), np.array([[1.0, 0.3], [0.3001, 1.0]]))
    assert np.allclose(c.cov, c.cov.T)
    with pytest.raises(ValueError):
        GaussianCluster(np.zeros(2), -np.eye(2))
    with pytest.raises(ValueError):
        GaussianCluster(np.zeros(2), np.eye(3))


def test_degenerate_flag():
    assert GaussianCluster(np.zeros(1), np.zeros((1, 1))).is_degenerate
    assert not GaussianCluster(np.zeros(1), np.eye(1)).is_degenerate


def test_mvn_logpdf_standard_normal_closed_form():
    c = GaussianCluster(np.zeros(1), np.eye(1))
    assert mvn_logpdf(np.zeros(1), c) == pytest.approx(
        -0.5 * np.log(2 * np.pi), abs=1e-12
    )


def test_mvn_logpdf_matches_scipy():
    rng = RngStream(11)
    for d in (1, 2, 4):
        a = rng.standard_normal((d, d))
        cov = a @ a.T + d * np.eye(d)
        mean = rng.standard_normal(d)
        x = rng.standard_normal(d)
        c = GaussianCluster(mean, cov)
        assert mvn_logpdf(x, c) == pytest.approx(
            multivariate_normal.logpdf(x, mean, cov), abs=1e-10
        )


def test_mvn_logpdf_raises_on_point_mass():
    c = GaussianCluster(np.zeros(2), np.zeros((2, 2)))
    with pytest.raises(DegenerateDensityError):
        mvn_logpdf(np.zeros(2), c)


def test_sample_mvn_point_mass_returns_mean():
    c = GaussianCluster(np.array([3.0, -1.0]), np.zeros((2, 2)))
    assert np.array_equal(sample_mvn(c, RngStream(0)), c.mean)


def test_sample_mvn_moments():
    rng = RngStream(5)
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    c = GaussianCluster(np.array([1.0, -2.0]), cov)
    draws = np.array([sample_mvn(c, rng) for _ in range(20000)])
    assert np.allclose(draws.mean(axis=0), c.mean, atol=0.05)
    assert np.allclose(np.cov(draws.T), cov, atol=0.08)


@pytest.mark.parametrize("d", [1, 2])
def test_sample_niw_moments(d):
    # E[Sigma^-1] = nu0 * lambda0^-1; mu centered at mu0
    rng = RngStream(7)
    psi = NIWParams(
        mu0=np.arange(1.0, d + 1.0), kappa0=2.0, nu0=d + 3.0,
        lambda0=np.eye(d) * 2.0,
    )
    n = 20000
    prec_sum = np.zeros((d, d))
    mu_sum = np.zeros(d)
    for _ in range(n):
        c = sample_niw(psi, rng)
        prec_sum += np.linalg.inv(c.cov)
        mu_sum += c.mean
    expected = psi.nu0 * np.linalg.inv(psi.lambda0)
    assert np.allclose(prec_sum / n, expected, rtol=0.05, atol=0.05)
    assert np.allclose(mu_sum / n, psi.mu0, atol=0.1)


def test_sample_niw_scalar_matches_invwishart_law():
    # 1-d fast path: Sigma ~ IW(nu0, lambda0); check mean lambda0/(nu0-2)
    rng = RngStream(13)
    psi = NIWParams(np.zeros(1), 1.0, 6.0, np.array([[3.0]]))
    vs = np.array([sample_niw(psi, rng).cov[0, 0] for _ in range(40000)])
    assert vs.mean() == pytest.approx(3.0 / (6.0 - 2.0), rel=0.05)


def test_niw_logpdf_matches_manual_factorization():
    rng = RngStream(3)
    psi = NIWParams(np.array([0.5, -0.5]), 2.0, 5.0, np.eye(2) * 1.5)
    c = sample_niw(psi, rng)
    manual = invwishart.logpdf(c.cov, df=psi.nu0, scale=psi.lambda0)
    manual += multivariate_normal.logpdf(c.mean, psi.mu0, c.cov / psi.kappa0)
    assert niw_logpdf(c, psi) == pytest.approx(manual, abs=1e-10)


def test_niw_params_validation():
    with pytest.raises(ValueError):
        NIWParams(np.zeros(2), 0.0, 5.0, np.eye(2))
    with pytest.raises(ValueError):
        NIWParams(np.zeros(2), 1.0, 0.5, np.eye(2))
    with pytest.raises(ValueError):
        NIWParams(np.zeros(2), 1.0, 5.0, -np.eye(2))
