"""Independent brute-force oracles used to pin expected values in tests.

Everything here works on the dense joint Gaussian of the stacked vector
(x_0, ..., x_T, z_1, ..., z_T): O(T^3) and numerically naive on purpose,
so the fast recursive implementations are checked against straight-line
linear algebra.
"""

import numpy as np


def dense_joint(model, theta_seq):
    """Mean and covariance of the stacked (x_{0:T}, z_{1:T}) vector.

    Built as an affine map of independent standard normals via Cholesky
    factors of the noise covariances (all covariances must be PD).
    """
    T = len(theta_seq)
    n, p = model.n_x, model.n_z
    nv = model.n_v
    n_eps = n + T * (nv + p)
    nx_tot, nz_tot = (T + 1) * n, T * p
    A = np.zeros((nx_tot + nz_tot, n_eps))
    mean = np.zeros(nx_tot + nz_tot)

    mean[:n] = model.init_mean
    A[:n, :n] = np.linalg.cholesky(model.init_cov)
    col_v = n
    col_w = n + T * nv
    for t in range(1, T + 1):
        v, w = theta_seq[t - 1]
        F, G, H = model.F(t), model.G(t), model.H(t)
        rx = slice(t * n, (t + 1) * n)
        rx_prev = slice((t - 1) * n, t * n)
        mean[rx] = F @ mean[rx_prev] + model.control(t) + G @ v.mean
        A[rx] = F @ A[rx_prev]
        A[rx, col_v : col_v + nv] += G @ np.linalg.cholesky(v.cov)
        rz = slice(nx_tot + (t - 1) * p, nx_tot + t * p)
        mean[rz] = H @ mean[rx] + w.mean
        A[rz] = H @ A[rx]
        A[rz, col_w : col_w + p] += np.linalg.cholesky(w.cov)
        col_v += nv
        col_w += p
    return mean, A @ A.T


def _condition(mean, cov, obs_idx, obs_val):
    """Gaussian conditioning: distribution of the rest given the block."""
    all_idx = np.arange(mean.size)
    rest = np.setdiff1d(all_idx, obs_idx)
    Soo = cov[np.ix_(obs_idx, obs_idx)]
    Sro = cov[np.ix_(rest, obs_idx)]
    Srr = cov[np.ix_(rest, rest)]
    gain = Sro @ np.linalg.inv(Soo)
    cmean = mean[rest] + gain @ (obs_val - mean[obs_idx])
    ccov = Srr - gain @ Sro.T
    return rest, cmean, 0.5 * (ccov + ccov.T)


def oracle_smoother(model, theta_seq, observations):
    """Smoothed means/covs of x_{0:T} by dense conditioning on z_{1:T}."""
    T = len(theta_seq)
    n, p = model.n_x, model.n_z
    mean, cov = dense_joint(model, theta_seq)
    nx_tot = (T + 1) * n
    obs_idx = np.arange(nx_tot, nx_tot + T * p)
    z = np.concatenate([np.atleast_1d(np.asarray(o, dtype=float)) for o in observations])
    _, cmean, ccov = _condition(mean, cov, obs_idx, z)
    sms = cmean.reshape(T + 1, n)
    sPs = np.array([ccov[t * n : (t + 1) * n, t * n : (t + 1) * n] for t in range(T + 1)])
    return sms, sPs


def oracle_filter_at(model, theta_seq, observations, t):
    """Filtered (mean, cov) of x_t given z_{1:t} by dense conditioning."""
    T = len(theta_seq)
    n, p = model.n_x, model.n_z
    mean, cov = dense_joint(model, theta_seq)
    nx_tot = (T + 1) * n
    obs_idx = np.arange(nx_tot, nx_tot + t * p)
    z = np.concatenate(
        [np.atleast_1d(np.asarray(o, dtype=float)) for o in observations[:t]]
    )
    keep = np.arange(t * n, (t + 1) * n)
    rest, cmean, ccov = _condition(mean, cov, obs_idx, z)
    pos = np.searchsorted(rest, keep)
    return cmean[pos], ccov[np.ix_(pos, pos)]


def oracle_loglik(model, theta_seq, observations):
    """log p(z_{1:T}) from the dense marginal of the observation block."""
    T = len(theta_seq)
    n, p = model.n_x, model.n_z
    mean, cov = dense_joint(model, theta_seq)
    nx_tot = (T + 1) * n
    idx = np.arange(nx_tot, nx_tot + T * p)
    z = np.concatenate([np.atleast_1d(np.asarray(o, dtype=float)) for o in observations])
    mz, Sz = mean[idx], cov[np.ix_(idx, idx)]
    sign, logdet = np.linalg.slogdet(Sz)
    assert sign > 0
    r = z - mz
    return -0.5 * (z.size * np.log(2 * np.pi) + logdet + r @ np.linalg.solve(Sz, r))


def oracle_backward_pair(model, theta_seq, observations, t, updated=False):
    """Quadratic form (M, vec) with log p(z_{t+1:T} | x_t = x) =
    const - x'Mx/2 + vec'x (updated=True uses z_{t:T} instead).

    Derived from the dense joint: the conditional of the future
    observation block given x_t is Gaussian with mean affine in x.
    """
    T = len(theta_seq)
    n, p = model.n_x, model.n_z
    mean, cov = dense_joint(model, theta_seq)
    nx_tot = (T + 1) * n
    start = t - 1 if updated else t
    if start >= T:
        return np.zeros((n, n)), np.zeros(n)
    zidx = np.arange(nx_tot + start * p, nx_tot + T * p)
    xidx = np.arange(t * n, (t + 1) * n)
    z = np.concatenate(
        [np.atleast_1d(np.asarray(o, dtype=float)) for o in observations[start:]]
    )
    Sxx = cov[np.ix_(xidx, xidx)]
    Szx = cov[np.ix_(zidx, xidx)]
    Szz = cov[np.ix_(zidx, zidx)]
    B = np.linalg.solve(Sxx.T, Szx.T).T
    c = mean[zidx] - B @ mean[xidx]
    R = Szz - B @ Szx.T
    R = 0.5 * (R + R.T)
    RinvB = np.linalg.solve(R, B)
    M = B.T @ RinvB
    vec = RinvB.T @ (z - c)
    return 0.5 * (M + M.T), vec


def random_model_and_thetas(rng, T, n_x, n_z, n_v=None):
    """A random well-conditioned model plus a PD cluster sequence."""
    from dpmkalman.gaussian import GaussianCluster
    from dpmkalman.statespace import LinearGaussianModel

    n_v = n_v or n_x
    def spd(d, scale=1.0):
        a = rng.standard_normal((d, d))
        return scale * (a @ a.T + d * np.eye(d))

    F = 0.9 * rng.standard_normal((n_x, n_x)) / np.sqrt(n_x)
    G = rng.standard_normal((n_x, n_v))
    H = rng.standard_normal((n_z, n_x))
    model = LinearGaussianModel(
        f_mat=F, g_mat=G, h_mat=H,
        init_mean=rng.standard_normal(n_x),
        init_cov=spd(n_x, 0.5),
    )
    thetas = [
        (
            GaussianCluster(rng.standard_normal(n_v), spd(n_v, 0.3)),
            GaussianCluster(rng.standard_normal(n_z), spd(n_z, 0.3)),
        )
        for _ in range(T)
    ]
    return model, thetas
