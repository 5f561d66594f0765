"""Exact Gaussian inference conditional on a cluster sequence.

Kalman filter/smoother, the backward information filter for
p(z_{t+1:T} | x_t), the per-t combined likelihood used by the MCMC
acceptance ratio, a mean-correction simulation smoother, and the
observability rank check for noise-pdf identifiability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .gaussian import GaussianCluster
from .rng import RngStream


class FilterError(RuntimeError):
    """Numerical failure in a filter or backward recursion step."""

    def __init__(self, message: str, t: int):
        super().__init__(f"{message} at t={t}")
        self.t = t


def _const_or_call(value, t):
    return value(t) if callable(value) else value


@dataclass
class LinearGaussianModel:
    """Time-indexed linear dynamic model.

    x_t = F_t x_{t-1} + C_t u_t + G_t v_t,   z_t = H_t x_t + w_t,
    with x_0 ~ N(init_mean, init_cov). Matrix fields accept either a
    constant array or a callable of t (t = 1..T).
    """

    f_mat: np.ndarray | Callable
    g_mat: np.ndarray | Callable
    h_mat: np.ndarray | Callable
    init_mean: np.ndarray
    init_cov: np.ndarray
    c_mat: np.ndarray | Callable | None = None
    input: np.ndarray | Callable | None = None
    # callable fields that do not actually depend on t: lets batch passes
    # evaluate the matrices once instead of per time step
    stationary: bool = False

    def __post_init__(self):
        self.init_mean = np.atleast_1d(np.asarray(self.init_mean, dtype=float))
        self.init_cov = np.atleast_2d(np.asarray(self.init_cov, dtype=float))
        F0 = np.atleast_2d(np.asarray(_const_or_call(self.f_mat, 1), dtype=float))
        G0 = np.atleast_2d(np.asarray(_const_or_call(self.g_mat, 1), dtype=float))
        H0 = np.atleast_2d(np.asarray(_const_or_call(self.h_mat, 1), dtype=float))
        self.n_x = F0.shape[0]
        self.n_v = G0.shape[1]
        self.n_z = H0.shape[0]
        if self.c_mat is not None:
            self.n_u = np.atleast_2d(
                np.asarray(_const_or_call(self.c_mat, 1), dtype=float)
            ).shape[1]
        else:
            self.n_u = 0
        if self.init_mean.size != self.n_x or self.init_cov.shape != (self.n_x, self.n_x):
            raise ValueError("initial moments inconsistent with state dimension")
        if np.linalg.eigvalsh(0.5 * (self.init_cov + self.init_cov.T))[0] < -1e-10 * max(
            np.trace(self.init_cov), 1.0
        ):
            raise ValueError("init_cov must be PSD")

    def F(self, t: int) -> np.ndarray:
        return np.atleast_2d(np.asarray(_const_or_call(self.f_mat, t), dtype=float))

    def G(self, t: int) -> np.ndarray:
        return np.atleast_2d(np.asarray(_const_or_call(self.g_mat, t), dtype=float))

    def H(self, t: int) -> np.ndarray:
        return np.atleast_2d(np.asarray(_const_or_call(self.h_mat, t), dtype=float))

    def control(self, t: int) -> np.ndarray:
        """C_t u_t, zero when the model carries no input."""
        if self.c_mat is None or self.input is None:
            return np.zeros(self.n_x)
        C = np.atleast_2d(np.asarray(_const_or_call(self.c_mat, t), dtype=float))
        u = np.atleast_1d(np.asarray(_const_or_call(self.input, t), dtype=float))
        return C @ u


@dataclass
class KalmanBelief:
    """Filtered moments plus the prediction/innovation pair at one step."""

    mean: np.ndarray
    cov: np.ndarray
    pred_mean: np.ndarray | None = None
    pred_cov: np.ndarray | None = None
    innov_mean: np.ndarray | None = None
    innov_cov: np.ndarray | None = None
    loglik_increment: float = 0.0


@dataclass
class BackwardInfo:
    """Backward information pair at time t.

    info_mat/info_vec carry p(z_{t+1:T}|x_t) in information form (the pair
    the per-t combined likelihood consumes; zero at t = T). updated_mat and
    updated_vec include the time-t observation, i.e. p(z_{t:T}|x_t), which
    is the quantity the recursion initializes at t = T.
    """

    info_mat: np.ndarray
    info_vec: np.ndarray
    updated_mat: np.ndarray | None = None
    updated_vec: np.ndarray | None = None


def initial_belief(model: LinearGaussianModel) -> KalmanBelief:
    return KalmanBelief(mean=model.init_mean.copy(), cov=model.init_cov.copy())


def _theta_terms(model, t, theta):
    v, w = theta
    G = model.G(t)
    shift = model.control(t) + G @ v.mean
    GSvG = G @ v.cov @ G.T
    return shift, GSvG, w.mean, w.cov


def kalman_step(
    model: LinearGaussianModel,
    t: int,
    prior: KalmanBelief,
    theta: tuple[GaussianCluster, GaussianCluster],
    z,
) -> KalmanBelief:
    """Kalman predict/update at time t conditional on the cluster pair."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    shift, GSvG, mu_w, Sw = _theta_terms(model, t, theta)
    m, P, mp, Pp, zh, S, ll, ok = K.kalman_step_core(
        prior.mean, prior.cov, model.F(t), shift, GSvG, model.H(t), mu_w, Sw, z
    )
    if not ok:
        raise FilterError("singular innovation covariance", t)
    return KalmanBelief(
        mean=m, cov=P, pred_mean=mp, pred_cov=Pp, innov_mean=zh, innov_cov=S,
        loglik_increment=float(ll),
    )


def model_stacks(model, T):
    """Per-t model matrices stacked as (T+1, ...) arrays (slot 0 unused).

    Stationary models (constant fields, or the stationary flag set) are
    evaluated once at t = 1 and broadcast.
    """
    n, p, nv = model.n_x, model.n_z, model.n_v
    constant = model.stationary or not any(
        callable(f) for f in (model.f_mat, model.g_mat, model.h_mat,
                              model.c_mat, model.input)
    )
    F = np.zeros((T + 1, n, n))
    G = np.zeros((T + 1, n, nv))
    H = np.zeros((T + 1, p, n))
    control = np.zeros((T + 1, n))
    if constant:
        F[1:] = model.F(1)
        G[1:] = model.G(1)
        H[1:] = model.H(1)
        control[1:] = model.control(1)
    else:
        for t in range(1, T + 1):
            F[t] = model.F(t)
            G[t] = model.G(t)
            H[t] = model.H(t)
            control[t] = model.control(t)
    return F, G, H, control


def stack_theta(model_parts, theta_seq):
    """Cluster-dependent stacks (shift, GSvG, B, mu_w, Sw) for a theta path."""
    F, G, H, control = model_parts
    T = len(theta_seq)
    n, nv = G.shape[1], G.shape[2]
    p = H.shape[1]
    mu_v = np.zeros((T + 1, nv))
    Sv = np.zeros((T + 1, nv, nv))
    mu_w = np.zeros((T + 1, p))
    Sw = np.zeros((T + 1, p, p))
    for t in range(1, T + 1):
        v, w = theta_seq[t - 1]
        mu_v[t] = v.mean
        Sv[t] = v.cov
        mu_w[t] = w.mean
        Sw[t] = w.cov
    shift, GSvG, B = K.stack_theta_core(G, control, mu_v, Sv)
    return shift, GSvG, B, mu_w, Sw


def _stack_model(model, theta_seq, T):
    parts = model_stacks(model, T)
    shift, GSvG, B, mu_w, Sw = stack_theta(parts, theta_seq)
    F, _, H, _ = parts
    return F, shift, GSvG, B, H, mu_w, Sw


def _stack_obs(observations, T, n_z):
    zs = np.zeros((T + 1, n_z))
    for t in range(1, T + 1):
        zs[t] = np.atleast_1d(np.asarray(observations[t - 1], dtype=float))
    return zs


def kalman_filter(model, theta_seq, observations):
    """Full forward pass; returns stacked moments and the total loglik.

    theta_seq and observations are length-T sequences (index t-1 holds
    time t). Output arrays are indexed by t with slot 0 the prior.
    """
    T = len(observations)
    F, shift, GSvG, _, H, mu_w, Sw = _stack_model(model, theta_seq, T)
    zs = _stack_obs(observations, T, model.n_z)
    ms, Ps, mpreds, Ppreds, zhats, lls, bad = K.filter_pass(
        F, shift, GSvG, H, mu_w, Sw, zs, model.init_mean, model.init_cov
    )
    if bad:
        raise FilterError("singular innovation covariance", bad)
    return ms, Ps, mpreds, Ppreds, zhats, lls


def log_likelihood(model, theta_seq, observations) -> float:
    """Direct O(T) log p(z_{1:T} | theta_{1:T}) by prediction-error decomposition."""
    return float(np.sum(kalman_filter(model, theta_seq, observations)[5]))


def kalman_smoother(model, theta_seq, observations):
    """RTS smoothed moments (x̂_{t|T}, Σ_{t|T}) for t = 0..T."""
    T = len(observations)
    F = np.zeros((T + 1, model.n_x, model.n_x))
    for t in range(1, T + 1):
        F[t] = model.F(t)
    ms, Ps, mpreds, Ppreds, _, _ = kalman_filter(model, theta_seq, observations)
    return K.rts_pass(F, ms, Ps, mpreds, Ppreds)


def backward_info_recursion(model, theta_seq, observations) -> list[BackwardInfo]:
    """Backward information filter over t = 0..T.

    Entry t holds the pair for p(z_{t+1:T}|x_t) in info_mat/info_vec (zero
    at t = T) and the observation-updated pair p(z_{t:T}|x_t) for t >= 1.
    """
    T = len(observations)
    F, shift, _, B, H, mu_w, Sw = _stack_model(model, theta_seq, T)
    zs = _stack_obs(observations, T, model.n_z)
    Mpre, vpre, Mpost, vpost, bad = K.backward_pass(F, shift, B, H, mu_w, Sw, zs)
    if bad:
        raise FilterError("singular observation covariance", bad)
    return [
        BackwardInfo(
            info_mat=Mpre[t], info_vec=vpre[t],
            updated_mat=Mpost[t], updated_vec=vpost[t],
        )
        for t in range(T + 1)
    ]


def combined_loglik_at(
    model: LinearGaussianModel,
    t: int,
    forward_belief: KalmanBelief,
    backward: BackwardInfo,
    rel_tol: float = 1e-10,
) -> float:
    """log of p(z_t|θ_{1:t},z_{1:t-1}) ∫ p(z_{t+1:T}|x_t) p(x_t|z_{1:t}) dx_t,
    dropping per-t normalization constants independent of the time-t cluster."""
    return float(
        K.combined_loglik_core(
            forward_belief.loglik_increment,
            forward_belief.mean,
            forward_belief.cov,
            backward.info_mat,
            backward.info_vec,
            rel_tol,
        )
    )


def simulate(model, theta_seq, rng: RngStream, init_state=None):
    """Draw (x_{0:T}, z_{1:T}) from the model given the cluster sequence."""
    T = len(theta_seq)
    xs = np.zeros((T + 1, model.n_x))
    zs = np.zeros((T, model.n_z))
    if init_state is None:
        L0 = K.psd_factor(model.init_cov, 1e-14)
        xs[0] = model.init_mean + L0 @ rng.standard_normal(model.n_x)
    else:
        xs[0] = np.asarray(init_state, dtype=float)
    Fs, Gs, Hs, controls = model_stacks(model, T)
    ev = rng.standard_normal((T + 1, model.n_v))
    ew = rng.standard_normal((T + 1, model.n_z))
    for t in range(1, T + 1):
        v, w = theta_seq[t - 1]
        vt = v.mean + K.psd_factor(v.cov, 1e-14) @ ev[t]
        xs[t] = Fs[t] @ xs[t - 1] + controls[t] + Gs[t] @ vt
        wt = w.mean + K.psd_factor(w.cov, 1e-14) @ ew[t]
        zs[t - 1] = Hs[t] @ xs[t] + wt
    return xs, zs


def simulation_smoother(model, theta_seq, observations, rng: RngStream):
    """Exact draw from p(x_{0:T} | theta_{1:T}, z_{1:T}).

    Mean-correction scheme: simulate an unconditional path and pseudo
    observations, smooth both series, and shift the simulated path by the
    difference of the smoothed means. O(T).
    """
    T = len(observations)
    xs_plus, zs_plus = simulate(model, theta_seq, rng)
    sm_data, _ = kalman_smoother(model, theta_seq, observations)
    sm_plus, _ = kalman_smoother(model, theta_seq, list(zs_plus))
    return xs_plus + (sm_data - sm_plus)


def observability_rank(model: LinearGaussianModel, rel_tol: float = 1e-10):
    """Rank of the stacked observability matrix of the noise-augmented pair.

    Builds Ftil = blockdiag(F, I_nz) and Htil = (H I_nz), stacks
    Htil Ftil^k for k = 0..n_x+n_z-1 and returns (rank, full_rank_flag)
    using an SVD cutoff of rel_tol times the largest singular value.
    """
    F, H = model.F(1), model.H(1)
    n, p = model.n_x, model.n_z
    Ftil = np.zeros((n + p, n + p))
    Ftil[:n, :n] = F
    Ftil[n:, n:] = np.eye(p)
    Htil = np.hstack([H, np.eye(p)])
    blocks = []
    Fk = np.eye(n + p)
    for _ in range(n + p):
        blocks.append(Htil @ Fk)
        Fk = Fk @ Ftil
    Ob = np.vstack(blocks)
    sv = np.linalg.svd(Ob, compute_uv=False)
    rank = int(np.sum(sv > rel_tol * sv[0]))
    return rank, rank == n + p
