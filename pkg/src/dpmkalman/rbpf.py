"""Online Rao-Blackwellized particle filtering over the cluster sequence.

Each particle carries a cluster path (through per-particle noise-side
objects), a Kalman belief conditional on that path, and a bounded window
of filter moments for fixed-lag smoothing. Clusters are proposed from
their conditional prior (the predictive urn), so the incremental weight
is the one-step predictive likelihood of the observation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .rng import RngStream
from .statespace import FilterError, LinearGaussianModel


class DegeneracyError(RuntimeError):
    """All particle weights vanished (every predictive likelihood underflowed)."""

    def __init__(self, t: int):
        super().__init__(f"particle weights degenerate at t={t}")
        self.t = t


@dataclass
class RbpfConfig:
    n_particles: int
    ess_threshold: float = 0.5  # resample when ESS < threshold * N
    lag: int = 0                # fixed-lag smoothing window (0 = filter only)

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if not 0.0 <= self.ess_threshold <= 1.0:
            raise ValueError("ess_threshold must lie in [0, 1]")
        if self.lag < 0:
            raise ValueError("lag must be nonnegative")


@dataclass
class ParticleEnsemble:
    """State of the filter after processing observations up to time t."""

    t: int
    means: np.ndarray    # (N, n_x) filtered means
    covs: np.ndarray     # (N, n_x, n_x)
    log_weights: np.ndarray
    v_sides: list
    w_sides: list
    # bounded history for fixed-lag smoothing, oldest entry first
    hist_means: list = field(default_factory=list)      # each (N, n_x)
    hist_covs: list = field(default_factory=list)
    hist_pred_means: list = field(default_factory=list)
    hist_pred_covs: list = field(default_factory=list)
    hist_indicators: list = field(default_factory=list)  # each (N,) bool

    @property
    def n_particles(self) -> int:
        return self.means.shape[0]

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()


def ess(weights: np.ndarray) -> float:
    """Effective sample size 1 / sum(w^2) of normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def rbpf_init(model: LinearGaussianModel, v_side, w_side, config: RbpfConfig):
    """N particles at the prior belief, each with its own noise-side copies."""
    N = config.n_particles
    return ParticleEnsemble(
        t=0,
        means=np.tile(model.init_mean, (N, 1)),
        covs=np.tile(model.init_cov, (N, 1, 1)),
        log_weights=np.zeros(N),
        v_sides=[v_side.copy() for _ in range(N)],
        w_sides=[w_side.copy() for _ in range(N)],
    )


def resample_systematic(ensemble: ParticleEnsemble, rng: RngStream):
    """Systematic resampling; resets weights and reorders all histories."""
    idx = K.systematic_resample_core(ensemble.weights, rng.uniform())
    ensemble.means = ensemble.means[idx].copy()
    ensemble.covs = ensemble.covs[idx].copy()
    ensemble.log_weights = np.zeros(ensemble.n_particles)
    ensemble.v_sides = [ensemble.v_sides[i].copy() for i in idx]
    ensemble.w_sides = [ensemble.w_sides[i].copy() for i in idx]
    for hist in (
        ensemble.hist_means,
        ensemble.hist_covs,
        ensemble.hist_pred_means,
        ensemble.hist_pred_covs,
        ensemble.hist_indicators,
    ):
        for k in range(len(hist)):
            hist[k] = hist[k][idx].copy()
    return idx


def rbpf_step(
    model: LinearGaussianModel,
    ensemble: ParticleEnsemble,
    z,
    config: RbpfConfig,
    rng: RngStream,
):
    """Advance the ensemble by one observation (propose, weight, resample).

    Mutates the ensemble in place and returns (ess_before_resample,
    resampled_flag).
    """
    t = ensemble.t + 1
    z = np.atleast_1d(np.asarray(z, dtype=float))
    N = ensemble.n_particles
    n, p = model.n_x, model.n_z
    G = model.G(t)
    control = model.control(t)

    shifts = np.zeros((N, n))
    GSvGs = np.zeros((N, n, n))
    mu_ws = np.zeros((N, p))
    Sws = np.zeros((N, p, p))
    indicators = np.zeros(N, dtype=bool)
    for i in range(N):
        v = ensemble.v_sides[i].draw_next(t, rng)
        w = ensemble.w_sides[i].draw_next(t, rng)
        shifts[i] = control + G @ v.mean
        GSvGs[i] = G @ v.cov @ G.T
        mu_ws[i] = w.mean
        Sws[i] = w.cov
        indicators[i] = not v.is_degenerate

    ms, Ps, mpreds, Ppreds, lls, ok = K.kalman_step_batch(
        ensemble.means, ensemble.covs, model.F(t), shifts, GSvGs,
        model.H(t), mu_ws, Sws, z,
    )
    if not ok and not np.any(np.isfinite(lls)):
        raise FilterError("singular innovation covariance in every particle", t)

    log_w = ensemble.log_weights + lls
    if not np.any(np.isfinite(log_w)):
        raise DegeneracyError(t)

    ensemble.t = t
    ensemble.means = ms
    ensemble.covs = Ps
    ensemble.log_weights = log_w

    if config.lag > 0:
        ensemble.hist_means.append(ms.copy())
        ensemble.hist_covs.append(Ps.copy())
        ensemble.hist_pred_means.append(mpreds)
        ensemble.hist_pred_covs.append(Ppreds)
        ensemble.hist_indicators.append(indicators)
        if len(ensemble.hist_means) > config.lag + 1:
            for hist in (
                ensemble.hist_means,
                ensemble.hist_covs,
                ensemble.hist_pred_means,
                ensemble.hist_pred_covs,
                ensemble.hist_indicators,
            ):
                hist.pop(0)

    # Keep per-particle history bounded: indices outside the smoothing
    # window never influence future proposals beyond their occupancy counts,
    # so drop their per-index records to make copy/step cost O(lag), not O(t).
    cutoff = t - config.lag
    if cutoff > 1:
        for i in range(N):
            ensemble.v_sides[i].forget_before(cutoff)
            ensemble.w_sides[i].forget_before(cutoff)

    ess_val = ess(ensemble.weights)
    resampled = ess_val < config.ess_threshold * N
    if resampled:
        resample_systematic(ensemble, rng)
    return ess_val, resampled


def estimate_state(ensemble: ParticleEnsemble):
    """Mixture MMSE mean and covariance of the filtered state.

    The covariance adds the between-particle spread of the conditional
    means to the weighted conditional covariances.
    """
    w = ensemble.weights
    mean = w @ ensemble.means
    diff = ensemble.means - mean
    cov = np.einsum("i,ijk->jk", w, ensemble.covs) + np.einsum(
        "i,ij,ik->jk", w, diff, diff
    )
    return mean, 0.5 * (cov + cov.T)


def fixed_lag_estimate(model: LinearGaussianModel, ensemble: ParticleEnsemble):
    """MMSE estimate of x_{t-L} given z_{1:t} from the stored window.

    Runs a per-particle backward smoothing sweep over the window and
    mixes the window-origin moments under the current weights. Returns
    (s, mean, cov, indicator_mass) where s = t - L is the smoothed time
    index and indicator_mass is the weight on particles whose time-s
    state-noise cluster is non-degenerate.
    """
    if not ensemble.hist_means:
        raise ValueError("no smoothing window stored; set config.lag > 0")
    ms = np.stack(ensemble.hist_means, axis=1)
    Ps = np.stack(ensemble.hist_covs, axis=1)
    mpreds = np.stack(ensemble.hist_pred_means, axis=1)
    Ppreds = np.stack(ensemble.hist_pred_covs, axis=1)
    s = ensemble.t - (ms.shape[1] - 1)
    sm0, sP0 = K.window_rts_batch(model.F(s), ms, Ps, mpreds, Ppreds)
    w = ensemble.weights
    mean = w @ sm0
    diff = sm0 - mean
    cov = np.einsum("i,ijk->jk", w, sP0) + np.einsum("i,ij,ik->jk", w, diff, diff)
    indicator_mass = float(w @ ensemble.hist_indicators[0])
    return s, mean, 0.5 * (cov + cov.T), indicator_mass


def run_rbpf(
    model: LinearGaussianModel,
    observations,
    v_side,
    w_side,
    config: RbpfConfig,
    rng: RngStream,
):
    """Filter a whole batch of observations; convenience wrapper.

    Returns a dict with filtered means/covs (t = 1..T), per-step ESS,
    resampling flags, and — when config.lag > 0 — fixed-lag smoothed
    means and the per-time indicator mass (completed with the final
    window so every t is covered).
    """
    T = len(observations)
    ensemble = rbpf_init(model, v_side, w_side, config)
    means = np.zeros((T, model.n_x))
    covs = np.zeros((T, model.n_x, model.n_x))
    ess_trace = np.zeros(T)
    resampled = np.zeros(T, dtype=bool)
    lag_means = np.zeros((T, model.n_x))
    lag_indicator = np.zeros(T)
    for k, z in enumerate(observations):
        ess_trace[k], resampled[k] = rbpf_step(model, ensemble, z, config, rng)
        means[k], covs[k] = estimate_state(ensemble)
        if config.lag > 0 and ensemble.t > config.lag:
            s, m, _, ind = fixed_lag_estimate(model, ensemble)
            lag_means[s - 1] = m
            lag_indicator[s - 1] = ind
    out = {
        "means": means,
        "covs": covs,
        "ess": ess_trace,
        "resampled": resampled,
        "ensemble": ensemble,
    }
    if config.lag > 0:
        # final window: smooth the trailing times under the last weights
        while len(ensemble.hist_means) > 1:
            s, m, _, ind = fixed_lag_estimate(model, ensemble)
            lag_means[s - 1] = m
            lag_indicator[s - 1] = ind
            for hist in (
                ensemble.hist_means,
                ensemble.hist_covs,
                ensemble.hist_pred_means,
                ensemble.hist_pred_covs,
                ensemble.hist_indicators,
            ):
                hist.pop(0)
        s, m, _, ind = fixed_lag_estimate(model, ensemble)
        lag_means[s - 1] = m
        lag_indicator[s - 1] = ind
        out["lag_means"] = lag_means
        out["lag_indicator"] = lag_indicator
    return out
