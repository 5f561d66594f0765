"""Change-point detection in a local linear trend with heavy-tailed noise.

The level/slope pair follows a random-walk-with-drift model; the state
noise is a spike-and-DPM mixture (no jump with high probability,
otherwise a jump of unknown distribution) and the observation noise is
a known two-component scale mixture (accurate reading vs outlier). The
posterior probability of a jump at each time is read off the non-spike
assignments of the state-noise cluster.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mcmc, rbpf
from . import statespace as ss
from .dpm import DpHyper
from .gaussian import GaussianCluster, NIWParams
from .rng import RngStream


@dataclass
class ChangePointModel:
    """Fixed mixtures and DP hyperparameters of the change-point model."""

    w_mixture: tuple[float, float, float] = (0.98, 1e-7, 1.0)  # (lam_w, var1, var2)
    jump_prob: float = 0.15                                    # lam_v
    dpm_hyper: DpHyper = field(
        default_factory=lambda: DpHyper(
            alpha=1.0,
            base=NIWParams(
                mu0=np.zeros(2),
                kappa0=1e6,
                nu0=4.0,
                lambda0=np.diag([30.0, 0.5]),
            ),
        )
    )
    spike_atom: GaussianCluster = field(
        default_factory=lambda: GaussianCluster(np.zeros(2), np.zeros((2, 2)))
    )

    def __post_init__(self):
        lam_w, var1, var2 = self.w_mixture
        if not 0.0 < lam_w < 1.0 or not 0.0 < self.jump_prob < 1.0:
            raise ValueError("mixture probabilities must lie in (0, 1)")
        if var1 <= 0 or var2 <= 0:
            raise ValueError("observation variances must be positive")
        if not self.spike_atom.is_degenerate:
            raise ValueError("spike atom must be an exact point mass")


def build_changepoint_statespace(
    init_mean=None, init_cov=None
) -> ss.LinearGaussianModel:
    """Local linear trend: x_t = (level, slope), z_t = level + w_t."""
    F = np.array([[1.0, 1.0], [0.0, 1.0]])
    if init_mean is None:
        init_mean = np.zeros(2)
    if init_cov is None:
        init_cov = np.diag([100.0, 1.0])
    return ss.LinearGaussianModel(
        f_mat=F,
        g_mat=F.copy(),
        h_mat=np.array([[1.0, 0.0]]),
        init_mean=init_mean,
        init_cov=init_cov,
    )


def make_sides(cp: ChangePointModel):
    """(state-noise side, observation-noise side) for one inference run."""
    v_side = mcmc.SpikeDpUrnSide(
        cp.dpm_hyper, cp.spike_atom, spike_prob=1.0 - cp.jump_prob
    )
    lam_w, var1, var2 = cp.w_mixture
    w_atoms = [
        GaussianCluster(np.zeros(1), np.array([[var1]])),
        GaussianCluster(np.zeros(1), np.array([[var2]])),
    ]
    w_side = mcmc.FiniteMixtureSide(w_atoms, (lam_w, 1.0 - lam_w))
    return v_side, w_side


@dataclass
class SynthChangePointConfig:
    T: int = 120
    jump_times: tuple[int, ...] = (8, 20, 110)
    jump_levels: tuple[float, ...] = (8.0, -6.0, 7.0)
    init_level: float = 100.0
    slope: float = 0.05
    w_mixture: tuple[float, float, float] = (0.98, 1e-7, 1.0)

    def __post_init__(self):
        if len(self.jump_times) != len(self.jump_levels):
            raise ValueError("one jump level per jump time")
        if any(not 1 <= t <= self.T for t in self.jump_times):
            raise ValueError("jump times must lie in 1..T")


def synth_changepoint_data(config: SynthChangePointConfig, rng: RngStream):
    """Synthetic level/slope series with known jumps and outlier readings.

    Returns (observations z_{1:T} as a (T, 1) array, true levels,
    jump time indices). Observation noise follows the two-component
    mixture; the state jumps are injected at the configured times.
    """
    lam_w, var1, var2 = config.w_mixture
    jumps = dict(zip(config.jump_times, config.jump_levels))
    level, slope = config.init_level, config.slope
    levels = np.zeros(config.T)
    z = np.zeros(config.T)
    for t in range(1, config.T + 1):
        level += slope
        if t in jumps:
            level += jumps[t]
        sd = np.sqrt(var1) if rng.uniform() < lam_w else np.sqrt(var2)
        levels[t - 1] = level
        z[t - 1] = level + sd * rng.standard_normal()
    return z[:, None], levels, np.array(config.jump_times)


def jump_posterior_mcmc(trace: mcmc.ChainTrace) -> np.ndarray:
    """Per-t jump probability: fraction of retained sweeps with a non-spike
    state-noise cluster at t."""
    inds = np.array([r.v_indicators for r in trace.records], dtype=float)
    return inds.mean(axis=0)


def run_changepoint_mcmc(
    observations,
    cp: ChangePointModel,
    n_iter: int,
    burn_in: int,
    seed: int,
    model: ss.LinearGaussianModel | None = None,
):
    """Batch sampler; returns (trace, per-t jump probability)."""
    model = model or build_changepoint_statespace(
        init_mean=np.array([float(np.asarray(observations[0]).reshape(-1)[0]), 0.0])
    )
    v_side, w_side = make_sides(cp)
    config = mcmc.ChainConfig(burn_in=burn_in, retained=n_iter - burn_in, seed=seed)
    trace = mcmc.run_chain(model, observations, v_side, w_side, config, RngStream(seed))
    return trace, jump_posterior_mcmc(trace)


def run_changepoint_rbpf(
    observations,
    cp: ChangePointModel,
    n_particles: int,
    lag: int,
    seed: int,
    model: ss.LinearGaussianModel | None = None,
    ess_threshold: float = 0.5,
):
    """Online filter with fixed-lag smoothing; returns (result dict,
    per-t jump probability = non-spike weight mass at the lag horizon)."""
    model = model or build_changepoint_statespace(
        init_mean=np.array([float(np.asarray(observations[0]).reshape(-1)[0]), 0.0])
    )
    v_side, w_side = make_sides(cp)
    config = rbpf.RbpfConfig(
        n_particles=n_particles, lag=lag, ess_threshold=ess_threshold
    )
    out = rbpf.run_rbpf(model, observations, v_side, w_side, config, RngStream(seed))
    return out, out["lag_indicator"].copy()


def detections(jump_prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """1-based time indices whose jump probability exceeds the threshold."""
    return np.flatnonzero(np.asarray(jump_prob) > threshold) + 1
