"""Blind deconvolution of a sparse (Bernoulli-Gaussian) spike train.

The observation is the unknown input convolved with an unknown FIR
filter plus Gaussian noise. The input amplitudes follow a spike-and-DPM
law: zero with some probability, otherwise drawn from an unknown pdf
modeled as a DP mixture of Gaussians. The shift-register state
x_t = (v_t, v_{t-1}, ..., v_{t-L}) makes the model linear-Gaussian
conditional on the per-t noise clusters, so the batch sampler cycles
the cluster sweep with exact conditional draws of the state path, the
filter coefficients, and (optionally) the noise variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln

from . import mcmc
from . import statespace as ss
from .dpm import AlphaPrior, DpHyper
from .gaussian import GaussianCluster, NIWParams, niw_logpdf
from .rng import RngStream


@dataclass
class DeconvModel:
    """Bundle of deconvolution unknowns, priors, and fixed settings."""

    h: np.ndarray                 # filter coefficients, length L
    sigma_w2: float               # observation noise variance
    lambda_prior: tuple[float, float]   # Beta(zeta, tau) on the event rate
    h_prior_cov: np.ndarray       # Sigma_h (h ~ N(0, sigma_w2 * Sigma_h))
    dpm_hyper: DpHyper            # DP over the nonzero amplitude pdf
    spike_atom: GaussianCluster = field(
        default_factory=lambda: GaussianCluster(np.zeros(1), np.zeros((1, 1)))
    )

    def __post_init__(self):
        self.h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if self.h.size < 1:
            raise ValueError("filter must have at least one coefficient")
        if self.sigma_w2 <= 0:
            raise ValueError("sigma_w2 must be positive")
        zeta, tau = self.lambda_prior
        if zeta <= 0 or tau <= 0:
            raise ValueError("Beta parameters must be positive")
        self.h_prior_cov = np.atleast_2d(np.asarray(self.h_prior_cov, dtype=float))
        if self.h_prior_cov.shape != (self.h.size, self.h.size):
            raise ValueError("h_prior_cov must be L x L")
        if not self.spike_atom.is_degenerate:
            raise ValueError("spike atom must be an exact point mass")

    @property
    def L(self) -> int:
        return self.h.size


def build_deconv_statespace(h) -> ss.LinearGaussianModel:
    """Shift-register model for x_t = (v_t, v_{t-1}, ..., v_{t-L}).

    The transition pushes each stored amplitude down one slot and the
    new amplitude enters through G = e_1; the observation row is (1, h).
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    L = h.size
    F = np.zeros((L + 1, L + 1))
    for j in range(L):
        F[j + 1, j] = 1.0
    G = np.zeros((L + 1, 1))
    G[0, 0] = 1.0
    H = np.concatenate(([1.0], h))[None, :]
    return ss.LinearGaussianModel(
        f_mat=F,
        g_mat=G,
        h_mat=H,
        init_mean=np.zeros(L + 1),
        init_cov=np.zeros((L + 1, L + 1)),
    )


def spike_urn_conditional(side: mcmc.SpikeDpUrnSide, exclude: int | None):
    """Event-rate-marginalized urn: (dpm_weight, spike_weight, inner urn)."""
    return side.conditional(exclude)


def sample_h_posterior(state_path, observations, sigma_w2, sigma_h, rng: RngStream):
    """Exact Gaussian draw of the filter given the amplitude path.

    With x_t = (v_t, lags), z_t = v_t + h·lags + w_t, the posterior is
    N(m, sigma_w2 * S) with S^-1 = Sigma_h^-1 + sum lags lags' and
    m = S sum lags (z_t - v_t).
    """
    xs = np.asarray(state_path, dtype=float)
    zs = np.asarray(observations, dtype=float).reshape(-1)
    T = zs.size
    lags = xs[1 : T + 1, 1:]
    resid = zs - xs[1 : T + 1, 0]
    L = lags.shape[1]
    prior_cov = sigma_h * np.eye(L) if np.ndim(sigma_h) == 0 else np.asarray(sigma_h)
    prec = np.linalg.inv(prior_cov) + lags.T @ lags
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    m = cov @ (lags.T @ resid)
    chol = np.linalg.cholesky(sigma_w2 * cov)
    return m + chol @ rng.standard_normal(m.size)


def sample_sigma_w2_posterior(state_path, observations, h, prior, rng: RngStream):
    """Inverse-Gamma draw of the noise variance given the state path.

    Posterior shape u + T/2, scale v + half the squared residual sum.
    """
    u, v = prior
    xs = np.asarray(state_path, dtype=float)
    zs = np.asarray(observations, dtype=float).reshape(-1)
    T = zs.size
    H = np.concatenate(([1.0], np.atleast_1d(h)))
    resid = zs - xs[1 : T + 1] @ H
    shape = u + T / 2.0
    scale = v + 0.5 * float(resid @ resid)
    return scale / rng.gamma(shape, 1.0)


def e_mse(v_true, v_hat) -> float:
    """Root mean squared amplitude error sqrt(mean (v_t - v̂_t)^2)."""
    v_true = np.asarray(v_true, dtype=float).reshape(-1)
    v_hat = np.asarray(v_hat, dtype=float).reshape(-1)
    return float(np.sqrt(np.mean((v_true - v_hat) ** 2)))


# ---------------------------------------------------------------------------
# benchmark configuration (generator and model variants)

GEN_T = 120
GEN_L = 3
GEN_H = np.array([-1.5, 0.5, -0.2])
GEN_LAMBDA = 0.4
GEN_SIGMA_W2 = 0.1
GEN_COMPONENTS = ((0.7, 2.0, 0.5), (0.3, -1.0, 0.1))  # (weight, mean, var)
BASE_PSI = NIWParams(
    mu0=np.zeros(1), kappa0=0.1, nu0=4.0, lambda0=np.array([[1.0]])
)
SIGMA_H = 100.0
ALPHA_PRIOR = AlphaPrior(eta=3.0, nu=3.0)
ZETA, TAU = 1.0, 1.0
SIGMA_W2_PRIOR = (2.0, 0.1)  # inverse-Gamma (u, v) for the M8 variant

ALPHA_FIXED = {"M4": 0.1, "M5": 1.0, "M6": 10.0, "M7": 100.0}
VARIANTS = ("M1", "M2", "M3", "M4", "M5", "M6", "M7", "M8")


def simulate_deconv_data(rng: RngStream, T: int = GEN_T):
    """Draw (v_{1:T}, z_{1:T}) from the benchmark generator."""
    weights = np.array([c[0] for c in GEN_COMPONENTS])
    v = np.zeros(T)
    for t in range(T):
        if rng.uniform() < GEN_LAMBDA:
            j = rng.choice(len(weights), p=weights)
            _, mu, var = GEN_COMPONENTS[j]
            v[t] = mu + np.sqrt(var) * rng.standard_normal()
    kernel = np.concatenate([[1.0], GEN_H])
    z = np.convolve(v, kernel)[:T]
    z += np.sqrt(GEN_SIGMA_W2) * rng.standard_normal(T)
    return v, z[:, None]


def _make_v_side(variant: str) -> tuple[object, mcmc.HyperParams]:
    """Per-variant amplitude-noise side and hyperparameter plan."""
    hyper_params = mcmc.HyperParams(alpha_prior=ALPHA_PRIOR)
    if variant in ("M1", "M8"):
        # Start the concentration at its prior mean.  A large start is
        # absorbing under the prior-proposal MH step: it seeds a
        # many-cluster partition whose conditional posterior over the
        # concentration sits far above anything the proposal can reach,
        # so the chain can never climb back down.
        side = mcmc.SpikeDpUrnSide(
            DpHyper(alpha=ALPHA_PRIOR.eta / ALPHA_PRIOR.nu, base=BASE_PSI),
            GaussianCluster(np.zeros(1), np.zeros((1, 1))),
            zeta=ZETA, tau=TAU,
        )
        hyper_params.flags.sample_alpha_v = True
    elif variant in ALPHA_FIXED:
        side = mcmc.SpikeDpUrnSide(
            DpHyper(alpha=ALPHA_FIXED[variant], base=BASE_PSI),
            GaussianCluster(np.zeros(1), np.zeros((1, 1))),
            zeta=ZETA, tau=TAU,
        )
    elif variant == "M2":
        atoms = [
            GaussianCluster(np.zeros(1), np.zeros((1, 1))),
            GaussianCluster(np.array([2.0]), np.array([[0.5]])),
            GaussianCluster(np.array([-1.0]), np.array([[0.1]])),
        ]
        probs = (1 - GEN_LAMBDA, 0.7 * GEN_LAMBDA, 0.3 * GEN_LAMBDA)
        side = mcmc.FiniteMixtureSide(atoms, probs, policy=mcmc.ENUMERATE)
    elif variant == "M3":
        atoms = [
            GaussianCluster(np.zeros(1), np.zeros((1, 1))),
            GaussianCluster(np.array([1.1]), np.array([[2.3]])),
        ]
        side = mcmc.FiniteMixtureSide(
            atoms, (1 - GEN_LAMBDA, GEN_LAMBDA), policy=mcmc.ENUMERATE
        )
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return side, hyper_params


def run_deconv_chain(
    observations,
    variant: str,
    n_iter: int,
    burn_in: int,
    seed: int,
    score_hook=None,
) -> mcmc.ChainTrace:
    """Batch sampler for one deconvolution variant on one data set.

    Each sweep: cluster update (spike/DP urn MH, or exact enumeration
    for the jump-linear variants), an exact state-path draw, the filter
    conditional, the noise-variance conditional (M8 only), then the DP
    concentration step where applicable. The observation matrix tracks
    the current filter through a holder closed over by the model.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    rng = RngStream(seed)
    holder = {"h": np.zeros(GEN_L), "sigma_w2": 1.0 if variant == "M8" else GEN_SIGMA_W2}

    base = build_deconv_statespace(holder["h"])
    model = ss.LinearGaussianModel(
        f_mat=base.f_mat,
        g_mat=base.g_mat,
        h_mat=lambda t: np.concatenate(([1.0], holder["h"]))[None, :],
        init_mean=base.init_mean,
        init_cov=base.init_cov,
        stationary=True,
    )
    v_side, hyper_params = _make_v_side(variant)
    w_side = mcmc.FixedSide(
        GaussianCluster(np.zeros(1), np.array([[holder["sigma_w2"]]]))
    )

    def per_iteration(i, v_s, w_s, rec):
        theta_seq = [(v_s.current(t), w_s.current(t)) for t in range(1, len(observations) + 1)]
        xs = ss.simulation_smoother(model, theta_seq, observations, rng)
        holder["h"] = sample_h_posterior(
            xs, observations, holder["sigma_w2"], SIGMA_H * np.eye(GEN_L), rng
        )
        if variant == "M8":
            holder["sigma_w2"] = sample_sigma_w2_posterior(
                xs, observations, holder["h"], SIGMA_W2_PRIOR, rng
            )
            w_s.cluster = GaussianCluster(
                np.zeros(1), np.array([[holder["sigma_w2"]]])
            )
        rec.extras["h"] = holder["h"].copy()
        rec.extras["sigma_w2"] = holder["sigma_w2"]
        if score_hook is not None:
            score_hook(i, model, v_s, w_s, holder)

    config = mcmc.ChainConfig(
        burn_in=burn_in,
        retained=n_iter - burn_in,
        seed=seed,
        hyper=hyper_params,
    )
    return mcmc.run_chain(
        model, observations, v_side, w_side, config, rng, per_iteration
    )


# Chain-initialization pilots: the deconvolution posterior is multimodal
# (a shrunk-filter mode with extra alternating-sign impulses sits within a
# few nats of the dominant mode and can capture a chain for the whole
# budget).  Before committing the full budget we run a few short chains
# from different initial draws and keep the one whose own joint log
# density settles highest.  This uses only the observed data and the
# model's own score, never the simulation truth.
PILOT_VARIANTS = frozenset({"M1", "M4", "M5", "M6", "M7", "M8"})
PILOT_CANDIDATES = 4
PILOT_SWEEPS = 500
PILOT_WINDOW_START = 400
PILOT_EVERY = 10


def joint_log_score(model, observations, v_side, w_side, holder, variant):
    """Unnormalized joint log density of data, clusters, and parameters.

    Covers the marginal observation likelihood, the Beta-marginalized
    event-rate term, the urn partition probability, the base-measure
    density of each amplitude atom, and the priors on the filter, the
    concentration (when sampled), and the noise variance (when sampled).
    """
    T = len(observations)
    theta_seq = [(v_side.current(t), w_side.current(t)) for t in range(1, T + 1)]
    ll = ss.log_likelihood(model, theta_seq, observations)
    n1 = v_side.path_length
    n0 = T - n1
    score = ll + betaln(ZETA + n1, TAU + n0) - betaln(ZETA, TAU)
    alpha = v_side.hyper.alpha
    counts = list(v_side.registry.counts.values())
    score += (
        len(counts) * np.log(alpha)
        + sum(gammaln(c) for c in counts)
        + gammaln(alpha)
        - gammaln(alpha + max(n1, 1))
    )
    score += sum(
        niw_logpdf(a, v_side.hyper.base) for a in v_side.registry.atoms.values()
    )
    h = holder["h"]
    var_h = holder["sigma_w2"] * SIGMA_H
    score += -0.5 * (h.size * np.log(2 * np.pi * var_h) + float(h @ h) / var_h)
    if variant in ("M1", "M8"):
        score += ALPHA_PRIOR.logpdf(alpha)
    if variant == "M8":
        u, v = SIGMA_W2_PRIOR
        s = holder["sigma_w2"]
        score += u * np.log(v) - gammaln(u) - (u + 1) * np.log(s) - v / s
    return float(score)


def select_chain_seed(observations, variant: str, base_seed: int) -> int:
    """Pick the full-run chain seed by scoring short pilot chains.

    Each candidate pilot is deterministic given its seed, so the winning
    chain replays identically when re-run at full length.
    """
    best_seed, best_score = base_seed + 10_000, -np.inf
    for k in range(PILOT_CANDIDATES):
        chain_seed = base_seed + 10_000 * (k + 1)
        scores: list[float] = []

        def hook(i, model, v_s, w_s, holder):
            if i >= PILOT_WINDOW_START and i % PILOT_EVERY == 0:
                scores.append(
                    joint_log_score(model, observations, v_s, w_s, holder, variant)
                )

        run_deconv_chain(
            observations, variant, PILOT_SWEEPS, PILOT_SWEEPS - 1,
            chain_seed, score_hook=hook,
        )
        score = float(np.mean(scores))
        if score > best_score:
            best_seed, best_score = chain_seed, score
    return best_seed


def _one_run(args):
    variant, seed, n_iter, burn_in = args
    rng = RngStream(seed)
    v_true, z = simulate_deconv_data(rng)
    if variant in PILOT_VARIANTS and n_iter > PILOT_SWEEPS:
        chain_seed = select_chain_seed(z, variant, seed)
    else:
        chain_seed = seed + 10_000
    trace = run_deconv_chain(z, variant, n_iter, burn_in, chain_seed)
    v_hat = trace.mmse_state[1:, 0]
    return e_mse(v_true, v_hat), trace

def benchmark_single(variant, seed, n_iter, burn_in):
    """One (variant, seed) benchmark cell; returns (e_MSE, trace)."""
    return _one_run((variant, seed, n_iter, burn_in))


def run_deconv_benchmark(
    variants,
    seeds,
    n_iter: int = 2500,
    burn_in: int = 1875,
    n_workers: int = 1,
    keep_traces: bool = False,
):
    """Cross-variant error table: per-variant mean and std of e_MSE.

    Every variant sees the same data per seed (the generator stream only
    depends on the seed). Seeds shard across a process pool when
    n_workers > 1. Returns {variant: {"mean", "std", "errors", "traces"?}}.
    """
    results: dict[str, dict] = {}
    jobs = [(v, s, n_iter, burn_in) for v in variants for s in seeds]
    if n_workers > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=n_workers) as pool:
            outs = list(pool.map(_one_run, jobs))
    else:
        outs = [_one_run(j) for j in jobs]
    for (variant, seed, _, _), (err, trace) in zip(jobs, outs):
        slot = results.setdefault(variant, {"errors": [], "traces": []})
        slot["errors"].append(err)
        if keep_traces:
            slot["traces"].append(trace)
    for variant, slot in results.items():
        errs = np.array(slot["errors"])
        slot["mean"] = float(errs.mean())
        slot["std"] = float(errs.std(ddof=1)) if errs.size > 1 else 0.0
        if not keep_traces:
            del slot["traces"]
    return results
