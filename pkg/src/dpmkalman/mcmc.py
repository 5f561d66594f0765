"""Batch MCMC for cluster sequences: backward cache + forward MH sweep.

One sweep recomputes the backward information pass under the previous
iteration's clusters, then walks forward proposing per-t clusters from
their conditional prior and accepting on the combined per-t likelihood
ratio, which matches the full-sequence likelihood ratio exactly.

The noise prior on each side (state noise v, observation noise w) is a
pluggable object: a Dirichlet-process urn, a spike-and-DP urn, a finite
mixture (jump-linear models; supports exact enumeration instead of MH),
or a fixed known cluster.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from . import statespace as ss
from .dpm import (
    AlphaPrior,
    ClusterRegistry,
    DpHyper,
    polya_conditional,
    sample_alpha_mh,
    sample_psi_mh,
)
from .gaussian import GaussianCluster
from .rng import RngStream

MH = "mh"
ENUMERATE = "enumerate"
FIXED = "fixed"


class DpUrnSide:
    """DP mixture noise side: leave-one-out Polya urn conditional prior."""

    policy = MH

    def __init__(self, hyper: DpHyper):
        self.hyper = hyper
        self.registry = ClusterRegistry()
        self._oldest = 1  # smallest index still carrying a per-index record

    def current(self, t: int) -> GaussianCluster:
        return self.registry.cluster_of(t)

    def initialize(self, T: int, rng: RngStream):
        """Sample theta_{1:T} sequentially from the urn prior."""
        for t in range(1, T + 1):
            self.draw_next(t, rng)

    def draw_next(self, t: int, rng: RngStream):
        """Predictive urn draw given the recorded path (no exclusion)."""
        cid, cluster = polya_conditional(self.registry, None, self.hyper).sample(rng)
        if cid is None:
            self.registry.assign_new(t, cluster)
        else:
            self.registry.assign(t, cid)
        return cluster

    def propose(self, t: int, rng: RngStream):
        """Draw from p(theta_t | theta_{-t}); returns (token, cluster)."""
        cid, cluster = polya_conditional(self.registry, t, self.hyper).sample(rng)
        return (cid, cluster), cluster

    def accept(self, t: int, token):
        cid, cluster = token
        if cid is None:
            self.registry.assign_new(t, cluster)
        else:
            self.registry.assign(t, cid)

    def candidates(self, t: int):
        return None

    # hyperparameter bookkeeping
    @property
    def cluster_count(self) -> int:
        return self.registry.n_clusters

    @property
    def path_length(self) -> int:
        return len(self.registry)

    def distinct_atoms(self) -> list[GaussianCluster]:
        return list(self.registry.atoms.values())

    def forget_before(self, cutoff: int):
        """Drop per-index records older than cutoff; urn counts persist.

        Streaming use (particle filtering): bounds the side's copy cost
        by the smoothing window plus the number of occupied clusters.
        """
        while self._oldest < cutoff:
            self.registry.forget(self._oldest)
            self._oldest += 1

    def copy(self):
        out = DpUrnSide(self.hyper)
        out.registry = self.registry.copy()
        out._oldest = self._oldest
        return out


class SpikeDpUrnSide:
    """Spike-and-DP noise side: point mass at a known atom plus a DP urn.

    The spike weight is either a fixed probability `spike_prob`, or, when
    (zeta, tau) Beta hyperparameters are given, marginalized over the
    mixing probability: the DP branch weighs a/(a+b) with
    a = zeta + #nonzero, b = tau + #zero among the other indices.
    """

    policy = MH

    def __init__(
        self,
        hyper: DpHyper,
        spike: GaussianCluster,
        zeta: float | None = None,
        tau: float | None = None,
        spike_prob: float | None = None,
    ):
        if (zeta is None) == (spike_prob is None):
            raise ValueError("give exactly one of (zeta, tau) or spike_prob")
        if zeta is not None and (zeta <= 0 or tau is None or tau <= 0):
            raise ValueError("zeta and tau must be positive")
        self.hyper = hyper
        self.spike = spike
        self.zeta = zeta
        self.tau = tau
        self.spike_prob = spike_prob
        self.registry = ClusterRegistry()  # nonzero assignments only
        self.spike_idx: set[int] = set()
        self._n_spike = 0  # logical spike count (survives forgetting)
        self._oldest = 1

    def indicator(self, t: int) -> bool:
        """r_t: True when index t sits on the DP side."""
        return t in self.registry.assignments

    def current(self, t: int) -> GaussianCluster:
        if t in self.spike_idx:
            return self.spike
        return self.registry.cluster_of(t)

    def _branch_weights(self, n1: int, n0: int) -> tuple[float, float]:
        if self.spike_prob is not None:
            return 1.0 - self.spike_prob, self.spike_prob
        a = self.zeta + n1
        b = self.tau + n0
        return a / (a + b), b / (a + b)

    def conditional(self, t: int | None):
        """(dpm_weight, spike_weight, urn over nonzero atoms) excluding t."""
        n1 = len(self.registry) - (1 if t in self.registry.assignments else 0)
        n0 = self._n_spike - (1 if t in self.spike_idx else 0)
        dpm_w, spike_w = self._branch_weights(n1, n0)
        urn = polya_conditional(self.registry, t, self.hyper)
        return dpm_w, spike_w, urn

    def initialize(self, T: int, rng: RngStream):
        # Draw the branch indicators i.i.d. at the prior-mean mixing
        # weight instead of via the sequential marginalized urn.  The
        # sequential draw reinforces itself, so the initial active
        # fraction is spread over (0, 1); extreme starts are then
        # self-sustaining under single-site moves (the marginalized
        # weight keeps favoring whichever branch dominates) and the
        # chain can lock into an overfitted all-active explanation.
        dpm_w, _ = self._branch_weights(0, 0)
        for t in range(1, T + 1):
            if rng.uniform() >= dpm_w:
                self.spike_idx.add(t)
                self._n_spike += 1
                continue
            urn = polya_conditional(self.registry, None, self.hyper)
            cid, cluster = urn.sample(rng)
            if cid is None:
                self.registry.assign_new(t, cluster)
            else:
                self.registry.assign(t, cid)

    def draw_next(self, t: int, rng: RngStream):
        dpm_w, spike_w, urn = self.conditional(None)
        if rng.uniform() < spike_w:
            self.spike_idx.add(t)
            self._n_spike += 1
            return self.spike
        cid, cluster = urn.sample(rng)
        if cid is None:
            self.registry.assign_new(t, cluster)
        else:
            self.registry.assign(t, cid)
        return cluster

    def propose(self, t: int, rng: RngStream):
        dpm_w, spike_w, urn = self.conditional(t)
        if rng.uniform() < spike_w:
            return ("spike", None), self.spike
        cid, cluster = urn.sample(rng)
        return (cid, cluster), cluster

    def accept(self, t: int, token):
        kind, cluster = token
        if kind == "spike":
            self.registry.remove(t)
            if t not in self.spike_idx:
                self.spike_idx.add(t)
                self._n_spike += 1
            return
        if t in self.spike_idx:
            self.spike_idx.discard(t)
            self._n_spike -= 1
        if kind is None:
            self.registry.assign_new(t, cluster)
        else:
            self.registry.assign(t, kind)

    def candidates(self, t: int):
        return None

    @property
    def cluster_count(self) -> int:
        return self.registry.n_clusters

    @property
    def path_length(self) -> int:
        """Number of DP-side draws (the urn size T')."""
        return len(self.registry)

    def distinct_atoms(self) -> list[GaussianCluster]:
        return list(self.registry.atoms.values())

    def forget_before(self, cutoff: int):
        """Drop per-index records older than cutoff; occupancy counts persist."""
        while self._oldest < cutoff:
            self.registry.forget(self._oldest)
            self.spike_idx.discard(self._oldest)
            self._oldest += 1

    def copy(self):
        out = SpikeDpUrnSide(
            self.hyper, self.spike, self.zeta, self.tau, self.spike_prob
        )
        out.registry = self.registry.copy()
        out.spike_idx = set(self.spike_idx)
        out._n_spike = self._n_spike
        out._oldest = self._oldest
        return out


class FiniteMixtureSide:
    """Known finite cluster alphabet with iid prior weights (jump-linear)."""

    def __init__(self, atoms: list[GaussianCluster], probs, policy: str = ENUMERATE):
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (len(atoms),) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probs must match atoms and sum to 1")
        self.atoms = list(atoms)
        self.probs = probs
        self.log_probs = np.log(np.maximum(probs, 1e-300))
        self.assignments: dict[int, int] = {}
        self.policy = policy
        self._oldest = 1

    def current(self, t: int) -> GaussianCluster:
        return self.atoms[self.assignments[t]]

    def indicator(self, t: int) -> bool:
        """Nonzero-cluster flag: True unless assigned to a point-mass atom."""
        return not self.atoms[self.assignments[t]].is_degenerate

    def initialize(self, T: int, rng: RngStream):
        for t in range(1, T + 1):
            self.draw_next(t, rng)

    def draw_next(self, t: int, rng: RngStream):
        j = rng.choice(len(self.atoms), p=self.probs)
        self.assignments[t] = j
        return self.atoms[j]

    def propose(self, t: int, rng: RngStream):
        j = rng.choice(len(self.atoms), p=self.probs)
        return j, self.atoms[j]

    def accept(self, t: int, token):
        self.assignments[t] = token

    def candidates(self, t: int):
        return [(self.log_probs[j], j, self.atoms[j]) for j in range(len(self.atoms))]

    @property
    def cluster_count(self) -> int:
        return len(set(self.assignments.values()))

    @property
    def path_length(self) -> int:
        return len(self.assignments)

    def distinct_atoms(self) -> list[GaussianCluster]:
        return [self.atoms[j] for j in sorted(set(self.assignments.values()))]

    def forget_before(self, cutoff: int):
        """Drop assignments older than cutoff (weights are iid, nothing to keep)."""
        while self._oldest < cutoff:
            self.assignments.pop(self._oldest, None)
            self._oldest += 1

    def copy(self):
        out = FiniteMixtureSide(self.atoms, self.probs, self.policy)
        out.assignments = dict(self.assignments)
        out._oldest = self._oldest
        return out


class FixedSide:
    """A single known cluster for every t (no update ever happens)."""

    policy = FIXED

    def __init__(self, cluster: GaussianCluster):
        self.cluster = cluster

    def current(self, t: int) -> GaussianCluster:
        return self.cluster

    def indicator(self, t: int) -> bool:
        return not self.cluster.is_degenerate

    def initialize(self, T: int, rng: RngStream):
        pass

    def draw_next(self, t: int, rng: RngStream):
        return self.cluster

    def forget_before(self, cutoff: int):
        pass

    def candidates(self, t: int):
        return None

    @property
    def cluster_count(self) -> int:
        return 1

    @property
    def path_length(self) -> int:
        return 0

    def distinct_atoms(self) -> list[GaussianCluster]:
        return [self.cluster]

    def copy(self):
        return FixedSide(self.cluster)


@dataclass
class SweepStats:
    proposed: int = 0
    accepted: int = 0

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


def gibbs_sweep(model, observations, v_side, w_side, rng: RngStream,
                joint: bool = True) -> SweepStats:
    """One backward-forward sweep over t = 1..T (Metropolis-within-Gibbs).

    MH-policy sides are proposed jointly (one acceptance ratio) when
    `joint` is set, otherwise one after the other; enumeration-policy
    sides are then refreshed by exact conditional sampling. Mutates the
    sides in place and returns acceptance statistics.
    """
    T = len(observations)
    theta_seq = [(v_side.current(t), w_side.current(t)) for t in range(1, T + 1)]
    back = ss.backward_info_recursion(model, theta_seq, observations)
    Fs, Gs, Hs, controls = ss.model_stacks(model, T)
    zs = ss._stack_obs(observations, T, model.n_z)
    stats = SweepStats()

    def step(mean, cov, t, v, w):
        """(filtered mean, cov, combined per-t log-likelihood) for a pair."""
        shift = controls[t] + Gs[t] @ v.mean
        GSvG = Gs[t] @ v.cov @ Gs[t].T
        m, P, _, _, _, _, ll, ok = K.kalman_step_core(
            mean, cov, Fs[t], shift, GSvG, Hs[t], w.mean, w.cov, zs[t]
        )
        if not ok:
            raise ss.FilterError("singular innovation covariance", t)
        cl = K.combined_loglik_core(ll, m, P, back[t].info_mat, back[t].info_vec, 1e-10)
        return m, P, cl

    mh_sides = [s for s in (v_side, w_side) if s.policy == MH]
    enum_sides = [s for s in (v_side, w_side) if s.policy == ENUMERATE]
    groups = [mh_sides] if (joint or len(mh_sides) < 2) else [[s] for s in mh_sides]
    mean, cov = model.init_mean, model.init_cov
    for t in range(1, T + 1):
        bel_t = None
        for group in groups:
            if not group:
                continue
            cur_v, cur_w = v_side.current(t), w_side.current(t)
            m_cur, P_cur, ll_cur = step(mean, cov, t, cur_v, cur_w)
            tokens = [(side, *side.propose(t, rng)) for side in group]
            prop_v, prop_w = cur_v, cur_w
            for side, _, cluster in tokens:
                if side is v_side:
                    prop_v = cluster
                else:
                    prop_w = cluster
            m_prop, P_prop, ll_prop = step(mean, cov, t, prop_v, prop_w)
            stats.proposed += 1
            if np.log(rng.uniform()) < ll_prop - ll_cur:
                stats.accepted += 1
                for side, token, _ in tokens:
                    side.accept(t, token)
                bel_t = (m_prop, P_prop)
            else:
                bel_t = (m_cur, P_cur)
        for side in enum_sides:
            cands = side.candidates(t)
            logw = np.empty(len(cands))
            bels = []
            for j, (lp, token, cluster) in enumerate(cands):
                pair = (
                    (cluster, w_side.current(t))
                    if side is v_side
                    else (v_side.current(t), cluster)
                )
                m_j, P_j, ll_j = step(mean, cov, t, *pair)
                bels.append((m_j, P_j))
                logw[j] = lp + ll_j
            logw -= logw.max()
            w = np.exp(logw)
            j = rng.choice(len(cands), p=w / w.sum())
            side.accept(t, cands[j][1])
            bel_t = bels[j]
        if bel_t is None:  # both sides fixed
            m_t, P_t, _ = step(mean, cov, t, v_side.current(t), w_side.current(t))
            bel_t = (m_t, P_t)
        mean, cov = bel_t
    return stats


@dataclass
class HyperFlags:
    """Which hyperparameters get refreshed each iteration."""

    sample_alpha_v: bool = False
    sample_alpha_w: bool = False
    sample_psi_v: bool = False
    sample_psi_w: bool = False


@dataclass
class HyperParams:
    """Hyperparameter state phi = {alpha^v, psi^v, alpha^w, psi^w}."""

    alpha_prior: AlphaPrior | None = None
    psi_prior_v: object | None = None
    psi_prior_w: object | None = None
    flags: HyperFlags = field(default_factory=HyperFlags)


def sample_hyperparameters(v_side, w_side, hyper: HyperParams, rng: RngStream):
    """Refresh the flagged components of phi in-place on the sides."""
    flags = hyper.flags
    for side, do_alpha, do_psi, psi_prior in (
        (v_side, flags.sample_alpha_v, flags.sample_psi_v, hyper.psi_prior_v),
        (w_side, flags.sample_alpha_w, flags.sample_psi_w, hyper.psi_prior_w),
    ):
        if not hasattr(side, "hyper"):
            continue
        alpha, base = side.hyper.alpha, side.hyper.base
        n = side.path_length
        M = side.cluster_count
        if do_alpha and n >= 1 and M >= 1:
            alpha = sample_alpha_mh(alpha, M, n, hyper.alpha_prior, rng)
        if do_psi:
            atoms = [a for a in side.distinct_atoms() if not a.is_degenerate]
            base = sample_psi_mh(base, atoms, psi_prior, rng)
        side.hyper = DpHyper(alpha=alpha, base=base)


@dataclass
class ChainConfig:
    burn_in: int
    retained: int
    seed: int
    joint_update: bool = True
    hyper: HyperParams = field(default_factory=HyperParams)
    store_theta: bool = True

    def __post_init__(self):
        if self.burn_in < 0 or self.retained < 1:
            raise ValueError("need burn_in >= 0 and retained >= 1")


@dataclass
class IterationRecord:
    """Per-retained-iteration summaries used by estimators and diagnostics."""

    alpha_v: float | None = None
    alpha_w: float | None = None
    v_atoms: list[tuple[np.ndarray, np.ndarray, int]] = field(default_factory=list)
    w_atoms: list[tuple[np.ndarray, np.ndarray, int]] = field(default_factory=list)
    v_path_length: int = 0
    v_indicators: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


@dataclass
class ChainTrace:
    burn_in: int
    retained: int
    smoothed_means: np.ndarray  # (retained, T+1, n_x)
    smoothed_covs: np.ndarray | None
    records: list[IterationRecord]
    acceptance: list[SweepStats]

    @property
    def mmse_state(self) -> np.ndarray:
        """x̂^MMSE_{t|T}: average of the retained smoothed means."""
        return self.smoothed_means.mean(axis=0)


def _atom_summary(side):
    out = []
    if hasattr(side, "registry"):
        for cid, atom in side.registry.atoms.items():
            out.append((atom.mean.copy(), atom.cov.copy(), side.registry.counts[cid]))
    else:
        for atom in side.distinct_atoms():
            out.append((atom.mean.copy(), atom.cov.copy(), 0))
    return out


def run_chain(
    model,
    observations,
    v_side,
    w_side,
    config: ChainConfig,
    rng: RngStream | None = None,
    per_iteration=None,
) -> ChainTrace:
    """Run the full chain: init from the prior, sweep, refresh phi, smooth.

    Retained iterations (burn_in+1 .. burn_in+retained) store the Kalman
    smoother means under the current clusters plus per-iteration summaries.
    `per_iteration(i, v_side, w_side, record)` is an optional hook for
    application-specific conditional draws (filters back into the record).
    """
    rng = rng or RngStream(config.seed)
    T = len(observations)
    rank, observable = ss.observability_rank(model)
    if not observable and hasattr(w_side, "hyper"):
        warnings.warn(
            f"augmented pair not fully observable (rank {rank} < "
            f"{model.n_x + model.n_z}); observation-noise pdf may be unidentifiable"
        )
    v_side.initialize(T, rng)
    w_side.initialize(T, rng)
    n_iter = config.burn_in + config.retained
    smoothed_means = np.zeros((config.retained, T + 1, model.n_x))
    smoothed_covs = np.zeros((config.retained, T + 1, model.n_x, model.n_x))
    records: list[IterationRecord] = []
    acceptance: list[SweepStats] = []
    for i in range(1, n_iter + 1):
        stats = gibbs_sweep(
            model, observations, v_side, w_side, rng, joint=config.joint_update
        )
        acceptance.append(stats)
        rec = IterationRecord()
        if per_iteration is not None:
            per_iteration(i, v_side, w_side, rec)
        sample_hyperparameters(v_side, w_side, config.hyper, rng)
        if i > config.burn_in:
            theta_seq = [
                (v_side.current(t), w_side.current(t)) for t in range(1, T + 1)
            ]
            sms, sPs = ss.kalman_smoother(model, theta_seq, observations)
            k = i - config.burn_in - 1
            smoothed_means[k] = sms
            smoothed_covs[k] = sPs
            if config.store_theta:
                rec.alpha_v = getattr(getattr(v_side, "hyper", None), "alpha", None)
                rec.alpha_w = getattr(getattr(w_side, "hyper", None), "alpha", None)
                rec.v_atoms = _atom_summary(v_side)
                rec.w_atoms = _atom_summary(w_side)
                rec.v_path_length = v_side.path_length
                if hasattr(v_side, "indicator"):
                    rec.v_indicators = np.array(
                        [v_side.indicator(t) for t in range(1, T + 1)], dtype=bool
                    )
            records.append(rec)
    return ChainTrace(
        burn_in=config.burn_in,
        retained=config.retained,
        smoothed_means=smoothed_means,
        smoothed_covs=smoothed_covs,
        records=records,
        acceptance=acceptance,
    )
