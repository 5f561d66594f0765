"""Dirichlet-process machinery.

Polya urn conditionals with leave-one-out bookkeeping, the stick-breaking
sampler (test/diagnostic use; inference goes through the urn), and the
Metropolis-Hastings updates for the concentration alpha (via log-space
Stirling number tables) and the NIW base hyperparameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussian import GaussianCluster, NIWParams, niw_logpdf, sample_niw
from .rng import RngStream


@dataclass(frozen=True)
class DpHyper:
    """Concentration and base measure of one noise-side DP."""

    alpha: float
    base: NIWParams

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class AlphaPrior:
    """Gamma(eta/2, nu/2) prior on a DP concentration (shape, rate halves)."""

    eta: float
    nu: float

    def __post_init__(self):
        if self.eta <= 0 or self.nu <= 0:
            raise ValueError("eta and nu must be positive")

    def sample(self, rng: RngStream) -> float:
        return float(rng.gamma(self.eta / 2.0, 2.0 / self.nu))

    def logpdf(self, alpha: float) -> float:
        from scipy.stats import gamma as gamma_dist

        return float(gamma_dist.logpdf(alpha, a=self.eta / 2.0, scale=2.0 / self.nu))


class ClusterRegistry:
    """Assignments of indices to shared cluster atoms, with occupancy counts.

    Atom ids are never reused within a registry's lifetime; emptied atoms
    are dropped. counts always reconcile with assignments.
    """

    def __init__(self):
        self.assignments: dict[int, int] = {}
        self.atoms: dict[int, GaussianCluster] = {}
        self.counts: dict[int, int] = {}
        self.total = 0          # logical number of assigned indices
        self.forgotten = 0      # indices whose per-index record was dropped
        self._next_id = 0

    def __len__(self) -> int:
        # logical size: includes forgotten indices, whose occupancy still
        # weighs in the urn (streaming filters drop old per-index records
        # to keep memory and copy cost bounded)
        return self.total

    @property
    def n_clusters(self) -> int:
        return len(self.atoms)

    def cluster_of(self, index: int) -> GaussianCluster:
        return self.atoms[self.assignments[index]]

    def add_atom(self, cluster: GaussianCluster) -> int:
        cid = self._next_id
        self._next_id += 1
        self.atoms[cid] = cluster
        self.counts[cid] = 0
        return cid

    def assign(self, index: int, cid: int):
        self.remove(index)
        self.assignments[index] = cid
        self.counts[cid] += 1
        self.total += 1

    def assign_new(self, index: int, cluster: GaussianCluster):
        self.assign(index, self.add_atom(cluster))

    def assign_existing_value(self, index: int, cluster: GaussianCluster):
        """Assign to the atom holding this exact object, creating it if absent."""
        for cid, atom in self.atoms.items():
            if atom is cluster:
                self.assign(index, cid)
                return
        self.assign_new(index, cluster)

    def remove(self, index: int):
        """Drop index's assignment (leave-one-out step); deletes emptied atoms."""
        cid = self.assignments.pop(index, None)
        if cid is None:
            return
        self.total -= 1
        self.counts[cid] -= 1
        if self.counts[cid] == 0:
            del self.counts[cid]
            del self.atoms[cid]

    def forget(self, index: int):
        """Drop index's per-index record but keep its occupancy count.

        Streaming (filtering) use only: the draw stays in the urn, the
        index just can't be reassigned or queried anymore. Keeps registry
        copies O(window + clusters) instead of O(t).
        """
        if self.assignments.pop(index, None) is not None:
            self.forgotten += 1

    def copy(self) -> "ClusterRegistry":
        out = ClusterRegistry()
        out.assignments = dict(self.assignments)
        out.atoms = dict(self.atoms)  # atoms are immutable, share them
        out.counts = dict(self.counts)
        out.total = self.total
        out.forgotten = self.forgotten
        out._next_id = self._next_id
        return out

    def check(self):
        assert set(self.counts) == set(self.atoms)
        assert sum(self.counts.values()) == self.total
        if self.forgotten:
            return  # per-index reconciliation impossible after forgetting
        counted: dict[int, int] = {}
        for cid in self.assignments.values():
            counted[cid] = counted.get(cid, 0) + 1
        assert counted == self.counts, "registry counts out of sync"


@dataclass
class UrnMixture:
    """Discrete conditional-prior mixture returned by polya_conditional.

    atom_ids/atom_weights cover the occupied clusters; fresh_weight is the
    probability of a new draw from the base measure.
    """

    atom_ids: list[int]
    atom_weights: np.ndarray
    fresh_weight: float
    registry: ClusterRegistry
    hyper: DpHyper

    def sample(self, rng: RngStream) -> tuple[int | None, GaussianCluster]:
        """Draw (atom_id, cluster); atom_id None flags a fresh base draw."""
        u = rng.uniform()
        acc = 0.0
        for cid, wgt in zip(self.atom_ids, self.atom_weights):
            acc += wgt
            if u < acc:
                return cid, self.registry.atoms[cid]
        return None, sample_niw(self.hyper.base, rng)


def polya_conditional(
    registry: ClusterRegistry, exclude: int | None, hyper: DpHyper
) -> UrnMixture:
    """Leave-one-out Polya urn conditional p(theta_t | theta_{-t}, phi).

    Existing atoms weigh count/(alpha+n'), a fresh base draw alpha/(alpha+n'),
    where n' counts the remaining assignments. exclude=None keeps every
    assignment (the predictive urn used by the particle filter).
    """
    if exclude is not None and exclude in registry.assignments:
        work = registry.copy()
        work.remove(exclude)
    else:
        work = registry
    n = len(work)
    denom = hyper.alpha + n
    ids = list(work.counts.keys())
    weights = np.array([work.counts[c] for c in ids], dtype=float) / denom
    return UrnMixture(
        atom_ids=ids,
        atom_weights=weights,
        fresh_weight=hyper.alpha / denom,
        registry=work,
        hyper=hyper,
    )


def stick_breaking(hyper: DpHyper, truncation: int, rng: RngStream):
    """Truncated stick-breaking draw of (weights, atoms, residual mass)."""
    if truncation < 1:
        raise ValueError("truncation must be >= 1")
    betas = rng.beta(1.0, hyper.alpha, size=truncation)
    weights = np.empty(truncation)
    remaining = 1.0
    for j in range(truncation):
        weights[j] = betas[j] * remaining
        remaining *= 1.0 - betas[j]
    atoms = [sample_niw(hyper.base, rng) for _ in range(truncation)]
    return weights, atoms, remaining


def default_truncation(alpha: float, n: int) -> int:
    return int(np.ceil(antoniak_expected_clusters(alpha, n))) + 50


def antoniak_expected_clusters(alpha: float, n: int) -> float:
    """Asymptotic expected number of occupied clusters, alpha*log(1 + n/alpha)."""
    if alpha <= 0 or n < 1:
        raise ValueError("need alpha > 0 and n >= 1")
    return float(alpha * np.log1p(n / alpha))


def exact_expected_clusters(alpha: float, n: int) -> float:
    """Exact urn expectation sum_{k=0}^{n-1} alpha/(alpha+k)."""
    k = np.arange(n)
    return float(np.sum(alpha / (alpha + k)))


_STIRLING_CACHE: dict[int, np.ndarray] = {}


def stirling_first_kind_log(n: int) -> np.ndarray:
    """log |s(n, k)| for k = 1..n (index k-1), built by the usual recurrence
    |s(n+1,k)| = |s(n,k-1)| + n |s(n,k)| carried in log space."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n in _STIRLING_CACHE:
        return _STIRLING_CACHE[n]
    row = np.array([0.0])  # n=1: |s(1,1)| = 1
    for m in range(1, n):
        nxt = np.full(m + 1, -np.inf)
        nxt[1:] = row  # |s(m, k-1)| contribution
        with np.errstate(divide="ignore"):
            nxt[:m] = np.logaddexp(nxt[:m], np.log(m) + row)
        row = nxt
    _STIRLING_CACHE[n] = row
    return row


def alpha_log_posterior(
    alpha: float, M: int, n: int, prior: AlphaPrior | None = None
) -> float:
    """Unnormalized log p(alpha | M, n): Stirling-table likelihood times prior.

    The likelihood is alpha^M s(n,M) / sum_k s(n,k) alpha^k with the
    denominator folded by log-sum-exp over the cached Stirling row.
    """
    if not (1 <= M <= n):
        raise ValueError("need 1 <= M <= n")
    if alpha <= 0:
        return -np.inf
    row = stirling_first_kind_log(n)
    k = np.arange(1, n + 1)
    terms = row + k * np.log(alpha)
    tmax = terms.max()
    log_denom = tmax + np.log(np.sum(np.exp(terms - tmax)))
    out = row[M - 1] + M * np.log(alpha) - log_denom
    if prior is not None:
        out += prior.logpdf(alpha)
    return float(out)


def sample_alpha_mh(
    current: float, M: int, n: int, prior: AlphaPrior, rng: RngStream
) -> float:
    """One MH transition targeting p(alpha|M,n), proposing from the prior.

    The prior proposal cancels the prior factor, leaving the Stirling
    likelihood ratio.
    """
    proposal = prior.sample(rng)
    log_ratio = alpha_log_posterior(proposal, M, n) - alpha_log_posterior(
        current, M, n
    )
    if np.log(rng.uniform()) < log_ratio:
        return proposal
    return current


@dataclass(frozen=True)
class NIWHyperPrior:
    """Factorized prior p0 over NIW hyperparameters, used as an MH proposal.

    mu0 ~ N(mu_loc, mu_scale^2 I), kappa0 log-normal(log kappa_loc, kappa_sdlog),
    nu0 - (d-1) ~ Exp(rate nu_rate), lambda0^-1 ~ Wishart(lam_df, lam_scale/lam_df).
    """

    mu_loc: np.ndarray
    mu_scale: float
    kappa_loc: float
    kappa_sdlog: float
    nu_rate: float
    lam_df: float
    lam_scale: np.ndarray

    def sample(self, rng: RngStream) -> NIWParams:
        from .gaussian import _wishart_bartlett

        mu_loc = np.atleast_1d(np.asarray(self.mu_loc, dtype=float))
        d = mu_loc.size
        mu0 = mu_loc + self.mu_scale * rng.standard_normal(d)
        kappa0 = float(self.kappa_loc * np.exp(self.kappa_sdlog * rng.standard_normal()))
        nu0 = (d - 1) + rng.gamma(1.0, 1.0 / self.nu_rate)
        scale = np.atleast_2d(np.asarray(self.lam_scale, dtype=float)) / self.lam_df
        prec = _wishart_bartlett(self.lam_df, np.linalg.cholesky(scale), rng)
        lam0 = np.linalg.inv(prec)
        return NIWParams(mu0=mu0, kappa0=kappa0, nu0=nu0, lambda0=0.5 * (lam0 + lam0.T))


def sample_psi_mh(
    current: NIWParams,
    distinct_atoms: list[GaussianCluster],
    hyper_prior,
    rng: RngStream,
) -> NIWParams:
    """One MH transition for the NIW base parameters, prior proposal.

    Acceptance ratio is the product of base densities of the distinct atoms
    under the candidate versus current parameters; the prior cancels.
    """
    proposal = hyper_prior.sample(rng)
    log_ratio = 0.0
    for atom in distinct_atoms:
        log_ratio += niw_logpdf(atom, proposal) - niw_logpdf(atom, current)
    if np.log(rng.uniform()) < log_ratio:
        return proposal
    return current
