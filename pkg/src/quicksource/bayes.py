"""Log-space posterior over candidate sources and the threshold stopping rule.

The posterior after t rounds factorizes through per-candidate weights
``X_u(t)``: ``log X_u`` accumulates the log-likelihood ratios of the
signals inside ``N_u(s)`` for every round s <= t, and the normalizer
``Y(t) = sum_u X_u(t)`` is a logsumexp away.  Working in log space is not
optional: the weights themselves scale like beta**f(t).

``bayes_estimate`` returns the candidate minimizing the posterior-expected
distance to the source, computed exactly.  Rather than the naive O(n^2)
pairwise-distance sweep, both graph families admit an exact structured
evaluation (coordinate-separable prefix sums on lattices; ancestor-prefix
mass aggregation on trees); the brute-force sweep survives as a test
oracle.  Ties break to canonical vertex order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .cascade import CascadeGeometry, CascadeTrace, Observations, geometry_for, observe
from .channels import Channel, constants
from .errors import HorizonExhaustedError
from .graphs import (
    CandidateSet,
    GraphKind,
    Lattice,
    Vertex,
    growth_tables,
    pair_overlap_sum,
)
from .rng import counter_uniforms, derive_seed


@dataclass(frozen=True)
class Posterior:
    """Unnormalized per-candidate log weights log X_u(t); t = -1 is the
    uniform prior (all zeros)."""

    candidate_set: CandidateSet
    log_x: np.ndarray
    t: int

    def log_probabilities(self) -> np.ndarray:
        return self.log_x - logsumexp(self.log_x)

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probabilities())

    def log_normalizer(self) -> float:
        """log Y(t) relative to the uniform prior weights."""
        return float(logsumexp(self.log_x))


def initial_posterior(cs: CandidateSet) -> Posterior:
    return Posterior(candidate_set=cs, log_x=np.zeros(cs.n), t=-1)


def update(posterior: Posterior, obs: Observations) -> Posterior:
    """Fold one round of observations into the posterior.

    Adds ``sum_{w in N_u(t)} log dQ1/dQ0(y_w(t))`` to every candidate's log
    weight; the observation region covers every candidate ball by
    construction, and factors outside it cancel across hypotheses.
    """
    region = obs.region
    if region.candidate_set != posterior.candidate_set:
        raise ValueError("observations were generated for a different candidate set")
    if region.t != posterior.t + 1:
        raise ValueError(f"posterior at t={posterior.t} requires observations at t={posterior.t + 1}, got t={region.t}")
    llr = obs.channel.log_lr(obs.values)
    return Posterior(
        candidate_set=posterior.candidate_set,
        log_x=posterior.log_x + region.candidate_ball_sums(llr),
        t=region.t,
    )


# ---------------------------------------------------------------------------
# Exact posterior-expected distances
# ---------------------------------------------------------------------------


@lru_cache(maxsize=128)
def _lattice_coords(cs: CandidateSet) -> np.ndarray:
    coords = np.asarray(cs.vertices, dtype=np.int64).reshape(cs.n, cs.kind.ell)
    coords.setflags(write=False)
    return coords


@lru_cache(maxsize=128)
def _tree_prefix_groups(cs: CandidateSet):
    """Per-depth prefix group ids for ancestor-mass aggregation."""
    depths = np.array([len(v) for v in cs.vertices], dtype=np.int64)
    max_depth = int(depths.max(initial=0))
    levels = []
    for j in range(1, max_depth + 1):
        groups: dict[tuple, int] = {}
        gid = np.full(cs.n, -1, dtype=np.int64)
        for i, v in enumerate(cs.vertices):
            if len(v) >= j:
                gid[i] = groups.setdefault(v[:j], len(groups))
        levels.append((gid, len(groups)))
    return depths, levels


def expected_distances(cs: CandidateSet, weights: np.ndarray) -> np.ndarray:
    """sum_w weights[w] * d(u, w) for every candidate u, exactly.

    Linear in ``weights`` (no normalization assumed), so it doubles as the
    all-candidates geodesic-sum evaluator with unit weights.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (cs.n,):
        raise ValueError("weights must have one entry per candidate")
    if isinstance(cs.kind, Lattice):
        return _expected_distances_lattice(cs, weights)
    return _expected_distances_tree(cs, weights)


def _expected_distances_lattice(cs: CandidateSet, w: np.ndarray) -> np.ndarray:
    # d is L1, so the sum separates per coordinate into prefix sums over
    # the occupied integer range.
    coords = _lattice_coords(cs)
    total_w = w.sum()
    out = np.zeros(cs.n)
    for i in range(cs.kind.ell):
        x = coords[:, i]
        lo = int(x.min())
        idx = (x - lo).astype(np.int64)
        span = int(x.max()) - lo + 1
        mass = np.bincount(idx, weights=w, minlength=span)
        xw = np.bincount(idx, weights=w * x, minlength=span)
        cum_mass = np.cumsum(mass)  # P(X <= c)
        cum_xw = np.cumsum(xw)  # E[X ; X <= c]
        total_xw = cum_xw[-1]
        c = x.astype(np.float64)
        out += 2.0 * (c * cum_mass[idx] - cum_xw[idx]) + total_xw - c * total_w
    return out


def _expected_distances_tree(cs: CandidateSet, w: np.ndarray) -> np.ndarray:
    # d(u, w) = depth(u) + depth(w) - 2 * lcp(u, w); the lcp term aggregates
    # as per-level prefix-group masses.
    depths, levels = _tree_prefix_groups(cs)
    depth_mass = float((w * depths).sum())
    total_w = w.sum()
    anc = np.zeros(cs.n)
    for gid, ngroups in levels:
        valid = gid >= 0
        if not ngroups:
            continue
        mass = np.bincount(gid[valid], weights=w[valid], minlength=ngroups)
        anc[valid] += mass[gid[valid]]
    return depths * total_w + depth_mass - 2.0 * anc


def uniform_prior_error(cs: CandidateSet) -> float:
    """Exact pre-data estimation error min_u (1/n) sum_w d(u, w)."""
    sums = expected_distances(cs, np.ones(cs.n))
    return float(sums.min()) / cs.n


def bayes_estimate(posterior: Posterior) -> tuple[Vertex, float]:
    """Candidate minimizing the posterior-expected distance, with the
    attained conditional error.  First canonical index wins ties."""
    cs = posterior.candidate_set
    vals = expected_distances(cs, posterior.probabilities())
    i = int(np.argmin(vals))
    return cs.vertices[i], float(vals[i])


# ---------------------------------------------------------------------------
# Sequential runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BayesRunResult:
    stop_time: int
    estimate: Vertex
    error_trajectory: tuple[float, ...]
    distance_to_truth: int

    @property
    def objective(self) -> float:
        """Realized Bayesian cost: distance of the final estimate plus runtime."""
        return self.distance_to_truth + self.stop_time


def run_bayes(
    trace: CascadeTrace,
    cs: CandidateSet,
    threshold: float = 1.0,
    geometry: CascadeGeometry | None = None,
) -> BayesRunResult:
    """Observe / update / estimate until the conditional error drops to the
    threshold (the paper's unit-threshold rule by default)."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    geo = geometry or geometry_for(cs)
    posterior = initial_posterior(cs)
    trajectory: list[float] = []
    for t in range(trace.horizon + 1):
        posterior = update(posterior, observe(trace, geo.region(t)))
        estimate, err = bayes_estimate(posterior)
        trajectory.append(err)
        if err <= threshold:
            return BayesRunResult(
                stop_time=t,
                estimate=estimate,
                error_trajectory=tuple(trajectory),
                distance_to_truth=cs.kind.distance(trace.source, estimate),
            )
    raise HorizonExhaustedError(
        f"conditional error still {trajectory[-1]:.4g} > {threshold} at horizon {trace.horizon}",
        trajectory=tuple(trajectory),
    )


def error_trajectory(
    trace: CascadeTrace,
    cs: CandidateSet,
    t_max: int,
    geometry: CascadeGeometry | None = None,
) -> np.ndarray:
    """Conditional-error curve with stopping disabled, for transition studies."""
    geo = geometry or geometry_for(cs)
    posterior = initial_posterior(cs)
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        posterior = update(posterior, observe(trace, geo.region(t)))
        _, out[t] = bayes_estimate(posterior)
    return out


def posterior_normalizer_trajectory(
    trace: CascadeTrace,
    cs: CandidateSet,
    t_max: int,
    geometry: CascadeGeometry | None = None,
) -> np.ndarray:
    """Y(t) = sum_u X_u(t) for t = 0..t_max (concentration studies)."""
    geo = geometry or geometry_for(cs)
    posterior = initial_posterior(cs)
    out = np.empty(t_max + 1)
    for t in range(t_max + 1):
        posterior = update(posterior, observe(trace, geo.region(t)))
        out[t] = math.exp(posterior.log_normalizer())
    return out


# ---------------------------------------------------------------------------
# Posterior-weight moment check (test-suite instrumentation)
# ---------------------------------------------------------------------------


class XuMomentCheck(NamedTuple):
    empirical_mean: float
    predicted: float
    std_error: float


def xu_moment_check(
    kind: GraphKind,
    channel: Channel,
    v: Vertex,
    u: Vertex,
    t: int,
    trials: int,
    seed: int = 0,
) -> XuMomentCheck:
    """Monte Carlo mean of X_u(t) under source v against its exact moment.

    The exact value is beta raised to the cumulative ball-overlap count of
    (v, u); the disjoint case predicts exactly 1.  ``std_error`` comes from
    the exact second moment lam1^overlap * lam0^(f - overlap), because the
    weights are heavy-tailed enough that the empirical variance is useless.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    c = constants(channel)
    overlap = pair_overlap_sum(kind, v, u, t)
    f_t = growth_tables(kind).f(t)
    predicted = float(c.beta) ** overlap
    second_moment = float(c.lam1) ** overlap * float(c.lam0) ** (f_t - overlap)
    variance = max(second_moment - predicted**2, 0.0)

    seeds = np.array([derive_seed(seed, i) for i in range(trials)], dtype=np.uint64)
    log_x = np.zeros(trials)
    for s in range(t + 1):
        ball = kind.enumerate_ball(u, s)
        keys = np.array([kind.vertex_key(w) for w in ball], dtype=np.uint64)
        affected = np.array([kind.distance(w, v) <= s for w in ball])
        uniforms = counter_uniforms(seeds[:, None], keys[None, :], s)
        draws = channel.draw_from_uniforms(uniforms, affected[None, :])
        log_x += channel.log_lr(draws).sum(axis=1)
    x = np.exp(log_x)
    return XuMomentCheck(
        empirical_mean=float(x.mean()),
        predicted=predicted,
        std_error=math.sqrt(variance / trials),
    )
