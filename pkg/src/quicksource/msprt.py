"""Multi-hypothesis SPRT for source estimation.

Hypothesis v stops at the first time every pairwise log-likelihood ratio
``Z_vu(t)`` clears its threshold ``log tau(v, u)``; the test outputs the
first hypothesis to stop.  Two threshold designs are provided: uniform
(``tau = n^2 / alpha``, the right design for trees) and K-level (a small
threshold for pairs within distance K, a large one otherwise, which is
what makes lattices work at the optimal rate), plus the generalized
per-vertex K-level constructor for irregular ball sizes.

``Z_vu(t)`` is the difference of the candidates' cumulative ball
log-likelihood sums: signals in ``N_v(s) ∩ N_u(s)`` contribute to both
sides and cancel, so the state keeps one scalar per candidate instead of
an O(n^2) matrix and every pairwise statistic is an exact difference
(``z_matrix`` materializes the matrix on demand for small n).  This is
also precisely why ``Z_vu = log pi_v - log pi_u`` against the posterior
module on the same trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .bayes import expected_distances
from .cascade import CascadeGeometry, CascadeTrace, Observations, geometry_for, observe
from .channels import Channel
from .errors import HorizonExhaustedError, PlanError
from .graphs import CandidateSet, GraphKind, Lattice, Vertex, make_candidate_set
from .rng import counter_uniforms, derive_seed


@dataclass(frozen=True)
class ThresholdPlan:
    """Pairwise stopping thresholds, kept in log space (raw tau values can
    exceed float range for small alpha).

    variant "uniform":  tau(v,u) = n^2 / alpha for all pairs (K = 0).
    variant "klevel":   tau = 2 K |N(K)| / alpha if 0 < d(v,u) <= K,
                        else 2 n^2 / alpha.
    variant "klevel-general": per-candidate close thresholds from supplied
    |N_v(K)| values (arbitrary-topology form; not CLI-wired).
    """

    variant: str
    n: int
    alpha: float
    K: int
    n_K: int | None
    log_tau_far: float
    log_tau_close: float | None
    close_taus: tuple[float, ...] | None
    feasibility_sum: float

    def close_tau_array(self) -> np.ndarray | None:
        if self.close_taus is not None:
            return np.asarray(self.close_taus)
        if self.log_tau_close is not None:
            return np.full(self.n, self.log_tau_close)
        return None


@lru_cache(maxsize=64)
def _close_structure(cs: CandidateSet, K: int):
    """Candidate-index adjacency within distance K: padded index/dist
    matrices, per-candidate counts, and membership sets."""
    n = cs.n
    if K <= 0:
        idx = np.empty((n, 0), dtype=np.int32)
        dist = np.empty((n, 0), dtype=np.int32)
        return idx, dist, np.zeros(n, dtype=np.int64), [frozenset()] * n
    rows = []
    for i, v in enumerate(cs.vertices):
        row = []
        for w in cs.kind.enumerate_ball(v, K):
            j = _candidate_pos(cs).get(w)
            if j is not None and j != i:
                row.append((j, cs.kind.distance(v, w)))
        rows.append(row)
    width = max((len(r) for r in rows), default=0)
    idx = np.full((n, width), -1, dtype=np.int32)
    dist = np.zeros((n, width), dtype=np.int32)
    for i, row in enumerate(rows):
        for c, (j, d) in enumerate(row):
            idx[i, c] = j
            dist[i, c] = d
    counts = np.array([len(r) for r in rows], dtype=np.int64)
    sets = [frozenset(j for j, _ in row) for row in rows]
    return idx, dist, counts, sets


@lru_cache(maxsize=128)
def _candidate_pos(cs: CandidateSet) -> dict:
    return {v: i for i, v in enumerate(cs.vertices)}


def _feasibility_sum(cs: CandidateSet, K: int, alpha: float, close_taus_inv: np.ndarray | None, far_tau_inv: float) -> float:
    """max_v sum_u d(v,u) / tau(v,u), with exact integer distance sums."""
    totals = expected_distances(cs, np.ones(cs.n))  # geodesic sums
    if K <= 0:
        return float(totals.max() * far_tau_inv)
    idx, dist, counts, _ = _close_structure(cs, K)
    close_sums = dist.sum(axis=1).astype(np.float64)
    per_v = close_sums * close_taus_inv + (totals - close_sums) * far_tau_inv
    return float(per_v.max())


def make_plan(
    kind: GraphKind,
    n: int,
    alpha: float,
    variant: str = "uniform",
    K: int | None = None,
    candidate_set: CandidateSet | None = None,
) -> ThresholdPlan:
    """Construct a threshold plan and verify its error-budget feasibility.

    For K-level plans on lattices the default is K = ceil((log n)^(1/ell));
    trees have no prescribed K, so it must be given explicitly.
    """
    if not (alpha > 0 and math.isfinite(alpha)):
        raise PlanError("alpha must be a positive finite real")
    if n < 1:
        raise PlanError("n must be >= 1")
    cs = candidate_set if candidate_set is not None else make_candidate_set(kind, kind.origin, n)
    if cs.n != n or cs.kind != kind:
        raise PlanError("candidate set does not match (kind, n)")

    if variant == "uniform":
        log_tau = 2.0 * math.log(n) - math.log(alpha)
        if not math.isfinite(log_tau):
            raise PlanError(f"uniform threshold log(n^2/alpha) not representable for alpha={alpha}")
        feas = _feasibility_sum(cs, 0, alpha, None, alpha / n**2)
        plan = ThresholdPlan(
            variant="uniform", n=n, alpha=alpha, K=0, n_K=None,
            log_tau_far=log_tau, log_tau_close=None, close_taus=None,
            feasibility_sum=feas,
        )
    elif variant == "klevel":
        if K is None:
            if not isinstance(kind, Lattice):
                raise PlanError("K-level plans on trees require an explicit K")
            K = max(1, math.ceil(math.log(n) ** (1.0 / kind.ell))) if n >= 2 else 1
        if K < 1:
            raise PlanError("K must be >= 1")
        n_K = kind.ball_size(K)
        log_close = math.log(2.0 * K * n_K) - math.log(alpha)
        log_far = math.log(2.0) + 2.0 * math.log(n) - math.log(alpha)
        if not (math.isfinite(log_close) and math.isfinite(log_far)):
            raise PlanError(f"K-level thresholds not representable for alpha={alpha}")
        inv_close = np.full(n, alpha / (2.0 * K * n_K))
        feas = _feasibility_sum(cs, K, alpha, inv_close, alpha / (2.0 * n**2))
        plan = ThresholdPlan(
            variant="klevel", n=n, alpha=alpha, K=K, n_K=n_K,
            log_tau_far=log_far, log_tau_close=log_close, close_taus=None,
            feasibility_sum=feas,
        )
    else:
        raise PlanError(f"unknown plan variant {variant!r}")
    if plan.feasibility_sum > alpha * (1 + 1e-9):
        raise PlanError(f"plan violates feasibility: {plan.feasibility_sum} > {alpha}")
    return plan


def make_generalized_klevel_plan(
    candidate_set: CandidateSet,
    alpha: float,
    K: int,
    ball_sizes: dict[Vertex, int] | list[int],
) -> ThresholdPlan:
    """K-level thresholds with per-vertex close-ball sizes |N_v(K)|.

    This is the arbitrary-topology form of the design; on vertex-transitive
    graphs it coincides with the standard K-level plan.
    """
    cs = candidate_set
    if not (alpha > 0 and math.isfinite(alpha)):
        raise PlanError("alpha must be a positive finite real")
    if K < 1:
        raise PlanError("K must be >= 1")
    if isinstance(ball_sizes, dict):
        sizes = [ball_sizes[v] for v in cs.vertices]
    else:
        sizes = list(ball_sizes)
    if len(sizes) != cs.n or any(sz < 1 for sz in sizes):
        raise PlanError("need a positive |N_v(K)| per candidate")
    close = tuple(math.log(2.0 * K * sz) - math.log(alpha) for sz in sizes)
    log_far = math.log(2.0) + 2.0 * math.log(cs.n) - math.log(alpha)
    inv_close = np.array([alpha / (2.0 * K * sz) for sz in sizes])
    feas = _feasibility_sum(cs, K, alpha, inv_close, alpha / (2.0 * cs.n**2))
    plan = ThresholdPlan(
        variant="klevel-general", n=cs.n, alpha=alpha, K=K, n_K=None,
        log_tau_far=log_far, log_tau_close=None, close_taus=close,
        feasibility_sum=feas,
    )
    if plan.feasibility_sum > alpha * (1 + 1e-9):
        raise PlanError(f"plan violates feasibility: {plan.feasibility_sum} > {alpha}")
    return plan


# ---------------------------------------------------------------------------
# Test state and stopping rule
# ---------------------------------------------------------------------------


@dataclass
class MsprtState:
    """Cumulative per-candidate ball log-LR sums; Z_vu(t) = s[v] - s[u].

    ``crossed`` maps candidate index -> first time all its thresholds were
    met.  Single-writer per trial.
    """

    candidate_set: CandidateSet
    s: np.ndarray
    t: int
    crossed: dict[int, int] = field(default_factory=dict)

    def z(self, v: Vertex, u: Vertex) -> float:
        pos = _candidate_pos(self.candidate_set)
        return float(self.s[pos[v]] - self.s[pos[u]])

    def z_matrix(self, max_candidates: int = 4096) -> np.ndarray:
        if self.candidate_set.n > max_candidates:
            raise MemoryError(
                f"z_matrix is O(n^2); n={self.candidate_set.n} exceeds {max_candidates}"
            )
        return self.s[:, None] - self.s[None, :]


def initial_state(cs: CandidateSet) -> MsprtState:
    return MsprtState(candidate_set=cs, s=np.zeros(cs.n), t=-1)


def update_llr(state: MsprtState, obs: Observations) -> MsprtState:
    """Fold one round of observations into every pairwise statistic.

    Each ordered pair moves by its symmetric-difference log-LR sums; shared
    ball vertices cancel, so the per-candidate ball sums carry it all.
    """
    region = obs.region
    if region.candidate_set != state.candidate_set:
        raise ValueError("observations were generated for a different candidate set")
    if region.t != state.t + 1:
        raise ValueError(f"state at t={state.t} requires observations at t={state.t + 1}, got t={region.t}")
    llr = obs.channel.log_lr(obs.values)
    return MsprtState(
        candidate_set=state.candidate_set,
        s=state.s + region.candidate_ball_sums(llr),
        t=region.t,
        crossed=dict(state.crossed),
    )


def stop_margins(state: MsprtState, plan: ThresholdPlan) -> np.ndarray:
    """Per-candidate worst slack min_u (Z_vu - log tau(v,u)); >= 0 means the
    candidate has crossed every threshold.  Empty threshold sets give +inf."""
    cs, s, n = state.candidate_set, state.s, state.candidate_set.n
    margins = np.full(n, np.inf)
    if n == 1:
        return margins
    idx, dist, counts, close_sets = _close_structure(cs, plan.K)

    close_taus = plan.close_tau_array()
    if plan.K > 0 and idx.shape[1]:
        gathered = np.where(idx >= 0, s[np.clip(idx, 0, None)], -np.inf)
        close_max = gathered.max(axis=1)
        has_close = counts > 0
        margins[has_close] = np.minimum(
            margins[has_close],
            s[has_close] - close_max[has_close] - close_taus[has_close],
        )

    far_counts = (n - 1) - counts
    order = np.argsort(-s, kind="stable")
    if plan.K <= 0:
        far_max = np.full(n, s[order[0]])
        far_max[order[0]] = s[order[1]]
        margins = np.minimum(margins, s - far_max - plan.log_tau_far)
    else:
        for i in range(n):
            if far_counts[i] == 0:
                continue
            blocked = close_sets[i]
            for j in order:
                if j != i and j not in blocked:
                    margins[i] = min(margins[i], s[i] - s[j] - plan.log_tau_far)
                    break
    return margins


def check_stop(state: MsprtState, plan: ThresholdPlan) -> Optional[tuple[int, Vertex]]:
    """Record any candidates whose thresholds are all met; once at least one
    has, return its first-crossing time and the canonical-order winner."""
    margins = stop_margins(state, plan)
    for i in np.nonzero(margins >= 0)[0]:
        state.crossed.setdefault(int(i), state.t)
    if not state.crossed:
        return None
    T = min(state.crossed.values())
    winner = min(i for i, tv in state.crossed.items() if tv == T)
    return T, state.candidate_set.vertices[winner]


@dataclass(frozen=True)
class MsprtRunResult:
    stop_time: int
    estimate: Vertex
    distance_to_truth: int
    crossing_times: dict[Vertex, int]


def run_msprt(
    trace: CascadeTrace,
    cs: CandidateSet,
    plan: ThresholdPlan,
    geometry: CascadeGeometry | None = None,
) -> MsprtRunResult:
    geo = geometry or geometry_for(cs)
    state = initial_state(cs)
    for t in range(trace.horizon + 1):
        state = update_llr(state, observe(trace, geo.region(t)))
        hit = check_stop(state, plan)
        if hit is not None:
            T, estimate = hit
            return MsprtRunResult(
                stop_time=T,
                estimate=estimate,
                distance_to_truth=cs.kind.distance(trace.source, estimate),
                crossing_times={cs.vertices[i]: tv for i, tv in sorted(state.crossed.items())},
            )
    best = float(stop_margins(state, plan).max())
    raise HorizonExhaustedError(
        f"no candidate crossed by horizon {trace.horizon}; best margin {best:.4g}",
        best_margin=best,
        t=state.t,
    )


# ---------------------------------------------------------------------------
# Pairwise statistic sampler (tail-bound instrumentation)
# ---------------------------------------------------------------------------


def pairwise_llr_samples(
    kind: GraphKind,
    channel: Channel,
    v: Vertex,
    u: Vertex,
    t: int,
    trials: int,
    seed: int = 0,
) -> np.ndarray:
    """Monte Carlo draws of Z_vu(t) under source v, straight from the
    symmetric-difference definition (used to exercise the Chernoff tail)."""
    seeds = np.array([derive_seed(seed, i) for i in range(trials)], dtype=np.uint64)
    z = np.zeros(trials)
    for s in range(t + 1):
        ball_v = set(kind.enumerate_ball(v, s))
        ball_u = set(kind.enumerate_ball(u, s))
        for group, sign in ((sorted(ball_v - ball_u), 1.0), (sorted(ball_u - ball_v), -1.0)):
            if not group:
                continue
            keys = np.array([kind.vertex_key(w) for w in group], dtype=np.uint64)
            affected = np.array([kind.distance(w, v) <= s for w in group])
            uniforms = counter_uniforms(seeds[:, None], keys[None, :], s)
            draws = channel.draw_from_uniforms(uniforms, affected[None, :])
            z += sign * channel.log_lr(draws).sum(axis=1)
    return z
