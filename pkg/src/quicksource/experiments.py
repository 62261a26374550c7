"""Seeded Monte Carlo campaigns over the two estimators.

Campaign outputs are deterministic functions of (config, master seed): the
per-trial seed is ``hash(master, n, source index, trial index)`` via the
package's stable 64-bit mixer, trials are aggregated in (n, source, trial)
order, and floats are serialized with ``repr``, so reruns are
byte-identical at any worker count.

Each campaign carries its own pass/fail checks (trend bands, error
budgets, probability bounds); the CLI exit code reflects them.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from . import bayes as bayes_mod
from . import msprt as msprt_mod
from .cascade import geometry_for, new_trace
from .channels import Channel, constants, format_channel, rate_function
from .errors import HorizonExhaustedError
from .graphs import (
    CandidateSet,
    GraphKind,
    RegularTree,
    Vertex,
    format_graph,
    growth_tables,
    make_candidate_set,
)
from .rng import derive_seed, mix64

ESTIMATORS = ("bayes", "msprt-uniform", "msprt-klevel")
_SOURCE_SALT = 0x5EED50


@dataclass(frozen=True)
class ExperimentConfig:
    kind: GraphKind
    channel: Channel
    estimator: str
    n_list: tuple[int, ...]
    alpha: float = 1.0
    trials: int = 100
    seed: int = 0
    horizon_factor: float = 4.0
    threshold: float = 1.0
    K: int | None = None
    workers: int = 1
    collect_records: bool = False

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.n_list or any(n < 1 for n in self.n_list):
            raise ValueError("n_list must contain positive candidate-set sizes")
        if self.horizon_factor <= 0:
            raise ValueError("horizon factor must be positive")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class CampaignSummary:
    campaign: str
    meta: dict
    columns: list[str]
    rows: list[tuple]
    checks: list[CheckResult] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def rows_as_dicts(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]


# ---------------------------------------------------------------------------
# Seed plumbing and horizons
# ---------------------------------------------------------------------------


def source_index(master_seed: int, n: int, trial: int) -> int:
    """Uniform source draw for Bayesian campaigns (matches the prior)."""
    return mix64(master_seed, _SOURCE_SALT, n, trial) % n


def trial_seed(master_seed: int, n: int, src_index: int, trial: int) -> int:
    """The replay contract: hash(master seed, n, source index, trial index)."""
    return derive_seed(master_seed, n, src_index, trial)


def predicted_scale(kind: GraphKind, n: int) -> float:
    """First-order runtime scale: log log n / log(k-1) on trees,
    (log n)^(1/(ell+1)) on lattices."""
    if isinstance(kind, RegularTree):
        if n < 3:
            return float("nan")
        return math.log(math.log(n)) / math.log(kind.k - 1)
    return math.log(n) ** (1.0 / (kind.ell + 1)) if n >= 2 else float("nan")


def default_horizon(config: ExperimentConfig, n: int) -> int:
    """Generously above the predicted stop time; regions are lazy, so an
    unused horizon costs nothing."""
    gt = growth_tables(config.kind)
    c = constants(config.channel)
    logn = math.log(max(n, 2))
    base = gt.F(logn)
    if config.estimator == "bayes":
        scale = gt.F(max(4.0 * logn / c.theta, 1.0))
    else:
        rate = min(c.theta, rate_function(config.channel, c.theta))
        scale = gt.F1(math.log(max(2.0 * n * n / config.alpha, 2.0)) / rate)
    factor = config.horizon_factor
    return max(4, math.ceil(factor * max(base, 1)), math.ceil(factor * scale))


def _plan_for(config: ExperimentConfig, cs: CandidateSet) -> msprt_mod.ThresholdPlan:
    variant = "uniform" if config.estimator == "msprt-uniform" else "klevel"
    return msprt_mod.make_plan(
        config.kind, cs.n, config.alpha, variant=variant, K=config.K, candidate_set=cs
    )


def panel_sources(cs: CandidateSet) -> list[Vertex]:
    """Deterministic worst-case panel: v0, a farthest vertex (canonical
    first among ties), and the canonically last vertex."""
    far, best = cs.v0, -1
    for v in cs.vertices:
        d = cs.kind.distance(cs.v0, v)
        if d > best:
            best, far = d, v
    panel = []
    for v in (cs.v0, far, cs.vertices[-1]):
        if v not in panel:
            panel.append(v)
    return panel


# ---------------------------------------------------------------------------
# Trial workers (module-level for pickling)
# ---------------------------------------------------------------------------


def _bayes_task(args) -> list[tuple]:
    config, n, lo, hi = args
    cs = make_candidate_set(config.kind, config.kind.origin, n)
    geo = geometry_for(cs)
    horizon = default_horizon(config, n)
    out = []
    for trial in range(lo, hi):
        src = source_index(config.seed, n, trial)
        seed = trial_seed(config.seed, n, src, trial)
        trace = new_trace(config.kind, cs.vertices[src], config.channel, seed, horizon)
        try:
            res = bayes_mod.run_bayes(trace, cs, config.threshold, geometry=geo)
            out.append((trial, src, seed, res.stop_time, res.distance_to_truth, res.error_trajectory))
        except HorizonExhaustedError:
            out.append((trial, src, seed, None, None, None))
    return out


def _msprt_task(args) -> list[tuple]:
    config, n, src_list, lo, hi = args
    cs = make_candidate_set(config.kind, config.kind.origin, n)
    geo = geometry_for(cs)
    plan = _plan_for(config, cs)
    horizon = default_horizon(config, n)
    out = []
    for src in src_list:
        for trial in range(lo, hi):
            seed = trial_seed(config.seed, n, src, trial)
            trace = new_trace(config.kind, cs.vertices[src], config.channel, seed, horizon)
            try:
                res = msprt_mod.run_msprt(trace, cs, plan, geometry=geo)
                out.append((src, trial, seed, res.stop_time, res.distance_to_truth, res.estimate))
            except HorizonExhaustedError:
                out.append((src, trial, seed, None, None, None))
    return out


def _run_tasks(task_fn, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        chunks = [task_fn(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(task_fn, tasks))
    return [item for chunk in chunks for item in chunk]


def _split_range(total: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, total))
    step = math.ceil(total / parts)
    return [(lo, min(lo + step, total)) for lo in range(0, total, step)]


def _mean_se(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    mean = float(arr.mean())
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else float("nan")
    return mean, se


def _config_meta(config: ExperimentConfig, campaign: str) -> dict:
    return {
        "schema": "quicksource summary v1",
        "campaign": campaign,
        "graph": format_graph(config.kind),
        "channel": format_channel(config.channel),
        "estimator": config.estimator,
        "alpha": config.alpha,
        "trials": config.trials,
        "seed": config.seed,
        "horizon_factor": config.horizon_factor,
        "threshold": config.threshold,
        "K": config.K,
    }


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------


def run_bayes_scaling(config: ExperimentConfig) -> CampaignSummary:
    """Mean Bayesian objective (distance + stop time) across candidate-set
    sizes, with sources drawn from the uniform prior."""
    if config.estimator != "bayes":
        raise ValueError("bayes-scaling requires estimator='bayes'")
    summary = CampaignSummary(
        campaign="bayes-scaling",
        meta=_config_meta(config, "bayes-scaling"),
        columns=[
            "n", "trials", "mean_stop", "se_stop", "mean_distance", "se_distance",
            "mean_objective", "se_objective", "worst_source_mean_error",
            "predicted", "ratio", "horizon_failures", "trial_lo", "trial_hi",
        ],
        rows=[],
    )
    mean_objectives = []
    for n in config.n_list:
        tasks = [(config, n, lo, hi) for lo, hi in _split_range(config.trials, config.workers * 4)]
        results = _run_tasks(_bayes_task, tasks, config.workers)
        ok = [r for r in results if r[3] is not None]
        failures = len(results) - len(ok)
        stops = [r[3] for r in ok]
        dists = [r[4] for r in ok]
        objectives = [r[3] + r[4] for r in ok]
        by_source: dict[int, list[int]] = {}
        for r in ok:
            by_source.setdefault(r[1], []).append(r[4])
        worst_err = max((float(np.mean(v)) for v in by_source.values()), default=float("nan"))
        mean_stop, se_stop = _mean_se(stops)
        mean_dist, se_dist = _mean_se(dists)
        mean_obj, se_obj = _mean_se(objectives)
        pred = predicted_scale(config.kind, n)
        summary.rows.append((
            n, config.trials, mean_stop, se_stop, mean_dist, se_dist,
            mean_obj, se_obj, worst_err, pred,
            mean_obj / pred if pred and not math.isnan(pred) else float("nan"),
            failures, 0, config.trials,
        ))
        mean_objectives.append(mean_obj)
        if config.collect_records:
            cs = make_candidate_set(config.kind, config.kind.origin, n)
            for trial, src, seed, stop, dist, traj in results:
                summary.records.append(_bayes_record(config, cs, n, seed, stop, dist, traj))
    _scaling_checks(summary, config, mean_objectives, metric="mean objective")
    return summary


def run_minimax_scaling(config: ExperimentConfig) -> CampaignSummary:
    """Worst-case panel campaign for the MSPRT designs; verifies the
    error-budget feasibility empirically."""
    if config.estimator not in ("msprt-uniform", "msprt-klevel"):
        raise ValueError("minimax-scaling requires an msprt estimator")
    summary = CampaignSummary(
        campaign="minimax-scaling",
        meta=_config_meta(config, "minimax-scaling"),
        columns=[
            "n", "trials_per_source", "plan_variant", "K", "n_sources",
            "worst_source_mean_stop", "worst_source_se_stop",
            "worst_source_mean_error", "worst_source_se_error",
            "pooled_mean_stop", "predicted", "ratio", "horizon_failures",
            "trial_lo", "trial_hi",
        ],
        rows=[],
    )
    worst_stops = []
    for n in config.n_list:
        cs = make_candidate_set(config.kind, config.kind.origin, n)
        plan = _plan_for(config, cs)
        panel = panel_sources(cs)
        src_indices = [cs.index_of(v) for v in panel]
        tasks = [
            (config, n, [src], lo, hi)
            for src in src_indices
            for lo, hi in _split_range(config.trials, config.workers * 2)
        ]
        results = _run_tasks(_msprt_task, tasks, config.workers)
        ok = [r for r in results if r[3] is not None]
        failures = len(results) - len(ok)
        per_src_stop: dict[int, list[int]] = {}
        per_src_err: dict[int, list[int]] = {}
        for src, trial, seed, stop, dist, est in ok:
            per_src_stop.setdefault(src, []).append(stop)
            per_src_err.setdefault(src, []).append(dist)
        stats_stop = {s: _mean_se(v) for s, v in per_src_stop.items()}
        stats_err = {s: _mean_se(v) for s, v in per_src_err.items()}
        worst_src_stop = max(stats_stop.values(), key=lambda p: p[0], default=(float("nan"),) * 2)
        worst_src_err = max(stats_err.values(), key=lambda p: p[0], default=(float("nan"),) * 2)
        pooled_stop = float(np.mean([r[3] for r in ok])) if ok else float("nan")
        pred = predicted_scale(config.kind, n)
        summary.rows.append((
            n, config.trials, plan.variant, plan.K, len(panel),
            worst_src_stop[0], worst_src_stop[1], worst_src_err[0], worst_src_err[1],
            pooled_stop, pred,
            worst_src_stop[0] / pred if pred and not math.isnan(pred) else float("nan"),
            failures, 0, config.trials,
        ))
        worst_stops.append(worst_src_stop[0])
        if config.collect_records:
            for src, trial, seed, stop, dist, est in results:
                summary.records.append(_msprt_record(config, cs, plan, n, seed, stop, dist, est))
        err_mean, err_se = worst_src_err
        budget = config.alpha + 3.0 * (err_se if not math.isnan(err_se) else 0.0)
        summary.checks.append(CheckResult(
            name=f"error-budget-n{n}",
            passed=bool(err_mean <= budget),
            detail=f"worst-source mean error {err_mean:.4g} <= alpha+3SE {budget:.4g}",
        ))
    _scaling_checks(summary, config, worst_stops, metric="worst-source mean stop")
    return summary


def _scaling_checks(summary: CampaignSummary, config: ExperimentConfig, means: list[float], metric: str) -> None:
    ns = list(config.n_list)
    if len(ns) < 2:
        return
    preds = [predicted_scale(config.kind, n) for n in ns]
    if isinstance(config.kind, RegularTree):
        monotone = all(b >= a - 1e-12 for a, b in zip(means, means[1:]))
        summary.checks.append(CheckResult(
            "monotone-trend", bool(monotone), f"{metric} nondecreasing across n={ns}: {means}"
        ))
        ratios = [m / p for m, p in zip(means, preds) if p and not math.isnan(p)]
        in_band = all(0.5 <= r <= 3.0 for r in ratios)
        summary.checks.append(CheckResult(
            "ratio-band", bool(in_band), f"{metric}/predicted in [0.5, 3]: {[round(r, 3) for r in ratios]}"
        ))
    elif len(ns) >= 5:
        rho = float(spearmanr(means, preds).statistic)
        summary.checks.append(CheckResult(
            "spearman-trend", bool(rho >= 0.9), f"Spearman rho({metric}, predicted) = {rho:.3f} >= 0.9"
        ))


def run_transition(config: ExperimentConfig) -> CampaignSummary:
    """Mean conditional-error curve with stopping disabled (one n value)."""
    if config.estimator != "bayes":
        raise ValueError("transition requires estimator='bayes'")
    n = config.n_list[0]
    gt = growth_tables(config.kind)
    theta = constants(config.channel).theta
    f_logn = gt.F(math.log(max(n, 2)))
    decay_t = 3 * gt.F(max(4.0 * math.log(max(n, 2)) / theta, 1.0))
    t_max = max(decay_t, 4 * f_logn, 1)
    cs = make_candidate_set(config.kind, config.kind.origin, n)
    geo = geometry_for(cs)

    curves = np.empty((config.trials, t_max + 1))
    for trial in range(config.trials):
        src = source_index(config.seed, n, trial)
        seed = trial_seed(config.seed, n, src, trial)
        trace = new_trace(config.kind, cs.vertices[src], config.channel, seed, t_max)
        curves[trial] = bayes_mod.error_trajectory(trace, cs, t_max, geometry=geo)
    mean_curve = curves.mean(axis=0)
    se_curve = curves.std(axis=0, ddof=1) / math.sqrt(config.trials) if config.trials > 1 else np.full(t_max + 1, np.nan)

    prior_error = bayes_mod.uniform_prior_error(cs)
    half = mean_curve[0] / 2.0
    below = np.nonzero(mean_curve <= half)[0]
    t_half = int(below[0]) if below.size else -1

    summary = CampaignSummary(
        campaign="transition",
        meta={
            **_config_meta(config, "transition"),
            "n": n,
            "prior_error": prior_error,
            "t_half": t_half,
            "F_log_n": f_logn,
            "decay_t": decay_t,
        },
        columns=["t", "mean_error", "se_error"],
        rows=[(t, float(mean_curve[t]), float(se_curve[t])) for t in range(t_max + 1)],
    )
    summary.checks.append(CheckResult(
        "initial-error-20pct",
        bool(abs(mean_curve[0] - prior_error) <= 0.2 * prior_error),
        f"mean error at t=0 {mean_curve[0]:.4g} within 20% of prior error {prior_error:.4g}",
    ))
    summary.checks.append(CheckResult(
        "late-decay",
        bool(mean_curve[min(decay_t, t_max)] < 0.5),
        f"mean error {mean_curve[min(decay_t, t_max)]:.4g} < 0.5 at t = 3 F(4 log n / theta) = {decay_t}",
    ))
    lo, hi = max(f_logn // 2, 0), 4 * f_logn
    summary.checks.append(CheckResult(
        "t-half-band",
        bool(t_half >= 0 and lo <= t_half <= hi),
        f"t_half = {t_half} in [F(log n)/2, 4 F(log n)] = [{lo}, {hi}]",
    ))
    return summary


def run_concentration(config: ExperimentConfig) -> CampaignSummary:
    """Empirical P(|Y(t) - n| >= eps n) against the 4 / (eps^2 sqrt(n)) bound,
    for the eligible early window of t."""
    if config.estimator != "bayes":
        raise ValueError("concentration requires estimator='bayes'")
    n = config.n_list[0]
    c = constants(config.channel)
    gt = growth_tables(config.kind)
    t_max = gt.F(math.log(max(n, 2)) / (4.0 * math.log(max(c.beta, c.lam))))
    cs = make_candidate_set(config.kind, config.kind.origin, n)
    geo = geometry_for(cs)

    ys = np.empty((config.trials, t_max + 1))
    for trial in range(config.trials):
        src = source_index(config.seed, n, trial)
        seed = trial_seed(config.seed, n, src, trial)
        trace = new_trace(config.kind, cs.vertices[src], config.channel, seed, t_max)
        ys[trial] = bayes_mod.posterior_normalizer_trajectory(trace, cs, t_max, geometry=geo)

    epsilons = (0.25, 0.5)
    summary = CampaignSummary(
        campaign="concentration",
        meta={**_config_meta(config, "concentration"), "n": n, "t_max": t_max},
        columns=["t", "eps", "frequency", "bound", "sigma"],
        rows=[],
    )
    all_ok = True
    for t in range(t_max + 1):
        for eps in epsilons:
            freq = float(np.mean(np.abs(ys[:, t] - n) >= eps * n))
            bound = 4.0 / (eps**2 * math.sqrt(n))
            capped = min(bound, 1.0)
            sigma = math.sqrt(capped * (1 - capped) / config.trials)
            summary.rows.append((t, eps, freq, bound, sigma))
            if freq > bound + 3 * sigma:
                all_ok = False
    summary.checks.append(CheckResult(
        "concentration-bound", all_ok,
        f"empirical P(|Y(t)-n| >= eps n) <= 4/(eps^2 sqrt(n)) + 3 sigma for t <= {t_max}",
    ))
    return summary


# ---------------------------------------------------------------------------
# Per-run record schemas and output writers
# ---------------------------------------------------------------------------


def _bayes_record(config, cs, n, seed, stop, dist, traj) -> dict:
    return {
        "seed": seed,
        "kind": format_graph(config.kind),
        "n": n,
        "channel": format_channel(config.channel),
        "stop_time": stop,
        "distance_to_truth": dist,
        "objective": (stop + dist) if stop is not None else None,
        "error_trajectory": list(traj) if traj is not None else None,
    }


def _msprt_record(config, cs, plan, n, seed, stop, dist, est) -> dict:
    return {
        "seed": seed,
        "kind": format_graph(config.kind),
        "n": n,
        "alpha": config.alpha,
        "plan_variant": plan.variant,
        "K": plan.K,
        "stop_time": stop,
        "estimate": config.kind.format_vertex(est) if est is not None else None,
        "distance_to_truth": dist,
    }


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, tuple):
        return list(v)
    return v


def write_summary(summary: CampaignSummary, fileobj, fmt: str = "csv") -> None:
    """Serialize a campaign deterministically (CSV with a versioned header
    comment, or JSON lines)."""
    if fmt == "csv":
        fileobj.write(f"# {summary.meta.get('schema', 'quicksource summary v1')}\n")
        meta = " ".join(f"{k}={v}" for k, v in summary.meta.items() if k != "schema")
        fileobj.write(f"# {meta}\n")
        fileobj.write(",".join(summary.columns) + "\n")
        for row in summary.rows:
            fileobj.write(",".join(_fmt_cell(v) for v in row) + "\n")
        for check in summary.checks:
            fileobj.write(f"# check {check.name} passed={check.passed} {check.detail}\n")
    elif fmt == "jsonl":
        fileobj.write(json.dumps({"type": "meta", **{k: _json_safe(v) for k, v in summary.meta.items()}}, sort_keys=True) + "\n")
        for row in summary.rows:
            payload = {"type": "row", **{k: _json_safe(v) for k, v in zip(summary.columns, row)}}
            fileobj.write(json.dumps(payload, sort_keys=True) + "\n")
        for check in summary.checks:
            fileobj.write(json.dumps(
                {"type": "check", "name": check.name, "passed": check.passed, "detail": check.detail},
                sort_keys=True) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def write_records(summary: CampaignSummary, fileobj) -> None:
    for rec in summary.records:
        fileobj.write(json.dumps({k: _json_safe(v) for k, v in rec.items()}, sort_keys=True) + "\n")


CAMPAIGNS = {
    "bayes-scaling": run_bayes_scaling,
    "minimax-scaling": run_minimax_scaling,
    "transition": run_transition,
    "concentration": run_concentration,
}
