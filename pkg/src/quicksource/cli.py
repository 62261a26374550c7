"""Command-line harness for the Monte Carlo campaigns.

Flags mirror a flat JSON config file (``--config``); explicit flags
override the file, which overrides built-in defaults.  Exit status is
nonzero iff any of the campaign's acceptance checks fail.
"""

from __future__ import annotations

import argparse
import json
import sys

from .cascade import dump_trace, new_trace
from .channels import parse_channel
from .experiments import (
    CAMPAIGNS,
    ExperimentConfig,
    write_records,
    write_summary,
)
from .graphs import make_candidate_set, parse_graph

_DEFAULTS = {
    "graph": "tree:3",
    "channel": "bernoulli:0.1,0.9",
    "n": "100",
    "alpha": 1.0,
    "trials": 100,
    "seed": 0,
    "horizon_factor": 4.0,
    "threshold": 1.0,
    "plan": "uniform",
    "K": None,
    "workers": 1,
    "format": "csv",
    "out": None,
    "records": None,
    "source": None,
    "t_max": 2,
}

_CAMPAIGN_COMMANDS = ("bayes-scaling", "minimax-scaling", "transition", "concentration")


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON file of flag values (flags override it)")
    sp.add_argument("--graph", help="tree:k | lattice:ell")
    sp.add_argument("--channel", help="bernoulli:q0,q1 | gaussian:mu0,mu1,sigma | diagnostic:p,eps")
    sp.add_argument("--n", help="comma-separated candidate-set sizes")
    sp.add_argument("--alpha", type=float, help="worst-case error budget (minimax)")
    sp.add_argument("--trials", type=int, help="Monte Carlo trials per point")
    sp.add_argument("--seed", type=int, help="master seed")
    sp.add_argument("--horizon-factor", dest="horizon_factor", type=float,
                    help="horizon = factor x predicted stop scale (default 4)")
    sp.add_argument("--threshold", type=float, help="Bayes stopping threshold (default 1)")
    sp.add_argument("--plan", choices=["uniform", "klevel"], help="MSPRT threshold design")
    sp.add_argument("--K", type=int, help="K-level radius override")
    sp.add_argument("--workers", type=int, help="parallel worker processes")
    sp.add_argument("--out", help="output path (default: stdout)")
    sp.add_argument("--format", choices=["csv", "jsonl"], help="summary format")
    sp.add_argument("--records", help="also write per-trial JSONL records here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quicksource", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _CAMPAIGN_COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} campaign")
        _add_common(sp)
    sim = sub.add_parser("simulate", help="dump a single trace for debugging")
    _add_common(sim)
    sim.add_argument("--source", help="source vertex (canonical string; default v0)")
    sim.add_argument("--t-max", dest="t_max", type=int, help="last time step to dump")
    return parser


def _merge_settings(args: argparse.Namespace) -> dict:
    settings = dict(_DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(_DEFAULTS)
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        settings.update(loaded)
    for key in _DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def _experiment_config(command: str, s: dict) -> ExperimentConfig:
    kind = parse_graph(s["graph"])
    channel = parse_channel(s["channel"])
    n_list = tuple(int(x) for x in str(s["n"]).split(",") if x.strip())
    if command == "minimax-scaling":
        estimator = f"msprt-{s['plan']}"
    else:
        estimator = "bayes"
    return ExperimentConfig(
        kind=kind,
        channel=channel,
        estimator=estimator,
        n_list=n_list,
        alpha=float(s["alpha"]),
        trials=int(s["trials"]),
        seed=int(s["seed"]),
        horizon_factor=float(s["horizon_factor"]),
        threshold=float(s["threshold"]),
        K=int(s["K"]) if s["K"] is not None else None,
        workers=int(s["workers"]),
        collect_records=s["records"] is not None,
    )


def _write_out(payload_fn, out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            payload_fn(fh)
    else:
        payload_fn(sys.stdout)


def _run_simulate(s: dict) -> int:
    kind = parse_graph(s["graph"])
    channel = parse_channel(s["channel"])
    n = int(str(s["n"]).split(",")[0])
    cs = make_candidate_set(kind, kind.origin, n)
    source = kind.parse_vertex(s["source"]) if s["source"] else cs.v0
    t_max = int(s["t_max"])
    trace = new_trace(kind, source, channel, int(s["seed"]), t_max)
    _write_out(lambda fh: dump_trace(trace, cs, t_max, fh), s["out"])
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    settings = _merge_settings(args)
    if args.command == "simulate":
        return _run_simulate(settings)

    config = _experiment_config(args.command, settings)
    summary = CAMPAIGNS[args.command](config)
    _write_out(lambda fh: write_summary(summary, fh, settings["format"]), settings["out"])
    if settings["records"]:
        with open(settings["records"], "w", newline="") as fh:
            write_records(summary, fh)
    for check in summary.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"[{status}] {check.name}: {check.detail}", file=sys.stderr)
    return 0 if summary.passed else 1


if __name__ == "__main__":
    sys.exit(main())
