"""Campaign harness: determinism, record schemas, checks, CLI plumbing."""

import io
import json
import math

import pytest

from quicksource import BernoulliChannel, Lattice, RegularTree
from quicksource.cli import main as cli_main
from quicksource.experiments import (
    CAMPAIGNS,
    ExperimentConfig,
    default_horizon,
    panel_sources,
    predicted_scale,
    run_bayes_scaling,
    run_concentration,
    run_minimax_scaling,
    run_transition,
    source_index,
    trial_seed,
    write_records,
    write_summary,
)
from quicksource.graphs import make_candidate_set
from quicksource.rng import mix64

TREE = RegularTree(3)
BERN = BernoulliChannel(0.1, 0.9)


def _cfg(**kw):
    base = dict(kind=TREE, channel=BERN, estimator="bayes", n_list=(22,), trials=8, seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


# -- plumbing ---------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        _cfg(estimator="nope")
    with pytest.raises(ValueError):
        _cfg(trials=0)
    with pytest.raises(ValueError):
        _cfg(n_list=())


def test_seed_formula_is_the_documented_hash():
    assert trial_seed(5, 10, 3, 7) == mix64(5, 10, 3, 7)
    idx = source_index(5, 10, 3)
    assert 0 <= idx < 10
    assert idx == source_index(5, 10, 3)


def test_predicted_scale():
    assert math.isclose(predicted_scale(TREE, 1000), math.log(math.log(1000)) / math.log(2))
    assert math.isclose(predicted_scale(Lattice(2), 1000), math.log(1000) ** (1 / 3))
    assert math.isnan(predicted_scale(TREE, 2))


def test_default_horizon_generous():
    cfg = _cfg(n_list=(100,))
    from quicksource.graphs import growth_tables

    assert default_horizon(cfg, 100) >= 4 * growth_tables(TREE).F(math.log(100))


def test_panel_sources_contains_center_and_boundary():
    cs = make_candidate_set(TREE, (), 12)
    panel = panel_sources(cs)
    assert panel[0] == ()
    r_plus = max(TREE.distance((), v) for v in cs.vertices)
    assert any(TREE.distance((), v) == r_plus for v in panel)
    assert len(panel) == len(set(panel))


# -- campaign behavior --------------------------------------------------------


def test_bayes_scaling_rows_and_records():
    s = run_bayes_scaling(_cfg(n_list=(10, 22), trials=6, collect_records=True))
    assert [r[0] for r in s.rows] == [10, 22]
    assert len(s.records) == 12
    rec = s.records[0]
    assert set(rec) == {"seed", "kind", "n", "channel", "stop_time",
                        "distance_to_truth", "objective", "error_trajectory"}
    assert rec["kind"] == "tree:3" and rec["channel"] == "bernoulli:0.1,0.9"
    assert rec["objective"] == rec["stop_time"] + rec["distance_to_truth"]


def test_minimax_scaling_rows_and_records():
    cfg = _cfg(estimator="msprt-uniform", n_list=(10,), trials=10, alpha=1.0, collect_records=True)
    s = run_minimax_scaling(cfg)
    row = dict(zip(s.columns, s.rows[0]))
    assert row["plan_variant"] == "uniform"
    assert row["n_sources"] >= 2
    assert any(c.name.startswith("error-budget") for c in s.checks)
    rec = s.records[0]
    assert set(rec) == {"seed", "kind", "n", "alpha", "plan_variant", "K",
                        "stop_time", "estimate", "distance_to_truth"}


def test_transition_curve_shape_and_meta():
    s = run_transition(_cfg(n_list=(46,), trials=12))
    ts = [r[0] for r in s.rows]
    assert ts == list(range(len(ts)))
    assert s.meta["prior_error"] > 0
    assert "t_half" in s.meta
    errors = [r[1] for r in s.rows]
    assert errors[-1] < errors[0]


def test_concentration_rows():
    s = run_concentration(_cfg(n_list=(100,), trials=50))
    eps_seen = {r[1] for r in s.rows}
    assert eps_seen == {0.25, 0.5}
    for t, eps, freq, bound, sigma in s.rows:
        assert 0 <= freq <= 1 and bound > 0


def test_horizon_failures_are_counted_not_fatal():
    # nearly indistinguishable channel + tight factor: trials can't stop
    weak = BernoulliChannel(0.49, 0.51)
    cfg = ExperimentConfig(kind=TREE, channel=weak, estimator="bayes",
                           n_list=(22,), trials=4, seed=1, horizon_factor=0.01,
                           threshold=0.05)
    s = run_bayes_scaling(cfg)
    row = dict(zip(s.columns, s.rows[0]))
    assert row["horizon_failures"] == 4
    assert math.isnan(row["mean_stop"])


# -- determinism ----------------------------------------------------------------


@pytest.mark.parametrize("fmt", ["csv", "jsonl"])
def test_rerun_is_byte_identical(fmt):
    def render():
        s = run_bayes_scaling(_cfg(n_list=(10, 22), trials=6))
        buf = io.StringIO()
        write_summary(s, buf, fmt)
        return buf.getvalue()

    assert render() == render()


def test_worker_count_does_not_change_bytes():
    outs = []
    for workers in (1, 3):
        s = run_minimax_scaling(_cfg(estimator="msprt-uniform", n_list=(12,), trials=9, workers=workers))
        buf = io.StringIO()
        write_summary(s, buf, "csv")
        outs.append(buf.getvalue())
    assert outs[0] == outs[1]


def test_records_jsonl_round_trip():
    s = run_bayes_scaling(_cfg(n_list=(10,), trials=3, collect_records=True))
    buf = io.StringIO()
    write_records(s, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 3
    for line in lines:
        assert isinstance(json.loads(line), dict)


# -- CLI --------------------------------------------------------------------------


def test_cli_bayes_scaling_writes_csv(tmp_path):
    out = tmp_path / "summary.csv"
    rc = cli_main([
        "bayes-scaling", "--graph", "lattice:1", "--n", "9,25", "--trials", "5",
        "--seed", "3", "--out", str(out),
    ])
    assert rc == 0
    text = out.read_text()
    assert text.startswith("# quicksource summary v1\n")
    assert "mean_objective" in text.splitlines()[2]


def test_cli_config_file_merge_and_flag_override(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"graph": "lattice:1", "n": "9", "trials": 4, "seed": 11}))
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    assert cli_main(["bayes-scaling", "--config", str(cfg_file), "--out", str(out1)]) == 0
    assert cli_main(["bayes-scaling", "--graph", "lattice:1", "--n", "9",
                     "--trials", "4", "--seed", "11", "--out", str(out2)]) == 0
    assert out1.read_text() == out2.read_text()
    # flag overrides file
    out3 = tmp_path / "c.csv"
    assert cli_main(["bayes-scaling", "--config", str(cfg_file), "--trials", "2",
                     "--out", str(out3)]) == 0
    assert "9,2," in out3.read_text()


def test_cli_rejects_unknown_config_keys(tmp_path):
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"graph": "tree:3", "bogus": 1}))
    with pytest.raises(SystemExit):
        cli_main(["bayes-scaling", "--config", str(cfg_file)])


def test_cli_simulate_trace_dump(tmp_path):
    out = tmp_path / "trace.csv"
    rc = cli_main([
        "simulate", "--graph", "lattice:1", "--n", "3", "--channel", "diagnostic:1,0",
        "--seed", "2", "--t-max", "1", "--out", str(out),
    ])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# quicksource trace v1"
    assert lines[1] == "t,vertex,affected,observation"
    assert len(lines) > 4


def test_cli_exit_code_reflects_checks(tmp_path):
    # one n value: no trend checks, no budget violations -> 0
    rc = cli_main(["bayes-scaling", "--graph", "tree:3", "--n", "10", "--trials", "3",
                   "--out", str(tmp_path / "x.csv")])
    assert rc == 0


def test_campaign_registry():
    assert set(CAMPAIGNS) == {"bayes-scaling", "minimax-scaling", "transition", "concentration"}
