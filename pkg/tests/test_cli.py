import csv
import io
import subprocess
import sys

import pytest

from sgda import cli, config
from sgda.config import EvalSection, RunConfig, RunSection
from sgda.policy import TrainConfig

STRATEGIES = ("sgda", "uniform", "single_spec", "individual_props")


def rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    cfg = RunConfig(run=RunSection(rounds=1, initial_episodes=4, k=6, seed_samples=2, m=3, jobs=1),
                    train=TrainConfig(hidden=8, epochs=2),
                    eval=EvalSection(test_size=12, floor_frac=0.0))
    path = tmp_path_factory.mktemp("cfg") / "tiny.toml"
    path.write_text(config.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def runs(tiny_config, tmp_path_factory):
    base = tmp_path_factory.mktemp("runs")
    out = {}
    for s in STRATEGIES:
        d = base / s
        assert cli.main(["run", "--config", str(tiny_config), "--strategy", s, "--seed", "7",
                         "--out", str(d)]) == 0
        out[s] = d
    return out


def test_validate_shipped_config(capsys):
    assert cli.main(["validate-config", str(config.default_config_path())]) == 0
    assert capsys.readouterr().out.startswith("ok:")


def test_bad_config_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[run]\nstrategy = 'nope'\n")
    assert cli.main(["validate-config", str(bad)]) == 1
    assert "config error" in capsys.readouterr().err


def test_unknown_flag_exit_one(capsys):
    assert cli.main(["run", "--out", "x", "--bogus"]) == 1
    assert cli.main([]) == 1


def test_bad_jobs(tmp_path):
    assert cli.main(["run", "--jobs", "0", "--out", str(tmp_path / "r")]) == 1


def test_non_empty_out_exit_two(tmp_path, tiny_config, capsys):
    (tmp_path / "junk").write_text("x")
    assert cli.main(["run", "--config", str(tiny_config), "--out", str(tmp_path)]) == 2
    assert "not empty" in capsys.readouterr().err


def test_run_layout(runs):
    d = runs["sgda"]
    snap = config.load(d / "config.snapshot")
    assert (snap.run.seed, snap.run.strategy) == (7, "sgda")
    for name in ("policy.ckpt", "metrics.csv", "per_outcome.csv", "dtw.csv", "test_set.jsonl"):
        assert (d / "final" / name).is_file()
    assert (d / "round_0" / "pool.jsonl").is_file()


def test_run_is_byte_reproducible(runs, tiny_config, tmp_path):
    again = tmp_path / "again"
    assert cli.main(["run", "--config", str(tiny_config), "--strategy", "sgda", "--seed", "7",
                     "--out", str(again)]) == 0
    for name in ("metrics.csv", "policy.ckpt", "per_outcome.csv", "dtw.csv"):
        assert (again / "final" / name).read_bytes() == (runs["sgda"] / "final" / name).read_bytes()
    assert (again / "config.snapshot").read_bytes() == (runs["sgda"] / "config.snapshot").read_bytes()


def test_snapshot_reruns_identically(runs, tmp_path):
    d = tmp_path / "snap"
    assert cli.main(["run", "--config", str(runs["uniform"] / "config.snapshot"),
                     "--out", str(d)]) == 0
    assert (d / "final" / "metrics.csv").read_bytes() == (runs["uniform"] / "final" / "metrics.csv").read_bytes()


def test_report_aggregates(runs, tmp_path, capsys):
    out = tmp_path / "report"
    assert cli.main(["report", *map(str, runs.values()), "--out", str(out)]) == 0
    table = rows(out / "comparison.csv")
    assert [r["strategy"] for r in table] == list(STRATEGIES)
    for r in table:
        [m] = rows(runs[r["strategy"]] / "final" / "metrics.csv")
        for col in ("match_rate", "mean_dtw", "l1_loss"):
            assert r[col] == m[col]
    per = rows(out / "per_outcome.csv")
    assert len(per) == 8 and all(f"match_{s}" in per[0] for s in STRATEGIES)
    tidy = rows(out / "plot_data.csv")
    assert {r["metric"] for r in tidy} >= {"match_rate", "mean_dtw", "l1_loss"}
    assert len(tidy) == 4 * (len(cli.REPORT_METRICS) + 8)


def test_report_does_not_touch_runs(runs, tmp_path):
    before = {p: p.read_bytes() for p in runs["sgda"].rglob("*") if p.is_file()}
    cli.main(["report", str(runs["sgda"]), "--out", str(tmp_path / "r")])
    after = {p: p.read_bytes() for p in runs["sgda"].rglob("*") if p.is_file()}
    assert before == after


def test_evaluate_on_saved_test_set(runs, capsys):
    d = runs["single_spec"]
    capsys.readouterr()
    assert cli.main(["evaluate", str(d), "--test", str(d / "final" / "test_set.jsonl")]) == 0
    [got] = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    [want] = rows(d / "final" / "metrics.csv")
    for col in ("match_rate", "mean_dtw", "l1_loss", "test_size"):
        assert got[col] == want[col]


def test_sweep_from_runs(runs, tiny_config, tmp_path):
    out = tmp_path / "sweep"
    assert cli.main(["sweep-brake-threshold", "--config", str(tiny_config), "--seed", "7",
                     "--runs", str(runs["sgda"]), str(runs["uniform"]),
                     "--thresholds", "0.2,0.3,0.4,0.5", "--out", str(out)]) == 0
    table = rows(out / "brake_sweep.csv")
    assert [float(r["threshold"]) for r in table] == [0.2, 0.3, 0.4, 0.5]
    freqs = [float(r["expert_violation_freq"]) for r in table]
    assert all(a >= b for a, b in zip(freqs, freqs[1:]))
    assert {"violation_match_sgda", "violation_match_uniform"} <= set(table[0])


def test_bad_thresholds():
    assert cli.main(["sweep-brake-threshold", "--thresholds", "0.2,abc"]) == 1


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "sgda.cli", "validate-config",
                          str(config.default_config_path("full"))], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("ok:")
