import csv
import math

import pytest

from mcd import cli
from mcd.config import KEYS, ConfigError, RunConfig, help_text, load, parse_text
from scipy.special import ndtr


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_defaults_are_documented_and_valid():
    cfg = RunConfig()
    for key in KEYS:
        cfg[key]  # every default parses
    text = help_text()
    assert all(k in text for k in KEYS)


def test_parse_reports_line_numbers():
    with pytest.raises(ConfigError, match=r":3:"):
        parse_text("seed=1\n# comment\nnot a pair\n", "f.cfg")
    with pytest.raises(ConfigError, match="unknown"):
        parse_text("model.widht=3\n")


def test_file_then_overrides(tmp_path):
    f = tmp_path / "a.cfg"
    f.write_text("seed = 5  # trailing comment\nmodel.width=32\n")
    cfg = load(f, {"model.width": "48"})
    assert cfg["seed"] == 5 and cfg["model.width"] == 48
    with pytest.raises(ConfigError):
        load(f, {"model.width": "wide"})


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["calibrate", "--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for key, spec in KEYS.items():
        assert key in out
    assert "default=0.001953125" in out


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run("calibrate") == 1  # --out missing
    assert run("nonsense", "--out", tmp_path) == 1
    assert run("calibrate", "--out", tmp_path, "--model.widht", "3") == 1
    assert run("calibrate", "--out", tmp_path, "--set", "seed") == 1
    assert run() == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed=1\noops\n")
    assert run("calibrate", "--out", tmp_path, "--config", bad) == 1
    assert "bad.cfg:2" in capsys.readouterr().err


def test_missing_teacher_exit_1(tmp_path):
    assert run("distill", "--out", tmp_path / "d") == 1
    assert run("sample", "--out", tmp_path / "s") == 1
    assert run("sample", "--out", tmp_path / "s", "--checkpoint", tmp_path / "none.mcd") == 1


def test_calibrate_k2_row(tmp_path):
    out = tmp_path / "cal"
    assert run("calibrate", "--out", out, "--K", 2, "--schedule.points", 11) == 0
    with open(out / "calibration.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12  # gamma 0.5 coincides with a grid point
    row = min(rows, key=lambda r: abs(float(r["gamma"]) - 0.760250))
    assert abs(float(row["gamma"]) - 0.760250) < 1e-12
    assert float(row["ratio"]) == pytest.approx(1.0, abs=1e-5)
    # closed form for K = 2: ratio = sqrt(2) * ndtri(gamma)
    for r in rows:
        g = float(r["gamma"])
        if 1e-3 < g < 1 - 1e-3:
            assert ndtr(float(r["ratio"]) / math.sqrt(2)) == pytest.approx(g, abs=1e-9)
        assert float(r["alpha"]) ** 2 + float(r["sigma"]) ** 2 == pytest.approx(1.0)
    resolved = (out / "resolved.cfg").read_text()
    assert "schedule.K=2\n" in resolved and "schedule.points=11\n" in resolved


def test_resolved_config_round_trips(tmp_path):
    out = tmp_path / "c"
    assert run("calibrate", "--out", out, "--set", "seed=3", "--schedule.points=5") == 0
    cfg = load(out / "resolved.cfg")
    assert cfg.dumps() == (out / "resolved.cfg").read_text()
    assert cfg["seed"] == 3


def test_verify_small(tmp_path):
    out = tmp_path / "v"
    code = run("verify", "--out", out, "--eval.verify_K", "2,7", "--eval.verify_samples", 20000,
               "--eval.verify_grid", 4, "--eval.lock_trajectories", 200, "--eval.lock_grid", 8)
    assert code == 0
    lines = (out / "duality_report.csv").read_text().splitlines()
    assert lines[0].startswith("K,t,gamma")
    assert len([ln for ln in lines if ln.startswith("# summary")]) == 2


def test_verify_failure_exit_2(tmp_path, monkeypatch):
    import mcd.duality as dual

    real = dual.verify_duality_report

    def broken(*a, **kw):
        rep = real(*a, **kw)
        rep.nesting_violations = 1
        return rep
    monkeypatch.setattr(dual, "verify_duality_report", broken)
    code = run("verify", "--out", tmp_path, "--eval.verify_K", "3", "--eval.verify_samples", 10000,
               "--eval.verify_grid", 2, "--eval.lock_trajectories", 50, "--eval.lock_grid", 4)
    assert code == 2


TINY = ["--model.width", 16, "--model.depth", 1, "--eval.context", 16, "--eval.train_tokens", 4000,
        "--eval.heldout_tokens", 1600, "--pretrain.steps", 20, "--pretrain.batch", 8, "--distill.rounds", 2,
        "--distill.iters", 5, "--distill.batch", 8, "--eval.steps", "2,4", "--eval.count", 8]


def test_pipeline_commands(tmp_path):
    d = tmp_path / "run"
    assert run("pretrain", "--out", d, *TINY) == 0
    assert (d / "teacher.mcd").exists() and (d / "train.txt").exists() and (d / "pretrain_metrics.csv").exists()
    assert run("distill", "--out", d, *TINY) == 0
    assert (d / "student_r2.mcd").exists() and (d / "metrics.csv").exists()
    assert run("eval", "--out", d, *TINY) == 0
    with open(d / "benchmark.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["round"], r["steps"]) for r in rows] == [(str(r), str(s)) for r in (0, 1, 2) for s in (2, 4)]
    s = tmp_path / "samples"
    assert run("sample", "--out", s, "--checkpoint", d / "student_r2.mcd", "--sample.count", 5,
               "--sample.scores", "true", *TINY) == 0
    lines = (s / "samples.txt").read_text().splitlines()
    assert len(lines) == 5 and all(len(ln) == 16 and "_" not in ln for ln in lines)
    assert (s / "sample_scores.csv").read_text().startswith("index,mean_log_prob,ppl")


def test_repro_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("repro", "--out", tmp_path / name, *TINY) == 0
    for f in ("table2_desk.csv", "metrics.csv", "pretrain_metrics.csv", "resolved.cfg"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
