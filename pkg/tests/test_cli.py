import json

import pytest

from netload.pipeline import backtest as bt
from netload.pipeline import cli
from netload.quantreg import ConvergenceError

from conftest import SMALL_CONFIG


@pytest.fixture(scope="module")
def run_dir(small_dir, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.txt"
    cfg.write_text(SMALL_CONFIG.replace("dataset.csv", str(small_dir / "dataset.csv"))
                   .replace("holidays.txt", str(small_dir / "holidays.txt"))
                   .replace("school.txt", str(small_dir / "school.txt"))
                   + "output = out\n")
    assert cli.main(["backtest", str(cfg)]) == 0
    return root


def test_validate_ok(small_dir, capsys):
    assert cli.main(["validate", str(small_dir / "dataset.csv"), "--preset", "gam-grid"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["findings"] == [] and rep["rows"] == 120 * 48


def test_validate_failure_exit_code(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("timestamp,netload\n2018-01-01T00:00:00Z,1\n"
                                      "2018-01-01T00:00:00Z,2\n")
    assert cli.main(["validate", str(tmp_path / "bad.csv")]) == 2
    assert "duplicate" in capsys.readouterr().err
    assert cli.main(["validate", str(tmp_path / "missing.csv")]) == 2


def test_bad_config_exit_code(tmp_path):
    (tmp_path / "c.txt").write_text("dataset = x.csv\ntest_start = 2018-01-01\ncadence = 7min\n")
    assert cli.main(["backtest", str(tmp_path / "c.txt")]) == 2


def test_convergence_exit_code(run_dir, monkeypatch):
    def boom(cfg):
        raise ConvergenceError("no optimum")
    monkeypatch.setattr(bt, "run_backtest", boom)
    assert cli.main(["backtest", str(run_dir / "config.txt")]) == 3


def test_backtest_outputs(run_dir):
    out = run_dir / "out"
    assert (out / "forecasts_conditional.csv").exists()
    assert (out / "reserve_conditional_vs_static.csv").exists()


def test_evaluate_and_reserve(run_dir):
    out = run_dir / "out"
    ev_dir = run_dir / "eval"
    assert cli.main(["evaluate", str(out / "forecasts_conditional.csv"), "--out", str(ev_dir),
                     "--against", str(out / "forecasts_static.csv"),
                     "--n-boot", "20", "--n-sim", "20"]) == 0
    rec = json.loads((ev_dir / "eval.json").read_text())
    assert "model-vs-reference" in rec["dm"]
    rs_dir = run_dir / "reserve"
    assert cli.main(["reserve", str(out / "forecasts_conditional.csv"), "--out", str(rs_dir),
                     "--against", str(out / "forecasts_static.csv"),
                     "--standardizer", str(out / "standardizer.json")]) == 0
    assert (rs_dir / "reserve_comparison.csv").read_text().count("\n") == 9


def test_fit_predict_features(run_dir):
    cfg = str(run_dir / "config.txt")
    assert cli.main(["features", cfg, "--out", str(run_dir / "f" / "features.csv")]) == 0
    assert (run_dir / "f" / "standardizer.json").exists()
    model = run_dir / "model.json"
    assert cli.main(["fit", cfg, "--out", str(model)]) == 0
    assert cli.main(["predict", cfg, "--model", str(model), "--out", str(run_dir / "p")]) == 0
    assert (run_dir / "p" / "forecasts_conditional.csv").exists()


def test_synth(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path), "--days", "10", "--seed", "2"]) == 0
    for name in ("dataset.csv", "oracle.csv", "holidays.txt", "config.txt", "generator.json"):
        assert (tmp_path / name).exists()
    assert cli.main(["validate", str(tmp_path / "dataset.csv"), "--preset", "gam-grid"]) == 0
