import json
import subprocess
import sys

import pytest

from epicast import cli, harness


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["simulate", "--out", str(d), "--regions", "2", "--seed", "4"]) == cli.EXIT_OK
    cfg = json.loads((d / "config.json").read_text())
    cfg.update(first_origin="2021-01-03", last_date="2021-01-17", chains=2, iterations=200, warmup=100)
    (d / "config.json").write_text(json.dumps(cfg))
    return d


def test_simulate_writes_corpus_and_config(workspace):
    for name in ("cases.csv", "phases.csv", "config.json"):
        assert (workspace / name).exists()
    cfg = json.loads((workspace / "config.json").read_text())
    assert [m["model"] for m in cfg["models"]] == list(harness.FAMILIES)


def test_backtest_score_report(workspace, capsys):
    config = str(workspace / "config.json")
    code = cli.main(["backtest", "--config", config, "--models", "cori,sarima", "--draws", "60", "--jobs", "2"])
    assert code == cli.EXIT_OK
    store = workspace / "store"
    rows = harness.ForecastStore(store).manifest()
    assert len(rows) == 2 * 2 * 3 and {r["model"] for r in rows} == {"cori", "sarima"}

    assert cli.main(["score", "--store", str(store), "--input", str(workspace / "cases.csv")]) == cli.EXIT_OK
    for name in ("scores", "summary", "pairwise", "hotspots", "hotspot_auc", "ribbons", "best_variants"):
        assert (store / "scores" / f"{name}.csv").exists()

    capsys.readouterr()
    assert cli.main(["report", "--store", str(store)]) == cli.EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("model,n,mean_crps,relative_skill")
    assert {line.split(",")[0] for line in out[1:]} == {"cori", "sarima"}
    figures = list((store / "figures").glob("*.png"))
    assert figures and all(p.stat().st_size > 0 for p in figures)


@pytest.mark.parametrize(
    "argv",
    [
        ["backtest", "--config", "missing.json"],
        ["backtest", "--config", "CONFIG", "--models", "prophet"],
        ["backtest", "--config", "CONFIG", "--jobs", "0"],
        ["backtest", "--config", "CONFIG", "--draws", "1"],
        ["score", "--store", "nowhere"],
        ["report", "--store", "nowhere"],
    ],
)
def test_config_errors_exit_1(workspace, tmp_path, monkeypatch, argv):
    monkeypatch.chdir(tmp_path)
    argv = [str(workspace / "config.json") if a == "CONFIG" else a for a in argv]
    assert cli.main(argv) == cli.EXIT_CONFIG


def test_partial_failure_exits_2(workspace, tmp_path, monkeypatch):
    cfg = json.loads((workspace / "config.json").read_text())
    cfg.update(output=str(tmp_path / "store"), cases=str(workspace / "cases.csv"),
               phases=str(workspace / "phases.csv"), draws=40)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    real = harness.forecast_variant

    def flaky(variant, window, *args):
        if variant.family == "gp":
            raise RuntimeError("injected")
        return real(variant, window, *args)

    monkeypatch.setattr(harness, "forecast_variant", flaky)
    assert cli.main(["backtest", "--config", str(path), "--models", "cori,gp"]) == cli.EXIT_PARTIAL
    assert cli.main(["score", "--store", str(tmp_path / "store")]) == cli.EXIT_PARTIAL
    rows = harness.read_csv(tmp_path / "store" / "scores" / "scores.csv")
    assert rows and {r["model"] for r in rows} == {"cori"}


def test_entry_point_help():
    result = subprocess.run([sys.executable, "-m", "epicast.cli", "--help"], capture_output=True, text=True)
    assert result.returncode == 0
    for command in ("backtest", "score", "report"):
        assert command in result.stdout
