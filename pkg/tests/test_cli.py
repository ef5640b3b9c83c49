import csv
import json
import subprocess
import sys

import pytest
import synthetic

from cpmmsim.calibration import calibrate, load_market_data
from cpmmsim.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE, main, parse_axis
from cpmmsim.io import atomic_write_text, load_config_file, write_csv
from cpmmsim.market import bps


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_axis():
    assert parse_axis("1,2.5,4") == [1.0, 2.5, 4.0]
    assert parse_axis("1:3:0.5") == [1.0, 1.5, 2.0, 2.5, 3.0]
    assert parse_axis(None) is None


def test_simulate_smoke_and_manifest(tmp_path):
    out = tmp_path / "run"
    assert main(["--out", str(out), "simulate", "--paths", "20", "--n-steps", "200",
                 "--horizon", "0.1388888888888889"]) == 0
    stats = json.loads((out / "stats.json").read_text())
    for key in ("e_profit", "e_fees", "e_volume", "p_profit", "p_buysell", "p_arb"):
        assert key in stats
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "simulate" and manifest["config"]["n_steps"] == 200
    assert len(_rows(out / "ratio_histogram.csv")) == 201
    assert _rows(out / "stats.csv")[0]["e_profit"] == repr(stats["e_profit"])


def test_simulate_dead_market_all_zero(tmp_path):
    assert main(["--out", str(tmp_path), "simulate", "--sigma", "0", "--demand", "0", "--paths", "3",
                 "--n-steps", "50"]) == 0
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["e_profit"] == 0 and stats["e_fees"] == 0 and stats["e_volume"] == 0


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CPMMSIM_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["stats"]) == 0
    report = json.loads((tmp_path / "env" / "region_stats.json").read_text())
    assert report["approx_optimal_eta1"] == pytest.approx(bps(10), abs=bps(0.5))
    assert report["infinite_demand_revenue_per_period"] == pytest.approx(33.75, rel=1e-3)


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("eta1_bps = 10\nsigma = 0.03\nn_steps = 100\nhorizon = 0.0694444\npaths = 7\n")
    out = tmp_path / "o"
    assert main(["--out", str(out), "simulate", "--config", str(cfg), "--sigma", "0.05"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["fees"]["eta1"] == pytest.approx(0.001)
    assert manifest["config"]["price_model"]["sigma"] == 0.05
    assert manifest["paths"] == 7


def test_replay_reproduces_outputs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(a), "simulate", "--paths", "10", "--n-steps", "100", "--horizon", "0.07"]) == 0
    assert main(["--out", str(b), "replay", str(a / "manifest.json")]) == 0
    assert (a / "stats.json").read_bytes() == (b / "stats.json").read_bytes()
    assert (a / "ratio_histogram.csv").read_bytes() == (b / "ratio_histogram.csv").read_bytes()


def test_sweep_toy_grid_and_regret(tmp_path):
    args = ["--out", str(tmp_path), "sweep", "--paths", "10", "--n-steps", "100", "--horizon", "0.07",
            "--eta1-axis", "10,15", "--sigma-axis", "0.03,0.04", "--demand-axis", "8000,12000",
            "--regret-at-bps", "15"]
    assert main(args) == 0
    assert len(_rows(tmp_path / "surface.csv")) == 8
    optimal = _rows(tmp_path / "optimal_fee.csv")
    assert len(optimal) == 4
    regret = _rows(tmp_path / "regret.csv")
    assert all(float(r["regret"]) >= 0 for r in regret)
    assert main(args + ["--resume"]) == 0
    assert len((tmp_path / "cells.jsonl").read_text().splitlines()) == 4


def test_sweep_regret_fee_must_be_on_axis(tmp_path):
    assert main(["--out", str(tmp_path), "sweep", "--paths", "2", "--n-steps", "10", "--horizon", "0.01",
                 "--eta1-axis", "10,20", "--regret-at-bps", "15"]) == EXIT_USAGE


def test_calibrate_and_backtest_from_files(tmp_path):
    data = synthetic.market(synthetic.cex_path(1, seed=3), bps(10), bps(30), 12000.0)
    cex, dex = synthetic.write_csvs(data, tmp_path)
    out = tmp_path / "cal"
    assert main(["--out", str(out), "calibrate", "--cex", str(cex), "--dex", str(dex),
                 "--sigma-grid", "0.02,0.026,0.032", "--eta0-grid-bps", "6,10,14",
                 "--demand-grid", "12000", "--paths", "2"]) == 0
    report = json.loads((out / "calibration.json").read_text())
    direct = calibrate(load_market_data(cex, dex), bps(30), [0.02, 0.026, 0.032],
                       [bps(6), bps(10), bps(14)], [12000.0], n_paths=2)
    assert report["eta0"] == direct.eta0 and report["sigma"] == direct.sigma
    assert report["objective"] == direct.objective
    assert len(report["trace"]) == 9
    assert report["noise_floor"] > 0 and len(report["replicate_objectives"]) == 4
    bt = tmp_path / "bt"
    assert main(["--out", str(bt), "backtest", "--cex", str(cex), "--dex", str(dex),
                 "--eta0-bps", "10", "--eta1-bps", "30", "--demand", "12000"]) == 0
    rows = _rows(bt / "backtest.csv")
    assert len(rows) == len(data.cex_path) - 1
    assert rows[0]["time"] == "2025-01-01T00:02:00"
    assert set(rows[0]) == {"time", "unhedged_pnl", "hedged_pnl", "ratio", "in_profit", "in_buysell",
                            "outside_arb"}


def test_missing_dex_file_is_data_error(tmp_path, capsys):
    cex = tmp_path / "cex.csv"
    cex.write_text("timestamp,price\n2025-01-01T00:00:00Z,3000\n2025-01-01T00:01:00Z,3001\n")
    code = main(["--out", str(tmp_path), "calibrate", "--cex", str(cex), "--dex", str(tmp_path / "no.csv")])
    assert code == EXIT_DATA
    assert "not found" in capsys.readouterr().err


@pytest.mark.parametrize("args", [
    ["simulate", "--bogus"],
    ["simulate", "--paths", "0"],
    ["simulate", "--eta1-bps", "20000"],
    ["sweep", "--eta1-axis", "5,3"],
    ["simulate", "--config", "does-not-exist.json"],
    ["calibrate", "--cex", "c.csv", "--dex", "d.csv", "--noise-replicates", "1"],
])
def test_usage_errors(tmp_path, args):
    assert main(["--out", str(tmp_path)] + args) == EXIT_USAGE


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    import cpmmsim.cli as cli_mod

    def boom(*a, **k):
        raise FloatingPointError("non-finite state")

    monkeypatch.setattr(cli_mod, "run_ensemble", boom)
    assert main(["--out", str(tmp_path), "simulate", "--paths", "1"]) == EXIT_NUMERIC


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cpmmsim.cli", "--out", str(tmp_path), "stats"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "arb_high" in proc.stdout


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "x.csv"
    atomic_write_text(target, "old\n")

    class Exploding:
        def __str__(self):
            raise RuntimeError("boom")

    with pytest.raises(RuntimeError):
        write_csv(target, [{"a": Exploding()}])
    assert target.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]


def test_load_config_json_and_toml(tmp_path):
    (tmp_path / "a.json").write_text('{"sigma": 0.03}')
    (tmp_path / "a.toml").write_text("sigma = 0.03\n")
    assert load_config_file(tmp_path / "a.json") == load_config_file(tmp_path / "a.toml") == {"sigma": 0.03}
