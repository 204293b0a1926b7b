import json
import time

import numpy as np
import pandas as pd
import pytest
from scipy.integrate import trapezoid

from fleeting import cli, io
from fleeting.config import OUTPUT_DIR_ENV, ConfigError, RunConfig, resolve_config
from fleeting.null_model import NullParams, support_edges
from fleeting.panel import rolling_windows

SMALL = ["--n-assets", "20", "--t-total", "700", "--seed", "3"]


def run(*argv):
    code = cli.main([str(a) for a in argv])
    return code


def table(path):
    # the condition label "null" must not be parsed as a missing value
    return pd.read_csv(path, comment="#", keep_default_na=False)


def comments(path):
    out = {}
    for line in path.read_text().splitlines():
        if line.startswith("# "):
            k, v = line[2:].split("=", 1)
            out[k] = v
    return out


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", *SMALL, "--shift-start", 600, "--ohlc", "--output-dir", out) == 0
    return out


# --- config ---------------------------------------------------------------


def test_config_precedence():
    cfg = resolve_config({"seed": 4, "n_rep": 7}, {"seed": 9, "n_rep": None})
    assert cfg.seed == 9 and cfg.n_rep == 7
    assert resolve_config().q_out == 4.0


def test_config_rejects_unknown_and_invalid():
    with pytest.raises(ConfigError, match="unknown"):
        resolve_config({"nonsense": 1})
    with pytest.raises(ConfigError):
        resolve_config({"q_in": 1.5})
    with pytest.raises(ConfigError):
        resolve_config({"edge_c": -1})
    with pytest.raises(ConfigError):
        resolve_config({"seed": "abc"})


def test_config_windows():
    assert RunConfig().windows(100) == (400, 25)
    assert RunConfig(t_in=300, t_out=10).windows(100) == (300, 10)
    with pytest.raises(ConfigError):
        RunConfig(t_in=100).windows(100)


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "envout"))
    assert run("null-spectrum", "--grid-size", 50) == 0
    assert (tmp_path / "envout" / "null_spectrum.csv").exists()


def test_config_file_yaml_and_flag_override(tmp_path):
    cfg_file = tmp_path / "run.yaml"
    cfg_file.write_text("q-out: 0.25\ngrid_size: 40\n")
    out = tmp_path / "o"
    assert run("null-spectrum", "--config", cfg_file, "--grid-size", 30, "--output-dir", out) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["q_out"] == 0.25
    assert manifest["config"]["grid_size"] == 30
    assert len(table(out / "null_spectrum.csv")) == 30


def test_config_file_json(tmp_path):
    cfg_file = tmp_path / "run.json"
    cfg_file.write_text(json.dumps({"q_in": 0.5, "q_out": 1.0}))
    out = tmp_path / "o"
    assert run("null-spectrum", "--config", cfg_file, "--output-dir", out) == 0
    assert float(comments(out / "null_spectrum.csv")["lambda_min"]) == 0.0


# --- exit codes -----------------------------------------------------------


def test_exit_codes(tmp_path, capsys):
    assert run("null-spectrum", "--q-in", 1.2, "--output-dir", tmp_path) == cli.EXIT_CONFIG
    assert run("analyze", "--output-dir", tmp_path) == cli.EXIT_CONFIG
    assert run("analyze", "--data", tmp_path / "missing.csv", "--output-dir", tmp_path) == cli.EXIT_DATA
    assert run("bogus") == cli.EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("[unclosed")
    assert run("null-spectrum", "--config", bad) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "error" in err


def test_exit_code_numerical(tmp_path):
    # one asset never moves: every in-sample matrix is singular
    path = tmp_path / "flat.csv"
    dates = pd.bdate_range("2020-01-01", periods=40).strftime("%Y-%m-%d")
    rng = np.random.default_rng(0)
    rows = [["return", d, rng.standard_normal(), 0.0] for d in dates]
    io.write_table(path, ["field", "date", "a", "b"], rows)
    code = run("analyze", "--data", path, "--t-in", 20, "--t-out", 5, "--output-dir", tmp_path / "o")
    assert code == cli.EXIT_NUMERICAL


def test_exit_code_mapping():
    from fleeting.errors import DegenerateFactorError, SingularMatrixError

    assert cli.exit_code_for(SingularMatrixError("x")) == cli.EXIT_NUMERICAL
    assert cli.exit_code_for(DegenerateFactorError("x")) == cli.EXIT_DATA
    assert cli.exit_code_for(RuntimeError("x")) == 1


# --- null-spectrum --------------------------------------------------------


def test_null_spectrum_table(tmp_path):
    out = tmp_path / "ns"
    assert run("null-spectrum", "--output-dir", out) == 0
    meta = comments(out / "null_spectrum.csv")
    assert float(meta["lambda_min"]) == pytest.approx(1.15, abs=0.005)
    assert float(meta["lambda_max"]) == pytest.approx(13.97, abs=0.005)
    assert float(meta["zero_mass"]) == 0.75
    t = table(out / "null_spectrum.csv")
    assert len(t) == 1000
    area = trapezoid(t["density"], t["lambda"])
    assert area == pytest.approx(1 - 0.75, abs=1e-4)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "null-spectrum"
    assert manifest["outputs"] == ["null_spectrum.csv"]
    assert manifest["config"]["output_dir"] == str(out)


def test_null_spectrum_no_dirac_below_unit_q_out(tmp_path):
    assert run("null-spectrum", "--q-out", 0.25, "--output-dir", tmp_path) == 0
    assert float(comments(tmp_path / "null_spectrum.csv")["zero_mass"]) == 0.0


def test_null_spectrum_full_precision(tmp_path):
    assert run("null-spectrum", "--output-dir", tmp_path) == 0
    lmax = float(comments(tmp_path / "null_spectrum.csv")["lambda_max"])
    assert lmax == support_edges(NullParams(1, 0.25, 4.0)).lambda_max


# --- simulate -------------------------------------------------------------


def test_simulate_outputs(sim):
    truth = json.loads((sim / "truth.json").read_text())
    (shift,) = truth["shifts"]
    assert shift["start"] == 600 and shift["stop"] == 600 + 5
    assert np.linalg.norm(shift["direction"]) == pytest.approx(1.0, abs=1e-12)
    panel = io.read_panel(sim / "panel.csv")
    assert panel.returns.shape == (20, 700)
    ohlc = io.read_panel(sim / "ohlc.csv")
    assert ohlc.close.shape == (20, 700)


def test_simulate_desk_scale_budget(tmp_path):
    start = time.perf_counter()
    assert run("simulate", "--n-assets", 100, "--t-total", 2000, "--output-dir", tmp_path) == 0
    assert time.perf_counter() - start < 5.0


# --- analyze --------------------------------------------------------------


def test_analyze_outputs(sim, tmp_path):
    out = tmp_path / "an"
    assert run("analyze", "--data", sim / "panel.csv", "--output-dir", out) == 0
    lam = table(out / "lambdas.csv")
    n_pairs = len(rolling_windows(700, 80, 5))
    assert len(lam) == n_pairs
    assert np.all(lam["lambda_1"] >= lam["lambda_2"])
    exc = table(out / "exceedances.csv")
    assert len(exc) == n_pairs
    assert np.array_equal(exc["exceeds"], exc["margin"] > 0)
    # the shift [600, 605) is fully covered by the out-window anchored at 605
    assert bool(exc.loc[exc["anchor"] == 605, "exceeds"].iloc[0])
    modes = [json.loads(line) for line in (out / "modes.jsonl").read_text().splitlines()]
    assert len(modes) == n_pairs and len(modes[0]["modes_asset_basis"]) == 2
    assert np.linalg.norm(modes[0]["modes_asset_basis"][0]) == pytest.approx(1.0, abs=1e-10)
    pooled = comments(out / "pooled_spectrum.csv")
    assert float(pooled["zero_fraction"]) == pytest.approx(0.75, abs=1e-12)
    assert len(table(out / "failures.csv")) == 0


def test_analyze_threshold_override(sim, tmp_path):
    assert run("analyze", "--data", sim / "panel.csv", "--threshold", 1e9, "--output-dir", tmp_path) == 0
    assert not table(tmp_path / "exceedances.csv")["exceeds"].any()


def test_analyze_ohlc_input_and_universe(sim, tmp_path):
    out = tmp_path / "u"
    assert run("analyze", "--data", sim / "ohlc.csv", "--universe", "A000,A001,A002", "--t-in", 30,
               "--t-out", 3, "--output-dir", out) == 0
    summary = json.loads((out / "manifest.json").read_text())["summary"]
    assert summary["n_assets"] == 3
    assert run("analyze", "--data", sim / "ohlc.csv", "--universe", "A000,ZZZ", "--output-dir", out) == cli.EXIT_DATA


# --- overlaps -------------------------------------------------------------


def test_overlaps_curves(sim, tmp_path):
    out = tmp_path / "ov"
    assert run("overlaps", "--data", sim / "panel.csv", "--n-rep", 3, "--null-dates", 3, "--output-dir", out) == 0
    t = table(out / "overlaps.csv")
    assert set(t["condition"]) == {"top-decile", "bottom", "unconditional", "null"}
    for _, g in t.groupby("condition"):
        v = g.sort_values("n")["value"].to_numpy()
        assert len(v) == 20
        assert np.all(np.diff(v) >= 0) and np.all((v >= 0) & (v <= 1))
        assert v[-1] == pytest.approx(1.0, abs=1e-10)


# --- factor-align ---------------------------------------------------------


def test_factor_align(sim, tmp_path):
    out = tmp_path / "fa"
    assert run("factor-align", "--data", sim / "panel.csv", "--n-rep", 5, "--n-max", 10, "--output-dir", out) == 0
    t = table(out / "factor_align.csv")
    assert set(t["condition"]) == {"top-decile", "bottom", "unconditional", "null"}
    assert t["n"].max() == 10
    assert np.all((t["value"] >= 0) & (t["value"] <= 1))
    dates = table(out / "factor_dates.csv")
    assert dates["amplitude_max_dev"].max() < 1e-12
    skipped = table(out / "factor_skipped.csv")
    # anchors whose momentum date falls inside the 500-day burn-in
    assert len(skipped) + len(dates) == len(rolling_windows(700, 80, 5))


def test_factor_align_default_n_max():
    assert RunConfig().n_max == 30


def test_factor_align_needs_prices(tmp_path):
    path = tmp_path / "r.csv"
    rng = np.random.default_rng(0)
    dates = pd.bdate_range("2020-01-01", periods=40).strftime("%Y-%m-%d")
    io.write_table(path, ["field", "date", "a", "b"], [["return", d, *rng.standard_normal(2)] for d in dates])
    assert run("factor-align", "--data", path, "--t-in", 20, "--t-out", 2, "--output-dir", tmp_path) == cli.EXIT_DATA


# --- calibrate-edge -------------------------------------------------------


def test_calibrate_edge(tmp_path):
    assert run("calibrate-edge", "--n-assets", 30, "--calib-rep", 20, "--output-dir", tmp_path) == 0
    cal = json.loads((tmp_path / "calibration.json").read_text())
    assert cal["n_rep"] == 20 and (cal["t_in"], cal["t_out"]) == (120, 8)
    samples = table(tmp_path / "lambda1_samples.csv")
    assert len(samples) == 20
    assert cal["quantile_threshold"] == pytest.approx(np.quantile(samples["lambda_1"], 0.95))


# --- determinism ----------------------------------------------------------


def test_simulate_same_seed_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", "--n-assets", 8, "--t-total", 120, "--ohlc", "--output-dir", tmp_path / d) == 0
    for f in ("panel.csv", "truth.json", "ohlc.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert run("simulate", "--n-assets", 8, "--t-total", 120, "--seed", 1, "--output-dir", tmp_path / "c") == 0
    assert (tmp_path / "a" / "panel.csv").read_bytes() != (tmp_path / "c" / "panel.csv").read_bytes()
