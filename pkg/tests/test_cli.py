import json
import subprocess
import sys

import numpy as np
import pytest
from scipy.signal import argrelmax

from qdinterference.cli import (
    DEFAULTS,
    ResultBundle,
    RunConfig,
    emit_plotdata,
    main,
    run_scenario,
)
from qdinterference.errors import ConfigError, NumericalError
from qdinterference.io import load_table


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_simulate_g2_peak_bounds(tmp_path, capsys):
    code, out, _ = _run(["simulate-g2", "--n", "5", "--gamma-d", "3.0", "--irf-fwhm-ps", "35",
                         "-o", str(tmp_path)], capsys)
    assert code == 0
    g0 = json.loads(out)["report"]["traces"]["g2"]["g2_zero"]
    assert 0.8 < g0 < 1.6
    table = load_table(tmp_path / "trace_g2.csv")
    assert table["model"][np.argmin(np.abs(table["tau"]))] == pytest.approx(g0)


def test_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("scenario: simulate-g2\nseed: 4\noutput: %s\nparams:\n  n: 3\n  gamma_d: 1.0\n"
                   % (tmp_path / "out"))
    code, out, _ = _run(["simulate-g2", "--config", str(cfg), "--gamma-d", "2.0",
                         "--set", "tau_span=2"], capsys)
    assert code == 0
    doc = json.loads((tmp_path / "out" / "result.json").read_text())
    assert doc["seed"] == 4
    assert doc["config"]["params"]["n"] == 3
    assert doc["config"]["params"]["gamma_d"] == 2.0
    assert doc["config"]["params"]["tau_span"] == 2
    # the echo holds every parameter, defaults included
    assert set(doc["config"]["params"]) == set(DEFAULTS["simulate-g2"])


def test_config_scenario_mismatch():
    with pytest.raises(ConfigError):
        RunConfig.from_sources("hom", {"scenario": "fit"})
    with pytest.raises(ConfigError):
        RunConfig("hom", {"nope": 1})
    with pytest.raises(ConfigError):
        RunConfig("nope", {})
    with pytest.raises(ConfigError):
        RunConfig.from_sources("hom", {"extra": 1})


def test_usage_error_exit_code(capsys):
    code, _, err = _run(["simulate-g2", "--unknown-flag", "1"], capsys)
    assert code == 1
    assert json.loads(err)["error"] == "ConfigError"
    code, _, _ = _run([], capsys)
    assert code == 1
    code, _, _ = _run(["simulate-g2", "--n", "0"], capsys)
    assert code == 1


def test_data_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "h.csv"
    bad.write_text("0.0,1\n0.1,-1\n")
    code, _, err = _run(["single-dot-fit", "--set", f"data={bad}"], capsys)
    assert code == 2
    rec = json.loads(err)
    assert rec["exit_code"] == 2 and "negative count" in rec["message"]


def test_numerical_error_exit_code(monkeypatch, capsys):
    import qdinterference.cli as cli

    def boom(cfg, bundle):
        raise NumericalError("integrator diverged")

    monkeypatch.setitem(cli.RUNNERS, "hom", boom)
    code, _, err = _run(["hom"], capsys)
    assert code == 3 and json.loads(err)["message"] == "integrator diverged"


def test_hologram_single_spot(tmp_path, capsys):
    code, out, _ = _run(["hologram", "--spots", "[[2.0, -1.0, 1.0]]", "-o", str(tmp_path)], capsys)
    assert code == 0
    rep = json.loads(out)["report"]["hologram"]
    assert rep["fiber_coupling"][0] > 0.8
    assert rep["peak_offset_pixels"][0] <= 1
    for suffix in (".pgm", ".json", ".npy"):
        assert (tmp_path / f"mask_hologram{suffix}").is_file()


def test_wavefront_match_and_hom_chain(tmp_path, capsys):
    wm = tmp_path / "wm"
    code, out, _ = _run(["wavefront-match", "-o", str(wm)], capsys)
    assert code == 0
    rep = json.loads(out)["report"]["wavefront_match"]
    assert np.all(np.abs(np.array(rep["splitting"]) - 0.5) <= 0.02)
    assert rep["unitarity_deviation"] < 0.05
    code, out, _ = _run(["hom", "--transfer", str(wm), "--gamma-d1", "0.5", "--gamma-d2", "0.5"],
                        capsys)
    assert code == 0
    real = json.loads(out)["report"]["hom"]["g2_zero"]
    _run(["hom", "--gamma-d1", "0.5", "--gamma-d2", "0.5"], capsys)
    code, out, _ = _run(["hom", "--gamma-d1", "0.5", "--gamma-d2", "0.5"], capsys)
    ideal = json.loads(out)["report"]["hom"]["g2_zero"]
    assert abs(real - ideal) < 0.02


def test_hom_report(capsys):
    code, out, _ = _run(["hom", "--target-visibility", "0.737", "--oracle", "true",
                         "--gamma-d1", "1.0", "--gamma-d2", "1.0"], capsys)
    rep = json.loads(out)["report"]["hom"]
    assert code == 0
    assert rep["visibility"] == pytest.approx(0.5)
    assert rep["oracle_g2_zero"] == pytest.approx(rep["g2_zero"], abs=0.01)
    assert rep["gamma_d_for_target_visibility"] == pytest.approx(1 / 0.737 - 1)


def test_oracle_scenario(capsys):
    code, out, _ = _run(["oracle-g2", "--n", "3", "--tau-span", "3"], capsys)
    assert code == 0
    rep = json.loads(out)["report"]["traces"]["g2"]
    assert rep["max_abs_diff_vs_analytic"] < 1e-9


def test_single_dot_fit_synthetic(capsys):
    code, out, _ = _run(["single-dot-fit", "--synthetic-rate-sum", "2.0"], capsys)
    fit = json.loads(out)["report"]["fit"]
    assert code == 0
    assert fit["values"]["rate_sum[single]"] == pytest.approx(2.0, abs=4 * fit["errors"]["rate_sum[single]"])


def test_fit_packaged_dataset(tmp_path, capsys):
    code, out, _ = _run(["fit", "-o", str(tmp_path)], capsys)
    assert code == 0
    fit = json.loads(out)["report"]["fit"]
    assert "gamma_d" in fit["values"] and "gamma_d" in fit["shared"]
    assert fit["values"]["gamma_d"] == pytest.approx(3.0, abs=0.15)
    for label, d in fit["detuning_uev"].items():
        truth = float(label.split("_")[1].replace("ueV", ""))
        assert d["value"] == pytest.approx(truth, abs=max(0.02 * truth, 0.02 * 19.1))
    files = emit_plotdata(ResultBundle.read(tmp_path), tmp_path / "plots")
    header = files[0].read_text().splitlines()[0]
    assert header == "# tau,data,model,residual"


def test_emit_plotdata_model_only_is_two_columns(tmp_path):
    bundle = run_scenario(RunConfig("simulate-g2", {"n": 2, "tau_span": 1.0}))
    files = emit_plotdata(bundle, tmp_path)
    assert files[0].read_text().splitlines()[0] == "# tau,model"


def test_emit_plotdata_n_sweep_monotone(tmp_path, capsys):
    _run(["simulate-g2", "--n", "[2, 3, 4, 5]", "-o", str(tmp_path)], capsys)
    code, out, _ = _run(["emit-plotdata", str(tmp_path)], capsys)
    assert code == 0
    files = sorted(tmp_path.glob("plot_*.csv"))
    assert len(files) == 4
    peaks = []
    for n in (2, 3, 4, 5):
        t = load_table(tmp_path / f"plot_N{n}_D0ueV.csv")
        peaks.append(t["model"][np.argmin(np.abs(t["tau"]))])
    assert np.all(np.diff(peaks) > 0)


def test_emit_plotdata_detuning_sweep_beats(tmp_path, capsys):
    _run(["simulate-g2", "--n", "2", "--gamma-d", "1.0", "--detuning-uev", "[4.8, 9.5, 19.1]",
          "-o", str(tmp_path)], capsys)
    bundle = ResultBundle.read(tmp_path)
    files = emit_plotdata(bundle, tmp_path / "plots")
    spacings = []
    for det in ("4.8", "9.5", "19.1"):
        t = load_table(tmp_path / "plots" / f"plot_N2_D{det}ueV.csv")
        pos = t["tau"] >= 0
        g = t["model"][pos] - (1 - np.exp(-1.5 * t["tau"][pos]) / 2)
        peaks = argrelmax(g)[0]
        spacings.append(np.mean(np.diff(t["tau"][pos][peaks][:3])))
    assert len(files) == 3
    assert spacings[0] > spacings[1] > spacings[2]


def test_trace_files_round_trip(tmp_path, capsys):
    _run(["hom", "-o", str(tmp_path / "a")], capsys)
    bundle = ResultBundle.read(tmp_path / "a")
    bundle.write(tmp_path / "b")
    for name in ("result.json", "trace_hom.csv", "trace_hom_distinguishable.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_console_script_runs(tmp_path):
    res = subprocess.run([sys.executable, "-m", "qdinterference.cli", "hom", "--tau-span", "2"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert json.loads(res.stdout)["scenario"] == "hom"
