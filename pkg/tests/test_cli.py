import csv
import io
import json

import numpy as np
import pytest

from survlab import cli
from survlab.free import SurvivalSeries, gaussian_monomial_oracle, survival_free


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_config(tmp_path, config, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return path


PHI2 = {"kind": "gaussian_monomial", "n": 2, "a": 0.5}


# --- validation --------------------------------------------------------------------


def test_validate_fills_defaults(tmp_path, capsys):
    code, out, _ = run(["validate", write_config(tmp_path, {"state": PHI2})], capsys)
    assert code == cli.EXIT_OK
    cfg = json.loads(out)
    assert cfg["hamiltonian"] == {"type": "free"}
    assert cfg["time_grid"] == {"t_min": 0.1, "t_max": 1000.0, "per_decade": 40}
    assert cfg["state"]["normalize"] is True


@pytest.mark.parametrize("config,field", [
    ({"state": PHI2, "hamiltonian": {"type": "barrier", "V0": -1, "a": 1}}, "hamiltonian.V0"),
    ({"state": PHI2, "hamiltonian": {"type": "barrier", "V0": 1}}, "hamiltonian"),
    ({"state": PHI2, "bogus": 1}, "bogus"),
    ({"state": {"kind": "gaussian_monomial", "n": -1}}, "state.n"),
    ({"state": {"kind": "compact_bump", "k_lo": 2.0, "k_hi": 1.0}}, "state"),
    ({"state": PHI2, "time_grid": {"t_min": 10, "t_max": 1}}, "time_grid"),
    ({"state": PHI2, "analyses": ["nonsense"]}, "analyses"),
])
def test_invalid_configs_exit_2_and_name_field(tmp_path, capsys, config, field):
    code, _, err = run(["validate", write_config(tmp_path, config)], capsys)
    assert code == cli.EXIT_INVALID
    assert field in err


def test_validate_function_raises_config_error():
    with pytest.raises(cli.ConfigError) as info:
        cli.validate({"state": {"kind": "gaussian_monomial", "a": 0}})
    assert info.value.field == "state.a"


def test_missing_config_file_is_invalid(tmp_path, capsys):
    code, _, err = run(["validate", tmp_path / "nope.json"], capsys)
    assert code == cli.EXIT_INVALID


# --- runs ------------------------------------------------------------------------


def test_survival_command_writes_closed_form(tmp_path, capsys):
    out_dir = tmp_path / "out"
    code, _, _ = run(["survival", "--state-n", 2, "--output-dir", out_dir], capsys)
    assert code == cli.EXIT_OK
    series = SurvivalSeries.from_csv((out_dir / "survival.csv").read_text())
    np.testing.assert_allclose(series.amplitudes, gaussian_monomial_oracle(2, 0.5, series.times), atol=1e-12)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["command"] == "survival"
    assert manifest["config"]["quadrature"]["k_max"] == 12.0
    assert set(manifest["outputs"]) == {"survival.csv"}
    check = manifest["diagnostics"]["spot_check"]
    assert check["count"] == 8 and check["max_abs_difference"] <= check["tolerance_abs"]


def test_outputs_are_byte_identical_across_runs(tmp_path, capsys):
    cfg = {"state": PHI2, "hamiltonian": {"type": "barrier", "V0": 1, "a": 1},
           "time_grid": {"t_min": 1, "t_max": 100, "per_decade": 20},
           "analyses": ["survival", "four-term", "timeop", "pullback"], "seed": 3}
    for name in ("a", "b"):
        cfg["output_dir"] = str(tmp_path / name)
        assert run(["run", write_config(tmp_path, cfg, f"{name}.json")], capsys)[0] == cli.EXIT_OK
    for f in ("survival.csv", "timeop.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rows = list(csv.DictReader(io.StringIO((tmp_path / "a" / "survival.csv").read_text())))
    assert {f"{part}_{name}" for part in ("re", "im") for name in ("psi_psi", "g_psi", "psi_g", "g_g")} <= set(rows[0])


def test_run_reports_fit_and_wiener(tmp_path, capsys):
    cfg = {"state": PHI2, "analyses": ["fit", "wiener", "timeop"], "output_dir": str(tmp_path / "o"),
           "wiener": {"T": 1000, "samples": 20001}}
    assert run(["run", write_config(tmp_path, cfg)], capsys)[0] == cli.EXIT_OK
    report = json.loads((tmp_path / "o" / "decay_report.json").read_text())
    assert report["exponent"] == pytest.approx(5.0, abs=0.05)
    assert report["classification"] == "InC(2)"
    # (1/T) int_0^T (1 + t^2)^{-5/2} dt -> (2/3)/T
    assert report["wiener_average"]["value"] == pytest.approx(2 / 3 / 1000, rel=1e-3)
    timeop = json.loads((tmp_path / "o" / "timeop.json").read_text())["state"]
    assert timeop["domain"]["in_domain"] is True
    assert timeop["bound_check"]["holds"] is True


def test_timeop_outside_domain_still_succeeds(tmp_path, capsys):
    code, _, _ = run(["timeop", "--state-n", 0, "--output-dir", tmp_path], capsys)
    assert code == cli.EXIT_OK
    report = json.loads((tmp_path / "timeop.json").read_text())["state"]
    assert report["domain"]["in_domain"] is False
    assert "value_at_zero" in report["domain"]["failed"]


def test_pullback_refusal_is_recorded(tmp_path, capsys):
    code, _, _ = run(["timeop", "--state-n", 2, "--hamiltonian-type", "barrier", "--hamiltonian-V0", 1,
                      "--hamiltonian-a", 1, "--pullback", "--time-grid-t-max", 100, "--output-dir", tmp_path],
                     capsys)
    assert code == cli.EXIT_OK
    report = json.loads((tmp_path / "timeop.json").read_text())["pullback"]
    assert report["domain"]["in_domain"] is False


def test_coarse_quadrature_exits_3(tmp_path, capsys):
    code, _, err = run(["survival", "--state-n", 2, "--quadrature-depth", 2, "--quadrature-order", 4,
                        "--output-dir", tmp_path], capsys)
    assert code == cli.EXIT_CONVERGENCE
    assert "free_evolution" in err or "t=" in err


def test_barrier_eigen_columns(tmp_path, capsys):
    code, _, _ = run(["barrier-eigen", "--hamiltonian-V0", 1, "--hamiltonian-a", 1, "--eigen-x-points", 5,
                      "--eigen-k-points", 7, "--output-dir", tmp_path], capsys)
    assert code == cli.EXIT_OK
    rows = list(csv.DictReader(io.StringIO((tmp_path / "eigen.csv").read_text())))
    assert list(rows[0]) == ["x", "k", "re_phi", "im_phi", "re_dphi_dk", "im_dphi_dk", "branch"]
    # k = 0 is not a scattering momentum and is skipped
    assert len(rows) == 5 * 6 and all(float(r["k"]) != 0 for r in rows)


def test_fit_decay_on_written_table(tmp_path, capsys):
    t = np.concatenate([[0.0], np.logspace(-1, 3, 161)])
    (tmp_path / "s.csv").write_text(SurvivalSeries(t, gaussian_monomial_oracle(1, 0.5, t)).to_csv())
    code, out, _ = run(["fit-decay", tmp_path / "s.csv", "--output-dir", tmp_path / "f"], capsys)
    assert code == cli.EXIT_OK
    assert json.loads(out)["exponent"] == pytest.approx(3.0, abs=0.02)
    code, _, err = run(["fit-decay", tmp_path / "missing.csv", "--output-dir", tmp_path / "f"], capsys)
    assert code == cli.EXIT_INVALID and "csv" in err


@pytest.mark.parametrize("value,ok", [("1", True), ("0", False), ("many", False)])
def test_thread_variable(tmp_path, capsys, monkeypatch, value, ok):
    monkeypatch.setenv(cli.THREADS_ENV, value)
    code, _, err = run(["validate", write_config(tmp_path, {"state": PHI2})], capsys)
    assert (code == cli.EXIT_OK) == ok
    if not ok:
        assert cli.THREADS_ENV in err


def test_json_is_strict_and_sorted():
    text = cli.to_json({"b": float("nan"), "a": np.float64(1.5), "c": [np.inf]})
    assert json.loads(text) == {"a": 1.5, "b": "nan", "c": ["inf"]}
    assert text.index('"a"') < text.index('"b"')


# --- suite rows -------------------------------------------------------------------


def test_suite_row_free_closed_form():
    row = cli.suite_row("psi1", "free")
    assert row["oracle"] == "closed_form" and row["oracle_error"] <= 1e-8
    assert row["exponent"] == pytest.approx(3.0, abs=0.05)
    assert row["bound_holds"] is None and "derivative_at_zero" in row["bound_note"]
    assert row["failures"] == []


def test_row_failures_flag_each_criterion():
    bar = object()
    row = {"state": "phi2", "exponent": 1.5, "classification": "NotInC(2)", "wiener_average": 2e-3,
           "bound_holds": False, "oracle": "grid", "oracle_error": 2e-4}
    fails = cli._row_failures(row, {}, bar)
    assert len(fails) == 5
    good = dict(row, exponent=2.5, classification="InC(2)", wiener_average=1e-4, bound_holds=None,
                oracle_error=1e-5)
    assert cli._row_failures(good, {}, bar) == []


def test_free_series_helper_matches_cli_state():
    state = cli.build_state(dict(cli.STATE_DEFAULTS["gaussian_monomial"], kind="gaussian_monomial", n=3))
    t = np.array([0.0, 1.0, 10.0])
    np.testing.assert_allclose(survival_free(state, t).amplitudes, gaussian_monomial_oracle(3, 0.5, t), atol=1e-12)
