import csv
import json

import numpy as np
import pytest

from kinslab.cli import (EXIT_CONFIG, EXIT_OK, ConfigError, RunConfig, main, parse_config, run)


def _cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_defaults_are_valid():
    cfg = RunConfig().validate()
    assert cfg.varpi == 0.125 and cfg.alpha_exponent == 0.25 and cfg.beta == 4.0
    assert cfg.eps_list == (0.1, 0.05, 0.025)
    assert len(cfg.digest()) == 64


def test_parse_config_values_and_comments(tmp_path):
    p = _cfg(tmp_path, "# walls\ntheta0 = 1.0\ntheta1 = 1.1  # hot\neps_list = 0.025, 0.1 0.05\nc_beta2 = none\nN = 8\n")
    cfg = parse_config(p)
    assert cfg.theta1 == 1.1 and cfg.N == 8 and cfg.c_beta2 is None
    assert cfg.eps_list == (0.1, 0.05, 0.025)


@pytest.mark.parametrize("line, key", [("varpi = 0.2", "varpi"), ("alpha_exponent = 0.5", "alpha_exponent"),
                                       ("beta = 3", "beta"), ("p = 2", "p")])
def test_rejected_values_name_the_line(tmp_path, line, key):
    p = _cfg(tmp_path, f"theta0 = 1.0\n{line}\n")
    with pytest.raises(ConfigError, match=r"run.cfg:2: "):
        parse_config(p)


def test_unknown_key_and_bad_syntax(tmp_path):
    with pytest.raises(ConfigError, match=r":1: unknown key 'tehta0'"):
        parse_config(_cfg(tmp_path, "tehta0 = 1.0\n"))
    with pytest.raises(ConfigError, match=r":2: expected key = value"):
        parse_config(_cfg(tmp_path, "theta0 = 1.0\njunk\n"))
    with pytest.raises(ConfigError, match=r":1: cannot parse"):
        parse_config(_cfg(tmp_path, "N = many\n"))
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.cfg")


def test_large_temperature_ratio_warns(tmp_path):
    with pytest.warns(UserWarning):
        parse_config(_cfg(tmp_path, "theta0 = 1.0\ntheta1 = 4.0\n"))


def test_main_config_error_exit_code(tmp_path, capsys):
    p = _cfg(tmp_path, "varpi = 0.2\n")
    assert main(["ns", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "run.cfg:1" in capsys.readouterr().err


def test_ns_closed_form_profile(tmp_path):
    p = _cfg(tmp_path, "theta0 = 1.0\ntheta1 = 4.0\neps = 0\n")
    out = tmp_path / "ns"
    with pytest.warns(UserWarning):
        assert main(["ns", "--config", str(p), "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "ns_profile.csv")
    x = np.array([float(r["x"]) for r in rows])
    th = np.array([float(r["theta"]) for r in rows])
    assert np.max(np.abs(th - (7 * x + 1) ** (2 / 3))) < 1e-12
    const = _rows(out / "ns_constants.csv")[0]
    assert np.isclose(float(const["P0"]), 7 / 3, rtol=1e-12)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "ns" and set(manifest["artifacts"]) == {"ns_profile.csv", "ns_constants.csv"}


def test_solve_rejects_zero_eps(tmp_path):
    p = _cfg(tmp_path, "eps = 0\nN = 8\nV_max = 6.0\n")
    assert main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_milne_output_is_deterministic(tmp_path):
    cfg = RunConfig(N=8, V_max=6.0, Y=10.0).validate()
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("milne", cfg, a) == EXIT_OK
    assert run("milne", cfg, b) == EXIT_OK
    for name in ("milne_coefficients.csv", "milne_decay.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    row = _rows(a / "milne_coefficients.csv")[0]
    assert float(row["c_beta2"]) > 0


def test_verify_battery_passes_and_repeats(tmp_path):
    cfg = RunConfig(verify_N=8).validate()
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("verify", cfg, a) == EXIT_OK
    rows = _rows(a / "verify.csv")
    assert {r["check"] for r in rows} >= {"ns_closed_form", "L_self_adjoint", "Pgamma_flux", "mms_order"}
    assert all(r["passed"] == "True" for r in rows)
    run("verify", cfg, b)
    assert (a / "verify.csv").read_bytes() == (b / "verify.csv").read_bytes()


def test_expand_and_solve_small_grid(tmp_path):
    cfg = RunConfig(N=8, V_max=6.0, theta1=1.1, eps=0.1, response_points=8).validate()
    out = tmp_path / "s"
    assert run("expand", cfg, out) == EXIT_OK
    bounds = {r["quantity"]: float(r["value"]) for r in _rows(out / "expand_bounds.csv")}
    assert bounds["A_s_macro"] < 1e-6
    assert run("solve", cfg, out) == EXIT_OK
    summary = {r["quantity"]: float(r["value"]) for r in _rows(out / "solve_summary.csv")}
    assert summary["sweep_residual"] <= cfg.tol
    assert abs(summary["mass_factor"] - 1.0) < 1e-2
    # at eps = 0.1 the layers leave no bulk window for the jump fit
    assert not (out / "solve_jump.csv").exists()
