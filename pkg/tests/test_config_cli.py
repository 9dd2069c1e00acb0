import json
import os

import numpy as np
import pytest

from discflow.cli import main
from discflow.config import ConfigError, RunConfig, describe, parse_config


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


BASIC = """
[fluid]
gamma = 1.5

[grid]
nr = 12
ntheta = 12

[time]
t_end = 0.02

[init]
seed = 4
density_amplitude = 0.2
velocity_amplitude = 0.2
"""


def test_parse_defaults_and_derived(tmp_path):
    cfg = parse_config(write(tmp_path, BASIC))
    assert cfg.nr == 12 and cfg.ntheta == 12
    assert cfg.dt is None  # auto
    assert cfg.analysis.q0 == 36.0
    np.testing.assert_allclose(cfg.analysis.delta0, 1.0 / 3.0, rtol=1e-15)
    text = "\n".join(describe(cfg))
    assert "q0=36" in text
    assert "sound_speed=1.22474" in text


def test_parse_rejects_half_beta(tmp_path):
    path = write(tmp_path, "[analysis]\nbeta = 0.5\n")
    with pytest.raises(ConfigError, match="beta"):
        parse_config(path)


def test_parse_rejects_unknown_key_and_section(tmp_path):
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(write(tmp_path, "[fluid]\ngama = 1.5\n"))
    with pytest.raises(ConfigError, match="unknown config section"):
        parse_config(write(tmp_path, "[fluids]\nmu = 1\n", "b.ini"))


def test_parse_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="no such config"):
        parse_config(str(tmp_path / "absent.ini"))


def test_parse_syntax_error(tmp_path):
    with pytest.raises(ConfigError, match="syntax"):
        parse_config(write(tmp_path, "mu = 1 but no section\n"))


def test_parse_dt_policy(tmp_path):
    cfg = parse_config(write(tmp_path, "[time]\ndt = 1e-3\n"))
    assert cfg.dt == 1e-3
    with pytest.raises(ConfigError, match="dt"):
        parse_config(write(tmp_path, "[time]\ndt = sometimes\n", "b.ini"))
    with pytest.raises(ConfigError, match="dt"):
        parse_config(write(tmp_path, "[time]\ndt = -0.1\n", "c.ini"))


def test_parse_rejects_bad_scalars(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, "[time]\nt_end = -1\n"))
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, "[fluid]\nmu = -2\n", "b.ini"))
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, "[grid]\nnr = 1\n", "c.ini"))


def test_default_runconfig_analysis_matches_fluid():
    cfg = RunConfig()
    assert cfg.analysis.gamma == cfg.fluid.gamma
    assert cfg.analysis.rho_bar == cfg.fluid.rho_tilde + 1.0


def test_cli_malformed_config_exits_2(tmp_path, capsys):
    path = write(tmp_path, "[fluid]\ngamma = 3.0\n")
    code = main(["simulate", "--config", path, "--out", str(tmp_path / "o")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_cli_bad_grid_flag_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--grid", "16by16"])
    assert exc.value.code == 2


def test_cli_zero_horizon_single_row(tmp_path):
    path = write(tmp_path, "[time]\nt_end = 0\n[grid]\nnr = 10\nntheta = 8\n")
    out = tmp_path / "zero"
    code = main(["simulate", "--config", path, "--out", str(out)])
    assert code == 0
    lines = (out / "diagnostics.csv").read_text().strip().splitlines()
    assert len(lines) == 2  # header plus the initial row
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 0
    assert not summary["aborted"]


def test_cli_simulate_reruns_byte_identical(tmp_path):
    path = write(tmp_path, BASIC)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["simulate", "--config", path, "--out", str(out)]) == 0
        outs.append(out)
    for fname in ("diagnostics.csv", "summary.json", "final_state.csv", "state_final.bin"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_cli_emit_plots_writes_series_and_figures(tmp_path):
    path = write(tmp_path, BASIC)
    out = tmp_path / "plotted"
    code = main(["simulate", "--config", path, "--out", str(out), "--emit-plots"])
    assert code == 0
    plots = out / "plots"
    for fname in ("A1_x.txt", "A1_y.txt", "rho_q0_y.txt", "energy.png", "final_density.png"):
        assert (plots / fname).exists()
    x = np.loadtxt(plots / "A1_x.txt")
    y = np.loadtxt(plots / "A1_y.txt")
    assert x.shape == y.shape and x.ndim == 1


def test_cli_grid_and_seed_overrides(tmp_path):
    path = write(tmp_path, BASIC)
    out = tmp_path / "o"
    code = main([
        "simulate", "--config", path, "--out", str(out),
        "--grid", "8x12", "--seed", "9",
    ])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert any("grid: 8x12" in line for line in summary["config"])


def test_cli_zlotnik_check(tmp_path):
    out = tmp_path / "z"
    code = main(["zlotnik-check", "--out", str(out), "--cases", "6", "--seed", "2"])
    assert code == 0
    report = json.loads((out / "zlotnik_report.json").read_text())
    assert report["fuzz"]["violations"] == 0
    assert (out / "zlotnik_check.csv").exists()


def test_cli_probe_constants(tmp_path):
    out = tmp_path / "p"
    code = main([
        "probe-constants", "--out", str(out), "--grid", "16x16",
        "--ensemble", "3", "--seed", "1",
    ])
    assert code == 0
    report = json.loads((out / "probe_report.json").read_text())
    assert len(report) == 4
    assert all(np.isfinite(entry["max_ratio"]) for entry in report)
    assert {entry["kind"] for entry in report} == {"REPORT"}


def test_cli_verify_greens_csv_schema(tmp_path):
    out = tmp_path / "g"
    code = main(["verify-greens", "--out", str(out)])
    assert code == 0
    lines = (out / "verify_greens.csv").read_text().strip().splitlines()
    assert lines[0] == "test,n,grid,residual,tolerance,kind,pass"
    assert all(line.endswith(",1") for line in lines[1:])
