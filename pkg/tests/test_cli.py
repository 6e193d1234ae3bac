import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from pmsm_injection import fileio
from pmsm_injection.cli import ESTIMATE_COLUMNS, main
from pmsm_injection.simulation import ScenarioTrace

DATA = Path(__file__).parent / "data"


def run(*argv):
    return main([str(a) for a in argv])


def test_golden_trace(tmp_path):
    code = run("simulate", "--motor", "spm", "--scenario", DATA / "golden_profile.cfg",
               "--noise-std", "0.01", "--seed", "42", "--out", tmp_path)
    assert code == 0
    got = fileio.read_csv(tmp_path / "trace.csv")
    ref = fileio.read_csv(DATA / "golden_trace.csv")
    assert list(got) == list(ref)
    for name in ref:
        assert np.allclose(got[name], ref[name], rtol=1e-7, atol=1e-12), name


def test_simulate_is_byte_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert run("simulate", "--scenario", DATA / "golden_profile.cfg", "--noise-std", "0.02",
                   "--seed", "7", "--out", tmp_path / sub) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert (tmp_path / "a" / "motor.cfg").exists() and (tmp_path / "a" / "scenario.cfg").exists()


def test_saved_scenario_reproduces_trace(tmp_path):
    assert run("simulate", "--scenario", "load-step", "--time-scale", "0.1", "--out", tmp_path / "a") == 0
    assert run("simulate", "--scenario", tmp_path / "a" / "scenario.cfg",
               "--motor", tmp_path / "a" / "motor.cfg", "--out", tmp_path / "b") == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_simulate_then_estimate(tmp_path, capsys):
    assert run("simulate", "--motor", "ipm", "--scenario", "load-step", "--time-scale", "0.3",
               "--out", tmp_path) == 0
    assert run("estimate", "--motor", "ipm", tmp_path / "trace.csv", "--from", "0.4", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "saturated model" in out
    cols = fileio.read_csv(tmp_path / "estimates.csv", ScenarioTrace.COLUMNS + ESTIMATE_COLUMNS)
    err = np.degrees(np.abs(np.angle(np.exp(1j * (cols["theta_hat"] - cols["theta"])))))
    assert err[cols["t"] >= 0.4].max() < 1.0
    assert set(np.unique(cols["ambiguity"])) <= {0.0, 1.0}
    assert len(cols["t"]) == len(fileio.read_csv(tmp_path / "trace.csv")["t"]) - 8


def test_estimate_empty_trace(tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    trace.write_text(",".join(ScenarioTrace.COLUMNS) + "\n")
    assert run("estimate", trace, "--out", tmp_path) == 0
    assert (tmp_path / "estimates.csv").read_text().count("\n") == 1
    assert "0 estimates" in capsys.readouterr().out


def test_rest_scenario_is_silent(tmp_path):
    assert run("simulate", "--scenario", "rest", "--out", tmp_path) == 0
    cols = fileio.read_csv(tmp_path / "trace.csv")
    assert not np.any(cols["i_gamma"]) and not np.any(cols["i_delta"])


@pytest.mark.parametrize("argv", [
    ["simulate", "--scenario", "nowhere"],
    ["simulate", "--motor", "bogus.cfg"],
    ["simulate", "--u-tilde", "1,2,3"],
    ["simulate", "--seed", "-1"],
    ["simulate", "--omega-inj", "0"],
    ["simulate", "--waveform", "missing.csv"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_1(tmp_path, argv, capsys):
    with pytest.raises(SystemExit) as exc:
        code = run(*argv, "--out", tmp_path) if argv and argv[0] != "frobnicate" else run(*argv)
        raise SystemExit(code)
    assert exc.value.code == 1
    assert "error" in capsys.readouterr().err


def test_missing_trace_columns_exit_1(tmp_path, capsys):
    bad = tmp_path / "trace.csv"
    bad.write_text("t,i_gamma\n0,1\n")
    assert run("estimate", bad, "--out", tmp_path) == 1
    assert "missing columns" in capsys.readouterr().err


def test_numeric_failure_exit_2(tmp_path, capsys):
    motor = tmp_path / "weak.cfg"
    motor.write_text("R = 1\nn = 2\nlambda = 0.1\nLd = 0.001\nLq = 0.001\nIn = 10\na30_norm = 0.5\n")
    profile = tmp_path / "p.cfg"
    profile.write_text("duration = 0.1\nu_rd = 0:-20:0\nu_rd_tau = 0\n")
    assert run("simulate", "--motor", motor, "--scenario", profile, "--out", tmp_path) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_identify_linear_plant(tmp_path, capsys):
    motor = tmp_path / "lin.cfg"
    fileio.atomic_write(motor, fileio.motor_to_kv(fileio.load_motor("ipm").linear()))
    assert run("identify", "--motor", motor, "--workers", "4", "--out", tmp_path) == 0
    report = fileio.read_kv(tmp_path / "id_report.cfg")
    assert float(report["Ld"]) == pytest.approx(9.15e-3, rel=1e-6)
    assert abs(float(report["a30_norm"])) < 1e-3
    curves = fileio.read_csv(tmp_path / "id_curves.csv", ["meas_d", "exact_d", "first_order_d"])
    assert len(curves["meas_d"]) == 26
    assert "Ld = 9.1500 mH" in capsys.readouterr().out


def test_averaging_check_command(tmp_path, capsys):
    assert run("averaging-check", "--scenario", "load-step", "--time-scale", "0.2", "--out", tmp_path) == 0
    values = fileio.read_kv(tmp_path / "averaging.cfg")
    assert 3.0 < float(values["residual_ratio"]) < 5.0
    assert "flux remainder ratio" in capsys.readouterr().out


def test_sine_and_table_waveforms(tmp_path):
    table = tmp_path / "wave.csv"
    n = 64
    table.write_text("\n".join(f"{2 * np.pi * k / n:.17g},{np.sin(2 * np.pi * k / n):.17g}" for k in range(n)))
    for wf in ("sine", table):
        out = tmp_path / Path(str(wf)).stem
        assert run("simulate", "--scenario", DATA / "golden_profile.cfg", "--waveform", wf, "--out", out) == 0
        assert run("estimate", out / "trace.csv", "--waveform", wf, "--out", out) == 0


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "pmsm_injection.cli", "simulate", "--scenario", "rest",
                           "--time-scale", "0.1", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "trace.csv").exists()
    proc = subprocess.run([sys.executable, "-m", "pmsm_injection.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "averaging-check" in proc.stdout
