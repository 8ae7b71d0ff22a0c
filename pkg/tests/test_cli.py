import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from cesbound.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def write_yaml(tmp_path, text, name="c.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


@pytest.mark.parametrize("command,config", [
    ("xi", "xi_gaussian.yaml"),
    ("xi", "xi_student.yaml"),
    ("scrb", "scrb_circular.yaml"),
    ("scrb", "scrb_noncircular.yaml"),
])
def test_shipped_configs_pass(capsys, command, config):
    code, out, err = run(capsys, command, "--config", CONFIGS / config)
    assert code == EXIT_PASS
    assert json.loads(out)["summary"]["passed"] is True
    assert err.startswith("PASS")


def test_fim_command(capsys):
    code, out, _ = run(capsys, "fim", "--config", CONFIGS / "fim_student.yaml", "--samples", 40000, "--format", "csv")
    assert code == EXIT_PASS
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 14 and all(r["passed"] == "True" for r in rows)


def test_scrb_mode_flags(capsys):
    _, circ, _ = run(capsys, "scrb", "--config", CONFIGS / "scrb_noncircular.yaml", "--circular")
    _, nc, _ = run(capsys, "scrb", "--config", CONFIGS / "scrb_noncircular.yaml", "--noncircular")
    circ_names = [r["name"] for r in json.loads(circ)["records"]]
    nc_names = [r["name"] for r in json.loads(nc)["records"]]
    assert not any("phi" in n for n in circ_names)
    assert any("phi" in n for n in nc_names)
    code, _, _ = run(capsys, "scrb", "--config", CONFIGS / "scrb_noncircular.yaml", "--circular", "--noncircular")
    assert code == EXIT_CONFIG


def test_sweep_csv(capsys, tmp_path):
    out_path = tmp_path / "snr.csv"
    code, out, _ = run(capsys, "sweep", "--config", CONFIGS / "sweep_snr.yaml", "--out", out_path)
    assert code == EXIT_PASS and out == ""
    rows = [r for r in csv.DictReader(io.StringIO(out_path.read_text())) if r["name"] == "crb[theta0,theta0]"]
    assert [float(r["model.snr_db"]) for r in rows] == [-10, -5, 0, 5, 10]
    values = [float(r["analytic"]) for r in rows]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_sweep_report_format(capsys):
    code, out, _ = run(capsys, "sweep", "--config", CONFIGS / "sweep_correlation.yaml", "--format", "report")
    assert code == EXIT_PASS
    payload = json.loads(out)
    assert payload["axes"] == ["model.source_correlation"]
    assert len(payload["points"]) == 3


def test_validate_without_config(capsys, tmp_path):
    out_path = tmp_path / "v.json"
    code, _, err = run(capsys, "validate", "--samples", 20000, "--out", out_path)
    assert code == EXIT_PASS, err
    report = json.loads(out_path.read_text())
    assert report["metadata"]["seed"] == 0 and report["summary"]["failed"] == 0


def test_seed_override(capsys):
    _, a, _ = run(capsys, "xi", "--config", CONFIGS / "xi_gaussian.yaml", "--seed", "0x10", "--samples", 5000)
    _, b, _ = run(capsys, "xi", "--config", CONFIGS / "xi_gaussian.yaml", "--seed", 16, "--samples", 5000)
    assert json.loads(a)["records"] == json.loads(b)["records"]
    assert json.loads(a)["metadata"]["seed"] == 16


@pytest.mark.parametrize("argv", [
    ["xi"],
    ["xi", "--config", "missing.yaml"],
    ["xi", "--config", CONFIGS / "scrb_circular.yaml"],
    ["sweep", "--config", CONFIGS / "xi_gaussian.yaml"],
    ["xi", "--config", CONFIGS / "xi_gaussian.yaml", "--seed", "-1"],
    ["xi", "--config", CONFIGS / "xi_gaussian.yaml", "--samples", "10"],
    ["xi", "--config", CONFIGS / "xi_gaussian.yaml", "--format", "xml"],
    ["xi", "--config", CONFIGS / "xi_gaussian.yaml", "--workers", "0"],
    ["nonsense"],
    [],
])
def test_config_errors_exit_2(capsys, argv):
    code, _, _ = run(capsys, *argv)
    assert code == EXIT_CONFIG


def test_schema_error_names_path(capsys, tmp_path):
    path = write_yaml(tmp_path, "kind: xi\nseed: 1\nmodel: {M: 0}\n")
    code, _, err = run(capsys, "xi", "--config", path)
    assert code == EXIT_CONFIG
    assert "model" in err and "M" in err


def test_empty_sweep_exit_2(capsys, tmp_path):
    path = write_yaml(tmp_path, "kind: xi\nseed: 1\nmodel: {M: 2}\nsweep: []\n")
    assert run(capsys, "sweep", "--config", path)[0] == EXIT_CONFIG


def test_numeric_error_exit_1(capsys, tmp_path):
    path = write_yaml(tmp_path, "kind: scrb\nseed: 1\nmodel: {M: 4, theta: [0.2, 0.2], xi2: 1.0}\n")
    code, _, err = run(capsys, "scrb", "--config", path)
    assert code == EXIT_FAIL
    assert err.startswith("numeric error")


def test_failed_check_exit_1(capsys, tmp_path):
    # with nu <= 2 the unit-mean normalisation is unavailable and xi1 drops below one
    path = write_yaml(tmp_path, "kind: xi\nseed: 1\nsamples: 200000\ngenerator: {kind: student-t, nu: 1.2}\nmodel: {M: 2}\n")
    code, out, err = run(capsys, "xi", "--config", path)
    failed = [r["name"] for r in json.loads(out)["records"] if not r["passed"]]
    assert failed == ["xi1 shortfall below 1"]
    assert code == EXIT_FAIL and err.startswith("FAIL")


def test_console_script_module():
    out = subprocess.run([sys.executable, "-m", "cesbound.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for command in ("xi", "fim", "scrb", "sweep", "validate"):
        assert command in out.stdout
