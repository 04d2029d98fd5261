"""
End-to-end tests of the command line entry point
"""
import importlib.util
import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

pytestmark = pytest.mark.integration

CLI_PATH = Path(__file__).parent.parent / "scripts" / "tbqmmm_cli.py"


@pytest.fixture(scope="module")
def cli():
    spec = importlib.util.spec_from_file_location("tbqmmm_cli", CLI_PATH)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture
def run_cli(cli, monkeypatch, tmp_path):
    monkeypatch.setenv("TBQMMM_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.setenv("TBQMMM_ITERATION_LOG", str(tmp_path / "iterations.jsonl"))
    monkeypatch.delenv("MLFLOW_TRACKING_URI", raising=False)

    def run(*argv):
        monkeypatch.setattr(sys, "argv", ["tbqmmm_cli.py", "--out", str(tmp_path / "out"), *argv])
        return cli.main()
    return run


@pytest.fixture
def quick_file(tmp_path):
    path = tmp_path / "quick.json"
    path.write_text(json.dumps({
        'name': 'quick',
        'defect': 'vacancy',
        'r_qm': [3.5, 4.0, 4.5],
        'schedule': {'auto': False, 'r_buf': 1.5, 'r_mm': 5.0},
    }))
    return path


def test_no_command_prints_help(run_cli, capsys):
    assert run_cli() == 2
    assert "usage" in capsys.readouterr().out


def test_inspect_empty_cache(run_cli, capsys):
    assert run_cli("coeffs", "--inspect") == 0
    assert "No cached coefficients found." in capsys.readouterr().out


def test_coeffs_needs_config(run_cli):
    assert run_cli("coeffs") == 2


def test_missing_config_is_a_config_error(run_cli, tmp_path, capsys):
    assert run_cli("solve", str(tmp_path / "nope.toml"), "--rqm", "3.5") == 2
    assert "Error:" in capsys.readouterr().out


def test_invalid_config_is_a_config_error(run_cli, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({'case': 'D', 'defect': 'vacancy'}))
    assert run_cli("converge", str(path)) == 2


def test_solve_writes_outputs(run_cli, quick_file, tmp_path, capsys):
    assert run_cli("--no-cache", "solve", str(quick_file), "--rqm", "3.5") == 0
    out = capsys.readouterr().out
    assert "CONVERGED" in out
    assert "Min Hessian eigenvalue" in out
    assert (tmp_path / "out" / "quick_energy_rqm3.5_diagnostics.csv").exists()
    assert (tmp_path / "out" / "quick_energy_rqm3.5_geometry.json").exists()


def test_coeffs_populates_cache(run_cli, quick_file, capsys):
    assert run_cli("coeffs", str(quick_file)) == 0
    assert "R_BUF=1.500" in capsys.readouterr().out
    assert run_cli("coeffs", "--inspect") == 0
    assert "potential" in capsys.readouterr().out


@pytest.mark.slow
def test_properties_core_suite(run_cli, tmp_path):
    """The TB and Taylor suites pass with the default parameters"""
    code = run_cli("--no-cache", "--seed", "3", "properties", "--skip-screw", "--skip-hybrid")
    with open(tmp_path / "out" / "properties.json") as f:
        doc = json.load(f)
    assert doc['seed'] == 3
    names = {c['name'] for c in doc['checks']}
    assert 'tb.energy_partition' in names
    assert not any(n.startswith(('screw.', 'hybrid.')) for n in names)
    assert code == (0 if all(c['passed'] for c in doc['checks']) else 1)
