"""
Tests for experiment files and environment configuration
"""
import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from tbqmmm.core.config import Config
from tbqmmm.core.exceptions import ConfigurationError
from tbqmmm.core.schema import load_experiment, parse_experiment

CONFIG_DIR = Path(__file__).parent.parent / "configs"


def test_defaults():
    cfg = parse_experiment({})
    assert cfg.case == 'P' and cfg.defect == 'divacancy'
    assert cfg.r_qm == [3.5, 4.5, 5.5, 6.5]
    assert cfg.schemes == ['energy']
    assert cfg.predictor is None


def test_case_p_fills_slope_thresholds():
    cfg = parse_experiment({})
    assert cfg.assertions.geom_slope_max == -2.5
    assert cfg.assertions.energy_slope_max == -3.0
    explicit = parse_experiment({'assertions': {'geom_slope_max': -2.0}})
    assert explicit.assertions.geom_slope_max == -2.0


def test_case_d_fills_predictor():
    cfg = parse_experiment({'case': 'D', 'defect': 'screw', 'r_def': 0.0})
    assert cfg.predictor.burgers_b3 == 1.0
    assert cfg.assertions.geom_slope_max is None


def test_expansion_order():
    assert parse_experiment({'scheme': 'both', 'k_E': 3}).expansion_order == 3
    assert parse_experiment({'scheme': 'force', 'k_F': 1}).expansion_order == 2
    assert parse_experiment({'scheme': 'both'}).schemes == ['energy', 'force']


@pytest.mark.parametrize("data, field", [
    ({'case': 'D', 'defect': 'vacancy'}, "screw"),
    ({'defect': 'screw'}, "case = 'D'"),
    ({'r_qm': [4.5, 3.5]}, "r_qm"),
    ({'r_qm': []}, "r_qm"),
    ({'k_E': 4}, "k_E"),
    ({'solver': {'tol': -1.0}}, "solver.tol"),
    ({'tb': {'hopping': {'family': 'exponential', 'coeffs': [1.0]}}}, "tb.hopping"),
    ({'schedule': {'auto': False, 'r_buf': 1.5}}, "schedule"),
    ({'unknown_key': 1}, "unknown_key"),
    ({'assertions': {'reference_scale': 1.0}}, "assertions.reference_scale"),
])
def test_invalid_experiments_name_the_field(data, field):
    with pytest.raises(ConfigurationError, match="Invalid experiment config") as info:
        parse_experiment(data)
    assert field in str(info.value)


def test_load_toml(tmp_path):
    path = tmp_path / "study.toml"
    path.write_text('name = "t"\ndefect = "vacancy"\nr_qm = [3.0, 4.0, 5.0]\n\n[schedule]\nmm_radius_max = 9.0\n')
    cfg = load_experiment(path)
    assert cfg.name == 't'
    assert cfg.schedule.mm_radius_max == 9.0


def test_load_json(tmp_path):
    path = tmp_path / "study.json"
    path.write_text(json.dumps({'name': 'j', 'scheme': 'force'}))
    assert load_experiment(path).schemes == ['force']


def test_load_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_experiment(tmp_path / "missing.toml")
    bad_suffix = tmp_path / "study.yaml"
    bad_suffix.write_text("name: x\n")
    with pytest.raises(ConfigurationError, match="Unsupported"):
        load_experiment(bad_suffix)
    broken = tmp_path / "broken.toml"
    broken.write_text("name = \n")
    with pytest.raises(ConfigurationError, match="Cannot parse"):
        load_experiment(broken)


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.*")), ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    cfg = load_experiment(path)
    assert len(cfg.r_qm) >= 3


def test_environment_validation(monkeypatch):
    cfg = Config()
    monkeypatch.setenv("TBQMMM_THREADS", "zero")
    with pytest.raises(ConfigurationError, match="TBQMMM_THREADS"):
        cfg._validate_environment()
    monkeypatch.setenv("TBQMMM_THREADS", "2")
    monkeypatch.setenv("TBQMMM_LOG_LEVEL", "chatty")
    with pytest.raises(ConfigurationError, match="TBQMMM_LOG_LEVEL"):
        cfg._validate_environment()


def test_environment_overrides(monkeypatch, tmp_path):
    cfg = Config()
    monkeypatch.setenv("TBQMMM_CACHE_DIR", str(tmp_path))
    monkeypatch.setenv("TBQMMM_THREADS", "4")
    monkeypatch.delenv("MLFLOW_TRACKING_URI", raising=False)
    assert cfg.cache_dir == str(tmp_path)
    assert cfg.threads == 4
    assert cfg.mlflow_tracking_uri is None
    assert Config() is cfg
