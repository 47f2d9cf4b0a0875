"""Tests for configuration loading and run-config resolution."""

import logging

import pytest
import yaml

from dualdescent import config as config_module
from dualdescent.config import Config, RunConfig, get_config, load_params_file
from dualdescent.errors import ConfigError
from dualdescent.utils import setup_logging


def test_defaults_without_file(tmp_path):
    cfg = Config(tmp_path / "missing.yaml")
    assert cfg.solver == "sdd_admm"
    assert cfg.eps == 1e-3
    assert cfg.max_iters == 20000


def test_file_values_override_defaults(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump({"solver": "udd_affine", "max_iters": 10}))
    cfg = Config(path)
    assert cfg.solver == "udd_affine"
    assert cfg.max_iters == 10
    assert cfg.get("theta") == 2.0


def test_save_round_trip(tmp_path):
    cfg = Config(tmp_path / "nested" / "config.yaml")
    cfg.set("eps", 1e-5)
    cfg.save()
    assert Config(tmp_path / "nested" / "config.yaml").eps == 1e-5


def test_non_mapping_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text("- a\n- b\n")
    with pytest.raises(ConfigError):
        Config(path)


def test_singleton_uses_isolated_home():
    cfg = get_config()
    assert cfg is get_config()
    assert cfg.path == config_module.CONFIG_FILE


def test_resolution_order(tmp_path):
    base = tmp_path / "config.yaml"
    base.write_text(yaml.safe_dump({"eps": 0.1, "max_iters": 50, "theta": 3.0}))
    params = tmp_path / "params.yaml"
    params.write_text(yaml.safe_dump({"eps": 0.01, "max_iters": 60}))
    run = RunConfig.resolve({"eps": 0.001, "max_iters": None}, params, Config(base))
    assert run.eps == 0.001
    assert run.max_iters == 60
    assert run.theta == 3.0


def test_explicit_rho_switches_mode():
    assert RunConfig(rho=2.0).rho_mode == "explicit"
    assert RunConfig(rho=2.0, rho_mode="eps1_rule").rho_mode == "eps1_rule"
    assert RunConfig().rho_mode == "eps2_rule"


@pytest.mark.parametrize("kwargs", [
    {"solver": "newton"},
    {"rho_mode": "adaptive"},
    {"sweep": "random"},
    {"problem": ""},
    {"eps": 0.0},
    {"max_iters": 0},
    {"trace_every": 0},
])
def test_invalid_run_config(kwargs):
    with pytest.raises(ConfigError):
        RunConfig(**kwargs)


def test_unknown_fields_rejected():
    with pytest.raises(ConfigError, match="colour"):
        RunConfig.from_mapping({"colour": "red"})


def test_gallery_detection():
    assert RunConfig(problem="g4").is_gallery
    assert not RunConfig(problem="problems/mine.json").is_gallery


def test_params_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_params_file(tmp_path / "nope.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_params_file(broken)


def test_params_file_accepts_json(tmp_path):
    path = tmp_path / "params.json"
    path.write_text('{"solver": "udd_nonlinear", "c": 3.0}')
    assert load_params_file(path) == {"solver": "udd_nonlinear", "c": 3.0}


@pytest.mark.parametrize("name,level", [("error", logging.ERROR), ("INFO", logging.INFO), ("debug", logging.DEBUG)])
def test_log_levels(name, level, monkeypatch):
    monkeypatch.setenv("DUALDESCENT_LOG", name)
    assert setup_logging() == level
    assert logging.getLogger("dualdescent").level == level


def test_log_level_defaults_to_error():
    assert setup_logging() == logging.ERROR


def test_bad_log_level():
    with pytest.raises(ConfigError):
        setup_logging("verbose")
