"""Configuration management for dualdescent."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError

# Default paths
DUALDESCENT_HOME = Path(os.environ.get("DUALDESCENT_HOME", Path.home() / ".dualdescent"))
CONFIG_FILE = DUALDESCENT_HOME / "config.yaml"

SOLVERS = ("sdd_admm", "udd_affine", "udd_nonlinear", "dual_ascent", "penalty_admm")
GALLERY_IDS = ("G1", "G2", "G3", "G4")

# Default configuration
DEFAULT_CONFIG = {
    "solver": "sdd_admm",
    "eps": 1e-3,
    "theta": 2.0,
    "omega": 4.0,
    "tau": 1.0,
    "max_iters": 20000,
    "rho_mode": "eps2_rule",
    "sweep": "gauss_seidel",
    "pilot_rho": 1.0,
    "pilot_iters": 100,
    "monitor": True,
    "trace_every": 1,
    "output_dir": "runs",
}


class Config:
    """User-level defaults read from ~/.dualdescent/config.yaml."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else CONFIG_FILE
        self._config: dict = {}
        self._load()

    def _load(self):
        """Load configuration from file or use defaults."""
        if self.path.exists():
            with open(self.path) as f:
                loaded = yaml.safe_load(f) or {}
            if not isinstance(loaded, dict):
                raise ConfigError(f"{self.path} must contain a mapping")
            self._config = loaded
        else:
            self._config = {}

        # Merge with defaults
        for key, value in DEFAULT_CONFIG.items():
            if key not in self._config:
                self._config[key] = value

    def save(self):
        """Save configuration to file."""
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w") as f:
            yaml.dump(self._config, f, default_flow_style=False)

    def get(self, key: str, default=None):
        """Get a configuration value."""
        return self._config.get(key, default)

    def set(self, key: str, value):
        """Set a configuration value."""
        self._config[key] = value

    def as_dict(self) -> dict:
        return dict(self._config)

    @property
    def solver(self) -> str:
        return self._config.get("solver", "sdd_admm")

    @property
    def eps(self) -> float:
        return float(self._config.get("eps", 1e-3))

    @property
    def max_iters(self) -> int:
        return int(self._config.get("max_iters", 20000))

    @property
    def output_dir(self) -> Path:
        return Path(self._config.get("output_dir", "runs"))


_config_instance: Config | None = None


def get_config() -> Config:
    """Get the global configuration instance (singleton)."""
    global _config_instance
    if _config_instance is None:
        _config_instance = Config()
    return _config_instance


def reset_config() -> None:
    """Drop the cached singleton (used when DUALDESCENT_HOME changes)."""
    global _config_instance
    _config_instance = None


def load_params_file(path: Path) -> dict:
    """Read a YAML or JSON parameter file into a mapping."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"parameter file not found: {path}")
    with open(path) as f:
        try:
            data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping")
    return data


@dataclass
class RunConfig:
    """Everything one `run` invocation needs, schema-checked."""

    problem: str = "G1"
    seed: int = 0
    solver: str = "sdd_admm"
    eps: float = 1e-3
    rho: Optional[float] = None
    omega: float = 4.0
    theta: float = 2.0
    tau: float = 1.0
    varrho: Optional[float] = None
    c: Optional[float] = None
    nu: Optional[float] = None
    beta: Optional[float] = None
    max_iters: int = 20000
    rho_mode: str = "eps2_rule"
    sweep: str = "gauss_seidel"
    pilot_rho: float = 1.0
    pilot_iters: int = 100
    eps1_constant: Optional[float] = None
    inner_max_iters: int = 5000
    monitor: bool = True
    strict: bool = True
    trace_every: int = 1
    output_dir: Optional[str] = None

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ConfigError(f"unknown solver {self.solver!r}; choose from {', '.join(SOLVERS)}")
        if self.rho_mode not in ("explicit", "eps2_rule", "eps1_rule"):
            raise ConfigError(f"unknown rho_mode {self.rho_mode!r}")
        if self.sweep not in ("gauss_seidel", "jacobi"):
            raise ConfigError(f"unknown sweep {self.sweep!r}")
        if not self.problem:
            raise ConfigError("problem source is empty")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if self.trace_every < 1:
            raise ConfigError("trace_every must be at least 1")
        if self.rho is not None and self.rho_mode == "eps2_rule":
            self.rho_mode = "explicit"

    @property
    def is_gallery(self) -> bool:
        return self.problem.upper() in GALLERY_IDS

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    @classmethod
    def from_mapping(cls, mapping: dict[str, Any]) -> "RunConfig":
        """Build a RunConfig, rejecting unknown keys."""
        names = cls.field_names()
        unknown = sorted(set(mapping) - names)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        try:
            return cls(**mapping)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def resolve(
        cls,
        overrides: dict[str, Any],
        params_file: Optional[Path] = None,
        config: Optional[Config] = None,
    ) -> "RunConfig":
        """Merge defaults < config file < params file < explicit overrides."""
        config = config or get_config()
        names = cls.field_names()
        merged: dict[str, Any] = {
            k: v for k, v in config.as_dict().items() if k in names
        }
        if params_file is not None:
            merged.update(load_params_file(params_file))
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(merged)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}
