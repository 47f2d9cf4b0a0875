"""Shared utilities for dualdescent."""

from __future__ import annotations

import enum
import json
import logging
import os
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np
from rich.console import Console
from rich.logging import RichHandler

from .errors import ConfigError

LOG_ENV_VAR = "DUALDESCENT_LOG"
LOG_LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

logger = logging.getLogger(__name__)


def setup_logging(level: Optional[str] = None) -> int:
    """Install a rich stderr handler on the package logger.

    Args:
        level: One of "error", "info", "debug". Falls back to the
            DUALDESCENT_LOG environment variable, then to "error".

    Returns:
        The numeric logging level that was applied.
    """
    name = level if level is not None else os.environ.get(LOG_ENV_VAR, "error")
    name = name.strip().lower()
    if name not in LOG_LEVELS:
        raise ConfigError(
            f"{LOG_ENV_VAR} must be one of {', '.join(LOG_LEVELS)}, got {name!r}"
        )

    numeric = LOG_LEVELS[name]
    package_logger = logging.getLogger("dualdescent")
    for handler in list(package_logger.handlers):
        if isinstance(handler, RichHandler):
            package_logger.removeHandler(handler)

    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=False,
    )
    handler.setFormatter(logging.Formatter("%(message)s"))
    package_logger.addHandler(handler)
    package_logger.setLevel(numeric)
    package_logger.propagate = False
    return numeric


def power_iteration(
    M: np.ndarray,
    max_iter: int = 200,
    tol: float = 1e-10,
    seed: int = 0,
    inflate: float = 1.01,
) -> float:
    """Largest eigenvalue of a symmetric PSD matrix, inflated by a safety factor.

    Args:
        M: Symmetric positive semidefinite matrix.
        max_iter: Iteration budget.
        tol: Stop when the Rayleigh quotient changes by less than this (relative).
        seed: Seed for the starting vector.
        inflate: Multiplicative safety factor on the returned estimate.

    Returns:
        inflate * lambda_max(M), or 0.0 for a zero matrix.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0 or not np.any(M):
        return 0.0

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(M.shape[0])
    v /= np.linalg.norm(v)

    estimate = 0.0
    for it in range(max_iter):
        w = M @ v
        w_norm = np.linalg.norm(w)
        if w_norm == 0.0:
            v = rng.standard_normal(M.shape[0])
            v /= np.linalg.norm(v)
            continue
        new_estimate = float(v @ w)
        v = w / w_norm
        if estimate > 0 and abs(new_estimate - estimate) <= tol * abs(new_estimate):
            estimate = new_estimate
            logger.debug("power iteration converged after %d steps", it + 1)
            break
        estimate = new_estimate

    # the Rayleigh quotient of the last iterate is never worse than the running one
    estimate = max(estimate, float(v @ (M @ v)))
    return inflate * estimate


def finite_difference_gradient(
    func: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        grad[j] = (func(x + e) - func(x - e)) / (2.0 * step)
    return grad


def finite_difference_jacobian(
    func: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = 1e-6
) -> np.ndarray:
    """Central finite-difference Jacobian laid out as n x m (gradients in columns)."""
    x = np.asarray(x, dtype=float)
    m = np.atleast_1d(func(x)).size
    jac = np.zeros((x.size, m))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        jac[j] = (np.atleast_1d(func(x + e)) - np.atleast_1d(func(x - e))) / (2.0 * step)
    return jac


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(1, ||b||)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


def to_jsonable(obj: Any) -> Any:
    """Convert numpy arrays, scalars, enums and dataclass-like dicts to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if np.isnan(value):
            return None
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: Path, payload: Any) -> Path:
    """Write a payload as sorted, indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(to_jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    return path
