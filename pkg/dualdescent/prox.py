"""Closed-form proximal operators.

Every kernel solves  min_x g(x) + (eta/2)||x - z||^2  exactly. Separable
nonconvex penalties (SCAD, MCP, capped-l1) are handled by evaluating every
stationary-point and breakpoint candidate per coordinate and keeping the best.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .errors import ParameterError, StructuralError
from .extended import ExtendedReal

logger = logging.getLogger(__name__)

DOMAIN_TOL = 1e-10
TIE_TOL = 1e-12

KINDS = ("zero", "box", "ball", "sphere", "annulus", "l1", "scad", "mcp", "capped_l1")
SEPARABLE_KINDS = ("zero", "box", "l1", "scad", "mcp", "capped_l1")
CONVEX_KINDS = ("zero", "box", "ball", "l1")
PENALTY_KINDS = ("l1", "scad", "mcp", "capped_l1")

# JSON parameter names per kind
_PARAM_NAMES = {
    "zero": (),
    "box": ("lower", "upper"),
    "ball": ("r",),
    "sphere": ("r",),
    "annulus": ("r1", "r2"),
    "l1": ("w",),
    "scad": ("a", "lambda"),
    "mcp": ("b", "lambda"),
    "capped_l1": ("lambda", "t"),
}


@dataclass(frozen=True)
class ProxKernel:
    """A proximable function g together with its domain."""

    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown prox kind {self.kind!r}")
        p = self.params
        required = _PARAM_NAMES[self.kind]
        missing = [name for name in required if name not in p]
        if missing:
            raise ParameterError(f"{self.kind} kernel missing {', '.join(missing)}")
        allowed = set(required)
        if self.kind in PENALTY_KINDS:
            allowed |= {"lower", "upper"}
        extra = set(p) - allowed
        if extra:
            raise ParameterError(f"{self.kind} kernel got unknown params {sorted(extra)}")

        if self.kind in ("ball", "sphere") and not p["r"] > 0:
            raise ParameterError("radius must be positive")
        if self.kind == "annulus" and not 0 <= p["r1"] < p["r2"]:
            raise ParameterError("annulus needs 0 <= r1 < r2")
        if self.kind == "l1" and p["w"] < 0:
            raise ParameterError("l1 weight must be nonnegative")
        if self.kind == "scad" and not (p["a"] > 2 and p["lambda"] >= 0):
            raise ParameterError("scad needs a > 2 and lambda >= 0")
        if self.kind == "mcp" and not (p["b"] > 0 and p["lambda"] >= 0):
            raise ParameterError("mcp needs b > 0 and lambda >= 0")
        if self.kind == "capped_l1" and not (p["t"] > 0 and p["lambda"] >= 0):
            raise ParameterError("capped_l1 needs t > 0 and lambda >= 0")
        lo, hi = self.bounds
        if np.any(np.asarray(lo) > np.asarray(hi)):
            raise ParameterError("lower bound exceeds upper bound")

    # constructors

    @classmethod
    def zero(cls) -> "ProxKernel":
        return cls("zero")

    @classmethod
    def box(cls, lower: Any = -1.0, upper: Any = 1.0) -> "ProxKernel":
        return cls("box", {"lower": lower, "upper": upper})

    @classmethod
    def ball(cls, r: float = 1.0) -> "ProxKernel":
        return cls("ball", {"r": float(r)})

    @classmethod
    def sphere(cls, r: float = 1.0) -> "ProxKernel":
        return cls("sphere", {"r": float(r)})

    @classmethod
    def annulus(cls, r1: float, r2: float) -> "ProxKernel":
        return cls("annulus", {"r1": float(r1), "r2": float(r2)})

    @classmethod
    def l1(cls, w: float, lower: Optional[float] = None, upper: Optional[float] = None) -> "ProxKernel":
        return cls("l1", _with_bounds({"w": float(w)}, lower, upper))

    @classmethod
    def scad(cls, a: float = 3.7, lam: float = 1.0, lower: Optional[float] = None, upper: Optional[float] = None) -> "ProxKernel":
        return cls("scad", _with_bounds({"a": float(a), "lambda": float(lam)}, lower, upper))

    @classmethod
    def mcp(cls, b: float = 3.0, lam: float = 1.0, lower: Optional[float] = None, upper: Optional[float] = None) -> "ProxKernel":
        return cls("mcp", _with_bounds({"b": float(b), "lambda": float(lam)}, lower, upper))

    @classmethod
    def capped_l1(cls, lam: float = 1.0, t: float = 1.0, lower: Optional[float] = None, upper: Optional[float] = None) -> "ProxKernel":
        return cls("capped_l1", _with_bounds({"lambda": float(lam), "t": float(t)}, lower, upper))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ProxKernel":
        data = dict(data)
        kind = data.pop("kind", None)
        if kind is None:
            raise ParameterError("prox term needs a 'kind'")
        return cls(kind, data)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        for key, value in self.params.items():
            out[key] = np.asarray(value).tolist() if isinstance(value, (list, np.ndarray)) else value
        return out

    # structure

    @property
    def is_convex(self) -> bool:
        return self.kind in CONVEX_KINDS

    @property
    def is_separable(self) -> bool:
        return self.kind in SEPARABLE_KINDS

    @property
    def is_indicator(self) -> bool:
        return self.kind in ("zero", "box", "ball", "sphere", "annulus")

    @property
    def bounds(self) -> tuple[Any, Any]:
        """Coordinatewise bounds (possibly infinite) for separable kinds."""
        if self.kind == "box":
            return self.params["lower"], self.params["upper"]
        if self.kind in PENALTY_KINDS:
            return self.params.get("lower", -np.inf), self.params.get("upper", np.inf)
        return -np.inf, np.inf

    @property
    def has_bounds(self) -> bool:
        lo, hi = self.bounds
        return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))

    def radii(self, n: int) -> tuple[float, float]:
        """(max Euclidean norm, max coordinate magnitude) over dom g; inf if unbounded."""
        if self.kind in ("ball", "sphere"):
            return self.params["r"], self.params["r"]
        if self.kind == "annulus":
            return self.params["r2"], self.params["r2"]
        lo, hi = self.bounds
        mag = np.maximum(np.abs(np.broadcast_to(lo, (n,))), np.abs(np.broadcast_to(hi, (n,))))
        if not np.all(np.isfinite(mag)):
            return np.inf, np.inf
        return float(np.linalg.norm(mag)), float(np.max(mag)) if n else 0.0

    def penalty_part(self) -> "ProxKernel":
        """The kernel with its set constraint stripped (g0 in g = g0 + indicator)."""
        if self.kind in PENALTY_KINDS:
            return ProxKernel(self.kind, {k: v for k, v in self.params.items() if k not in ("lower", "upper")})
        return ProxKernel.zero()

    def in_domain(self, x: np.ndarray, tol: float = DOMAIN_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        if self.kind in SEPARABLE_KINDS:
            lo, hi = self.bounds
            return bool(np.all(x >= np.asarray(lo) - tol) and np.all(x <= np.asarray(hi) + tol))
        norm = np.linalg.norm(x)
        if self.kind == "ball":
            return bool(norm <= self.params["r"] + tol)
        if self.kind == "sphere":
            return bool(abs(norm - self.params["r"]) <= tol)
        return bool(self.params["r1"] - tol <= norm <= self.params["r2"] + tol)


def _with_bounds(params: dict, lower: Optional[float], upper: Optional[float]) -> dict:
    if lower is not None:
        params["lower"] = float(lower)
    if upper is not None:
        params["upper"] = float(upper)
    return params


def check_prox_parameter(kernel: ProxKernel, eta: float) -> None:
    """Raise on eta <= 0; log when a nonconvex prox subproblem is not strongly convex."""
    if not eta > 0:
        raise ParameterError(f"prox parameter eta must be positive, got {eta}")
    if kernel.kind == "scad" and eta * (kernel.params["a"] - 1.0) <= 1.0:
        logger.debug("scad prox with eta*(a-1) <= 1 is nonconvex; using candidate search")
    elif kernel.kind == "mcp" and eta * kernel.params["b"] <= 1.0:
        logger.debug("mcp prox with eta*b <= 1 is nonconvex; using candidate search")


def penalty_values(kernel: ProxKernel, x: np.ndarray) -> np.ndarray:
    """Elementwise penalty for separable penalty kinds (bounds not included)."""
    ax = np.abs(x)
    p = kernel.params
    if kernel.kind == "l1":
        return p["w"] * ax
    if kernel.kind == "scad":
        a, lam = p["a"], p["lambda"]
        mid = (2 * a * lam * ax - ax**2 - lam**2) / (2 * (a - 1))
        return np.where(ax <= lam, lam * ax, np.where(ax <= a * lam, mid, lam**2 * (a + 1) / 2))
    if kernel.kind == "mcp":
        b, lam = p["b"], p["lambda"]
        return np.where(ax <= b * lam, lam * ax - ax**2 / (2 * b), b * lam**2 / 2)
    if kernel.kind == "capped_l1":
        return p["lambda"] * np.minimum(ax, p["t"])
    return np.zeros_like(ax)


def prox_value(kernel: ProxKernel, x: np.ndarray) -> ExtendedReal:
    """g(x), +inf outside the domain."""
    x = np.asarray(x, dtype=float)
    if not kernel.in_domain(x):
        return ExtendedReal.inf()
    return ExtendedReal.finite(float(np.sum(penalty_values(kernel, x))))


def prox(kernel: ProxKernel, eta: float, z: np.ndarray) -> np.ndarray:
    """argmin_x g(x) + (eta/2)||x - z||^2 with deterministic tie-breaking."""
    check_prox_parameter(kernel, eta)
    z = np.asarray(z, dtype=float)
    kind = kernel.kind
    p = kernel.params

    if kind == "zero":
        return z.copy()
    if kind == "box":
        return np.clip(z, p["lower"], p["upper"])
    if kind == "l1":
        lo, hi = kernel.bounds
        soft = np.sign(z) * np.maximum(np.abs(z) - p["w"] / eta, 0.0)
        return np.clip(soft, lo, hi)
    if kind in ("scad", "mcp", "capped_l1"):
        return _separable_candidate_prox(kernel, eta, z)

    norm = np.linalg.norm(z)
    if kind == "ball":
        return z.copy() if norm <= p["r"] else z * (p["r"] / norm)
    if z.size == 0:
        raise StructuralError("sphere and annulus need at least one coordinate")
    if kind == "sphere":
        return _radial(z, norm, p["r"])
    # annulus
    if norm == 0.0:
        return _radial(z, norm, p["r1"])
    return z * (np.clip(norm, p["r1"], p["r2"]) / norm)


def _radial(z: np.ndarray, norm: float, r: float) -> np.ndarray:
    if norm == 0.0:
        # every point of the sphere is a minimizer; pick r*e1
        out = np.zeros_like(z)
        out[0] = r
        return out
    return z * (r / norm)


def _positive_candidates(kernel: ProxKernel, eta: float, z: np.ndarray) -> list[np.ndarray]:
    """Candidate minimizers on the x >= 0 half line for a penalty kernel."""
    p = kernel.params
    cands = []
    if kernel.kind == "scad":
        a, lam = p["a"], p["lambda"]
        cands.append(np.clip(z - lam / eta, 0.0, lam))
        denom = eta * (a - 1.0) - 1.0
        if abs(denom) > 1e-14:
            cands.append(np.clip((eta * z * (a - 1.0) - a * lam) / denom, lam, a * lam))
        cands.append(np.maximum(z, a * lam))
        breaks = (lam, a * lam)
    elif kernel.kind == "mcp":
        b, lam = p["b"], p["lambda"]
        denom = eta - 1.0 / b
        if abs(denom) > 1e-14:
            cands.append(np.clip((eta * z - lam) / denom, 0.0, b * lam))
        cands.append(np.maximum(z, b * lam))
        breaks = (b * lam,)
    else:
        lam, t = p["lambda"], p["t"]
        cands.append(np.clip(z - lam / eta, 0.0, t))
        cands.append(np.maximum(z, t))
        breaks = (t,)
    for brk in breaks:
        cands.append(np.full_like(z, brk))
    return cands


def _separable_candidate_prox(kernel: ProxKernel, eta: float, z: np.ndarray) -> np.ndarray:
    lo, hi = kernel.bounds
    lo = np.broadcast_to(np.asarray(lo, dtype=float), z.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), z.shape)

    pos = _positive_candidates(kernel, eta, z)
    neg = [-c for c in _positive_candidates(kernel, eta, -z)]
    cands = pos + neg + [np.zeros_like(z)]
    cands += [np.where(np.isfinite(lo), lo, 0.0), np.where(np.isfinite(hi), hi, 0.0)]
    C = np.clip(np.stack(cands, axis=-1), lo[..., None], hi[..., None])

    obj = penalty_values(kernel, C) + 0.5 * eta * (C - z[..., None]) ** 2
    best = obj.min(axis=-1, keepdims=True)
    tied = obj <= best + TIE_TOL * (1.0 + np.abs(best))
    masked_abs = np.where(tied, np.abs(C), np.inf)
    smallest = masked_abs.min(axis=-1, keepdims=True)
    chosen = tied & (masked_abs <= smallest)
    return np.where(chosen, C, -np.inf).max(axis=-1)


def sample_points(kernel: ProxKernel, n: int, count: int, rng: np.random.Generator, scale: float = 3.0) -> np.ndarray:
    """Draw `count` points of dom g in R^n (rows), uniform where the domain is bounded."""
    kind = kernel.kind
    if kind in SEPARABLE_KINDS:
        lo = np.broadcast_to(np.asarray(kernel.bounds[0], dtype=float), (n,))
        hi = np.broadcast_to(np.asarray(kernel.bounds[1], dtype=float), (n,))
        lo_eff = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi - 2 * scale, -scale))
        hi_eff = np.where(np.isfinite(hi), hi, lo_eff + 2 * scale)
        return rng.uniform(lo_eff, hi_eff, size=(count, n))

    directions = rng.standard_normal((count, n))
    directions /= np.maximum(np.linalg.norm(directions, axis=1, keepdims=True), 1e-300)
    if kind == "sphere":
        return kernel.params["r"] * directions
    if kind == "ball":
        radius = kernel.params["r"] * rng.uniform(size=(count, 1)) ** (1.0 / n)
        return radius * directions
    radius = rng.uniform(kernel.params["r1"], kernel.params["r2"], size=(count, 1))
    return radius * directions


def grid_prox(kernel: ProxKernel, eta: float, z: float, lower: float = -6.0, upper: float = 6.0,
              step: float = 1e-4) -> tuple[float, float]:
    """Brute-force scalar prox over a grid: returns (argmin, objective value)."""
    grid = np.arange(lower, upper + 0.5 * step, step)
    lo, hi = kernel.bounds
    obj = penalty_values(kernel, grid) + 0.5 * eta * (grid - z) ** 2
    obj = np.where((grid >= lo) & (grid <= hi), obj, np.inf)
    j = int(np.argmin(obj))
    return float(grid[j]), float(obj[j])


def scalar_objective(kernel: ProxKernel, eta: float, x: float, z: float) -> float:
    return float(penalty_values(kernel, np.array([x]))[0]) + 0.5 * eta * (x - z) ** 2
