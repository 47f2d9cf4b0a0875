"""Block-structured constrained problems and their augmented-Lagrangian oracles.

A problem is  min f(x) + sum_i g_i(x_i)  s.t.  h(x) = sum_i h_i(x_i) = 0  with
x partitioned into p blocks. Blocks are indexed from 0.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, ParameterError, StructuralError
from .extended import ExtendedReal
from .prox import ProxKernel, prox_value, sample_points
from .utils import finite_difference_gradient, finite_difference_jacobian, relative_error, write_json

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-10


@dataclass(frozen=True)
class BlockStructure:
    """Block dimensions n_1..n_p and constraint dimension m."""

    dims: tuple[int, ...]
    m: int

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) < 1:
            raise StructuralError("need at least one block")
        if any(d < 1 for d in self.dims):
            raise StructuralError(f"block dimensions must be positive: {self.dims}")
        if self.m < 1:
            raise StructuralError("constraint dimension m must be positive")

    @property
    def p(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(np.concatenate([[0], np.cumsum(self.dims)]).astype(int).tolist())

    def slice(self, i: int) -> slice:
        if not 0 <= i < self.p:
            raise StructuralError(f"block index {i} out of range for p={self.p}")
        off = self.offsets
        return slice(off[i], off[i + 1])

    def check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise StructuralError(f"expected vector of length {self.n}, got shape {x.shape}")
        return x

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        x = self.check(x)
        return [x[self.slice(i)] for i in range(self.p)]


@dataclass
class BlockVector:
    """A primal point addressable by block."""

    structure: BlockStructure
    data: np.ndarray

    def __post_init__(self):
        self.data = np.array(self.structure.check(self.data), dtype=float)

    def block(self, i: int) -> np.ndarray:
        return self.data[self.structure.slice(i)]

    def set_block(self, i: int, value: np.ndarray) -> None:
        sl = self.structure.slice(i)
        value = np.asarray(value, dtype=float)
        if value.shape != (sl.stop - sl.start,):
            raise StructuralError(f"block {i} expects length {sl.stop - sl.start}")
        self.data[sl] = value

    def blocks(self) -> list[np.ndarray]:
        return [self.block(i) for i in range(self.structure.p)]

    def copy(self) -> "BlockVector":
        return BlockVector(self.structure, self.data.copy())


ArrayLike = Union[np.ndarray, BlockVector, Sequence[float]]


def _as_array(x: ArrayLike) -> np.ndarray:
    if isinstance(x, BlockVector):
        return x.data
    return np.asarray(x, dtype=float)


# Smooth objective


class SmoothObjective:
    """f with value and gradient oracles and a gradient Lipschitz constant."""

    lipschitz: float = 0.0

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def block_gradient(self, structure: BlockStructure, i: int, x: np.ndarray) -> np.ndarray:
        return self.gradient(x)[structure.slice(i)]

    def to_dict(self) -> dict[str, Any]:
        raise ConfigError(f"{type(self).__name__} is not serializable")


@dataclass(frozen=True, eq=False)
class QuadraticObjective(SmoothObjective):
    """f(x) = x'Qx + q'x + const."""

    Q: np.ndarray
    q: np.ndarray
    const: float = 0.0
    lipschitz: float = -1.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        q = np.asarray(self.q, dtype=float)
        if Q.shape != (q.size, q.size):
            raise StructuralError(f"Q shape {Q.shape} does not match q length {q.size}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        if self.lipschitz < 0:
            object.__setattr__(self, "lipschitz", float(np.linalg.norm(Q + Q.T, 2)))

    def value(self, x: np.ndarray) -> float:
        return float(x @ self.Q @ x + self.q @ x + self.const)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return (self.Q + self.Q.T) @ x + self.q

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "quadratic",
            "Q": self.Q.tolist(),
            "q": self.q.tolist(),
            "const": self.const,
            "lipschitz": self.lipschitz,
        }


@dataclass(frozen=True, eq=False)
class CallableObjective(SmoothObjective):
    """f given by user callables."""

    value_fn: Callable[[np.ndarray], float]
    gradient_fn: Callable[[np.ndarray], np.ndarray]
    lipschitz: float = 0.0

    def value(self, x: np.ndarray) -> float:
        return float(self.value_fn(x))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.gradient_fn(x), dtype=float)


# Constraint blocks


@dataclass(frozen=True)
class BlockConstants:
    """Bounds on h_i over X_i: M >= ||h_i||, K = Lip(h_i), J >= ||grad h_i||, L = Lip(grad h_i)."""

    M: float
    K: float
    J: float
    L: float

    def __post_init__(self):
        if min(self.M, self.K, self.J, self.L) < 0:
            raise ParameterError("constraint constants must be nonnegative")


class ConstraintBlock:
    """h_i with value and Jacobian (n_i x m) oracles."""

    constants: Optional[BlockConstants] = None

    def value(self, x_i: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x_i: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def closed_form_constants(self, r2: float, r_inf: float) -> Optional[BlockConstants]:
        return None

    def to_dict(self) -> dict[str, Any]:
        raise ConfigError(f"{type(self).__name__} is not serializable")


def _constants_dict(constants: Optional[BlockConstants]) -> dict[str, Any]:
    if constants is None:
        return {}
    return {"constants": {"M": constants.M, "K": constants.K, "J": constants.J, "L": constants.L}}


@dataclass(frozen=True, eq=False)
class AffineBlock(ConstraintBlock):
    """h_i(x_i) = A_i x_i - b_i."""

    A: np.ndarray
    b: np.ndarray
    constants: Optional[BlockConstants] = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float)
        if b.shape != (A.shape[0],):
            raise StructuralError(f"b length {b.size} does not match A rows {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    def value(self, x_i: np.ndarray) -> np.ndarray:
        return self.A @ x_i - self.b

    def jacobian(self, x_i: np.ndarray) -> np.ndarray:
        return self.A.T

    def closed_form_constants(self, r2: float, r_inf: float) -> Optional[BlockConstants]:
        norm_a = float(np.linalg.norm(self.A, 2))
        if not np.isfinite(r2):
            return None
        return BlockConstants(M=norm_a * r2 + float(np.linalg.norm(self.b)), K=norm_a, J=norm_a, L=0.0)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "affine", "A": self.A.tolist(), "b": self.b.tolist(), **_constants_dict(self.constants)}


@dataclass(frozen=True, eq=False)
class QuadraticBlock(ConstraintBlock):
    """h_i(x_i) = B_i x_i + D_i (x_i * x_i) + d_i  (diagonal quadratic terms)."""

    B: np.ndarray
    D: np.ndarray
    d: np.ndarray
    constants: Optional[BlockConstants] = None

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        d = np.asarray(self.d, dtype=float)
        if B.shape != D.shape or d.shape != (B.shape[0],):
            raise StructuralError("quadratic block needs B, D of equal shape and d of length m")
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "d", d)

    def value(self, x_i: np.ndarray) -> np.ndarray:
        return self.B @ x_i + self.D @ (x_i * x_i) + self.d

    def jacobian(self, x_i: np.ndarray) -> np.ndarray:
        return self.B.T + 2.0 * x_i[:, None] * self.D.T

    def closed_form_constants(self, r2: float, r_inf: float) -> Optional[BlockConstants]:
        if not np.isfinite(r2):
            return None
        norm_b = float(np.linalg.norm(self.B, 2))
        norm_d = float(np.linalg.norm(self.D, 2))
        grad_bound = norm_b + 2.0 * r_inf * norm_d
        return BlockConstants(
            M=norm_b * r2 + norm_d * r_inf * r2 + float(np.linalg.norm(self.d)),
            K=grad_bound,
            J=grad_bound,
            L=2.0 * norm_d,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "quadratic",
            "B": self.B.tolist(),
            "D": self.D.tolist(),
            "d": self.d.tolist(),
            **_constants_dict(self.constants),
        }


@dataclass(frozen=True)
class AggregateConstants:
    """M_h = sum of M_i; K_h, J_h, L_h are maxima over blocks."""

    M_h: float
    K_h: float
    J_h: float
    L_h: float

    @classmethod
    def from_blocks(cls, blocks: Sequence[BlockConstants]) -> "AggregateConstants":
        return cls(
            M_h=float(sum(b.M for b in blocks)),
            K_h=float(max(b.K for b in blocks)),
            J_h=float(max(b.J for b in blocks)),
            L_h=float(max(b.L for b in blocks)),
        )

    @property
    def kappa1(self) -> float:
        return self.J_h * self.K_h + self.M_h * self.L_h


# Inequality description of X


@dataclass(frozen=True, eq=False)
class IneqSet:
    """X = {x : q_l(x) <= 0}.

    kind is "box" (faces of finite bounds), "ball" (||x||^2 - r^2), "none",
    or "general" (user callables returning the stacked q values and an
    n x L gradient matrix).
    """

    kind: str
    n: int
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    radius: Optional[float] = None
    value_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    gradient_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    t_act: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("box", "ball", "none", "general"):
            raise ParameterError(f"unknown inequality set kind {self.kind!r}")
        if self.kind == "box":
            object.__setattr__(self, "lower", np.broadcast_to(np.asarray(self.lower, dtype=float), (self.n,)).copy())
            object.__setattr__(self, "upper", np.broadcast_to(np.asarray(self.upper, dtype=float), (self.n,)).copy())
        if self.kind == "general" and (self.value_fn is None or self.gradient_fn is None):
            raise ParameterError("general inequality set needs value and gradient callables")

    @classmethod
    def from_problem(cls, problem: "ProblemInstance") -> "IneqSet":
        """Read X off the prox terms: separable bounds become a box, a single ball stays a ball."""
        terms = problem.prox_terms
        n = problem.structure.n
        if all(t.kind == "zero" for t in terms):
            return cls("none", n)
        if len(terms) == 1 and terms[0].kind == "ball":
            return cls("ball", n, radius=terms[0].params["r"])
        if all(t.is_separable for t in terms):
            lower = np.concatenate([
                np.broadcast_to(np.asarray(t.bounds[0], dtype=float), (d,))
                for t, d in zip(terms, problem.structure.dims)
            ])
            upper = np.concatenate([
                np.broadcast_to(np.asarray(t.bounds[1], dtype=float), (d,))
                for t, d in zip(terms, problem.structure.dims)
            ])
            return cls("box", n, lower=lower, upper=upper)
        raise ParameterError("X must be a box or a single ball to derive inequality constraints")

    @property
    def _upper_idx(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.upper))

    @property
    def _lower_idx(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.lower))

    def values(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "box":
            return np.concatenate([x[self._upper_idx] - self.upper[self._upper_idx],
                                   self.lower[self._lower_idx] - x[self._lower_idx]])
        if self.kind == "ball":
            return np.array([x @ x - self.radius**2])
        if self.kind == "general":
            return np.atleast_1d(np.asarray(self.value_fn(x), dtype=float))
        return np.zeros(0)

    def gradients(self, x: np.ndarray) -> np.ndarray:
        """n x L matrix of constraint gradients."""
        if self.kind == "box":
            up, lo = self._upper_idx, self._lower_idx
            G = np.zeros((self.n, up.size + lo.size))
            G[up, np.arange(up.size)] = 1.0
            G[lo, up.size + np.arange(lo.size)] = -1.0
            return G
        if self.kind == "ball":
            return (2.0 * x)[:, None]
        if self.kind == "general":
            return np.atleast_2d(np.asarray(self.gradient_fn(x), dtype=float)).reshape(self.n, -1)
        return np.zeros((self.n, 0))

    def active(self, x: np.ndarray) -> np.ndarray:
        return np.flatnonzero(self.values(x) >= -self.t_act)


# Problem instance


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """An immutable problem: objective, prox terms, constraint blocks, start and lower bound."""

    structure: BlockStructure
    objective: SmoothObjective
    prox_terms: tuple[ProxKernel, ...]
    constraints: tuple[ConstraintBlock, ...]
    x0: np.ndarray
    p_lb: float
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        s = self.structure
        terms = tuple(self.prox_terms)
        blocks = tuple(self.constraints)
        if len(terms) != s.p or len(blocks) != s.p:
            raise StructuralError(f"need {s.p} prox terms and constraint blocks")
        x0 = np.array(s.check(self.x0), dtype=float)
        x0.setflags(write=False)

        # fill in closed-form constants over each block domain
        filled = []
        for i, (term, block) in enumerate(zip(terms, blocks)):
            if block.constants is None:
                r2, r_inf = term.radii(s.dims[i])
                block = replace(block, constants=block.closed_form_constants(r2, r_inf))
            filled.append(block)

        object.__setattr__(self, "prox_terms", terms)
        object.__setattr__(self, "constraints", tuple(filled))
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "p_lb", float(self.p_lb))

    @property
    def has_constants(self) -> bool:
        return all(b.constants is not None for b in self.constraints)

    @property
    def is_affine(self) -> bool:
        return all(isinstance(b, AffineBlock) for b in self.constraints)

    def aggregate_constants(self) -> AggregateConstants:
        if not self.has_constants:
            raise ParameterError("constraint constants unknown; run estimate_constants first")
        return AggregateConstants.from_blocks([b.constants for b in self.constraints])

    def h(self, x: ArrayLike) -> np.ndarray:
        return aggregate_h(self, x)

    def g_value(self, x: ArrayLike) -> ExtendedReal:
        parts = self.structure.split(_as_array(x))
        total = ExtendedReal.finite(0.0)
        for term, x_i in zip(self.prox_terms, parts):
            total = total + prox_value(term, x_i)
        return total

    def objective_value(self, x: ArrayLike) -> ExtendedReal:
        x = _as_array(x)
        return self.g_value(x) + self.objective.value(x)

    def in_domain(self, x: ArrayLike) -> bool:
        parts = self.structure.split(_as_array(x))
        return all(t.in_domain(x_i) for t, x_i in zip(self.prox_terms, parts))

    @property
    def delta_p(self) -> float:
        """f(x0) + g(x0) - P_lb."""
        return float(self.objective_value(self.x0)) - self.p_lb

    def affine_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked A = [A_1 ... A_p] and b = sum b_i for all-affine problems."""
        if not self.is_affine:
            raise StructuralError("problem constraints are not affine")
        A = np.hstack([b.A for b in self.constraints])
        b = np.sum([b.b for b in self.constraints], axis=0)
        return A, b

    def jacobian(self, x: ArrayLike) -> np.ndarray:
        """Full n x m Jacobian of h (block rows stacked)."""
        parts = self.structure.split(_as_array(x))
        return np.vstack([blk.jacobian(x_i) for blk, x_i in zip(self.constraints, parts)])

    def ineq_set(self) -> IneqSet:
        """X read off the prox terms."""
        return IneqSet.from_problem(self)


# Oracles shared by every solver


def aggregate_h(problem: ProblemInstance, x: ArrayLike) -> np.ndarray:
    """h(x) = sum_i h_i(x_i)."""
    parts = problem.structure.split(_as_array(x))
    total = np.zeros(problem.structure.m)
    for block, x_i in zip(problem.constraints, parts):
        h_i = np.asarray(block.value(x_i), dtype=float)
        if h_i.shape != total.shape:
            raise StructuralError(f"constraint block returned shape {h_i.shape}, expected {total.shape}")
        total += h_i
    return total


def eval_K(problem: ProblemInstance, x: ArrayLike, mu: np.ndarray, rho: float) -> float:
    """Smooth part K(x, mu) = f(x) + <mu, h(x)> + (rho/2)||h(x)||^2."""
    x = _as_array(x)
    h = aggregate_h(problem, x)
    return float(problem.objective.value(x) + mu @ h + 0.5 * rho * h @ h)


def eval_augmented_lagrangian(problem: ProblemInstance, x: ArrayLike, mu: np.ndarray, rho: float) -> ExtendedReal:
    """L(x, mu) = f + g + <mu, h> + (rho/2)||h||^2, +inf outside dom g."""
    if rho < 0:
        raise ParameterError("rho must be nonnegative")
    g = problem.g_value(x)
    if g.infinite:
        return g
    return g + eval_K(problem, x, np.asarray(mu, dtype=float), rho)


def eval_K_block_gradient(problem: ProblemInstance, i: int, x: ArrayLike, mu: np.ndarray, rho: float) -> np.ndarray:
    """grad_i K = grad_i f(x) + grad h_i(x_i) (mu + rho h(x))."""
    x = _as_array(x)
    s = problem.structure
    sl = s.slice(i)
    weight = np.asarray(mu, dtype=float) + rho * aggregate_h(problem, x)
    return problem.objective.block_gradient(s, i, x) + problem.constraints[i].jacobian(x[sl]) @ weight


def eval_K_gradient(problem: ProblemInstance, x: ArrayLike, mu: np.ndarray, rho: float) -> np.ndarray:
    """Full gradient of K, one h evaluation shared by all blocks."""
    x = _as_array(x)
    weight = np.asarray(mu, dtype=float) + rho * aggregate_h(problem, x)
    return problem.objective.gradient(x) + problem.jacobian(x) @ weight


def lip_formula(L_f: float, constants: AggregateConstants, mu_norm: float, rho: float) -> float:
    return L_f + mu_norm * constants.L_h + rho * constants.kappa1


def lip_estimate(problem: ProblemInstance, mu: np.ndarray, rho: float) -> float:
    """Blockwise gradient-Lipschitz constant of K: L_f + ||mu|| L_h + rho (J K + M L)."""
    return lip_formula(problem.objective.lipschitz, problem.aggregate_constants(),
                       float(np.linalg.norm(mu)), rho)


def joint_lip_estimate(problem: ProblemInstance, mu: np.ndarray, rho: float) -> float:
    """Lipschitz constant of the full gradient of K, treating x as one block."""
    c = problem.aggregate_constants()
    p = problem.structure.p
    return (problem.objective.lipschitz + float(np.linalg.norm(mu)) * c.L_h
            + rho * (p * c.J_h * c.K_h + c.M_h * c.L_h))


# Instance checks and constant estimation


@dataclass
class InstanceReport:
    """Outcome of the problem-model invariant checks."""

    checks: dict[str, bool] = field(default_factory=dict)
    details: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    @property
    def failures(self) -> list[str]:
        return [name for name, passed in self.checks.items() if not passed]


def _domain_samples(problem: ProblemInstance, count: int, rng: np.random.Generator) -> np.ndarray:
    cols = [sample_points(t, d, count, rng) for t, d in zip(problem.prox_terms, problem.structure.dims)]
    return np.hstack(cols)


def check_instance(
    problem: ProblemInstance,
    samples: int = 100,
    seed: int = 0,
    fd_tol: float = 1e-5,
    feasible_points: Sequence[np.ndarray] = (),
) -> InstanceReport:
    """Check feasibility of x0, oracle derivatives, declared constants and P_lb."""
    rng = np.random.default_rng(seed)
    s = problem.structure
    report = InstanceReport()

    feas = float(np.linalg.norm(aggregate_h(problem, problem.x0)))
    report.details["x0_feasibility"] = feas
    report.checks["x0_feasible"] = feas <= FEASIBILITY_TOL
    report.checks["x0_in_domain"] = problem.in_domain(problem.x0)

    pts = _domain_samples(problem, samples, rng)
    grad_err = 0.0
    jac_err = 0.0
    for x in pts:
        g = problem.objective.gradient(x)
        g_fd = finite_difference_gradient(problem.objective.value, x)
        grad_err = max(grad_err, relative_error(g_fd, g))
        for i, block in enumerate(problem.constraints):
            x_i = x[s.slice(i)]
            J = block.jacobian(x_i)
            J_fd = finite_difference_jacobian(block.value, x_i)
            jac_err = max(jac_err, relative_error(J_fd, J))
    report.details["gradient_rel_err"] = grad_err
    report.details["jacobian_rel_err"] = jac_err
    report.checks["gradient_fd"] = grad_err <= fd_tol
    report.checks["jacobian_fd"] = jac_err <= fd_tol

    if problem.has_constants:
        ok_consts = True
        slack = 1e-9
        other = _domain_samples(problem, samples, rng)
        L_f = problem.objective.lipschitz
        for x, y in zip(pts, other):
            dx = np.linalg.norm(x - y)
            if dx > 0:
                ok_consts &= bool(np.linalg.norm(problem.objective.gradient(x) - problem.objective.gradient(y))
                                  <= L_f * dx * (1 + slack) + slack)
            for i, block in enumerate(problem.constraints):
                c = block.constants
                sl = s.slice(i)
                xi, yi = x[sl], y[sl]
                d = np.linalg.norm(xi - yi)
                ok_consts &= bool(np.linalg.norm(block.value(xi)) <= c.M * (1 + slack) + slack)
                ok_consts &= bool(np.linalg.norm(block.jacobian(xi), 2) <= c.J * (1 + slack) + slack)
                if d > 0:
                    ok_consts &= bool(np.linalg.norm(block.value(xi) - block.value(yi)) <= c.K * d * (1 + slack) + slack)
                    ok_consts &= bool(np.linalg.norm(block.jacobian(xi) - block.jacobian(yi), 2)
                                      <= c.L * d * (1 + slack) + slack)
        report.checks["constants"] = ok_consts
        report.checks["block_lipschitz"] = _check_block_lipschitz(problem, pts, other, rng)

    lb_points = [problem.x0, *feasible_points]
    lb_ok = all(float(problem.objective_value(x)) >= problem.p_lb - 1e-9 for x in lb_points)
    report.checks["lower_bound"] = lb_ok
    return report


def _check_block_lipschitz(problem: ProblemInstance, pts: np.ndarray, other: np.ndarray,
                           rng: np.random.Generator) -> bool:
    """grad_i K changes by at most Lip(mu, rho) ||x_i - z_i|| when only block i moves."""
    s = problem.structure
    ok = True
    for x, z in zip(pts, other):
        mu = rng.standard_normal(s.m)
        rho = float(rng.uniform(0.0, 10.0))
        lip = lip_estimate(problem, mu, rho)
        for i in range(s.p):
            sl = s.slice(i)
            y = x.copy()
            y[sl] = z[sl]
            d = np.linalg.norm(x[sl] - z[sl])
            diff = np.linalg.norm(eval_K_block_gradient(problem, i, x, mu, rho)
                                  - eval_K_block_gradient(problem, i, y, mu, rho))
            ok &= bool(diff <= lip * d * (1 + 1e-9) + 1e-9)
    return ok


def estimate_constants(
    problem: ProblemInstance,
    samples: int = 10_000,
    inflate: float = 1.5,
    seed: int = 0,
) -> ProblemInstance:
    """Return a copy with sampled-and-inflated L_f and block constants.

    Each constant is the largest ratio observed over `samples` random pairs
    in X, multiplied by `inflate`.
    """
    rng = np.random.default_rng(seed)
    s = problem.structure
    x = _domain_samples(problem, samples, rng)
    y = _domain_samples(problem, samples, rng)

    L_f = 0.0
    stats = [np.zeros(4) for _ in range(s.p)]
    for a, b in zip(x, y):
        d = np.linalg.norm(a - b)
        if d > 0:
            L_f = max(L_f, np.linalg.norm(problem.objective.gradient(a) - problem.objective.gradient(b)) / d)
        for i, block in enumerate(problem.constraints):
            sl = s.slice(i)
            ai, bi = a[sl], b[sl]
            di = np.linalg.norm(ai - bi)
            st = stats[i]
            st[0] = max(st[0], np.linalg.norm(block.value(ai)))
            st[2] = max(st[2], np.linalg.norm(block.jacobian(ai), 2))
            if di > 0:
                st[1] = max(st[1], np.linalg.norm(block.value(ai) - block.value(bi)) / di)
                st[3] = max(st[3], np.linalg.norm(block.jacobian(ai) - block.jacobian(bi), 2) / di)

    blocks = tuple(
        replace(block, constants=BlockConstants(*(inflate * st)))
        for block, st in zip(problem.constraints, stats)
    )
    objective = replace(problem.objective, lipschitz=float(inflate * L_f))
    logger.info("estimated constants from %d pairs: L_f=%.4g", samples, inflate * L_f)
    return replace(problem, objective=objective, constraints=blocks)


# JSON schema


def problem_to_dict(problem: ProblemInstance) -> dict[str, Any]:
    out: dict[str, Any] = {
        "structure": {"dims": list(problem.structure.dims), "m": problem.structure.m},
        "objective": problem.objective.to_dict(),
        "prox_terms": [t.to_dict() for t in problem.prox_terms],
        "constraints": [b.to_dict() for b in problem.constraints],
        "x0": problem.x0.tolist(),
        "p_lb": problem.p_lb,
    }
    if problem.metadata:
        out["metadata"] = problem.metadata
    return out


def _block_from_dict(data: dict[str, Any]) -> ConstraintBlock:
    consts = data.get("constants")
    constants = BlockConstants(**consts) if consts else None
    kind = data.get("kind")
    if kind == "affine":
        return AffineBlock(data["A"], data["b"], constants)
    if kind == "quadratic":
        return QuadraticBlock(data["B"], data["D"], data["d"], constants)
    raise ConfigError(f"unknown constraint kind {kind!r}")


def problem_from_dict(data: dict[str, Any], estimate_samples: int = 10_000) -> ProblemInstance:
    """Build a ProblemInstance from the JSON schema, estimating missing constants."""
    required = ("structure", "objective", "prox_terms", "constraints", "x0", "p_lb")
    missing = [k for k in required if k not in data]
    if missing:
        raise ConfigError(f"problem JSON missing {', '.join(missing)}")
    unknown = set(data) - set(required) - {"metadata"}
    if unknown:
        raise ConfigError(f"problem JSON has unknown fields {sorted(unknown)}")

    try:
        structure = BlockStructure(tuple(data["structure"]["dims"]), int(data["structure"]["m"]))
        obj = data["objective"]
        if obj.get("kind") != "quadratic":
            raise ConfigError(f"unsupported objective kind {obj.get('kind')!r}")
        objective = QuadraticObjective(obj["Q"], obj["q"], float(obj.get("const", 0.0)),
                                       float(obj.get("lipschitz", -1.0)))
        problem = ProblemInstance(
            structure=structure,
            objective=objective,
            prox_terms=tuple(ProxKernel.from_dict(t) for t in data["prox_terms"]),
            constraints=tuple(_block_from_dict(c) for c in data["constraints"]),
            x0=np.asarray(data["x0"], dtype=float),
            p_lb=float(data["p_lb"]),
            metadata=dict(data.get("metadata", {})),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"malformed problem JSON: {e}") from e

    if not problem.has_constants:
        problem = estimate_constants(problem, samples=estimate_samples)
    return problem


def load_problem(path: Path) -> ProblemInstance:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"problem file not found: {path}")
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
    return problem_from_dict(data)


def save_problem(problem: ProblemInstance, path: Path) -> Path:
    return write_json(path, problem_to_dict(problem))
