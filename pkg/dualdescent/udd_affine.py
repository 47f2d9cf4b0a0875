"""Unscaled dual descent ALM for affine constraints Ax = b.

    x+  = prox_{g, theta L_K}(x - (grad f(x) + A'(mu + rho (Ax - b))) / (theta L_K))
    mu+ = mu - varrho (Ax+ - b)

with L_K = L_f + rho ||A'A||. The augmented Lagrangian itself decreases.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np
from scipy.optimize import linprog

from .errors import InvariantViolation, ParameterError
from .problem import IneqSet, ProblemInstance, eval_augmented_lagrangian
from .prox import prox
from .sdd import StationarityCertificate
from .trace import IterationRecord, RunResult, RunStatus
from .utils import power_iteration

logger = logging.getLogger(__name__)

REL_SLACK = 1e-9
IDENTITY_TOL = 1e-10
RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class AffineConstraint:
    """h(x) = Ax - b with a power-iteration bound on ||A'A||."""

    A: np.ndarray
    b: np.ndarray
    AtA_norm: float

    @classmethod
    def from_matrix(cls, A: np.ndarray, b: np.ndarray) -> "AffineConstraint":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(A, np.asarray(b, dtype=float), power_iteration(A.T @ A))

    @classmethod
    def from_problem(cls, problem: ProblemInstance) -> "AffineConstraint":
        return cls.from_matrix(*problem.affine_matrix())

    @property
    def A_norm(self) -> float:
        return math.sqrt(self.AtA_norm)

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x - self.b


@dataclass
class UddParams:
    """rho >= 0, dual step varrho > 0 (default rho/8), theta > 1."""

    rho: float = 1.0
    varrho: Optional[float] = None
    theta: float = 2.0
    eps: float = 1e-3
    max_iters: int = 10_000
    monitor: bool = True
    keep_states: bool = True
    mu0: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.rho >= 0:
            raise ParameterError(f"rho must be nonnegative, got {self.rho}")
        if self.varrho is None:
            self.varrho = self.rho / 8.0
        if not self.varrho > 0:
            raise ParameterError("varrho must be positive (set it explicitly when rho = 0)")
        if not self.theta > 1:
            raise ParameterError(f"theta must exceed 1, got {self.theta}")
        if not self.eps > 0:
            raise ParameterError("eps must be positive")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be at least 1")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out.pop("mu0")
        return out


def step_constant(problem: ProblemInstance, rho: float, constraint: AffineConstraint) -> float:
    """L_K = L_f + rho ||A'A||."""
    return problem.objective.lipschitz + rho * constraint.AtA_norm


def udd_primal_step(
    problem: ProblemInstance,
    x: np.ndarray,
    mu: np.ndarray,
    params: UddParams,
    constraint: Optional[AffineConstraint] = None,
) -> np.ndarray:
    """One proximal-gradient step on L(., mu) with parameter theta L_K."""
    constraint = constraint or AffineConstraint.from_problem(problem)
    L_K = step_constant(problem, params.rho, constraint)
    grad = problem.objective.gradient(x) + constraint.A.T @ (mu + params.rho * constraint.residual(x))
    eta = params.theta * L_K
    z = x - grad / eta
    s = problem.structure
    out = np.empty_like(z)
    for i, term in enumerate(problem.prox_terms):
        sl = s.slice(i)
        out[sl] = prox(term, eta, z[sl])
    return out


def udd_dual_update(mu: np.ndarray, residual: np.ndarray, varrho: float) -> np.ndarray:
    """mu+ = mu - varrho (Ax+ - b)."""
    return np.asarray(mu, dtype=float) - varrho * np.asarray(residual, dtype=float)


def dual_residual(
    problem: ProblemInstance,
    constraint: AffineConstraint,
    x_prev: np.ndarray,
    x_next: np.ndarray,
    params: UddParams,
    L_K: float,
) -> np.ndarray:
    """xi in grad f(x+) + dg(x+) + A' mu+ assembled from the prox step."""
    A = constraint.A
    dx = x_next - x_prev
    f = problem.objective
    return ((f.gradient(x_next) - f.gradient(x_prev))
            - params.theta * L_K * dx
            - (params.rho + params.varrho) * A.T @ constraint.residual(x_next)
            + params.rho * A.T @ (A @ dx))


def udd_iteration_ceiling(
    problem: ProblemInstance,
    params: UddParams,
    initial_value: float,
    optimal_value: float,
    constraint: Optional[AffineConstraint] = None,
    eps: Optional[float] = None,
) -> float:
    """ceil(max(1, delta2)^2 (L(x0, mu0) - f(x*) - g(x*)) / (delta1 eps^2))."""
    constraint = constraint or AffineConstraint.from_problem(problem)
    eps = params.eps if eps is None else eps
    L_K = step_constant(problem, params.rho, constraint)
    delta1 = min((2.0 * params.theta - 1.0) * L_K / 2.0, params.varrho)
    delta2 = (params.theta + 1.0) * L_K + (params.rho + params.varrho) * constraint.A_norm
    gap = max(initial_value - optimal_value, 0.0)
    return float(max(1, math.ceil(max(1.0, delta2) ** 2 * gap / (delta1 * eps**2))))


def robinson_diagnostic(x: np.ndarray, X: IneqSet, A: np.ndarray) -> dict[str, Any]:
    """Check full row rank of A and, for a box or ball X, that x + Null(A) meets int X."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    x = np.asarray(x, dtype=float)
    m, n = A.shape
    sv = np.linalg.svd(A, compute_uv=False)
    sigma_max = float(sv.max()) if sv.size else 0.0
    sigma_min = float(sv.min()) if sv.size else 0.0
    rank_ok = m <= n and sigma_max > 0 and sigma_min > RANK_TOL * sigma_max
    out: dict[str, Any] = {"rank_ok": bool(rank_ok), "sigma_min": sigma_min, "sigma_max": sigma_max}

    if X.kind == "box":
        lo, hi = X.lower, X.upper
        up_idx = np.flatnonzero(np.isfinite(hi))
        lo_idx = np.flatnonzero(np.isfinite(lo))
        # variables (d, s): maximize s subject to A d = 0 and x + d at least s inside every face
        rows = []
        rhs = []
        for j in up_idx:
            row = np.zeros(n + 1)
            row[j], row[n] = 1.0, 1.0
            rows.append(row)
            rhs.append(hi[j] - x[j])
        for j in lo_idx:
            row = np.zeros(n + 1)
            row[j], row[n] = -1.0, 1.0
            rows.append(row)
            rhs.append(x[j] - lo[j])
        c = np.zeros(n + 1)
        c[n] = -1.0
        bounds = [(None, None)] * n + [(None, 1.0)]
        res = linprog(
            c,
            A_ub=np.array(rows) if rows else None,
            b_ub=np.array(rhs) if rhs else None,
            A_eq=np.hstack([A, np.zeros((m, 1))]),
            b_eq=np.zeros(m),
            bounds=bounds,
            method="highs",
        )
        margin = float(-res.fun) if res.status == 0 else float("nan")
        interior_ok = bool(res.status == 0 and margin > 1e-9)
        out.update({"status": "box", "interior_margin": margin, "interior_ok": interior_ok})
    elif X.kind == "ball":
        row_part = np.linalg.pinv(A) @ (A @ x)
        margin = float(X.radius - np.linalg.norm(row_part))
        out.update({"status": "ball", "interior_margin": margin, "interior_ok": margin > 0})
    elif X.kind == "none":
        out.update({"status": "unconstrained", "interior_ok": True})
    else:
        out.update({"status": "unknown", "interior_ok": None})
        return out
    out["robinson_ok"] = bool(out["rank_ok"] and out["interior_ok"])
    return out


def run(problem: ProblemInstance, params: UddParams) -> RunResult:
    """Run UDD-ALM on an all-affine problem with convex g."""
    start = time.perf_counter()
    if not problem.is_affine:
        raise ParameterError("udd_affine needs affine constraint blocks")
    nonconvex = [t.kind for t in problem.prox_terms if not t.is_convex]
    if nonconvex:
        raise ParameterError(f"udd_affine needs convex g; got {', '.join(nonconvex)}")

    s = problem.structure
    constraint = AffineConstraint.from_problem(problem)
    L_K = step_constant(problem, params.rho, constraint)
    rho, varrho, theta = params.rho, params.varrho, params.theta
    M_h = problem.aggregate_constants().M_h if problem.has_constants else math.inf

    x = problem.x0.copy()
    mu = np.zeros(s.m) if params.mu0 is None else np.array(params.mu0, dtype=float)
    mu0_norm = float(np.linalg.norm(mu))
    L_val = float(eval_augmented_lagrangian(problem, x, mu, rho))
    L0 = L_val

    trace: list[IterationRecord] = []
    status = RunStatus.MAX_ITERS
    k_star = None
    cert: Optional[StationarityCertificate] = None

    logger.info("udd_affine start: rho=%.4g varrho=%.4g theta=%g L_K=%.4g", rho, varrho, theta, L_K)

    for k in range(params.max_iters):
        x_next = udd_primal_step(problem, x, mu, params, constraint)
        r_next = constraint.residual(x_next)
        mu_next = udd_dual_update(mu, r_next, varrho)
        L_mid = float(eval_augmented_lagrangian(problem, x_next, mu, rho))
        L_next = float(eval_augmented_lagrangian(problem, x_next, mu_next, rho))
        xi = dual_residual(problem, constraint, x, x_next, params, L_K)

        dx = x_next - x
        dx_norm = float(np.linalg.norm(dx))
        r_norm = float(np.linalg.norm(r_next))
        xi_norm = float(np.linalg.norm(xi))
        cert = StationarityCertificate(
            lam=mu_next.copy(),
            xi=[xi[s.slice(i)] for i in range(s.p)],
            residual=xi_norm,
            feasibility=r_norm,
            bounds=[(theta + 1.0) * L_K * dx_norm + (rho + varrho) * constraint.A_norm * r_norm],
        )
        record = IterationRecord(
            k=k,
            potential=L_next,
            lip=L_K,
            h_norm=r_norm,
            mu_norm=float(np.linalg.norm(mu_next)),
            max_block_disp=max(float(np.linalg.norm(dx[s.slice(i)])) for i in range(s.p)),
            resid_max=xi_norm,
            feas=r_norm,
            extras={"L_aug": L_next},
            x=x_next.copy() if params.keep_states else None,
            mu=mu_next.copy() if params.keep_states else None,
        )
        trace.append(record)

        slack = REL_SLACK * (1.0 + abs(L_val))
        if not L_next <= L_val + slack:
            raise InvariantViolation("augmented_lagrangian_increase", k, lhs=L_next, rhs=L_val + slack, trace=trace)

        if params.monitor:
            gain = 0.5 * (2.0 * theta - 1.0) * L_K * dx_norm**2 + varrho * r_norm**2
            if L_val - L_next < gain - slack:
                raise InvariantViolation("one_step_progress", k, lhs=L_val - L_next, rhs=gain, trace=trace)
            identity_gap = abs((L_next - L_mid) + varrho * r_norm**2)
            if identity_gap > IDENTITY_TOL * (1.0 + abs(L_next)):
                raise InvariantViolation("dual_step_identity", k, lhs=L_next - L_mid,
                                         rhs=-varrho * r_norm**2, trace=trace)
            bound = cert.bounds[0]
            if xi_norm > bound * (1.0 + REL_SLACK) + 1e-12:
                raise InvariantViolation("dual_residual_bound", k, lhs=xi_norm, rhs=bound, trace=trace)

        logger.debug("k=%d L=%.10g |r|=%.3e |xi|=%.3e |mu|=%.3e", k, L_next, r_norm, xi_norm, record.mu_norm)

        x, mu, L_val = x_next, mu_next, L_next

        floor = problem.p_lb - (mu0_norm + varrho * (k + 1) * M_h) * M_h
        if L_next < floor:
            logger.warning("augmented Lagrangian %.4g fell below %.4g; regularity likely violated", L_next, floor)
            status = RunStatus.DIVERGED
            break

        if max(xi_norm, r_norm) <= params.eps:
            status = RunStatus.CONVERGED
            k_star = k
            break

    info: dict[str, Any] = {
        "L_K": L_K,
        "AtA_norm": constraint.AtA_norm,
        "initial_L": L0,
    }
    try:
        info["robinson"] = robinson_diagnostic(x, problem.ineq_set(), constraint.A)
    except ParameterError:
        info["robinson"] = {"status": "unknown"}
    if status == RunStatus.DIVERGED:
        info["diagnosis"] = "regularity likely violated"
    if "f_star" in problem.metadata:
        info["ceiling"] = udd_iteration_ceiling(problem, params, L0, float(problem.metadata["f_star"]), constraint)

    result = RunResult(
        solver="udd_affine",
        status=status,
        trace=trace,
        certificate=cert,
        x=x.copy(),
        mu=mu.copy(),
        rho=rho,
        params=params.to_dict(),
        k_star=k_star,
        extra_columns=("L_aug",),
        info=info,
        wall_time=time.perf_counter() - start,
    )
    logger.info("udd_affine %s after %d iterations", status.value, result.iterations)
    return result
