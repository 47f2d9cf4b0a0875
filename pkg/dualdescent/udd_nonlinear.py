"""Unscaled dual descent ALM for nonlinear equality constraints over X = {q_l <= 0}.

Each outer step approximately solves the proximal augmented-Lagrangian
relaxation  min_{x in X} L(x, mu^k) + (c/2)||x - x^k||^2  with a warm-started
proximal-gradient loop, then sets mu+ = mu - varrho h(x+).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np
from scipy.optimize import nnls

from .errors import InvariantViolation, OracleFailure, ParameterError
from .problem import (
    IneqSet,
    ProblemInstance,
    aggregate_h,
    eval_augmented_lagrangian,
    eval_K_gradient,
    joint_lip_estimate,
)
from .prox import prox
from .trace import IterationRecord, RunResult, RunStatus

logger = logging.getLogger(__name__)

REL_SLACK = 1e-9
KINK_TOL = 1e-12
LICQ_TOL = 1e-8


@dataclass
class KktCertificate:
    """Multipliers (mu, y), the explicit stationarity vector xi, and the KKT measures."""

    mu: np.ndarray
    y: np.ndarray
    xi: np.ndarray
    stationarity: float
    feasibility: float
    complementarity: float
    max_q: float

    def satisfies(self, eps: float, t_act: float = 1e-8) -> bool:
        return (self.stationarity <= eps and self.feasibility <= eps
                and self.complementarity <= eps and self.max_q <= t_act
                and bool(np.all(self.y >= 0)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "kkt",
            "mu": self.mu,
            "y": self.y,
            "xi": self.xi,
            "stationarity": self.stationarity,
            "feasibility": self.feasibility,
            "complementarity": self.complementarity,
            "max_q": self.max_q,
        }


@dataclass
class NlUddParams:
    """rho, varrho, c, nu > 0 with nu <= c/2.

    varrho defaults to rho/8, c to 1.1 times the joint gradient-Lipschitz
    constant of K at mu0, nu to c/2, and the inner tolerance to eps/10.
    """

    rho: float = 1.0
    varrho: Optional[float] = None
    c: Optional[float] = None
    nu: Optional[float] = None
    eps: float = 1e-3
    max_iters: int = 2000
    inner_max_iters: int = 5000
    inner_tol: Optional[float] = None
    monitor: bool = True
    keep_states: bool = True
    mu0: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.rho > 0:
            raise ParameterError("rho must be positive")
        if self.varrho is None:
            self.varrho = self.rho / 8.0
        if not self.varrho > 0:
            raise ParameterError("varrho must be positive")
        if self.c is not None and not self.c > 0:
            raise ParameterError("c must be positive")
        if not self.eps > 0:
            raise ParameterError("eps must be positive")
        if self.inner_tol is None:
            self.inner_tol = self.eps / 10.0
        if self.max_iters < 1 or self.inner_max_iters < 1:
            raise ParameterError("iteration budgets must be at least 1")
        self._check_nu()

    def _check_nu(self):
        if self.c is None:
            return
        if self.nu is None:
            self.nu = self.c / 2.0
        if not 0 < self.nu <= self.c / 2.0:
            raise ParameterError(f"nu must lie in (0, c/2], got nu={self.nu} c={self.c}")

    def resolve(self, problem: ProblemInstance) -> "NlUddParams":
        """Fill c (and nu) from the instance constants when unset."""
        if self.c is None:
            mu0 = np.zeros(problem.structure.m) if self.mu0 is None else self.mu0
            self.c = 1.1 * joint_lip_estimate(problem, mu0, self.rho)
            self._check_nu()
        return self

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out.pop("mu0")
        return out


@dataclass
class SubproblemResult:
    x: np.ndarray
    y: np.ndarray
    zeta: np.ndarray
    residual: np.ndarray
    inner_iters: int
    converged: bool


def _g0_kind(problem: ProblemInstance) -> list[tuple[str, float]]:
    out = []
    for term in problem.prox_terms:
        g0 = term.penalty_part()
        if g0.kind not in ("zero", "l1"):
            raise ParameterError(f"udd_nonlinear supports g0 in {{zero, l1}}, got {g0.kind}")
        out.append((g0.kind, g0.params.get("w", 0.0)))
    return out


def _weights(problem: ProblemInstance) -> np.ndarray:
    """Per-coordinate l1 weight of g0."""
    kinds = _g0_kind(problem)
    return np.concatenate([np.full(d, w) for (_, w), d in zip(kinds, problem.structure.dims)])


def recover_multipliers(
    problem: ProblemInstance,
    ineq: IneqSet,
    x: np.ndarray,
    v: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Choose zeta in dg0(x) and y >= 0 on active q_l to make v + zeta + grad_q y small.

    Returns (zeta, y, residual vector). Box sets are resolved coordinatewise,
    a ball in closed form, anything else by nonnegative least squares.
    """
    w = _weights(problem)
    n = x.size
    q = ineq.values(x)
    G = ineq.gradients(x)
    y = np.zeros(q.size)

    at_kink = np.abs(x) <= KINK_TOL
    zeta = np.where(at_kink, np.clip(-v, -w, w), w * np.sign(x))
    rest = v + zeta

    if ineq.kind == "box":
        up = np.flatnonzero(np.isfinite(ineq.upper))
        lo = np.flatnonzero(np.isfinite(ineq.lower))
        up_active = q[: up.size] >= -ineq.t_act
        lo_active = q[up.size:] >= -ineq.t_act
        # upper face contributes +y, lower face -y
        y[: up.size] = np.where(up_active, np.maximum(-rest[up], 0.0), 0.0)
        y[up.size:] = np.where(lo_active, np.maximum(rest[lo], 0.0), 0.0)
    elif ineq.kind == "ball":
        if q.size and q[0] >= -ineq.t_act:
            g = G[:, 0]
            gg = float(g @ g)
            if gg > 0:
                y[0] = max(0.0, -float(rest @ g) / gg)
    elif ineq.kind == "general":
        active = np.flatnonzero(q >= -ineq.t_act)
        if active.size:
            sol, _ = nnls(G[:, active], -rest)
            y[active] = sol

    residual = rest + (G @ y if y.size else np.zeros(n))
    return zeta, y, residual


def subproblem_solve(
    problem: ProblemInstance,
    x_k: np.ndarray,
    mu_k: np.ndarray,
    params: NlUddParams,
    ineq: Optional[IneqSet] = None,
) -> SubproblemResult:
    """Warm-started proximal gradient on L(., mu_k) + (c/2)||. - x_k||^2 over X.

    Stops when the recovered KKT residual is at most inner_tol, then checks
    L(x+, mu_k) <= L(x_k, mu_k) - nu ||x+ - x_k||^2 and raises OracleFailure
    when that descent is missing.
    """
    params.resolve(problem)
    ineq = ineq or problem.ineq_set()
    s = problem.structure
    rho, c = params.rho, params.c
    L_in = joint_lip_estimate(problem, mu_k, rho) + c

    def smooth_grad(x: np.ndarray) -> np.ndarray:
        return eval_K_gradient(problem, x, mu_k, rho) + c * (x - x_k)

    x = x_k.copy()
    zeta, y, res = recover_multipliers(problem, ineq, x, smooth_grad(x))
    iters = 0
    converged = float(np.linalg.norm(res)) <= params.inner_tol
    while not converged and iters < params.inner_max_iters:
        z = x - smooth_grad(x) / L_in
        x = np.concatenate([prox(term, L_in, z[s.slice(i)]) for i, term in enumerate(problem.prox_terms)])
        iters += 1
        zeta, y, res = recover_multipliers(problem, ineq, x, smooth_grad(x))
        converged = float(np.linalg.norm(res)) <= params.inner_tol

    L_old = float(eval_augmented_lagrangian(problem, x_k, mu_k, rho))
    L_new = float(eval_augmented_lagrangian(problem, x, mu_k, rho))
    need = params.nu * float(np.sum((x - x_k) ** 2))
    slack = REL_SLACK * (1.0 + abs(L_old))
    if L_old - L_new < need - slack:
        raise OracleFailure(
            "descent_oracle",
            -1,
            f"inner solver gave no nu-sufficient descent after {iters} steps",
            lhs=L_old - L_new,
            rhs=need,
        )
    if not converged:
        logger.warning("inner budget of %d steps exhausted; KKT residual %.3e > %.3e",
                       params.inner_max_iters, float(np.linalg.norm(res)), params.inner_tol)
    return SubproblemResult(x=x, y=y, zeta=zeta, residual=res, inner_iters=iters, converged=converged)


def nl_dual_update(mu: np.ndarray, h_val: np.ndarray, varrho: float) -> np.ndarray:
    """mu+ = mu - varrho h(x+)."""
    return np.asarray(mu, dtype=float) - varrho * np.asarray(h_val, dtype=float)


def licq_diagnostic(problem: ProblemInstance, x: np.ndarray, ineq: Optional[IneqSet] = None) -> dict[str, Any]:
    """Rank of H = [grad h(x), grad q_l(x) for active l]; full rank iff sigma_min > 1e-8 sigma_max."""
    ineq = ineq or problem.ineq_set()
    x = np.asarray(x, dtype=float)
    active = ineq.active(x)
    H = np.hstack([problem.jacobian(x), ineq.gradients(x)[:, active]])
    n, cols = H.shape
    sv = np.linalg.svd(H, compute_uv=False)
    sigma_max = float(sv.max()) if sv.size else 0.0
    sigma_min = float(sv.min()) if sv.size else 0.0
    out = {
        "sigma_min": sigma_min if cols <= n else 0.0,
        "sigma_max": sigma_max,
        "active": active.tolist(),
        "columns": cols,
        "n": n,
    }
    if cols > n:
        out["full_column_rank"] = False
        out["reason"] = "more constraint gradients than variables"
        return out
    out["full_column_rank"] = bool(sigma_max > 0 and sigma_min > LICQ_TOL * sigma_max)
    return out


def kkt_certificate(
    problem: ProblemInstance,
    x: np.ndarray,
    mu_hat: np.ndarray,
    ineq: IneqSet,
) -> KktCertificate:
    """Certificate at x with multiplier mu_hat and recovered (zeta, y)."""
    v = problem.objective.gradient(x) + problem.jacobian(x) @ mu_hat
    _, y, xi = recover_multipliers(problem, ineq, x, v)
    q = ineq.values(x)
    return KktCertificate(
        mu=mu_hat,
        y=y,
        xi=xi,
        stationarity=float(np.linalg.norm(xi)),
        feasibility=float(np.linalg.norm(aggregate_h(problem, x))),
        complementarity=float(np.max(np.abs(y * q))) if q.size else 0.0,
        max_q=float(q.max()) if q.size else -math.inf,
    )


def jacobian_norm_bound(problem: ProblemInstance) -> float:
    """Upper bound on max_X ||grad h(x)|| for the stacked n x m Jacobian."""
    return math.sqrt(sum(b.constants.J ** 2 for b in problem.constraints))


def nl_iteration_ceiling(
    problem: ProblemInstance,
    params: NlUddParams,
    initial_value: float,
    optimal_value: float,
    eps: Optional[float] = None,
) -> float:
    """ceil(max(1, sigma2)^2 (L(x0, mu0) - f(x*) - g0(x*)) / (sigma1 eps^2))."""
    params.resolve(problem)
    eps = params.eps if eps is None else eps
    sigma1 = min(params.nu, params.varrho)
    sigma2 = params.c + (params.rho + params.varrho) * jacobian_norm_bound(problem)
    gap = max(initial_value - optimal_value, 0.0)
    return float(max(1, math.ceil(max(1.0, sigma2) ** 2 * gap / (sigma1 * eps**2))))


def run(problem: ProblemInstance, params: NlUddParams) -> RunResult:
    """Run UDD-ALM with nonlinear constraints until an eps-KKT point or max_iters."""
    start = time.perf_counter()
    params.resolve(problem)
    ineq = problem.ineq_set()
    s = problem.structure
    rho, varrho, nu = params.rho, params.varrho, params.nu

    x = problem.x0.copy()
    if not problem.in_domain(x):
        raise ParameterError("x0 must lie in X")
    mu = np.zeros(s.m) if params.mu0 is None else np.array(params.mu0, dtype=float)
    L_val = float(eval_augmented_lagrangian(problem, x, mu, rho))
    L0 = L_val

    trace: list[IterationRecord] = []
    status = RunStatus.MAX_ITERS
    k_star = None
    cert: Optional[KktCertificate] = None
    licq_all = True
    extra_columns = ("L_aug", "inner_iters", "y_max", "compl_max", "licq_sigma_min", "dual_bound")

    logger.info("udd_nonlinear start: rho=%.4g varrho=%.4g c=%.4g nu=%.4g", rho, varrho, params.c, nu)

    for k in range(params.max_iters):
        try:
            sub = subproblem_solve(problem, x, mu, params, ineq)
        except OracleFailure as e:
            raise OracleFailure(e.monitor, k, e.detail, lhs=e.lhs, rhs=e.rhs, trace=trace) from e

        x_next = sub.x
        h_next = aggregate_h(problem, x_next)
        mu_next = nl_dual_update(mu, h_next, varrho)
        L_next = float(eval_augmented_lagrangian(problem, x_next, mu_next, rho))
        cert = kkt_certificate(problem, x_next, mu + rho * h_next, ineq)

        dx = x_next - x
        dx_sq = float(dx @ dx)
        h_norm = float(np.linalg.norm(h_next))
        q_next = ineq.values(x_next)
        sub_compl = float(np.max(np.abs(sub.y * q_next))) if q_next.size else 0.0

        licq = licq_diagnostic(problem, x_next, ineq)
        licq_all &= licq["full_column_rank"]
        dual_bound = math.nan
        if licq["full_column_rank"]:
            e = (-problem.objective.gradient(x_next) - sub.zeta
                 - (rho + varrho) * problem.jacobian(x_next) @ h_next
                 - params.c * dx)
            dual_bound = (float(np.linalg.norm(e)) + float(np.linalg.norm(sub.residual))) / licq["sigma_min"]

        record = IterationRecord(
            k=k,
            potential=L_next,
            lip=joint_lip_estimate(problem, mu, rho) + params.c,
            h_norm=h_norm,
            mu_norm=float(np.linalg.norm(mu_next)),
            max_block_disp=max(float(np.linalg.norm(dx[s.slice(i)])) for i in range(s.p)),
            resid_max=cert.stationarity,
            feas=h_norm,
            extras={
                "L_aug": L_next,
                "inner_iters": float(sub.inner_iters),
                "y_max": float(sub.y.max()) if sub.y.size else 0.0,
                "compl_max": sub_compl,
                "licq_sigma_min": licq["sigma_min"],
                "dual_bound": dual_bound,
            },
            x=x_next.copy() if params.keep_states else None,
            mu=mu_next.copy() if params.keep_states else None,
        )
        trace.append(record)

        slack = REL_SLACK * (1.0 + abs(L_val))
        gain = nu * dx_sq + varrho * h_norm**2
        if L_val - L_next < gain - slack:
            raise InvariantViolation("combined_descent", k, lhs=L_val - L_next, rhs=gain, trace=trace)

        if params.monitor:
            if np.any(sub.y < 0) or sub_compl > params.inner_tol:
                raise InvariantViolation("complementarity", k, lhs=sub_compl, rhs=params.inner_tol, trace=trace)
            if licq["full_column_rank"] and record.mu_norm > dual_bound * (1.0 + REL_SLACK) + 1e-12:
                raise InvariantViolation("dual_norm_bound", k, lhs=record.mu_norm, rhs=dual_bound, trace=trace)

        logger.debug("k=%d L=%.10g |h|=%.3e stat=%.3e inner=%d", k, L_next, h_norm,
                     cert.stationarity, sub.inner_iters)

        x, mu, L_val = x_next, mu_next, L_next
        if cert.satisfies(params.eps, ineq.t_act):
            status = RunStatus.CONVERGED
            k_star = k
            break

    info: dict[str, Any] = {
        "c": params.c,
        "nu": nu,
        "inner_tol": params.inner_tol,
        "initial_L": L0,
        "licq_every_iterate": licq_all,
        "licq_final": licq_diagnostic(problem, x, ineq),
    }
    if "f_star" in problem.metadata:
        info["ceiling"] = nl_iteration_ceiling(problem, params, L0, float(problem.metadata["f_star"]))

    result = RunResult(
        solver="udd_nonlinear",
        status=status,
        trace=trace,
        certificate=cert,
        x=x.copy(),
        mu=mu.copy(),
        rho=rho,
        params=params.to_dict(),
        k_star=k_star,
        extra_columns=extra_columns,
        info=info,
        wall_time=time.perf_counter() - start,
    )
    logger.info("udd_nonlinear %s after %d iterations", status.value, result.iterations)
    return result
