"""Comparison methods: classic dual-ascent ALM and linearized penalty ADMM.

The penalty ADMM runs on  min f + g + (beta/2)||z||^2  s.t.  h(x) + z = 0.
With beta = rho / (1 + gamma) it coincides with SDD-ADMM at
tau = 1 / (gamma + 1), omega = (gamma + 1) / gamma, through mu = -gamma lambda.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import Any, Optional

import numpy as np

from .errors import EquivalenceViolation, InvariantViolation, ParameterError
from .problem import ProblemInstance, aggregate_h, eval_augmented_lagrangian
from .prox import prox
from .sdd import SddParams, Sweep, certificate_at, primal_sweep, sweep_lip
from .sdd import run as sdd_run
from .trace import IterationRecord, RunResult, RunStatus

logger = logging.getLogger(__name__)

DIVERGENCE_CAP = 1e8
SLACK_IDENTITY_TOL = 1e-12
EQUIVALENCE_TOL = 1e-8


@dataclass
class BaselineParams:
    """Shared parameters; varrho defaults to rho (dual-ascent step)."""

    rho: float = 1.0
    varrho: Optional[float] = None
    theta: float = 2.0
    sweep: Sweep = Sweep.GAUSS_SEIDEL
    eps: float = 1e-3
    max_iters: int = 10_000
    keep_states: bool = True

    def __post_init__(self):
        self.sweep = Sweep(self.sweep)
        if not self.rho > 0:
            raise ParameterError("rho must be positive")
        if self.varrho is None:
            self.varrho = self.rho
        if not self.varrho > 0:
            raise ParameterError("varrho must be positive")
        if not self.theta > 1:
            raise ParameterError("theta must exceed 1")
        if not self.eps > 0 or self.max_iters < 1:
            raise ParameterError("need eps > 0 and max_iters >= 1")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def dual_ascent_update(mu: np.ndarray, h_val: np.ndarray, varrho: float) -> np.ndarray:
    """Classic multiplier step mu+ = mu + varrho h(x+)."""
    return np.asarray(mu, dtype=float) + varrho * np.asarray(h_val, dtype=float)


def dual_ascent_alm_run(problem: ProblemInstance, params: BaselineParams) -> RunResult:
    """Linearized ALM: one prox-gradient sweep, then dual ascent. No guarantee on nonconvex problems."""
    start = time.perf_counter()
    s = problem.structure
    rho, theta = params.rho, params.theta
    x = problem.x0.copy()
    mu = np.zeros(s.m)
    trace: list[IterationRecord] = []
    status = RunStatus.MAX_ITERS
    k_star = None
    cert = None

    for k in range(params.max_iters):
        lip = sweep_lip(problem, mu, rho, params.sweep)
        x_next = primal_sweep(problem, x, mu, rho, theta, lip, params.sweep)
        h_next = aggregate_h(problem, x_next)
        cert = certificate_at(problem, x, x_next, mu, rho, theta, lip, params.sweep)
        mu_next = dual_ascent_update(mu, h_next, params.varrho)
        disp = [float(np.linalg.norm(x_next[s.slice(i)] - x[s.slice(i)])) for i in range(s.p)]
        L_next = float(eval_augmented_lagrangian(problem, x_next, mu_next, rho))
        trace.append(IterationRecord(
            k=k,
            potential=L_next,
            lip=lip,
            h_norm=cert.feasibility,
            mu_norm=float(np.linalg.norm(mu_next)),
            max_block_disp=max(disp),
            resid_max=cert.residual,
            feas=cert.feasibility,
            extras={"L_aug": L_next},
            x=x_next.copy() if params.keep_states else None,
            mu=mu_next.copy() if params.keep_states else None,
        ))
        x, mu = x_next, mu_next

        if not np.isfinite(L_next) or np.linalg.norm(mu) > DIVERGENCE_CAP:
            logger.warning("baseline diverged at iteration %d (||mu|| = %.3g)", k, np.linalg.norm(mu))
            status = RunStatus.DIVERGED
            break
        if cert.satisfies(params.eps):
            status = RunStatus.CONVERGED
            k_star = k
            break

    return RunResult(
        solver="dual_ascent",
        status=status,
        trace=trace,
        certificate=cert,
        x=x.copy(),
        mu=mu.copy(),
        rho=rho,
        params=params.to_dict(),
        k_star=k_star,
        extra_columns=("L_aug",),
        info={"diagnosis": "baseline diverged"} if status == RunStatus.DIVERGED else {},
        wall_time=time.perf_counter() - start,
    )


def penalty_block_gradient(
    problem: ProblemInstance,
    i: int,
    x: np.ndarray,
    z: np.ndarray,
    lam: np.ndarray,
    rho: float,
) -> np.ndarray:
    """grad_{x_i} of f(x) + (beta/2)||z||^2 + <lam, h(x) + z> + (rho/2)||h(x) + z||^2."""
    s = problem.structure
    sl = s.slice(i)
    weight = lam + rho * (aggregate_h(problem, x) + z)
    return problem.objective.block_gradient(s, i, x) + problem.constraints[i].jacobian(x[sl]) @ weight


def penalty_lagrangian(problem: ProblemInstance, x: np.ndarray, z: np.ndarray, lam: np.ndarray,
                       beta: float, rho: float) -> float:
    r = aggregate_h(problem, x) + z
    return (float(problem.objective_value(x)) + 0.5 * beta * float(z @ z)
            + float(lam @ r) + 0.5 * rho * float(r @ r))


def linearized_penalty_admm_run(problem: ProblemInstance, beta: float, params: BaselineParams) -> RunResult:
    """Linearized multi-block ADMM on the slack relaxation, z0 = lam0 = 0."""
    start = time.perf_counter()
    rho, theta = params.rho, params.theta
    if not beta > 0:
        raise ParameterError("beta must be positive")
    if not rho > beta:
        raise ParameterError(f"penalty ADMM needs rho > beta, got rho={rho} beta={beta}")

    s = problem.structure
    jacobi = params.sweep == Sweep.JACOBI
    x = problem.x0.copy()
    z = np.zeros(s.m)
    lam = np.zeros(s.m)
    trace: list[IterationRecord] = []
    status = RunStatus.MAX_ITERS
    k_star = None
    cert = None

    for k in range(params.max_iters):
        mu_equiv = lam + rho * z
        lip = sweep_lip(problem, mu_equiv, rho, params.sweep)
        eta = theta * lip
        x_next = x.copy()
        for i in range(s.p):
            sl = s.slice(i)
            point = x if jacobi else x_next
            grad = penalty_block_gradient(problem, i, point, z, lam, rho)
            x_next[sl] = prox(problem.prox_terms[i], eta, x[sl] - grad / eta)

        h_next = aggregate_h(problem, x_next)
        z_next = (-lam - rho * h_next) / (beta + rho)
        lam_next = lam + rho * (h_next + z_next)

        gap = float(np.linalg.norm(beta * z_next + lam_next))
        tol = SLACK_IDENTITY_TOL * (float(np.linalg.norm(lam_next)) + rho * float(np.linalg.norm(h_next)))
        cert = certificate_at(problem, x, x_next, mu_equiv, rho, theta, lip, params.sweep)
        disp = [float(np.linalg.norm(x_next[s.slice(i)] - x[s.slice(i)])) for i in range(s.p)]
        value = penalty_lagrangian(problem, x_next, z_next, lam_next, beta, rho)
        trace.append(IterationRecord(
            k=k,
            potential=value,
            lip=lip,
            h_norm=cert.feasibility,
            mu_norm=float(np.linalg.norm(lam_next)),
            max_block_disp=max(disp),
            resid_max=cert.residual,
            feas=cert.feasibility,
            extras={"z_norm": float(np.linalg.norm(z_next)), "slack_identity_gap": gap},
            x=x_next.copy() if params.keep_states else None,
            mu=lam_next.copy() if params.keep_states else None,
        ))
        if gap > tol:
            raise InvariantViolation("slack_identity", k, lhs=gap, rhs=tol, trace=trace)

        x, z, lam = x_next, z_next, lam_next
        if cert.satisfies(params.eps):
            status = RunStatus.CONVERGED
            k_star = k
            break

    return RunResult(
        solver="penalty_admm",
        status=status,
        trace=trace,
        certificate=cert,
        x=x.copy(),
        mu=lam.copy(),
        rho=rho,
        params={**params.to_dict(), "beta": beta},
        k_star=k_star,
        extra_columns=("z_norm", "slack_identity_gap"),
        info={"z": z.copy()},
        wall_time=time.perf_counter() - start,
    )


@dataclass
class EquivalenceReport:
    gamma: float
    rho: float
    iters: int
    max_dev_x: float
    max_dev_mu: float
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "gamma": self.gamma,
            "rho": self.rho,
            "iters": self.iters,
            "max_dev_x": self.max_dev_x,
            "max_dev_mu": self.max_dev_mu,
            "pass": self.passed,
        }


def equivalence_params(gamma: float, rho: float) -> tuple[float, float, float]:
    """(tau, omega, beta) that make SDD-ADMM and penalty ADMM coincide."""
    if not gamma > 0:
        raise ParameterError("gamma must be positive")
    return 1.0 / (gamma + 1.0), (gamma + 1.0) / gamma, rho / (1.0 + gamma)


def equivalence_check(
    problem: ProblemInstance,
    gamma: float,
    rho: float,
    iters: int = 50,
    theta: float = 2.0,
    sweep: Sweep = Sweep.GAUSS_SEIDEL,
    raise_on_fail: bool = True,
) -> EquivalenceReport:
    """Run both methods side by side and compare x^k and mu^k = -gamma lambda^k.

    Deviations are relative to 1 + the state norms at each k.
    """
    tau, omega, beta = equivalence_params(gamma, rho)
    eps = 1e-300
    sdd = sdd_run(problem, SddParams(rho=rho, omega=omega, theta=theta, tau=tau, sweep=sweep,
                                     max_iters=iters, eps=eps, strict=False))
    admm = linearized_penalty_admm_run(problem, beta, BaselineParams(rho=rho, theta=theta, sweep=sweep,
                                                                     eps=eps, max_iters=iters))

    max_dev_x = 0.0
    max_dev_mu = 0.0
    for a, b in zip(sdd.trace, admm.trace):
        scale = 1.0 + float(np.linalg.norm(a.x)) + float(np.linalg.norm(a.mu))
        max_dev_x = max(max_dev_x, float(np.linalg.norm(a.x - b.x)) / scale)
        max_dev_mu = max(max_dev_mu, float(np.linalg.norm(a.mu + gamma * b.mu)) / scale)
    n = min(len(sdd.trace), len(admm.trace))
    passed = len(sdd.trace) == len(admm.trace) and max(max_dev_x, max_dev_mu) <= EQUIVALENCE_TOL
    report = EquivalenceReport(gamma, rho, n, max_dev_x, max_dev_mu, passed)
    logger.info("equivalence gamma=%g rho=%g: dev_x=%.3e dev_mu=%.3e", gamma, rho, max_dev_x, max_dev_mu)
    if not passed and raise_on_fail:
        raise EquivalenceViolation(
            "equivalence", n, f"trajectories deviate for gamma={gamma}",
            lhs=max(max_dev_x, max_dev_mu), rhs=EQUIVALENCE_TOL,
        )
    return report
