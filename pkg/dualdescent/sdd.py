"""Scaled dual descent ADMM (SDD-ADMM; SDD-ALM when p = 1).

Each iteration takes one proximal-gradient step per block on the smooth part
K(x, mu) with step 1/(theta * Lip), then a scaled dual *descent* step

    mu+ = (tau * mu - (rho / omega) * h(x+)) / (1 + tau).

The potential P(x, mu) = L(x, mu) + (omega / 2 rho) ||mu||^2 is monotone along
the run and every iteration produces an explicit stationarity certificate.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

from .errors import ConfigError, InvariantViolation, ParameterError
from .problem import (
    BlockVector,
    ProblemInstance,
    aggregate_h,
    eval_augmented_lagrangian,
    eval_K_block_gradient,
    joint_lip_estimate,
    lip_estimate,
)
from .prox import prox
from .trace import IterationRecord, RunResult, RunStatus

logger = logging.getLogger(__name__)

REL_SLACK = 1e-9
FEASIBLE_START_TOL = 1e-10


class Sweep(str, enum.Enum):
    GAUSS_SEIDEL = "gauss_seidel"
    JACOBI = "jacobi"


class RhoMode(str, enum.Enum):
    EXPLICIT = "explicit"
    EPS2_RULE = "eps2_rule"
    EPS1_RULE = "eps1_rule"


@dataclass
class SddParams:
    """Parameters of one SDD-ADMM run.

    strict=True enforces omega >= 4 and turns on the boundedness monitors,
    which assume a feasible start and mu0 = 0. strict=False accepts any
    omega > 0 (used for the penalty-ADMM correspondence).
    """

    rho: Optional[float] = None
    omega: float = 4.0
    theta: float = 2.0
    tau: float = 1.0
    sweep: Sweep = Sweep.GAUSS_SEIDEL
    max_iters: int = 10_000
    eps: float = 1e-3
    rho_mode: RhoMode = RhoMode.EXPLICIT
    strict: bool = True
    monitor: bool = True
    keep_states: bool = True
    pilot_rho: float = 1.0
    pilot_iters: int = 100
    eps1_constant: Optional[float] = None
    mu0: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.sweep = Sweep(self.sweep)
        self.rho_mode = RhoMode(self.rho_mode)
        if not self.theta > 1:
            raise ParameterError(f"theta must exceed 1, got {self.theta}")
        if not self.tau >= 0:
            raise ParameterError(f"tau must be nonnegative, got {self.tau}")
        if not self.omega > 0:
            raise ParameterError(f"omega must be positive, got {self.omega}")
        if self.strict and self.omega < 4:
            raise ParameterError(f"omega must be at least 4 in strict mode, got {self.omega}")
        if not self.eps > 0:
            raise ParameterError("eps must be positive")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be at least 1")
        if self.rho_mode == RhoMode.EXPLICIT:
            if self.rho is None or not self.rho > 0:
                raise ParameterError("explicit rho_mode needs rho > 0")
        if not self.pilot_rho > 0 or self.pilot_iters < 1:
            raise ParameterError("pilot run needs pilot_rho > 0 and pilot_iters >= 1")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out.pop("mu0")
        return out


@dataclass
class SddState:
    """Iterate k of a run."""

    k: int
    x: BlockVector
    mu: np.ndarray
    potential: float
    lip: float


@dataclass
class StationarityCertificate:
    """Multiplier lam and explicit residuals xi_i in grad_i f + dg_i + grad h_i lam."""

    lam: np.ndarray
    xi: list[np.ndarray]
    residual: float
    feasibility: float
    bounds: list[float] = field(default_factory=list)

    def satisfies(self, eps: float) -> bool:
        return self.residual <= eps and self.feasibility <= eps

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "stationarity",
            "lambda": self.lam,
            "xi": self.xi,
            "xi_norms": [float(np.linalg.norm(v)) for v in self.xi],
            "residual": self.residual,
            "feasibility": self.feasibility,
            "bounds": self.bounds,
        }


# Single-step building blocks


def sweep_lip(problem: ProblemInstance, mu: np.ndarray, rho: float, sweep: Sweep) -> float:
    """Step constant: blockwise Lip for Gauss-Seidel, stacked Lip for Jacobi."""
    if Sweep(sweep) == Sweep.JACOBI:
        return joint_lip_estimate(problem, mu, rho)
    return lip_estimate(problem, mu, rho)


def block_step(
    problem: ProblemInstance,
    i: int,
    x_mixed: np.ndarray,
    mu: np.ndarray,
    rho: float,
    theta: float,
    lip: float,
) -> np.ndarray:
    """x_i+ = prox_{g_i}(x_i - grad_i K(x_mixed, mu) / (theta Lip)) with parameter theta Lip."""
    sl = problem.structure.slice(i)
    x_i = x_mixed[sl]
    grad = eval_K_block_gradient(problem, i, x_mixed, mu, rho)
    if lip <= 0:
        if np.any(grad != 0):
            raise ConfigError("Lip(mu, rho) = 0 with a nonzero gradient; constants are degenerate")
        return x_i.copy()
    eta = theta * lip
    return prox(problem.prox_terms[i], eta, x_i - grad / eta)


def primal_sweep(
    problem: ProblemInstance,
    x: np.ndarray,
    mu: np.ndarray,
    rho: float,
    theta: float,
    lip: float,
    sweep: Sweep,
) -> np.ndarray:
    """One pass of block steps over all p blocks."""
    x_new = np.array(x, dtype=float)
    jacobi = Sweep(sweep) == Sweep.JACOBI
    for i in range(problem.structure.p):
        point = x if jacobi else x_new
        x_new[problem.structure.slice(i)] = block_step(problem, i, point, mu, rho, theta, lip)
    return x_new


def sdd_dual_update(mu: np.ndarray, h_val: np.ndarray, tau: float, omega: float, rho: float) -> np.ndarray:
    """mu+ = (tau mu - h / omega * rho) / (1 + tau)."""
    return (tau * np.asarray(mu, dtype=float) - (rho / omega) * np.asarray(h_val, dtype=float)) / (1.0 + tau)


def regularized_dual_step(mu: np.ndarray, h_val: np.ndarray, c: float, delta: float) -> np.ndarray:
    """argmin_nu  <nu, h> + (c/2)||nu||^2 + (delta/2)||nu - mu||^2.

    With c = omega/rho and delta = tau*omega/rho this is sdd_dual_update.
    """
    return (delta * np.asarray(mu, dtype=float) - np.asarray(h_val, dtype=float)) / (c + delta)


def potential(problem: ProblemInstance, x: np.ndarray, mu: np.ndarray, rho: float, omega: float) -> float:
    """P(x, mu) = L(x, mu) + (omega / 2 rho) ||mu||^2 (+inf outside dom g)."""
    if not rho > 0:
        raise ParameterError("potential needs rho > 0")
    mu = np.asarray(mu, dtype=float)
    return float(eval_augmented_lagrangian(problem, x, mu, rho)) + omega / (2.0 * rho) * float(mu @ mu)


def certificate_at(
    problem: ProblemInstance,
    x_prev: np.ndarray,
    x_next: np.ndarray,
    mu_prev: np.ndarray,
    rho: float,
    theta: float,
    lip: float,
    sweep: Sweep = Sweep.GAUSS_SEIDEL,
) -> StationarityCertificate:
    """Build xi_i from prox optimality of the step x_prev -> x_next taken at mu_prev."""
    s = problem.structure
    f = problem.objective
    jacobi = Sweep(sweep) == Sweep.JACOBI
    h_next = aggregate_h(problem, x_next)
    lam = mu_prev + rho * h_next
    grad_next = f.gradient(x_next)
    disp = [float(np.linalg.norm(x_next[s.slice(j)] - x_prev[s.slice(j)])) for j in range(s.p)]

    xi = []
    bounds = []
    for i in range(s.p):
        sl = s.slice(i)
        if jacobi:
            mixed = x_prev
        else:
            mixed = x_next.copy()
            mixed[sl.start:] = x_prev[sl.start:]
        block = problem.constraints[i]
        weight_mixed = mu_prev + rho * aggregate_h(problem, mixed)
        xi_i = (
            grad_next[sl]
            - f.block_gradient(s, i, mixed)
            - theta * lip * (x_next[sl] - x_prev[sl])
            + block.jacobian(x_next[sl]) @ lam
            - block.jacobian(x_prev[sl]) @ weight_mixed
        )
        xi.append(xi_i)
        tail = sum(disp) if jacobi else sum(disp[i:])
        bounds.append((theta + 1.0) * lip * tail)

    return StationarityCertificate(
        lam=lam,
        xi=xi,
        residual=max(float(np.linalg.norm(v)) for v in xi),
        feasibility=float(np.linalg.norm(h_next)),
        bounds=bounds,
    )


# Parameter recipes and theory


def resolve_rho(problem: ProblemInstance, params: SddParams) -> tuple[float, dict[str, Any]]:
    """Pick rho for the configured rule; returns (rho, info)."""
    mode = params.rho_mode
    delta_p = problem.delta_p
    if mode == RhoMode.EXPLICIT:
        return float(params.rho), {"rho_rule": mode.value}
    if mode == RhoMode.EPS2_RULE:
        rho = 4.0 * delta_p / params.eps**2 if delta_p > 0 else 1.0
        return rho, {"rho_rule": mode.value, "delta_p": delta_p}

    # eps1 rule: rho = max(1, C / eps) with C measured by a short pilot run
    pilot_plateau = None
    if params.eps1_constant is not None:
        constant = float(params.eps1_constant)
        lam_hat = None
    else:
        pilot = SddParams(
            rho=params.pilot_rho,
            omega=params.omega,
            theta=params.theta,
            tau=params.tau,
            sweep=params.sweep,
            max_iters=params.pilot_iters,
            eps=params.eps,
            strict=params.strict,
            monitor=False,
            keep_states=False,
        )
        pilot_result = run(problem, pilot)
        lam_hat = max((r.extras["mu_tilde_norm"] for r in pilot_result.trace), default=0.0)
        pilot_plateau = pilot_result.info.get("mu_tilde_plateau")
        constant = 2.0 * max(math.sqrt(params.pilot_rho * max(delta_p, 0.0)), lam_hat)
        logger.info("eps1 pilot: max ||mu~|| = %.4g over %d iterations (plateau=%s)",
                    lam_hat, pilot_result.iterations, pilot_plateau)
    rho = max(1.0, constant / params.eps)
    return rho, {
        "rho_rule": mode.value,
        "delta_p": delta_p,
        "eps1_constant": constant,
        "pilot_mu_tilde_max": lam_hat,
        "pilot_mu_tilde_plateau": pilot_plateau,
    }


def _effective_kappas(problem: ProblemInstance, sweep: Sweep) -> tuple[int, float, float]:
    c = problem.aggregate_constants()
    p = problem.structure.p
    if Sweep(sweep) == Sweep.JACOBI:
        # Jacobi with the stacked constant is a single-block method
        kappa1 = p * c.J_h * c.K_h + c.M_h * c.L_h
        p_eff = 1
    else:
        kappa1 = c.kappa1
        p_eff = p
    kappa2 = c.L_h * math.sqrt(max(problem.delta_p, 0.0)) + kappa1
    return p_eff, kappa1, kappa2


def sdd_iteration_ceiling(
    problem: ProblemInstance,
    theta: float,
    rho: float,
    eps: float,
    sweep: Sweep = Sweep.GAUSS_SEIDEL,
) -> float:
    """ceil(2 p (theta+1)^2 (L_f + kappa2 rho)^2 dP / (rho (theta-1) kappa1 eps^2)).

    Returns inf when kappa1 = 0 (the bound is vacuous).
    """
    p_eff, kappa1, kappa2 = _effective_kappas(problem, sweep)
    delta_p = max(problem.delta_p, 0.0)
    if kappa1 <= 0:
        return math.inf
    L_f = problem.objective.lipschitz
    bound = (2.0 * p_eff * (theta + 1.0) ** 2 * (L_f + kappa2 * rho) ** 2 * delta_p
             / (rho * (theta - 1.0) * kappa1 * eps**2))
    return float(max(1, math.ceil(bound)))


def mu_tilde_plateau(values: list[float], window: float = 0.5, tol: float = 0.05) -> Optional[bool]:
    """True when the running max of ||mu~|| grew by less than tol over the last window of the run."""
    if len(values) < 4:
        return None
    running = np.maximum.accumulate(np.asarray(values, dtype=float))
    start = int(len(running) * (1.0 - window))
    before = running[start]
    return bool(running[-1] <= before * (1.0 + tol) + 1e-12)


# Runner


def _violation(monitor: str, k: int, lhs: float, rhs: float, trace: list, message: str = "") -> InvariantViolation:
    return InvariantViolation(monitor, k, message or monitor, lhs=lhs, rhs=rhs, trace=trace)


def run(problem: ProblemInstance, params: SddParams) -> RunResult:
    """Run SDD-ADMM from the problem's feasible start until eps-stationarity or max_iters."""
    start = time.perf_counter()
    s = problem.structure
    rho, info = resolve_rho(problem, params)
    mu = np.zeros(s.m) if params.mu0 is None else np.array(params.mu0, dtype=float)
    x = BlockVector(s, problem.x0)

    if params.strict:
        feas0 = float(np.linalg.norm(aggregate_h(problem, x)))
        if feas0 > FEASIBLE_START_TOL:
            raise ParameterError(f"strict mode needs a feasible start, ||h(x0)|| = {feas0:.3g}")
        if np.any(mu != 0):
            raise ParameterError("strict mode needs mu0 = 0")

    theta, tau, omega = params.theta, params.tau, params.omega
    P = potential(problem, x.data, mu, rho, omega)
    P0 = P
    delta_p = problem.delta_p
    consts = problem.aggregate_constants() if params.monitor and params.strict else None
    if consts is not None:
        _, kappa1, kappa2 = _effective_kappas(problem, params.sweep)
    h_cap = math.sqrt(4.0 * max(delta_p, 0.0) / rho)
    mu_cap = math.sqrt(rho * max(delta_p, 0.0))

    state = SddState(k=0, x=x, mu=mu, potential=P, lip=0.0)
    trace: list[IterationRecord] = []
    mu_tilde_norms: list[float] = []
    status = RunStatus.MAX_ITERS
    k_star = None
    cert: Optional[StationarityCertificate] = None

    logger.info("sdd_admm start: rho=%.4g omega=%g theta=%g tau=%g sweep=%s dP=%.4g",
                rho, omega, theta, tau, params.sweep.value, delta_p)

    for k in range(params.max_iters):
        x_k = state.x.data
        mu_k = state.mu
        lip = sweep_lip(problem, mu_k, rho, params.sweep)
        state.lip = lip

        x_next = primal_sweep(problem, x_k, mu_k, rho, theta, lip, params.sweep)
        h_next = aggregate_h(problem, x_next)
        mu_next = sdd_dual_update(mu_k, h_next, tau, omega, rho)
        cert = certificate_at(problem, x_k, x_next, mu_k, rho, theta, lip, params.sweep)
        P_next = potential(problem, x_next, mu_next, rho, omega)

        disp = [float(np.linalg.norm(x_next[s.slice(i)] - x_k[s.slice(i)])) for i in range(s.p)]
        dmu = float(np.linalg.norm(mu_next - mu_k))
        slack = REL_SLACK * (1.0 + abs(P))
        record = IterationRecord(
            k=k,
            potential=P_next,
            lip=lip,
            h_norm=float(np.linalg.norm(h_next)),
            mu_norm=float(np.linalg.norm(mu_next)),
            max_block_disp=max(disp),
            resid_max=cert.residual,
            feas=cert.feasibility,
            extras={"mu_tilde_norm": float(np.linalg.norm(cert.lam))},
            x=x_next.copy() if params.keep_states else None,
            mu=mu_next.copy() if params.keep_states else None,
        )
        trace.append(record)
        mu_tilde_norms.append(record.extras["mu_tilde_norm"])

        if not P_next <= P + slack:
            raise _violation("potential_increase", k, P_next, P + slack, trace)

        if params.monitor:
            P_mid = potential(problem, x_next, mu_k, rho, omega)
            x_gain = 0.5 * (theta - 1.0) * lip * sum(d * d for d in disp)
            mu_gain = (tau + 0.5) * (omega / rho) * dmu**2
            if P - P_mid < x_gain - slack:
                raise _violation("primal_descent", k, P - P_mid, x_gain, trace)
            if abs((P_mid - P_next) - mu_gain) > slack + REL_SLACK * mu_gain:
                raise _violation("dual_descent", k, P_mid - P_next, mu_gain, trace)
            if P - P_next < x_gain + mu_gain - slack:
                raise _violation("one_step_progress", k, P - P_next, x_gain + mu_gain, trace)
            for i, (xi_i, bound) in enumerate(zip(cert.xi, cert.bounds)):
                norm = float(np.linalg.norm(xi_i))
                if norm > bound * (1.0 + REL_SLACK) + 1e-12:
                    raise _violation("dual_residual_bound", k, norm, bound, trace, f"block {i} residual bound")
            if consts is not None:
                if P_next < problem.p_lb - slack:
                    raise _violation("potential_lower_bound", k, P_next, problem.p_lb, trace)
                if record.h_norm > h_cap * (1.0 + REL_SLACK) + 1e-12:
                    raise _violation("primal_residual_bound", k, record.h_norm, h_cap, trace)
                if record.mu_norm > mu_cap * (1.0 + REL_SLACK) + 1e-12:
                    raise _violation("dual_variable_bound", k, record.mu_norm, mu_cap, trace)
                lo = rho * kappa1
                hi = problem.objective.lipschitz + rho * kappa2
                if lip < lo * (1.0 - REL_SLACK) or (rho >= 1.0 and lip > hi * (1.0 + REL_SLACK)):
                    raise _violation("lip_sandwich", k, lip, hi, trace)

        logger.debug("k=%d P=%.10g lip=%.4g |h|=%.3e |mu|=%.3e resid=%.3e",
                     k, P_next, lip, record.h_norm, record.mu_norm, cert.residual)

        state = SddState(k=k + 1, x=BlockVector(s, x_next), mu=mu_next, potential=P_next, lip=lip)
        P = P_next

        if cert.satisfies(params.eps):
            status = RunStatus.CONVERGED
            k_star = k
            break

    info.update({
        "delta_p": delta_p,
        "initial_potential": P0,
        "sweep": params.sweep.value,
        "mu_tilde_max": max(mu_tilde_norms, default=0.0),
        "mu_tilde_plateau": mu_tilde_plateau(mu_tilde_norms),
    })
    try:
        info["ceiling"] = sdd_iteration_ceiling(problem, theta, rho, params.eps, params.sweep)
    except ParameterError:
        info["ceiling"] = None

    result = RunResult(
        solver="sdd_admm",
        status=status,
        trace=trace,
        certificate=cert,
        x=state.x.data.copy(),
        mu=state.mu.copy(),
        rho=rho,
        params=params.to_dict(),
        k_star=k_star,
        extra_columns=("mu_tilde_norm",),
        info=info,
        wall_time=time.perf_counter() - start,
    )
    logger.info("sdd_admm %s after %d iterations (resid=%.3e, feas=%.3e)",
                status.value, result.iterations, cert.residual, cert.feasibility)
    return result
