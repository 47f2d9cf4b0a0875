"""Run orchestration: single runs with artifacts, rate sweeps, and the verification battery."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional, Sequence
from unittest import mock

import numpy as np
from scipy import stats

from . import baselines, gallery, sdd, udd_affine, udd_nonlinear
from .config import RunConfig
from .errors import ConfigError, DualDescentError, InvariantViolation
from .problem import ProblemInstance, check_instance, load_problem
from .prox import ProxKernel, grid_prox, prox, scalar_objective
from .trace import RunResult, RunStatus, write_trace_csv
from .utils import write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_CONVERGED = 2
EXIT_VIOLATION = 3

VERIFY_SCOPES = ("fast", "full")


# Problem and solver resolution


def load_source(config: RunConfig) -> ProblemInstance:
    """Gallery id (with config.seed) or a path to problem JSON."""
    if config.is_gallery:
        return gallery.make(config.problem, seed=config.seed).problem
    return load_problem(Path(config.problem))


def solve(problem: ProblemInstance, config: RunConfig) -> RunResult:
    """Dispatch to the configured solver."""
    name = config.solver
    rho = config.rho if config.rho is not None else 1.0
    if name == "sdd_admm":
        params = sdd.SddParams(
            rho=config.rho,
            omega=config.omega,
            theta=config.theta,
            tau=config.tau,
            sweep=config.sweep,
            max_iters=config.max_iters,
            eps=config.eps,
            rho_mode=config.rho_mode,
            strict=config.strict,
            monitor=config.monitor,
            keep_states=False,
            pilot_rho=config.pilot_rho,
            pilot_iters=config.pilot_iters,
            eps1_constant=config.eps1_constant,
        )
        return sdd.run(problem, params)
    if name == "udd_affine":
        params = udd_affine.UddParams(rho=rho, varrho=config.varrho, theta=config.theta, eps=config.eps,
                                      max_iters=config.max_iters, monitor=config.monitor, keep_states=False)
        return udd_affine.run(problem, params)
    if name == "udd_nonlinear":
        params = udd_nonlinear.NlUddParams(rho=rho, varrho=config.varrho, c=config.c, nu=config.nu,
                                           eps=config.eps, max_iters=config.max_iters,
                                           inner_max_iters=config.inner_max_iters, monitor=config.monitor,
                                           keep_states=False)
        return udd_nonlinear.run(problem, params)

    base = baselines.BaselineParams(rho=rho, varrho=config.varrho, theta=config.theta, sweep=config.sweep,
                                    eps=config.eps, max_iters=config.max_iters, keep_states=False)
    if name == "dual_ascent":
        return baselines.dual_ascent_alm_run(problem, base)
    beta = config.beta if config.beta is not None else rho / 2.0
    return baselines.linearized_penalty_admm_run(problem, beta, base)


# Single run


@dataclass
class RunOutcome:
    exit_code: int
    message: str
    out_dir: Optional[Path] = None
    result: Optional[RunResult] = None
    violation: Optional[InvariantViolation] = None


def _exit_code(result: RunResult) -> int:
    return EXIT_OK if result.status == RunStatus.CONVERGED else EXIT_NOT_CONVERGED


def write_artifacts(out_dir: Path, config: RunConfig, result: RunResult) -> None:
    """trace.csv, certificate.json, summary.json and config.json for a finished run."""
    out_dir = Path(out_dir)
    write_trace_csv(out_dir / "trace.csv", result.trace, result.extra_columns, every=config.trace_every)
    cert = result.certificate.to_dict() if result.certificate is not None else {}
    write_json(out_dir / "certificate.json", cert)
    summary = result.summary()
    summary["problem"] = config.problem
    summary["seed"] = config.seed
    summary["eps"] = config.eps
    summary["exit_code"] = _exit_code(result)
    write_json(out_dir / "summary.json", summary)
    write_json(out_dir / "config.json", config.to_dict())


def write_violation_artifacts(out_dir: Path, config: RunConfig, error: InvariantViolation) -> None:
    """Persist the partial trace and the failing monitor."""
    out_dir = Path(out_dir)
    trace = error.trace or []
    extra = tuple(trace[0].extras) if trace else ()
    write_trace_csv(out_dir / "trace.csv", trace, extra, every=config.trace_every)
    last = trace[-1] if trace else None
    write_json(out_dir / "summary.json", {
        "solver": config.solver,
        "status": "invariant_violation",
        "monitor": error.monitor,
        "iteration": error.iteration,
        "lhs": error.lhs,
        "rhs": error.rhs,
        "message": str(error),
        "iterations": len(trace),
        "resid_max": last.resid_max if last else None,
        "feas": last.feas if last else None,
        "problem": config.problem,
        "seed": config.seed,
        "exit_code": EXIT_VIOLATION,
    })
    write_json(out_dir / "config.json", config.to_dict())


def run_command(config: RunConfig, out_dir: Optional[Path] = None) -> RunOutcome:
    """Solve one configured problem, write artifacts, and map the outcome to an exit code.

    0 on eps-success, 1 on configuration errors, 2 on max_iters or divergence,
    3 on a monitor violation (the partial trace is still written).
    """
    out = Path(out_dir or config.output_dir or "runs")
    try:
        problem = load_source(config)
        result = solve(problem, config)
    except InvariantViolation as e:
        write_violation_artifacts(out, config, e)
        logger.error("invariant violated: %s", e)
        return RunOutcome(EXIT_VIOLATION, f"{e.monitor} violated at {e}", out, violation=e)
    except DualDescentError as e:
        return RunOutcome(EXIT_CONFIG, str(e), None)

    write_artifacts(out, config, result)
    code = _exit_code(result)
    message = f"{result.solver} {result.status.value} after {result.iterations} iterations"
    return RunOutcome(code, message, out, result=result)


# Rate sweeps


@dataclass
class RateRow:
    eps: float
    status: str
    k_star: Optional[int]
    iterations: int
    ceiling: Optional[float]
    rho: float
    violation: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "eps": self.eps,
            "status": self.status,
            "k_star": self.k_star,
            "iterations": self.iterations,
            "ceiling": self.ceiling,
            "rho": self.rho,
            "violation": self.violation,
        }


@dataclass
class RateReport:
    """Iterations-to-eps against the theorem ceiling, plus a log-log slope fit."""

    solver: str
    problem: str
    rows: list[RateRow]
    slope: Optional[float] = None
    slope_ci: Optional[tuple[float, float]] = None
    monotone: bool = True
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict[str, Any]:
        return {
            "solver": self.solver,
            "problem": self.problem,
            "rows": [r.to_dict() for r in self.rows],
            "slope": self.slope,
            "slope_ci": list(self.slope_ci) if self.slope_ci else None,
            "monotone": self.monotone,
            "failures": self.failures,
            "pass": self.passed,
        }


def check_eps_list(eps_list: Sequence[float]) -> list[float]:
    values = [float(e) for e in eps_list]
    if len(values) < 4:
        raise ConfigError(f"a rate sweep needs at least 4 eps values, got {len(values)}")
    if any(e <= 0 for e in values):
        raise ConfigError("eps values must be positive")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise ConfigError("eps values must be strictly decreasing")
    return values


def fit_slope(eps: Sequence[float], iterations: Sequence[int],
              confidence: float = 0.95) -> tuple[Optional[float], Optional[tuple[float, float]]]:
    """Least-squares slope of log(iterations) on log(1/eps) with a t-interval."""
    if len(eps) < 2:
        return None, None
    x = np.log(1.0 / np.asarray(eps, dtype=float))
    y = np.log(np.maximum(np.asarray(iterations, dtype=float), 1.0))
    fit = stats.linregress(x, y)
    slope = float(fit.slope)
    if len(eps) < 3:
        return slope, None
    half = float(stats.t.ppf(0.5 + confidence / 2.0, len(eps) - 2)) * float(fit.stderr)
    return slope, (slope - half, slope + half)


def rate_row(eps: float, result: RunResult) -> RateRow:
    """A run violates when it needed more than K(eps) iterations, or stopped unconverged at or past K(eps)."""
    ceiling = result.info.get("ceiling")
    ceiling = None if ceiling is None or not math.isfinite(ceiling) else float(ceiling)
    if result.converged:
        used = result.k_star + 1
        violation = ceiling is not None and used > ceiling
    else:
        used = result.iterations
        violation = ceiling is not None and used >= ceiling
    return RateRow(eps, result.status.value, result.k_star, used, ceiling, result.rho, violation)


def summarize_sweep(solver: str, problem: str, rows: Sequence[RateRow], failures: Sequence[str] = ()) -> RateReport:
    """Slope fit and monotonicity over the converged rows, eps given in decreasing order.

    Fewer iterations at a smaller eps is recorded as a failure.
    """
    failures = list(failures)
    done = [r for r in rows if r.status == RunStatus.CONVERGED.value]
    slope, ci = fit_slope([r.eps for r in done], [r.iterations for r in done])
    drops = [(a, b) for a, b in zip(done, done[1:]) if b.iterations < a.iterations]
    for a, b in drops:
        failures.append(f"eps={b.eps:g}: {b.iterations} iterations, fewer than {a.iterations} at eps={a.eps:g}")
    return RateReport(solver, problem, list(rows), slope, ci, not drops, failures)


def rate_sweep(config: RunConfig, eps_list: Sequence[float], out_dir: Optional[Path] = None) -> RateReport:
    """Run the configured solver once per eps and compare iterations to the ceiling K(eps).

    A row violates when the run needed more iterations than K(eps), or when it
    stopped at max_iters after already passing K(eps). Per-eps artifacts go to
    out_dir/eps_<value>.
    """
    values = check_eps_list(eps_list)
    problem = load_source(config)
    rows: list[RateRow] = []
    failures: list[str] = []

    for eps in values:
        cfg = replace(config, eps=eps)
        try:
            result = solve(problem, cfg)
        except InvariantViolation as e:
            failures.append(f"eps={eps:g}: {e.monitor} violated ({e})")
            if out_dir is not None:
                write_violation_artifacts(Path(out_dir) / f"eps_{eps:g}", cfg, e)
            continue
        if out_dir is not None:
            write_artifacts(Path(out_dir) / f"eps_{eps:g}", cfg, result)

        row = rate_row(eps, result)
        rows.append(row)
        if row.violation:
            failures.append(f"eps={eps:g}: {row.iterations} iterations against ceiling {row.ceiling:g}")
        logger.info("sweep eps=%g: %s after %d iterations (ceiling %s)", eps, row.status, row.iterations, row.ceiling)

    report = summarize_sweep(config.solver, config.problem, rows, failures)
    if out_dir is not None:
        write_json(Path(out_dir) / "rate_report.json", report.to_dict())
    return report


# Verification battery


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "detail": self.detail, "seconds": self.seconds}


@dataclass
class VerifyReport:
    scope: str
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict[str, Any]:
        return {"scope": self.scope, "pass": self.passed, "checks": [c.to_dict() for c in self.checks]}


def _timed(name: str, fn: Callable[[], str]) -> CheckResult:
    start = time.perf_counter()
    try:
        detail = fn()
        passed = True
    except (DualDescentError, AssertionError) as e:
        detail = str(e) or type(e).__name__
        passed = False
    result = CheckResult(name, passed, detail, time.perf_counter() - start)
    logger.info("verify %s: %s (%.2fs)", name, "pass" if passed else "FAIL", result.seconds)
    return result


SCALAR_KERNELS = (
    ProxKernel.zero(),
    ProxKernel.box(-1.5, 2.0),
    ProxKernel.l1(0.7),
    ProxKernel.l1(0.7, lower=-1.0, upper=1.0),
    ProxKernel.scad(3.7, 1.0),
    ProxKernel.mcp(3.0, 1.0),
    ProxKernel.capped_l1(1.0, 1.5),
)


def _check_prox(points: int) -> str:
    zs = np.linspace(-5.0, 5.0, points)
    worst = 0.0
    for kernel in SCALAR_KERNELS:
        for eta in (0.5, 2.0):
            out = prox(kernel, eta, zs)
            for z, x in zip(zs, out):
                x_grid, obj_grid = grid_prox(kernel, eta, float(z))
                gap = abs(float(x) - x_grid)
                tie = scalar_objective(kernel, eta, float(x), float(z)) <= obj_grid + 1e-9
                if gap > 2e-4 and not tie:
                    raise AssertionError(f"{kernel.kind} eta={eta} z={z:.4f}: prox {x:.6f} vs grid {x_grid:.6f}")
                worst = max(worst, gap)
    return f"max |prox - grid| = {worst:.2e}"


def _check_instances(seeds: Sequence[int], samples: int) -> str:
    for gid in gallery.GALLERY:
        for seed in seeds:
            inst = gallery.make(gid, seed=seed)
            report = check_instance(inst.problem, samples=samples, seed=seed)
            if not report.ok:
                raise AssertionError(f"{gid} seed {seed}: {', '.join(report.failures)}")
    return f"{len(gallery.GALLERY) * len(seeds)} instances"


def _check_sdd(seeds: Sequence[int], iters: int) -> str:
    settings = ({"omega": 4.0, "theta": 2.0, "tau": 1.0},
                {"omega": 8.0, "theta": 3.0, "tau": 0.5},
                {"omega": 4.0, "theta": 1.5, "tau": 2.0})
    total = 0
    for gid in ("G1", "G4"):
        for seed in seeds:
            problem = gallery.make(gid, seed=seed).problem
            for s in settings:
                for sweep in (sdd.Sweep.GAUSS_SEIDEL, sdd.Sweep.JACOBI):
                    result = sdd.run(problem, sdd.SddParams(rho=10.0, sweep=sweep, max_iters=iters, eps=1e-6,
                                                            keep_states=False, **s))
                    total += result.iterations
    return f"{total} monitored iterations"


def _check_udd_affine(seeds: Sequence[int], iters: int) -> str:
    total = 0
    for seed in seeds:
        problem = gallery.make("G2", seed=seed).problem
        for rho in (1.0, 5.0, 10.0):
            result = udd_affine.run(problem, udd_affine.UddParams(rho=rho, eps=1e-8, max_iters=iters,
                                                                  keep_states=False))
            total += result.iterations
    return f"{total} monitored iterations"


def _check_udd_nonlinear(seeds: Sequence[int], iters: int) -> str:
    total = 0
    for seed in seeds:
        problem = gallery.make("G3", seed=seed).problem
        for rho in (1.0, 4.0):
            result = udd_nonlinear.run(problem, udd_nonlinear.NlUddParams(rho=rho, eps=1e-5, max_iters=iters,
                                                                          keep_states=False))
            total += result.iterations
    return f"{total} monitored iterations"


def _check_equivalence(seeds: Sequence[int]) -> str:
    worst = 0.0
    for seed in seeds:
        problem = gallery.make("G1", seed=seed).problem
        for gamma in (1.0 / 3.0, 1.0, 3.0):
            report = baselines.equivalence_check(problem, gamma, rho=10.0, iters=50)
            worst = max(worst, report.max_dev_x, report.max_dev_mu)
    return f"max relative deviation {worst:.2e}"


def _check_dual_algebra() -> str:
    rng = np.random.default_rng(0)
    for _ in range(100):
        mu, h = rng.standard_normal(3), rng.standard_normal(3)
        rho, omega, tau = rng.uniform(0.1, 10.0), rng.uniform(4.0, 10.0), rng.uniform(0.0, 3.0)
        a = sdd.sdd_dual_update(mu, h, tau, omega, rho)
        b = sdd.regularized_dual_step(mu, h, omega / rho, tau * omega / rho)
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            raise AssertionError("regularized dual step disagrees with the scaled dual update")
    return "100 random draws"


def _check_determinism() -> str:
    problem = gallery.make("G1", seed=0).problem
    params = sdd.SddParams(rho=10.0, max_iters=50, eps=1e-9)
    first = [r.row(("mu_tilde_norm",)) for r in sdd.run(problem, params).trace]
    second = [r.row(("mu_tilde_norm",)) for r in sdd.run(gallery.make("G1", seed=0).problem, params).trace]
    if first != second:
        raise AssertionError("repeated runs produced different traces")
    return f"{len(first)} identical rows"


CEILING_EPS = (1e-1, 1e-2, 1e-3)
CEILING_RUNS = (
    RunConfig(problem="G1", solver="sdd_admm", rho_mode="eps2_rule"),
    RunConfig(problem="G2", solver="udd_affine", rho=1.0),
    RunConfig(problem="G3", solver="udd_nonlinear", rho=1.0),
)


def _check_ceilings(iters: int) -> str:
    converged = 0
    for base in CEILING_RUNS:
        problem = load_source(base)
        for eps in CEILING_EPS:
            row = rate_row(eps, solve(problem, replace(base, eps=eps, max_iters=iters)))
            if row.violation:
                raise AssertionError(f"{base.problem}/{base.solver} eps={eps:g}: "
                                     f"{row.iterations} iterations against ceiling {row.ceiling:g}")
            converged += row.status == RunStatus.CONVERGED.value
    return f"{converged}/{len(CEILING_RUNS) * len(CEILING_EPS)} runs converged, none past K(eps)"


def _convex_reference(problem: ProblemInstance) -> float:
    reference = gallery.trusted_solve(problem, starts=3)
    if not reference.success:
        raise AssertionError(f"trusted solve infeasible ({reference.feasibility:.2e})")
    return reference.value


def _check_convex_sanity(iters: int, tol: float = 1e-4) -> str:
    problem = gallery.make("G2", seed=0).problem
    result = udd_affine.run(problem, udd_affine.UddParams(rho=1.0, eps=1e-5, max_iters=iters, keep_states=False))
    if not result.converged:
        raise AssertionError(f"UDD-ALM did not reach eps=1e-5 in {iters} iterations")
    value = float(problem.objective_value(result.x))
    reference = _convex_reference(problem)
    if abs(value - reference) > tol:
        raise AssertionError(f"UDD-ALM objective {value:.8g} vs trusted {reference:.8g}")
    return f"|f - f_ref| = {abs(value - reference):.2e}"


def _check_dual_ascent(iters: int, tol: float = 1e-4) -> str:
    problem = gallery.make("G2", seed=0).problem
    result = baselines.dual_ascent_alm_run(
        problem, baselines.BaselineParams(rho=1.0, eps=1e-5, max_iters=iters, keep_states=False))
    if not result.converged:
        raise AssertionError(f"dual ascent did not reach eps=1e-5 in {iters} iterations")
    value = float(problem.objective_value(result.x))
    reference = _convex_reference(problem)
    if abs(value - reference) > tol:
        raise AssertionError(f"dual-ascent objective {value:.8g} vs trusted {reference:.8g}")

    blown = baselines.dual_ascent_alm_run(
        gallery.make("G1", seed=0).problem,
        baselines.BaselineParams(rho=1.0, varrho=1e12, max_iters=20, eps=1e-12, keep_states=False))
    if blown.status != RunStatus.DIVERGED:
        raise AssertionError(f"an oversized dual-ascent step ended {blown.status.value}, not diverged")
    return f"|f - f_ref| = {abs(value - reference):.2e}; divergence flagged at k={blown.iterations - 1}"


def _sdd_ascent(mu, h_val, tau, omega, rho):
    return (tau * np.asarray(mu) + (rho / omega) * np.asarray(h_val)) / (1.0 + tau)


def _udd_ascent(mu, residual, varrho):
    return np.asarray(mu) + varrho * np.asarray(residual)


def _check_mutations(iters: int = 100) -> str:
    """Flip the sign of each dual step; a monitor has to catch it within iters iterations."""
    cases = (
        ("sdd", sdd, "sdd_dual_update", _sdd_ascent,
         lambda: sdd.run(gallery.make("G1", seed=0).problem,
                         sdd.SddParams(rho=10.0, max_iters=iters, eps=1e-8, keep_states=False))),
        ("udd_affine", udd_affine, "udd_dual_update", _udd_ascent,
         lambda: udd_affine.run(gallery.make("G2", seed=0).problem,
                                udd_affine.UddParams(rho=1.0, max_iters=iters, eps=1e-12, keep_states=False))),
    )
    caught = []
    for name, module, attr, ascent, run in cases:
        with mock.patch.object(module, attr, ascent):
            try:
                run()
            except InvariantViolation as e:
                caught.append(f"{name}: {e.monitor} at k={e.iteration}")
                continue
        raise AssertionError(f"flipped {name} dual step ran {iters} iterations undetected")
    return "; ".join(caught)


def verify_suite(scope: str, out_dir: Optional[Path] = None) -> VerifyReport:
    """Run every monitor-bearing suite; fast scope for CI, full for release checks."""
    if scope not in VERIFY_SCOPES:
        raise ConfigError(f"scope must be one of {', '.join(VERIFY_SCOPES)}, got {scope!r}")
    full = scope == "full"
    seeds = (0, 1, 2) if full else (0,)
    iters = 3000 if full else 200

    report = VerifyReport(scope)
    report.checks.append(_timed("prox_bruteforce", lambda: _check_prox(1000 if full else 41)))
    report.checks.append(_timed("instance_checks", lambda: _check_instances(seeds, 100 if full else 20)))
    report.checks.append(_timed("dual_update_algebra", _check_dual_algebra))
    report.checks.append(_timed("sdd_monitors", lambda: _check_sdd(seeds, iters)))
    report.checks.append(_timed("udd_affine_monitors", lambda: _check_udd_affine(seeds, iters)))
    report.checks.append(_timed("udd_nonlinear_monitors", lambda: _check_udd_nonlinear(seeds, 200 if full else 30)))
    report.checks.append(_timed("equivalence", lambda: _check_equivalence(seeds)))
    report.checks.append(_timed("determinism", _check_determinism))
    report.checks.append(_timed("iteration_ceilings", lambda: _check_ceilings(20000 if full else 2000)))
    report.checks.append(_timed("convex_sanity", lambda: _check_convex_sanity(100000)))
    report.checks.append(_timed("dual_ascent_baseline", lambda: _check_dual_ascent(100000)))
    report.checks.append(_timed("mutation_sensitivity", _check_mutations))

    if out_dir is not None:
        write_json(Path(out_dir) / "verify_report.json", report.to_dict())
    return report
