"""Tests for run orchestration, artifacts, rate sweeps and the verify battery."""

import json

import numpy as np
import pytest

from dualdescent import harness, sdd
from dualdescent.config import RunConfig
from dualdescent.errors import ConfigError
from dualdescent.harness import (
    EXIT_CONFIG,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    EXIT_VIOLATION,
    RateRow,
    check_eps_list,
    fit_slope,
    rate_sweep,
    run_command,
    summarize_sweep,
    verify_suite,
)
from dualdescent.trace import BASE_COLUMNS, read_trace_csv


def test_successful_run_writes_artifacts(tmp_path):
    config = RunConfig(problem="G2", solver="udd_affine", rho=1.0, eps=1e-3)
    outcome = run_command(config, tmp_path)
    assert outcome.exit_code == EXIT_OK
    for name in ("trace.csv", "certificate.json", "summary.json", "config.json"):
        assert (tmp_path / name).exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "converged"
    assert summary["exit_code"] == 0
    assert summary["problem"] == "G2"
    rows = read_trace_csv(tmp_path / "trace.csv")
    assert len(rows) == summary["iterations"]
    assert list(rows[0])[: len(BASE_COLUMNS)] == list(BASE_COLUMNS)
    assert "L_aug" in rows[0]


def test_trace_every_thins_rows(tmp_path):
    config = RunConfig(problem="G2", solver="udd_affine", rho=1.0, eps=1e-12, max_iters=25, trace_every=10)
    outcome = run_command(config, tmp_path)
    assert outcome.exit_code == EXIT_NOT_CONVERGED
    rows = read_trace_csv(tmp_path / "trace.csv")
    assert [int(r["k"]) for r in rows] == [0, 10, 20, 24]


def test_budget_exhaustion_exits_two(tmp_path):
    config = RunConfig(problem="G1", solver="sdd_admm", rho=10.0, eps=1e-12, max_iters=5)
    outcome = run_command(config, tmp_path)
    assert outcome.exit_code == EXIT_NOT_CONVERGED
    assert json.loads((tmp_path / "summary.json").read_text())["status"] == "max_iters"


def test_solver_mismatch_is_a_config_error(tmp_path):
    outcome = run_command(RunConfig(problem="G1", solver="udd_affine"), tmp_path)
    assert outcome.exit_code == EXIT_CONFIG
    assert not (tmp_path / "summary.json").exists()


def test_missing_problem_file(tmp_path):
    outcome = run_command(RunConfig(problem=str(tmp_path / "none.json")), tmp_path)
    assert outcome.exit_code == EXIT_CONFIG


def test_problem_json_source(tmp_path, g2):
    from dualdescent.problem import save_problem

    path = save_problem(g2.problem, tmp_path / "g2.json")
    config = RunConfig(problem=str(path), solver="udd_affine", rho=1.0, eps=1e-2)
    assert run_command(config, tmp_path / "out").exit_code == EXIT_OK


def test_violation_exits_three_with_partial_trace(tmp_path, monkeypatch):
    def ascent(mu, h_val, tau, omega, rho):
        return (tau * mu + (rho / omega) * h_val) / (1.0 + tau)

    monkeypatch.setattr(sdd, "sdd_dual_update", ascent)
    config = RunConfig(problem="G1", solver="sdd_admm", rho=10.0, eps=1e-8, max_iters=100)
    outcome = run_command(config, tmp_path)
    assert outcome.exit_code == EXIT_VIOLATION
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "invariant_violation"
    assert summary["exit_code"] == 3
    assert summary["iteration"] < 100
    assert (tmp_path / "trace.csv").exists()


def test_penalty_admm_default_beta(tmp_path):
    config = RunConfig(problem="G1", solver="penalty_admm", rho=10.0, eps=1e-12, max_iters=5)
    outcome = run_command(config, tmp_path)
    assert outcome.result.params["beta"] == 5.0


@pytest.mark.parametrize("eps_list", [
    [1e-1, 1e-2, 1e-3],
    [1e-1, 1e-2, 1e-2, 1e-3],
    [1e-1, 1e-3, 1e-2, 1e-4],
    [1e-1, 1e-2, 0.0, -1.0],
])
def test_bad_eps_lists(eps_list):
    with pytest.raises(ConfigError):
        check_eps_list(eps_list)


def test_fit_slope_recovers_exponent():
    eps = [1e-1, 1e-2, 1e-3, 1e-4]
    iterations = [round(3 * e ** -2) for e in eps]
    slope, ci = fit_slope(eps, iterations)
    assert slope == pytest.approx(2.0, abs=1e-3)
    assert ci[0] <= slope <= ci[1]
    assert fit_slope([0.1], [10]) == (None, None)


def test_rate_sweep_on_convex_instance(tmp_path):
    config = RunConfig(problem="G2", solver="udd_affine", rho=1.0, max_iters=50000)
    report = rate_sweep(config, [1e-1, 1e-2, 1e-3, 1e-4], out_dir=tmp_path)
    assert report.passed, report.failures
    assert [r.eps for r in report.rows] == [1e-1, 1e-2, 1e-3, 1e-4]
    assert all(r.status == "converged" for r in report.rows)
    assert report.monotone
    assert report.slope is not None and report.slope <= 2.3
    assert (tmp_path / "rate_report.json").exists()
    assert (tmp_path / "eps_0.001" / "summary.json").exists()


def test_rate_sweep_records_violations(tmp_path, monkeypatch):
    def ascent(mu, h_val, tau, omega, rho):
        return (tau * mu + (rho / omega) * h_val) / (1.0 + tau)

    monkeypatch.setattr(sdd, "sdd_dual_update", ascent)
    config = RunConfig(problem="G1", solver="sdd_admm", rho=10.0, max_iters=100)
    report = rate_sweep(config, [1e-1, 1e-2, 1e-3, 1e-4], out_dir=tmp_path)
    assert not report.passed
    assert len(report.failures) == 4
    assert (tmp_path / "eps_0.1" / "summary.json").exists()


def test_unknown_verify_scope():
    with pytest.raises(ConfigError):
        verify_suite("")


def test_check_failures_are_collected():
    def broken():
        raise AssertionError("repeated runs produced different traces")

    result = harness._timed("determinism", broken)
    assert not result.passed
    assert "different traces" in result.detail


def test_dual_algebra_check():
    assert harness._check_dual_algebra() == "100 random draws"


@pytest.mark.slow
def test_fast_verify_passes(tmp_path):
    report = verify_suite("fast", out_dir=tmp_path)
    assert report.passed, report.failures
    saved = json.loads((tmp_path / "verify_report.json").read_text())
    assert saved["pass"] is True
    names = {c["name"] for c in saved["checks"]}
    assert {"iteration_ceilings", "convex_sanity", "dual_ascent_baseline", "mutation_sensitivity"} <= names
    assert np.isfinite([c["seconds"] for c in saved["checks"]]).all()


def test_stationary_start_needs_no_iterations(tmp_path, tiny_affine):
    from dataclasses import replace

    from dualdescent.problem import save_problem

    path = save_problem(replace(tiny_affine, x0=np.zeros(2)), tmp_path / "stationary.json")
    config = RunConfig(problem=str(path), solver="sdd_admm", rho=1.0)
    report = rate_sweep(config, [1e-1, 1e-2, 1e-3, 1e-4])
    assert report.passed, report.failures
    assert [r.k_star for r in report.rows] == [0, 0, 0, 0]


def _row(eps, iterations, status="converged"):
    return RateRow(eps, status, iterations - 1, iterations, 1e6, 1.0, False)


def test_fewer_iterations_at_smaller_eps_fails():
    rows = [_row(1e-1, 10), _row(1e-2, 40), _row(1e-3, 25), _row(1e-4, 90)]
    report = summarize_sweep("udd_affine", "G2", rows)
    assert not report.monotone
    assert not report.passed
    assert report.failures == ["eps=0.001: 25 iterations, fewer than 40 at eps=0.01"]
    assert report.to_dict()["pass"] is False


def test_unconverged_rows_are_left_out_of_monotonicity():
    rows = [_row(1e-1, 10), _row(1e-2, 5, status="max_iters"), _row(1e-3, 30), _row(1e-4, 30)]
    report = summarize_sweep("udd_affine", "G2", rows, ["kept"])
    assert report.monotone
    assert report.failures == ["kept"]


def test_mutation_check_names_the_catching_monitor():
    detail = harness._check_mutations()
    assert detail.startswith("sdd: ")
    assert "; udd_affine: " in detail


def test_mutation_check_fails_when_nothing_fires(monkeypatch):
    monkeypatch.setattr(harness, "_sdd_ascent", sdd.sdd_dual_update)
    result = harness._timed("mutation_sensitivity", harness._check_mutations)
    assert not result.passed
    assert "undetected" in result.detail


@pytest.mark.slow
@pytest.mark.parametrize("base", harness.CEILING_RUNS, ids=lambda c: f"{c.problem}-{c.solver}")
@pytest.mark.parametrize("eps", harness.CEILING_EPS)
def test_iterations_stay_under_ceiling(base, eps):
    from dataclasses import replace

    problem = harness.load_source(base)
    row = harness.rate_row(eps, harness.solve(problem, replace(base, eps=eps, max_iters=20000)))
    assert row.ceiling is not None
    assert not row.violation
    assert row.iterations <= row.ceiling


@pytest.mark.slow
def test_convex_and_baseline_checks():
    assert harness._check_convex_sanity(100000).startswith("|f - f_ref|")
    assert "divergence flagged" in harness._check_dual_ascent(100000)
