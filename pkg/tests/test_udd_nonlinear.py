"""Tests for UDD-ALM with nonlinear constraints and its inner descent oracle."""

import numpy as np
import pytest

from dualdescent import udd_nonlinear
from dualdescent.errors import OracleFailure, ParameterError
from dualdescent.problem import (
    AffineBlock,
    BlockStructure,
    IneqSet,
    ProblemInstance,
    QuadraticObjective,
    aggregate_h,
    eval_augmented_lagrangian,
    joint_lip_estimate,
)
from dualdescent.prox import ProxKernel
from dualdescent.udd_nonlinear import (
    NlUddParams,
    kkt_certificate,
    licq_diagnostic,
    nl_dual_update,
    nl_iteration_ceiling,
    recover_multipliers,
    subproblem_solve,
)


class TestParams:
    def test_defaults_resolve_from_constants(self, g3):
        params = NlUddParams(rho=2.0).resolve(g3.problem)
        assert params.varrho == 0.25
        assert params.c == pytest.approx(1.1 * joint_lip_estimate(g3.problem, np.zeros(2), 2.0))
        assert params.nu == pytest.approx(params.c / 2)
        assert params.inner_tol == pytest.approx(params.eps / 10)

    def test_nu_must_not_exceed_half_c(self):
        with pytest.raises(ParameterError):
            NlUddParams(c=1.0, nu=0.6)
        NlUddParams(c=1.0, nu=0.5)

    @pytest.mark.parametrize("kwargs", [{"rho": 0.0}, {"c": -1.0}, {"varrho": -0.1}, {"max_iters": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            NlUddParams(**kwargs)


def test_dual_update_descends():
    np.testing.assert_allclose(nl_dual_update(np.zeros(2), np.array([2.0, -4.0]), 0.25), [-0.5, 1.0])


def test_recover_multipliers_on_box_face():
    from dualdescent.problem import BlockStructure, ProblemInstance, QuadraticBlock, QuadraticObjective
    from dualdescent.prox import ProxKernel

    problem = ProblemInstance(
        structure=BlockStructure((2,), 1),
        objective=QuadraticObjective(np.eye(2), np.zeros(2)),
        prox_terms=(ProxKernel.l1(1.0, lower=-1.0, upper=1.0),),
        constraints=(QuadraticBlock([[0.0, 1.0]], [[0.0, 0.0]], [0.0]),),
        x0=np.zeros(2),
        p_lb=0.0,
    )
    ineq = problem.ineq_set()
    # x1 at the upper face pushed further out, x2 at the l1 kink with |v| < w
    x = np.array([1.0, 0.0])
    v = np.array([-3.0, 0.4])
    zeta, y, residual = recover_multipliers(problem, ineq, x, v)
    np.testing.assert_allclose(zeta, [1.0, -0.4])
    assert np.all(y >= 0)
    np.testing.assert_allclose(residual, 0.0, atol=1e-12)


def test_subproblem_gives_sufficient_descent(g3):
    params = NlUddParams(rho=1.0).resolve(g3.problem)
    x0 = g3.problem.x0.copy()
    mu = np.array([0.2, -0.1])
    sub = subproblem_solve(g3.problem, x0, mu, params)
    before = float(eval_augmented_lagrangian(g3.problem, x0, mu, 1.0))
    after = float(eval_augmented_lagrangian(g3.problem, sub.x, mu, 1.0))
    assert before - after >= params.nu * float(np.sum((sub.x - x0) ** 2)) - 1e-9 * (1 + abs(before))
    assert np.all(sub.y >= 0)
    assert g3.problem.in_domain(sub.x)


def test_oracle_failure_on_impossible_descent(g3):
    # a descent constant far above the inner step constant is unattainable
    params = NlUddParams(rho=1.0, c=1e-3, nu=5e-4, inner_max_iters=1)
    params.nu = 1e3
    with pytest.raises(OracleFailure):
        subproblem_solve(g3.problem, g3.problem.x0.copy(), np.array([5.0, -5.0]), params)


def test_licq_at_planted_point(g3):
    diag = licq_diagnostic(g3.problem, g3.x_star)
    assert diag["full_column_rank"]
    assert len(diag["active"]) == 3
    assert g3.metadata["flags"]["licq"]


def test_licq_fails_with_too_many_columns():
    from dualdescent.problem import AffineBlock, BlockStructure, ProblemInstance, QuadraticObjective
    from dualdescent.prox import ProxKernel

    problem = ProblemInstance(
        structure=BlockStructure((1,), 1),
        objective=QuadraticObjective(np.eye(1), np.zeros(1)),
        prox_terms=(ProxKernel.box(-1.0, 1.0),),
        constraints=(AffineBlock([[1.0]], [1.0]),),
        x0=np.ones(1),
        p_lb=0.0,
    )
    diag = licq_diagnostic(problem, np.ones(1), IneqSet("box", 1, lower=1.0, upper=1.0))
    assert not diag["full_column_rank"]


def test_kkt_certificate_at_planted_point(g3):
    ineq = g3.problem.ineq_set()
    cert = kkt_certificate(g3.problem, g3.x_star, np.asarray(g3.metadata["mu_star"]), ineq)
    assert cert.feasibility <= 1e-10
    assert cert.stationarity <= 1e-8
    assert np.all(cert.y >= 0)
    assert cert.satisfies(1e-6)


def test_run_reaches_kkt_point(g3):
    result = udd_nonlinear.run(g3.problem, NlUddParams(rho=1.0, eps=1e-3, max_iters=2000, keep_states=False))
    assert result.converged
    assert result.certificate.satisfies(1e-3)
    np.testing.assert_allclose(result.x, g3.x_star, atol=5e-2)
    assert result.k_star + 1 <= result.info["ceiling"]


def test_combined_descent_and_trace_columns(g3):
    params = NlUddParams(rho=4.0, eps=1e-9, max_iters=15)
    result = udd_nonlinear.run(g3.problem, params)
    values = [r.potential for r in result.trace]
    assert all(b <= a + 1e-9 * (1 + abs(a)) for a, b in zip(values, values[1:]))
    assert result.extra_columns[0] == "L_aug"
    assert all(r.extras["inner_iters"] >= 0 for r in result.trace)
    assert result.info["licq_final"]["n"] == g3.problem.structure.n


def test_ceiling_needs_resolved_constants(g3):
    params = NlUddParams(rho=1.0)
    L0 = float(eval_augmented_lagrangian(g3.problem, g3.problem.x0, np.zeros(2), 1.0))
    ceiling = nl_iteration_ceiling(g3.problem, params, L0, g3.metadata["f_star"], eps=1e-2)
    assert ceiling >= 1
    assert params.c is not None


def test_rejects_start_outside_domain(g3):
    from dataclasses import replace

    x0 = g3.problem.x0.copy()
    x0[0] = 5.0
    bad = replace(g3.problem, x0=x0)
    with pytest.raises(ParameterError):
        udd_nonlinear.run(bad, NlUddParams())


def test_start_feasibility(g3):
    np.testing.assert_allclose(aggregate_h(g3.problem, g3.problem.x0), 0.0, atol=1e-10)


def test_box_qp_multipliers_are_clamped_gradients():
    # L(x, 0) + (c/2)||x||^2 is separable: coordinate j minimizes a_j x^2 + q_j x on [-1, 1]
    rho, c = 1.0, 10.0
    q = np.array([-100.0, 100.0, 1.3])
    problem = ProblemInstance(
        structure=BlockStructure((3,), 1),
        objective=QuadraticObjective(np.eye(3), q),
        prox_terms=(ProxKernel.box(-1.0, 1.0),),
        constraints=(AffineBlock([[0.0, 0.0, 1.0]], [0.0]),),
        x0=np.zeros(3),
        p_lb=-202.0,
    )
    a = 1.0 + c / 2.0 + np.array([0.0, 0.0, rho / 2.0])
    expected = np.clip(-q / (2.0 * a), -1.0, 1.0)
    np.testing.assert_allclose(expected, [1.0, -1.0, -0.1])

    params = NlUddParams(rho=rho, c=c, nu=1.0, inner_tol=1e-12)
    sub = subproblem_solve(problem, np.zeros(3), np.zeros(1), params)
    assert sub.converged
    np.testing.assert_allclose(sub.x, expected, atol=1e-10)

    grad = 2.0 * sub.x + q + np.array([0.0, 0.0, rho * sub.x[2]]) + c * sub.x
    # rows are the upper faces x_j <= 1, then the lower faces -x_j <= -1
    np.testing.assert_allclose(sub.y, [-grad[0], 0.0, 0.0, 0.0, grad[1], 0.0], atol=1e-9)
    np.testing.assert_allclose(sub.y[[0, 4]], [88.0, 88.0], atol=1e-9)

    zeta, y, residual = recover_multipliers(problem, problem.ineq_set(), sub.x, grad)
    np.testing.assert_allclose(y, sub.y, atol=1e-9)
    assert np.linalg.norm(residual) <= 1e-9
    np.testing.assert_array_equal(zeta, 0.0)
