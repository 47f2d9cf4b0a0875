"""Tests for SDD-ADMM: step algebra, monitors, certificates and parameter rules."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualdescent import sdd
from dualdescent.errors import ConfigError, InvariantViolation, ParameterError
from dualdescent.problem import aggregate_h, eval_augmented_lagrangian
from dualdescent.sdd import (
    RhoMode,
    SddParams,
    Sweep,
    block_step,
    certificate_at,
    mu_tilde_plateau,
    potential,
    primal_sweep,
    regularized_dual_step,
    resolve_rho,
    sdd_dual_update,
    sdd_iteration_ceiling,
    sweep_lip,
)
from dualdescent.trace import RunStatus

vectors = st.lists(st.floats(min_value=-10, max_value=10, allow_nan=False), min_size=3, max_size=3)


@settings(max_examples=100, deadline=None)
@given(mu=vectors, h=vectors,
       rho=st.floats(min_value=0.1, max_value=100.0),
       omega=st.floats(min_value=4.0, max_value=20.0),
       tau=st.floats(min_value=0.0, max_value=5.0))
def test_dual_update_is_regularized_minimizer(mu, h, rho, omega, tau):
    mu, h = np.array(mu), np.array(h)
    a = sdd_dual_update(mu, h, tau, omega, rho)
    b = regularized_dual_step(mu, h, omega / rho, tau * omega / rho)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)


def test_dual_update_moves_against_residual():
    mu = np.zeros(2)
    h = np.array([1.0, -2.0])
    out = sdd_dual_update(mu, h, tau=1.0, omega=4.0, rho=8.0)
    np.testing.assert_allclose(out, [-1.0, 2.0])


class TestParams:
    def test_strict_needs_omega_at_least_four(self):
        with pytest.raises(ParameterError):
            SddParams(rho=1.0, omega=3.9)
        SddParams(rho=1.0, omega=3.9, strict=False)

    @pytest.mark.parametrize("kwargs", [
        {"rho": 1.0, "theta": 1.0},
        {"rho": 1.0, "tau": -0.1},
        {"rho": 1.0, "omega": 0.0, "strict": False},
        {"rho": None},
        {"rho": 0.0},
        {"rho": 1.0, "eps": 0.0},
        {"rho": 1.0, "max_iters": 0},
        {"rho": 1.0, "sweep": "random"},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises((ParameterError, ValueError)):
            SddParams(**kwargs)

    def test_infeasible_start_rejected_in_strict_mode(self, tiny_affine):
        from dataclasses import replace

        bad = replace(tiny_affine, x0=np.array([0.5, 0.5]))
        with pytest.raises(ParameterError):
            sdd.run(bad, SddParams(rho=1.0, max_iters=5))
        sdd.run(bad, SddParams(rho=1.0, max_iters=5, strict=False))


def test_eps2_rule_rho(g1):
    params = SddParams(eps=0.5, rho_mode=RhoMode.EPS2_RULE)
    rho, info = resolve_rho(g1.problem, params)
    assert rho == pytest.approx(4.0 * g1.problem.delta_p / 0.25)
    assert info["rho_rule"] == "eps2_rule"


def test_eps1_rule_with_given_constant(g4):
    params = SddParams(eps=0.1, rho_mode=RhoMode.EPS1_RULE, eps1_constant=3.0)
    rho, _ = resolve_rho(g4.problem, params)
    assert rho == pytest.approx(30.0)
    params = SddParams(eps=10.0, rho_mode=RhoMode.EPS1_RULE, eps1_constant=3.0)
    assert resolve_rho(g4.problem, params)[0] == 1.0


def test_eps1_rule_pilot_measures_multiplier(g4):
    params = SddParams(eps=0.1, rho_mode=RhoMode.EPS1_RULE, pilot_iters=20)
    rho, info = resolve_rho(g4.problem, params)
    assert info["pilot_mu_tilde_max"] >= 0.0
    assert info["eps1_constant"] >= 2.0 * math.sqrt(g4.problem.delta_p)
    assert rho == pytest.approx(max(1.0, info["eps1_constant"] / 0.1))


def test_potential_is_augmented_lagrangian_plus_dual_term(g1):
    x = g1.problem.x0
    mu = np.array([0.3, -0.4])
    expected = float(eval_augmented_lagrangian(g1.problem, x, mu, 2.0)) + 4.0 / 4.0 * 0.25
    assert potential(g1.problem, x, mu, 2.0, 4.0) == pytest.approx(expected)


@pytest.mark.parametrize("sweep", [Sweep.GAUSS_SEIDEL, Sweep.JACOBI])
@pytest.mark.parametrize("setting", [
    {"omega": 4.0, "theta": 2.0, "tau": 1.0},
    {"omega": 8.0, "theta": 3.0, "tau": 0.5},
    {"omega": 4.0, "theta": 1.5, "tau": 2.0},
])
def test_monitors_hold_on_g1(g1, sweep, setting):
    result = sdd.run(g1.problem, SddParams(rho=10.0, sweep=sweep, max_iters=300, eps=1e-8, **setting))
    potentials = [r.potential for r in result.trace]
    assert all(b <= a + 1e-9 * (1 + abs(a)) for a, b in zip(potentials, potentials[1:]))
    delta_p = g1.problem.delta_p
    assert all(r.h_norm <= math.sqrt(4 * delta_p / 10.0) * (1 + 1e-9) for r in result.trace)
    assert all(r.mu_norm <= math.sqrt(10.0 * delta_p) * (1 + 1e-9) for r in result.trace)


@pytest.mark.parametrize("seed", [0, 1])
def test_monitors_hold_on_g4(seed):
    from dualdescent.gallery import make

    problem = make("G4", seed=seed).problem
    result = sdd.run(problem, SddParams(rho=5.0, max_iters=500, eps=1e-8))
    assert result.iterations == 500
    assert result.status == RunStatus.MAX_ITERS


def test_certificate_bounds_hold(g1):
    problem = g1.problem
    rho, theta = 10.0, 2.0
    mu = np.zeros(problem.structure.m)
    x = problem.x0.copy()
    for _ in range(20):
        lip = sweep_lip(problem, mu, rho, Sweep.GAUSS_SEIDEL)
        x_next = primal_sweep(problem, x, mu, rho, theta, lip, Sweep.GAUSS_SEIDEL)
        cert = certificate_at(problem, x, x_next, mu, rho, theta, lip)
        for xi, bound in zip(cert.xi, cert.bounds):
            assert np.linalg.norm(xi) <= bound * (1 + 1e-9) + 1e-12
        np.testing.assert_allclose(cert.lam, mu + rho * aggregate_h(problem, x_next))
        mu = sdd_dual_update(mu, aggregate_h(problem, x_next), 1.0, 4.0, rho)
        x = x_next


def test_single_block_jacobi_matches_gauss_seidel(g2):
    a = sdd.run(g2.problem, SddParams(rho=2.0, max_iters=30, eps=1e-12, sweep=Sweep.GAUSS_SEIDEL))
    b = sdd.run(g2.problem, SddParams(rho=2.0, max_iters=30, eps=1e-12, sweep=Sweep.JACOBI))
    assert [r.row(("mu_tilde_norm",)) for r in a.trace] == [r.row(("mu_tilde_norm",)) for r in b.trace]


def test_run_reports_ceiling_and_plateau(g1):
    result = sdd.run(g1.problem, SddParams(rho=10.0, max_iters=50, eps=1e-8))
    ceiling = sdd_iteration_ceiling(g1.problem, 2.0, 10.0, 1e-8)
    assert result.info["ceiling"] == ceiling
    assert result.info["mu_tilde_plateau"] in (True, False)
    assert result.extra_columns == ("mu_tilde_norm",)


def test_converges_on_g1_with_loose_eps():
    from dualdescent.gallery import make

    problem = make("G1", seed=0, p=2, n_i=2, m=1).problem
    result = sdd.run(problem, SddParams(eps=0.5, rho_mode=RhoMode.EPS2_RULE, max_iters=20000, keep_states=False))
    assert result.converged
    assert result.k_star + 1 <= result.info["ceiling"]
    assert result.certificate.satisfies(0.5)


def test_iteration_ceiling_scales_like_inverse_square(g1):
    a = sdd_iteration_ceiling(g1.problem, 2.0, 10.0, 1e-2)
    b = sdd_iteration_ceiling(g1.problem, 2.0, 10.0, 1e-3)
    assert b / a == pytest.approx(100.0, rel=1e-3)


def test_mu_tilde_plateau():
    assert mu_tilde_plateau([1.0, 2.0]) is None
    assert mu_tilde_plateau([1.0, 2.0, 2.0, 2.0, 2.0, 2.0])
    assert not mu_tilde_plateau([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])


def test_flipped_dual_sign_is_caught(g1, monkeypatch):
    def ascent(mu, h_val, tau, omega, rho):
        return (tau * mu + (rho / omega) * h_val) / (1.0 + tau)

    monkeypatch.setattr(sdd, "sdd_dual_update", ascent)
    with pytest.raises(InvariantViolation) as info:
        sdd.run(g1.problem, SddParams(rho=10.0, max_iters=100, eps=1e-8))
    assert info.value.iteration < 100
    assert info.value.trace


def test_runs_are_deterministic(g1):
    params = SddParams(rho=10.0, max_iters=40, eps=1e-9)
    first = [r.row(("mu_tilde_norm",)) for r in sdd.run(g1.problem, params).trace]
    second = [r.row(("mu_tilde_norm",)) for r in sdd.run(g1.problem, params).trace]
    assert first == second


def test_gauss_seidel_reads_updated_blocks(g1):
    problem = g1.problem
    mu = np.full(problem.structure.m, 0.5)
    lip = sweep_lip(problem, mu, 10.0, Sweep.GAUSS_SEIDEL)
    x_new = primal_sweep(problem, problem.x0, mu, 10.0, 2.0, lip, Sweep.GAUSS_SEIDEL)
    mixed = problem.x0.copy()
    mixed[problem.structure.slice(0)] = x_new[problem.structure.slice(0)]
    np.testing.assert_array_equal(block_step(problem, 1, mixed, mu, 10.0, 2.0, lip),
                                  x_new[problem.structure.slice(1)])


def test_zero_lip_with_gradient_is_degenerate(tiny_affine):
    with pytest.raises(ConfigError):
        block_step(tiny_affine, 0, tiny_affine.x0, np.zeros(1), 1.0, 2.0, 0.0)


def test_eps1_rule_reaches_stationarity_on_g4(g4):
    result = sdd.run(g4.problem, SddParams(eps=0.2, rho_mode=RhoMode.EPS1_RULE, max_iters=20000, keep_states=False))
    assert result.status == RunStatus.CONVERGED
    assert result.certificate.satisfies(0.2)
    assert result.info["rho_rule"] == "eps1_rule"


def _gauss_seidel_by_hand(problem, x, mu, rho, theta, lip):
    # f = x'Qx + q'x, h_i = B_i x_i + D_i x_i^2 + d_i, X = [-1, 1]^n
    Q, q = problem.objective.Q, problem.objective.q
    blocks = problem.constraints
    bounds = np.cumsum([0] + [blk.B.shape[1] for blk in blocks])
    x = np.array(x, dtype=float)
    for i, blk in enumerate(blocks):
        lo, hi = bounds[i], bounds[i + 1]
        h = sum(b.B @ x[a:c] + b.D @ (x[a:c] * x[a:c]) + b.d for b, a, c in zip(blocks, bounds[:-1], bounds[1:]))
        jac = blk.B + 2.0 * blk.D * x[lo:hi]
        grad = (2.0 * Q @ x + q)[lo:hi] + jac.T @ (mu + rho * h)
        x[lo:hi] = np.clip(x[lo:hi] - grad / (theta * lip), -1.0, 1.0)
    return x


def test_first_iterations_match_hand_computation(g1):
    problem = g1.problem
    rho, omega, tau, theta = 10.0, 4.0, 1.0, 2.0
    result = sdd.run(problem, SddParams(rho=rho, omega=omega, tau=tau, theta=theta, max_iters=2, eps=1e-12))
    x, mu = problem.x0.copy(), np.zeros(problem.structure.m)
    for record in result.trace:
        x = _gauss_seidel_by_hand(problem, x, mu, rho, theta, record.lip)
        h = sum(b.B @ xi + b.D @ (xi * xi) + b.d for b, xi in zip(problem.constraints, np.split(x, 3)))
        mu = (tau * mu - rho / omega * h) / (1.0 + tau)
        np.testing.assert_allclose(record.x, x, rtol=0, atol=1e-12)
        np.testing.assert_allclose(record.mu, mu, rtol=0, atol=1e-12)
    assert np.any(mu != 0)
