"""Tests for the dual-ascent and penalty-ADMM baselines and the equivalence check."""

import numpy as np
import pytest

from dualdescent import baselines
from dualdescent.baselines import (
    BaselineParams,
    dual_ascent_alm_run,
    dual_ascent_update,
    equivalence_check,
    equivalence_params,
    linearized_penalty_admm_run,
)
from dualdescent.errors import EquivalenceViolation, ParameterError
from dualdescent.trace import RunStatus


def test_dual_ascent_update_adds_residual():
    np.testing.assert_allclose(dual_ascent_update(np.ones(2), np.array([1.0, -2.0]), 0.5), [1.5, 0.0])


def test_varrho_defaults_to_rho():
    assert BaselineParams(rho=3.0).varrho == 3.0


@pytest.mark.parametrize("kwargs", [{"rho": 0.0}, {"varrho": -1.0}, {"theta": 1.0}, {"eps": 0.0}])
def test_invalid_params(kwargs):
    with pytest.raises(ParameterError):
        BaselineParams(**kwargs)


@pytest.mark.parametrize("gamma,expected", [
    (1.0 / 3.0, (0.75, 4.0, 7.5)),
    (1.0, (0.5, 2.0, 5.0)),
    (3.0, (0.25, 4.0 / 3.0, 2.5)),
])
def test_equivalence_parameter_mapping(gamma, expected):
    assert equivalence_params(gamma, 10.0) == pytest.approx(expected)


def test_equivalence_needs_positive_gamma():
    with pytest.raises(ParameterError):
        equivalence_params(0.0, 1.0)


def test_penalty_admm_needs_rho_above_beta(g1):
    with pytest.raises(ParameterError):
        linearized_penalty_admm_run(g1.problem, 2.0, BaselineParams(rho=2.0))
    with pytest.raises(ParameterError):
        linearized_penalty_admm_run(g1.problem, 0.0, BaselineParams(rho=2.0))


def test_penalty_admm_keeps_slack_identity(g1):
    result = linearized_penalty_admm_run(g1.problem, 2.5, BaselineParams(rho=10.0, max_iters=40, eps=1e-12))
    assert result.iterations == 40
    assert result.extra_columns == ("z_norm", "slack_identity_gap")
    for rec in result.trace:
        assert rec.extras["slack_identity_gap"] <= 1e-10 * (1.0 + rec.mu_norm)
    np.testing.assert_allclose(2.5 * result.info["z"] + result.mu, 0.0, atol=1e-10)


@pytest.mark.parametrize("gamma", [1.0 / 3.0, 1.0, 3.0])
def test_sdd_and_penalty_admm_coincide_on_g1(g1, gamma):
    report = equivalence_check(g1.problem, gamma, rho=10.0, iters=50)
    assert report.passed
    assert report.iters == 50
    assert max(report.max_dev_x, report.max_dev_mu) <= 1e-8


def test_equivalence_with_jacobi_sweep(g1):
    from dualdescent.sdd import Sweep

    report = equivalence_check(g1.problem, 1.0, rho=10.0, iters=20, sweep=Sweep.JACOBI)
    assert report.passed


def test_wrong_mapping_is_reported(g1, monkeypatch):
    real = baselines.equivalence_params

    def wrong_beta(gamma, rho):
        tau, omega, _ = real(gamma, rho)
        return tau, omega, rho / 2.0

    monkeypatch.setattr(baselines, "equivalence_params", wrong_beta)
    with pytest.raises(EquivalenceViolation):
        equivalence_check(g1.problem, 3.0, rho=10.0, iters=20)
    report = equivalence_check(g1.problem, 3.0, rho=10.0, iters=20, raise_on_fail=False)
    assert not report.passed
    assert report.to_dict()["pass"] is False


def test_dual_ascent_flags_divergence(g1):
    result = dual_ascent_alm_run(g1.problem, BaselineParams(rho=1.0, varrho=1e12, max_iters=20, eps=1e-12))
    assert result.status == RunStatus.DIVERGED
    assert result.info["diagnosis"] == "baseline diverged"


def test_dual_ascent_trace_layout(g2):
    result = dual_ascent_alm_run(g2.problem, BaselineParams(rho=1.0, max_iters=5, eps=1e-12))
    assert result.solver == "dual_ascent"
    assert result.extra_columns == ("L_aug",)
    assert [r.k for r in result.trace] == list(range(5))


@pytest.mark.slow
def test_dual_ascent_agrees_with_udd_on_convex_instance(g2):
    from dualdescent import udd_affine

    base = dual_ascent_alm_run(g2.problem, BaselineParams(rho=1.0, eps=1e-5, max_iters=100000, keep_states=False))
    udd = udd_affine.run(g2.problem, udd_affine.UddParams(rho=1.0, eps=1e-5, max_iters=100000, keep_states=False))
    assert base.converged and udd.converged
    f_base = float(g2.problem.objective_value(base.x))
    f_udd = float(g2.problem.objective_value(udd.x))
    assert f_base == pytest.approx(f_udd, abs=1e-4)
    assert f_base == pytest.approx(g2.metadata["f_star"], abs=1e-4)
