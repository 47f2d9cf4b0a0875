"""Tests for the deterministic gallery instances."""

import numpy as np
import pytest

from dualdescent.errors import ParameterError
from dualdescent.gallery import GALLERY, make, make_g1, make_g2, make_g3, trusted_solve
from dualdescent.problem import aggregate_h, estimate_constants


@pytest.mark.parametrize("gid", list(GALLERY))
def test_same_seed_same_instance(gid):
    a, b = make(gid, seed=4), make(gid, seed=4)
    np.testing.assert_array_equal(a.problem.x0, b.problem.x0)
    np.testing.assert_array_equal(a.problem.objective.Q, b.problem.objective.Q)
    assert a.problem.p_lb == b.problem.p_lb


def test_different_seeds_differ():
    assert not np.array_equal(make("G1", seed=0).problem.objective.q, make("G1", seed=1).problem.objective.q)


def test_make_is_case_insensitive():
    assert make("g2", seed=0).id == "G2"


def test_unknown_id():
    with pytest.raises(ParameterError):
        make("G9")


@pytest.mark.parametrize("factory,sizes", [
    (make_g1, {"p": 6}),
    (make_g1, {"n_i": 0}),
    (make_g1, {"m": 6}),
    (make_g2, {"n": 3, "m": 3}),
    (make_g2, {"n": 101, "m": 3}),
    (make_g3, {"n": 4, "m": 2, "L": 3}),
    (make_g3, {"m": 6, "n": 20}),
])
def test_size_ranges(factory, sizes):
    with pytest.raises(ParameterError):
        factory(**sizes)


@pytest.mark.parametrize("gid", list(GALLERY))
def test_start_is_feasible_and_in_domain(gid):
    problem = make(gid, seed=2).problem
    np.testing.assert_allclose(aggregate_h(problem, problem.x0), 0.0, atol=1e-10)
    assert problem.in_domain(problem.x0)
    assert float(problem.objective_value(problem.x0)) >= problem.p_lb


def test_g1_sizes_follow_arguments():
    inst = make("G1", seed=0, p=2, n_i=5, m=3)
    assert inst.problem.structure.dims == (5, 5)
    assert inst.problem.structure.m == 3
    assert not inst.metadata["flags"]["convex"]


def test_g2_planted_solution(g2):
    x_star = g2.x_star
    np.testing.assert_allclose(aggregate_h(g2.problem, x_star), 0.0, atol=1e-10)
    assert g2.metadata["flags"]["robinson"]
    assert g2.metadata["mu_star"] == [0.0, 0.0, 0.0]
    assert g2.metadata["f_star"] == pytest.approx(float(g2.problem.objective_value(x_star)))


def test_g3_planted_point_is_feasible(g3):
    np.testing.assert_allclose(aggregate_h(g3.problem, g3.x_star), 0.0, atol=1e-10)
    assert len(g3.metadata["bound_coordinates"]) == 3


def test_g4_full_row_rank(g4):
    assert g4.problem.structure.dims == (3, 3)
    assert g4.metadata["sigma_min_A"] > 0.1
    assert g4.metadata["flags"]["full_row_rank"]


def test_describe(g1):
    info = g1.describe()
    assert info["id"] == "G1"
    assert info["dims"] == [4, 4, 4]
    assert info["target_solver"] == "sdd_admm"


def test_trusted_solve_finds_planted_minimizer(g2):
    ref = trusted_solve(g2.problem, starts=2)
    assert ref.success
    assert ref.value == pytest.approx(g2.metadata["f_star"], abs=1e-5)


def test_trusted_solve_rejects_nonseparable_terms():
    from dataclasses import replace

    from dualdescent.prox import ProxKernel

    problem = make("G2", seed=0).problem
    with pytest.raises(ParameterError):
        trusted_solve(replace(problem, prox_terms=(ProxKernel.ball(10.0),)))


@pytest.mark.parametrize("gid", list(GALLERY))
def test_declared_constants_are_tight(gid, request):
    problem = request.getfixturevalue(gid.lower()).problem
    sampled = estimate_constants(problem, samples=2000, inflate=1.0, seed=3)
    ratio = sampled.objective.lipschitz / problem.objective.lipschitz
    assert 0.5 < ratio <= 1.0 + 1e-9
    for declared, seen in zip(problem.constraints, sampled.constraints):
        pairs = [(getattr(seen.constants, k), getattr(declared.constants, k)) for k in "MKJL"]
        assert all(s <= d * (1.0 + 1e-9) + 1e-12 for s, d in pairs)
        assert max(s / d for s, d in pairs if d > 0) > 0.5
