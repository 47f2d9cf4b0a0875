"""Shared fixtures: gallery instances, isolated config home, small hand-built problems."""

from __future__ import annotations

import numpy as np
import pytest

from dualdescent import config as config_module
from dualdescent.gallery import make
from dualdescent.problem import (
    AffineBlock,
    BlockStructure,
    ProblemInstance,
    QuadraticBlock,
    QuadraticObjective,
)
from dualdescent.prox import ProxKernel


@pytest.fixture(autouse=True)
def isolated_home(tmp_path, monkeypatch):
    """Point the user config at an empty temp directory for every test."""
    home = tmp_path / "home"
    monkeypatch.setattr(config_module, "DUALDESCENT_HOME", home)
    monkeypatch.setattr(config_module, "CONFIG_FILE", home / "config.yaml")
    monkeypatch.delenv("DUALDESCENT_LOG", raising=False)
    config_module.reset_config()
    yield home
    config_module.reset_config()


@pytest.fixture(scope="session")
def g1():
    return make("G1", seed=0)


@pytest.fixture(scope="session")
def g2():
    return make("G2", seed=0)


@pytest.fixture(scope="session")
def g3():
    return make("G3", seed=0)


@pytest.fixture(scope="session")
def g4():
    return make("G4", seed=0)


@pytest.fixture
def tiny_affine():
    """Two scalar blocks, f = x1^2 + x2^2, x1 + x2 = 0 on [-1, 1]^2."""
    return ProblemInstance(
        structure=BlockStructure((1, 1), 1),
        objective=QuadraticObjective(np.eye(2), np.zeros(2)),
        prox_terms=(ProxKernel.box(-1.0, 1.0), ProxKernel.box(-1.0, 1.0)),
        constraints=(AffineBlock([[1.0]], [0.0]), AffineBlock([[1.0]], [0.0])),
        x0=np.array([0.5, -0.5]),
        p_lb=0.0,
    )


@pytest.fixture
def tiny_quadratic():
    """One block of two variables with h(x) = x1 + x2^2 - 0.25 on the unit box."""
    return ProblemInstance(
        structure=BlockStructure((2,), 1),
        objective=QuadraticObjective(np.diag([1.0, -0.5]), np.array([0.1, 0.0])),
        prox_terms=(ProxKernel.box(-1.0, 1.0),),
        constraints=(QuadraticBlock([[1.0, 0.0]], [[0.0, 1.0]], [-0.25]),),
        x0=np.array([0.25, 0.0]),
        p_lb=-2.0,
    )
