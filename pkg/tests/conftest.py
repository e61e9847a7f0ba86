"""Shared fixtures: small systems with known energies and a seeded generator."""

import numpy as np
import pytest

from sosenergy.config import Settings
from sosenergy.systems import SystemModel, make_scalar

SQRT3 = np.sqrt(3.0)
SQRT5 = np.sqrt(5.0)

# scalar example x' = -2x + x^2 + 2u, y = 2x
V2 = (1.0 + SQRT3) / 2.0
V3 = -(1.0 + SQRT3) / (6.0 * SQRT3)
W2 = (SQRT5 - 1.0) / 2.0
W3 = (SQRT5 - 1.0) / (6.0 * SQRT5)


@pytest.fixture
def settings() -> Settings:
    return Settings()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def scalar() -> SystemModel:
    return make_scalar(0.5)


@pytest.fixture
def scalar_future() -> SystemModel:
    return make_scalar(1.0)


@pytest.fixture
def linear2() -> SystemModel:
    return SystemModel(
        A=[[-1.0, 1.0], [0.0, -2.0]],
        B=[[0.0], [1.0]],
        C=[[1.0, 0.0]],
        eta=1.0,
        name="linear2",
    )


@pytest.fixture
def quadratic2() -> SystemModel:
    F2 = np.zeros((2, 4))
    F2[0, 1] = 0.5   # x1 x2
    F2[1, 0] = -1.0  # x1^2
    return SystemModel(
        A=[[-1.0, 1.0], [0.0, -2.0]],
        F2=F2,
        B=[[0.0], [1.0]],
        C=[[1.0, 0.0]],
        eta=0.5,
        name="quadratic2",
    )


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (f(x + step) - f(x - step)) / (2 * h)
    return grad


@pytest.fixture
def hidden2() -> SystemModel:
    # the second state is neither driven by u nor seen in y
    return SystemModel(
        A=[[-1.0, 0.0], [0.0, -2.0]],
        B=[[1.0], [0.0]],
        C=[[1.0, 0.0]],
        eta=1.0,
        name="hidden2",
    )
