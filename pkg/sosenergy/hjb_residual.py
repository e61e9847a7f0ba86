"""
Hamilton-Jacobi-Bellman residuals of energy candidates.

past:   R(x) = dE f(x) + 1/2 dE BB' dE' - eta/2 |C x|^2
future: R(x) = dE f(x) - eta/2 dE BB' dE' + 1/2 |C x|^2

Both are written as dE f + q |B' dE'|^2 + c |C x|^2 with the weights below.
Exact energies give R = 0 everywhere.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from sosenergy.lin_solvers import EnergyKind
from sosenergy.systems import SystemModel


@runtime_checkable
class EnergyCandidate(Protocol):
    def value(self, x) -> float: ...

    def gradient(self, x) -> np.ndarray: ...

    def gradient_batch(self, X: np.ndarray) -> np.ndarray: ...


def hjb_weights(kind: EnergyKind, eta: float) -> tuple[float, float]:
    """(weight of |B' dE'|^2, weight of |C x|^2)."""
    if kind == "past":
        return 0.5, -0.5 * eta
    if kind == "future":
        return -0.5 * eta, 0.5
    raise ValueError(f"unknown energy kind {kind!r}")


def residual_from_gradients(
    G: np.ndarray,
    drift: np.ndarray,
    output_energy: np.ndarray,
    system: SystemModel,
    kind: EnergyKind,
) -> np.ndarray:
    """Residuals from precomputed gradients, drifts and |C x|^2 (all row-wise)."""
    q, c = hjb_weights(kind, system.eta)
    GB = G @ system.B
    return np.einsum("ij,ij->i", G, drift) + q * np.einsum("ij,ij->i", GB, GB) + c * output_energy


def as_samples(X, n: int) -> np.ndarray:
    """Rows of X as points in R^n; a flat array is read as n-vectors."""
    return np.asarray(X, dtype=float).reshape(-1, n)


def residual_batch(e: EnergyCandidate, system: SystemModel, kind: EnergyKind, X: np.ndarray) -> np.ndarray:
    X = as_samples(X, system.n)
    return residual_from_gradients(
        e.gradient_batch(X), system.drift_batch(X), system.output_energy_batch(X), system, kind
    )


def residual_past(e: EnergyCandidate, system: SystemModel, x) -> float:
    return float(residual_batch(e, system, "past", np.asarray(x, dtype=float).reshape(1, -1))[0])


def residual_future(e: EnergyCandidate, system: SystemModel, x) -> float:
    return float(residual_batch(e, system, "future", np.asarray(x, dtype=float).reshape(1, -1))[0])


def sum_of_squares(residuals: np.ndarray) -> float:
    return float(residuals @ residuals)


def objective(e: EnergyCandidate, system: SystemModel, kind: EnergyKind, samples: np.ndarray) -> tuple[float, np.ndarray]:
    """J = sum_k R(x_k)^2 and the per-sample residuals."""
    samples = as_samples(samples, system.n)
    if samples.shape[0] == 0:
        raise ValueError("objective needs at least one sample")
    residuals = residual_batch(e, system, kind, samples)
    return sum_of_squares(residuals), residuals
