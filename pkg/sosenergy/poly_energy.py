"""
Taylor approximations of the past and future energy functions.

    E(x) = 1/2 (c2' x^{(2)} + c3' x^{(3)} + ... + cd' x^{(d)})

c2 is the vectorized Riccati solution. Every higher coefficient solves one
k-way Lyapunov system whose right-hand side collects the drift terms of the
two previous degrees and the quadratic input terms of the degrees in between.
With G_k = reshape(c_k, n, n^{k-1}):

past   L_k((A + BB'V2)') v_k = -L_{k-1}(F2') v_{k-1} - L_{k-2}(F3') v_{k-2}
                               - 1/4 sum_{i,j>=3, i+j=k+2} i j vec(G_i' BB' G_j)
future L_k((A - eta BB'W2)') w_k = -L_{k-1}(F2') w_{k-1} - L_{k-2}(F3') w_{k-2}
                               + eta/4 sum_{i,j>=3, i+j=k+2} i j vec(G_i' BB' G_j)

A stabilizing c2 that is only semidefinite (modes hidden from the input or
the output) is accepted with a warning.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from sosenergy.config import Settings, get_settings
from sosenergy.errors import ConfigError
from sosenergy.lin_solvers import EnergyKind, solve_are_future, solve_are_past, solve_kway_system
from sosenergy.systems import SystemModel
from sosenergy.tensor_core import KronCoeff, kron_power_batch, kway_lyapunov_apply, symmetrize_vector

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PolyEnergy:
    """E(x) = 1/2 sum_k c_k' x^{(k)} for k = 2..degree; every c_k symmetric."""
    kind: EnergyKind
    eta: float
    n: int
    coeffs: dict[int, KronCoeff]

    def __post_init__(self):
        if not self.coeffs or min(self.coeffs) < 2:
            raise ValueError("a polynomial energy needs coefficients of degree >= 2 only")
        for k, c in self.coeffs.items():
            if c.k != k or c.n != self.n:
                raise ValueError(f"coefficient stored under degree {k} has n={c.n}, k={c.k}")

    @property
    def degree(self) -> int:
        return max(self.coeffs)

    def truncated(self, degree: int) -> PolyEnergy:
        return PolyEnergy(self.kind, self.eta, self.n, {k: c for k, c in self.coeffs.items() if k <= degree})

    def value(self, x) -> float:
        return float(self.value_batch(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def gradient(self, x) -> np.ndarray:
        return self.gradient_batch(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def value_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        total = np.zeros(X.shape[0])
        for k, c in sorted(self.coeffs.items()):
            total += kron_power_batch(X, k) @ c.c
        return 0.5 * total

    def gradient_batch(self, X: np.ndarray) -> np.ndarray:
        """For symmetric c_k the gradient of 1/2 c_k' x^{(k)} is k/2 G_k x^{(k-1)}."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        grad = np.zeros_like(X)
        for k, c in sorted(self.coeffs.items()):
            grad += 0.5 * k * (kron_power_batch(X, k - 1) @ c.c.reshape(self.n, -1).T)
        return grad

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "eta": self.eta,
            "degree": self.degree,
            "n": self.n,
            "coeffs": {str(k): c.c.tolist() for k, c in sorted(self.coeffs.items())},
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> PolyEnergy:
        try:
            n = int(doc["n"])
            coeffs = {int(k): KronCoeff(n, int(k), np.asarray(v, dtype=float)) for k, v in doc["coeffs"].items()}
            return cls(kind=doc["kind"], eta=float(doc["eta"]), n=n, coeffs=coeffs)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("malformed polynomial energy document", [str(exc)]) from exc


def eval_poly(e: PolyEnergy, x) -> float:
    return e.value(x)


def grad_poly(e: PolyEnergy, x) -> np.ndarray:
    return e.gradient(x)


# ============================================================================
# Taylor recursions
# ============================================================================

def _quadratic_input_terms(coeffs: dict[int, np.ndarray], BBt: np.ndarray, n: int, k: int) -> np.ndarray:
    """sum_{i,j>=3, i+j=k+2} i j vec(G_i' BB' G_j)."""
    total = np.zeros(n**k)
    for i in range(3, k):
        j = k + 2 - i
        if j < 3:
            continue
        Gi = coeffs[i].reshape(n, -1)
        Gj = coeffs[j].reshape(n, -1)
        total += i * j * (Gi.T @ BBt @ Gj).reshape(-1)
    return total


def _taylor(system: SystemModel, degree: int, kind: EnergyKind, settings: Settings) -> PolyEnergy:
    if degree < 2:
        raise ValueError(f"Taylor degree must be at least 2, got {degree}")
    n = system.n
    BBt = system.BBt
    if kind == "past":
        are = solve_are_past(system.A, system.B, system.C, system.eta, settings, require_definite=False)
        closed = system.A + BBt @ are.X
        quad_weight = -0.25
    else:
        are = solve_are_future(system.A, system.B, system.C, system.eta, settings, require_definite=False)
        closed = system.A - system.eta * BBt @ are.X
        quad_weight = 0.25 * system.eta

    coeffs: dict[int, np.ndarray] = {2: are.X.reshape(-1)}
    for k in range(3, degree + 1):
        rhs = np.zeros(n**k)
        if system.F2 is not None:
            rhs -= kway_lyapunov_apply(system.F2.T, k - 1, coeffs[k - 1])
        if system.F3 is not None and k - 2 >= 2:
            rhs -= kway_lyapunov_apply(system.F3.T, k - 2, coeffs[k - 2])
        rhs += quad_weight * _quadratic_input_terms(coeffs, BBt, n, k)
        rhs = symmetrize_vector(rhs, n, k)
        if not np.any(rhs):
            coeffs[k] = rhs
            continue
        coeffs[k] = symmetrize_vector(solve_kway_system(closed, k, rhs, settings), n, k)
        logger.debug("%s Taylor coefficient k=%d: |c_k| = %.3e", kind, k, np.linalg.norm(coeffs[k]))

    logger.info("%s Taylor energy of degree %d for n=%d", kind, degree, n)
    return PolyEnergy(
        kind=kind,
        eta=system.eta,
        n=n,
        coeffs={k: KronCoeff(n, k, c) for k, c in coeffs.items()},
    )


def taylor_past(system: SystemModel, degree: int, settings: Settings | None = None) -> PolyEnergy:
    return _taylor(system, degree, "past", settings or get_settings())


def taylor_future(system: SystemModel, degree: int, settings: Settings | None = None) -> PolyEnergy:
    return _taylor(system, degree, "future", settings or get_settings())


def taylor_energy(system: SystemModel, degree: int, kind: EnergyKind, settings: Settings | None = None) -> PolyEnergy:
    return _taylor(system, degree, kind, settings or get_settings())
