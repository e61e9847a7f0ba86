"""
Sum-of-squares energies.

Two representations, both nonnegative by construction:

  SosEnergy          E(x) = z(x)' L L' z(x) = |L' z(x)|^2 over a graded-lex
                     monomial basis z without a constant term
  SquaredPolyEnergy  E(x) = |s(x)|^2 with s(x) = sum_k vt_k' x^{(k)} in R^n

The squared form comes from completing the square of a Taylor energy, either
purely by coefficient matching or with its top factor fitted by collocation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from scipy import linalg

from sosenergy.config import Settings, get_settings
from sosenergy.errors import ConfigError, NotPositiveDefinite
from sosenergy.hjb_residual import as_samples, hjb_weights, residual_from_gradients, sum_of_squares
from sosenergy.lin_solvers import EnergyKind, cholesky_psd
from sosenergy.optimizer import OptimizerReport, levenberg_marquardt
from sosenergy.poly_energy import PolyEnergy
from sosenergy.systems import SystemModel
from sosenergy.tensor_core import (
    KronCoeff,
    MonomialBasis,
    build_basis,
    eval_basis_batch,
    kron_power_batch,
    kron_power_jacobian_batch,
    symmetrize_vector,
)

logger = logging.getLogger(__name__)

BASIS_ORDER = "grlex"


# ============================================================================
# Factor form  E(x) = |L' z(x)|^2
# ============================================================================

def structure_columns(basis: MonomialBasis, structure: tuple[int, ...]) -> int:
    if not structure or tuple(structure) != tuple(range(1, len(structure) + 1)) or len(structure) > basis.r:
        raise ValueError(f"structure {structure} is not a prefix of the blocks 1..{basis.r}")
    return basis.columns(tuple(structure))


def trapezoid_mask(rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the lower-trapezoidal entries (i >= j)."""
    return np.nonzero(np.tril(np.ones((rows, cols), dtype=bool)))


def gradient_from_basis(L: np.ndarray, Z: np.ndarray, JZ: np.ndarray) -> np.ndarray:
    """2 Jz' L L' z for every sample, given monomials Z (N, nu) and Jacobians JZ (N, nu, n)."""
    W = Z @ L
    return 2.0 * np.einsum("svi,sv->si", JZ, W @ L.T)


@dataclass(frozen=True, eq=False)
class SosEnergy:
    basis: MonomialBasis
    L: np.ndarray
    structure: tuple[int, ...]

    def __post_init__(self):
        L = np.array(self.L, dtype=float)
        cols = structure_columns(self.basis, self.structure)
        if L.shape != (self.basis.size, cols):
            raise ValueError(f"factor of shape {L.shape} does not match structure {self.structure}: expected ({self.basis.size}, {cols})")
        if np.any(np.triu(L, 1)):
            raise ValueError("factor must be lower trapezoidal")
        L.setflags(write=False)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "structure", tuple(self.structure))

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def degree(self) -> int:
        return 2 * self.basis.r

    def value(self, x) -> float:
        return float(self.value_batch(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def gradient(self, x) -> np.ndarray:
        return self.gradient_batch(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def value_batch(self, X: np.ndarray) -> np.ndarray:
        Z, _ = eval_basis_batch(self.basis, as_samples(X, self.n))
        W = Z @ self.L
        return np.einsum("ij,ij->i", W, W)

    def gradient_batch(self, X: np.ndarray) -> np.ndarray:
        Z, JZ = eval_basis_batch(self.basis, as_samples(X, self.n))
        return gradient_from_basis(self.L, Z, JZ)

    def gram(self) -> np.ndarray:
        return self.L @ self.L.T

    def explicit_value(self, x) -> float:
        Z, _ = eval_basis_batch(self.basis, as_samples(x, self.n))
        return float(Z[0] @ self.gram() @ Z[0])

    def to_dict(self) -> dict[str, Any]:
        rows, cols = trapezoid_mask(*self.L.shape)
        return {
            "n": self.n,
            "r": self.basis.r,
            "structure": list(self.structure),
            "L": self.L[rows, cols].tolist(),
            "basis_order": BASIS_ORDER,
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> SosEnergy:
        try:
            if doc.get("basis_order", BASIS_ORDER) != BASIS_ORDER:
                raise ValueError(f"unsupported basis order {doc['basis_order']!r}")
            basis = build_basis(int(doc["n"]), int(doc["r"]))
            structure = tuple(int(b) for b in doc["structure"])
            L = np.zeros((basis.size, structure_columns(basis, structure)))
            rows, cols = trapezoid_mask(*L.shape)
            L[rows, cols] = np.asarray(doc["L"], dtype=float)
            return cls(basis=basis, L=L, structure=structure)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("malformed SOS energy document", [str(exc)]) from exc


def sos_from_factor(basis: MonomialBasis, L: np.ndarray, structure: tuple[int, ...] | None = None) -> SosEnergy:
    if structure is None:
        structure = tuple(range(1, basis.r + 1))
    return SosEnergy(basis=basis, L=L, structure=tuple(structure))


def sos_from_gram(basis: MonomialBasis, Q: np.ndarray) -> SosEnergy:
    """SOS energy with Gram matrix Q, factored by semidefinite Cholesky."""
    return sos_from_factor(basis, cholesky_psd(Q))


def eval_sos(e: SosEnergy, x) -> float:
    return e.value(x)


def grad_sos(e: SosEnergy, x) -> np.ndarray:
    return e.gradient(x)


# ============================================================================
# Squared form  E(x) = |sum_k vt_k' x^{(k)}|^2
# ============================================================================

@dataclass(frozen=True, eq=False)
class SquaredPolyEnergy:
    """factors[k-1] is vt_k with shape (n^k, n)."""
    factors: tuple[np.ndarray, ...]
    kind: EnergyKind
    eta: float

    def __post_init__(self):
        if not self.factors:
            raise ValueError("a squared energy needs at least one factor")
        n = np.asarray(self.factors[0]).shape[1]
        fixed = []
        for k, f in enumerate(self.factors, start=1):
            f = np.array(f, dtype=float)
            if f.shape != (n**k, n):
                raise ValueError(f"factor {k} has shape {f.shape}, expected ({n**k}, {n})")
            f.setflags(write=False)
            fixed.append(f)
        object.__setattr__(self, "factors", tuple(fixed))

    @property
    def n(self) -> int:
        return self.factors[0].shape[1]

    def inner_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """s(x) (N, n) and its Jacobian (N, n, n) at every row of X."""
        S = np.zeros_like(X)
        Js = np.zeros((X.shape[0], self.n, self.n))
        for k, f in enumerate(self.factors, start=1):
            S += kron_power_batch(X, k) @ f
            Js += np.einsum("aj,sai->sji", f, kron_power_jacobian_batch(X, k))
        return S, Js

    def value(self, x) -> float:
        return float(self.value_batch(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def gradient(self, x) -> np.ndarray:
        return self.gradient_batch(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def value_batch(self, X: np.ndarray) -> np.ndarray:
        X = as_samples(X, self.n)
        S = np.zeros_like(X)
        for k, f in enumerate(self.factors, start=1):
            S += kron_power_batch(X, k) @ f
        return np.einsum("ij,ij->i", S, S)

    def gradient_batch(self, X: np.ndarray) -> np.ndarray:
        S, Js = self.inner_batch(as_samples(X, self.n))
        return 2.0 * np.einsum("sji,sj->si", Js, S)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "eta": self.eta,
            "n": self.n,
            "factors": [f.tolist() for f in self.factors],
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> SquaredPolyEnergy:
        try:
            return cls(factors=tuple(np.asarray(f, dtype=float) for f in doc["factors"]), kind=doc["kind"], eta=float(doc["eta"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("malformed squared energy document", [str(exc)]) from exc


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a @ b.T).reshape(-1)


def complete_sos(p: PolyEnergy) -> SquaredPolyEnergy:
    """Match |sum_k vt_k' x^{(k)}|^2 to p degree by degree.

    vt_1 vt_1' = V2 / 2 by Cholesky; then for k = 3..d
    2 vt_1 vt_{k-1}' = V_k / 2 - (cross terms of the known factors),
    solved for vt_{k-1} by forward substitution against vt_1.
    """
    n = p.n
    half_v2 = 0.5 * p.coeffs[2].c.reshape(n, n)
    try:
        first = np.linalg.cholesky(0.5 * (half_v2 + half_v2.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("the quadratic Taylor coefficient is not positive definite") from exc

    factors = [first]
    for k in range(3, p.degree + 1):
        target = 0.5 * p.coeffs[k].c if k in p.coeffs else np.zeros(n**k)
        for i in range(2, k - 1):
            target = target - _cross(factors[i - 1], factors[k - i - 1])
        target = symmetrize_vector(target, n, k)
        solved = linalg.solve_triangular(first, 0.5 * target.reshape(n, -1), lower=True)
        factors.append(solved.T)
    logger.debug("completed the square of a degree-%d Taylor energy with %d factors", p.degree, len(factors))
    return SquaredPolyEnergy(factors=tuple(factors), kind=p.kind, eta=p.eta)


def expand_squared(sq: SquaredPolyEnergy) -> PolyEnergy:
    """Taylor form of |s(x)|^2: c_m = 2 sym(sum_{i+j=m} vec(vt_i vt_j'))."""
    n = sq.n
    d = len(sq.factors)
    coeffs = {}
    for m in range(2, 2 * d + 1):
        total = np.zeros(n**m)
        for i in range(max(1, m - d), min(d, m - 1) + 1):
            total += _cross(sq.factors[i - 1], sq.factors[m - i - 1])
        coeffs[m] = KronCoeff(n, m, 2.0 * symmetrize_vector(total, n, m))
    return PolyEnergy(kind=sq.kind, eta=sq.eta, n=n, coeffs=coeffs)


# ============================================================================
# Completing the square with collocation
# ============================================================================

def complete_sos_collocation(
    p: PolyEnergy,
    system: SystemModel,
    samples: np.ndarray,
    kind: EnergyKind | None = None,
    settings: Settings | None = None,
) -> tuple[SquaredPolyEnergy, OptimizerReport]:
    """Keep vt_1..vt_{d-1} matched to a degree 2d-1 Taylor energy and fit vt_d by collocation."""
    settings = settings or get_settings()
    kind = kind or p.kind
    if p.degree < 3 or p.degree % 2 == 0:
        raise ValueError(f"completing the square with collocation needs an odd Taylor degree >= 3, got {p.degree}")
    d = (p.degree + 1) // 2
    n = p.n
    known = complete_sos(p).factors[: d - 1]
    X = as_samples(samples, n)

    S0 = np.zeros_like(X)
    J0 = np.zeros((X.shape[0], n, n))
    for k, f in enumerate(known, start=1):
        S0 += kron_power_batch(X, k) @ f
        J0 += np.einsum("aj,sai->sji", f, kron_power_jacobian_batch(X, k))
    Xd = kron_power_batch(X, d)
    Dd = kron_power_jacobian_batch(X, d)
    drift = system.drift_batch(X)
    output = system.output_energy_batch(X)
    q, _ = hjb_weights(kind, system.eta)
    BBt = system.BBt

    def inner(theta):
        top = theta.reshape(n**d, n)
        return S0 + Xd @ top, J0 + np.einsum("aj,sai->sji", top, Dd)

    def residuals(theta):
        S, Js = inner(theta)
        G = 2.0 * np.einsum("sji,sj->si", Js, S)
        return residual_from_gradients(G, drift, output, system, kind)

    def jacobian(theta):
        S, Js = inner(theta)
        G = 2.0 * np.einsum("sji,sj->si", Js, S)
        lin = drift + 2.0 * q * (G @ BBt)
        a = np.einsum("sai,si->sa", Dd, lin)
        b = np.einsum("sji,si->sj", Js, lin)
        return 2.0 * (a[:, :, None] * S[:, None, :] + Xd[:, :, None] * b[:, None, :]).reshape(X.shape[0], -1)

    theta, report = levenberg_marquardt(residuals, jacobian, np.zeros(n**d * n), settings.lm)
    energy = SquaredPolyEnergy(factors=(*known, theta.reshape(n**d, n)), kind=kind, eta=system.eta)
    logger.info("fitted top factor of degree %d: J = %.3e", d, sum_of_squares(residuals(theta)))
    return energy, report
