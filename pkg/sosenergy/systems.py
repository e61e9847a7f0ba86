"""
Benchmark systems and the analytic scalar oracle.

A SystemModel is the control-affine polynomial system

    x' = A x + F2 x^{(2)} + F3 x^{(3)} + B u,    y = C x,

together with the energy parameter eta. Drift tensors are stored with every
row symmetrized, so F2 x^{(2)} and the Kronecker recursions only ever see the
permutation-invariant part.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy import integrate, sparse

from sosenergy.errors import AssemblyError, ConfigError, UnsupportedDrift
from sosenergy.tensor_core import kron_power_batch, symmetrize_vector

logger = logging.getLogger(__name__)

DRIFT_KEYS = ("F2", "F3")


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _symmetrize_rows(F: np.ndarray, n: int, k: int) -> np.ndarray:
    return np.vstack([symmetrize_vector(row, n, k) for row in F]) if F.size else F


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Polynomial control-affine system with quadratic and cubic drift."""
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    eta: float
    F2: np.ndarray | None = None
    F3: np.ndarray | None = None
    name: str = "custom"
    info: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B = np.asarray(self.B, dtype=float).reshape(n, -1)
        C = np.asarray(self.C, dtype=float)
        C = C.reshape(-1, n) if C.size else np.zeros((0, n))
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "B", _readonly(B))
        object.__setattr__(self, "C", _readonly(C))
        object.__setattr__(self, "eta", float(self.eta))
        for k, key in ((2, "F2"), (3, "F3")):
            F = getattr(self, key)
            if F is None:
                continue
            F = np.asarray(F, dtype=float).reshape(n, -1)
            if F.shape[1] != n**k:
                raise ValueError(f"{key} must have shape ({n}, {n**k}), got {F.shape}")
            object.__setattr__(self, key, _readonly(_symmetrize_rows(F, n, k)) if np.any(F) else None)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def BBt(self) -> np.ndarray:
        return self.B @ self.B.T

    @property
    def drift_degree(self) -> int:
        return 3 if self.F3 is not None else 2 if self.F2 is not None else 1

    def drift(self, x: np.ndarray) -> np.ndarray:
        return self.drift_batch(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def drift_batch(self, X: np.ndarray) -> np.ndarray:
        """Uncontrolled vector field f(x) at every row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = X @ self.A.T
        if self.F2 is not None:
            out = out + kron_power_batch(X, 2) @ self.F2.T
        if self.F3 is not None:
            out = out + kron_power_batch(X, 3) @ self.F3.T
        return out

    def output_energy_batch(self, X: np.ndarray) -> np.ndarray:
        """|C x|^2 per row."""
        Y = np.atleast_2d(X) @ self.C.T
        return np.einsum("ij,ij->i", Y, Y)

    # ------------------------------------------------------------------------
    # JSON
    # ------------------------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "name": self.name,
            "n": self.n,
            "m": self.m,
            "p": self.p,
            "eta": self.eta,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
        }
        for key in DRIFT_KEYS:
            F = getattr(self, key)
            if F is not None:
                coo = sparse.coo_array(F)
                doc[key] = {
                    "shape": list(F.shape),
                    "entries": [[int(i), int(j), float(v)] for i, j, v in zip(coo.row, coo.col, coo.data)],
                }
        return doc

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> SystemModel:
        extra = [key for key in doc if key.startswith("F") and key not in DRIFT_KEYS]
        if extra:
            raise UnsupportedDrift(f"drift terms {extra} are above cubic degree")
        missing = [key for key in ("A", "B", "C", "eta") if key not in doc]
        if missing:
            raise ConfigError("system document is incomplete", [f"{key}: field required" for key in missing])
        drift = {}
        for key in DRIFT_KEYS:
            if key in doc:
                spec = doc[key]
                rows, cols, vals = zip(*spec["entries"]) if spec["entries"] else ((), (), ())
                drift[key] = sparse.coo_array((vals, (rows, cols)), shape=tuple(spec["shape"])).toarray()
        system = cls(A=doc["A"], B=doc["B"], C=doc["C"], eta=doc["eta"], name=doc.get("name", "custom"), **drift)
        for key in ("n", "m", "p"):
            if key in doc and doc[key] != getattr(system, key):
                raise ConfigError("system document is inconsistent", [f"{key}: declared {doc[key]}, matrices give {getattr(system, key)}"])
        return system

    @classmethod
    def from_json(cls, source: str | Path) -> SystemModel:
        text = str(source)
        if not text.lstrip().startswith("{"):
            text = Path(source).read_text()
        return cls.from_dict(json.loads(text))


# ============================================================================
# Scalar example
# ============================================================================

def make_scalar(eta: float = 0.5) -> SystemModel:
    """x' = -2x + x^2 + 2u, y = 2x."""
    return SystemModel(A=[[-2.0]], F2=[[1.0]], B=[[2.0]], C=[[2.0]], eta=eta, name="scalar")


class ScalarOracle:
    """Closed-form past energy of the scalar example, integrated by quadrature.

    The past HJB equation reduces to 2 E'^2 + q E' - 2 eta s^2 = 0 with
    q = s^2 - 2s. Its roots have product -eta s^2, so exactly one carries the
    sign of s; that root keeps E nonnegative on both half-lines.
    """

    def __init__(self, eta: float = 0.5, tol: float = 1e-10):
        if eta < 0:
            raise ValueError("the scalar oracle needs eta >= 0")
        self.eta = float(eta)
        self.tol = tol

    def derivative(self, s: float) -> float:
        if s == 0.0:
            return 0.0
        q = s * s - 2.0 * s
        root = np.sqrt(q * q + 16.0 * self.eta * s * s)
        sign = np.sign(s)
        if sign * -q >= 0:
            return float((-q + sign * root) / 4.0)
        other = (-q - sign * root) / 4.0
        return float(-self.eta * s * s / other)

    def value(self, x) -> float:
        x = float(np.asarray(x, dtype=float).ravel()[0])
        if x == 0.0:
            return 0.0
        result, _ = integrate.quad(self.derivative, 0.0, x, epsabs=self.tol * 1e-2, epsrel=self.tol, limit=200)
        return float(result)

    def gradient(self, x) -> np.ndarray:
        return np.array([self.derivative(float(np.asarray(x, dtype=float).ravel()[0]))])

    def gradient_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([[self.derivative(float(s))] for s in X[:, 0]])


def analytic_scalar_past(x: float, eta: float = 0.5) -> float:
    return ScalarOracle(eta).value(x)


# ============================================================================
# Ring of van der Pol oscillators
# ============================================================================
# State (y1, y1', y2, y2', ...); the ring closes periodically, so oscillator i
# couples to i-1 and i+1 modulo g.
# ============================================================================

def make_vdp_ring(g: int = 3, b: tuple[float, ...] = (1.0, 1.0, 0.0), eta: float = 1.0) -> SystemModel:
    if g < 2:
        raise ValueError("a ring needs at least two oscillators")
    if len(b) != g:
        raise ValueError(f"need one actuator gain per oscillator, got {len(b)} for g={g}")
    n = 2 * g
    A = np.zeros((n, n))
    F3 = np.zeros((n, n**3))
    for i in range(g):
        pos, vel = 2 * i, 2 * i + 1
        A[pos, vel] = 1.0
        A[vel, vel] = 1.0
        A[vel, pos] = -3.0
        A[vel, 2 * ((i - 1) % g)] += 1.0
        A[vel, 2 * ((i + 1) % g)] += 1.0
        # -y_i^2 y_i'
        F3[vel, (pos * n + pos) * n + vel] = -1.0
    actuated = [i for i, gain in enumerate(b) if gain != 0]
    B = np.zeros((n, len(actuated)))
    for col, i in enumerate(actuated):
        B[2 * i + 1, col] = b[i]
    C = np.zeros((g, n))
    C[np.arange(g), 2 * np.arange(g)] = 1.0
    return SystemModel(A=A, F3=F3, B=B, C=C, eta=eta, name="vdp_ring", info={"g": g, "b": list(b)})


# ============================================================================
# Burgers equation, periodic linear finite elements
# ============================================================================

def _periodic_tridiagonal(n: int, diag: float, off: float) -> np.ndarray:
    M = diag * np.eye(n)
    idx = np.arange(n)
    M[idx, (idx + 1) % n] += off
    M[idx, (idx - 1) % n] += off
    return M


def _characteristic_loads(n_elem: int, parts: int) -> np.ndarray:
    """Integrals of every hat function against the characteristic function of each part."""
    if n_elem % parts:
        raise AssemblyError(f"{n_elem} elements cannot be split evenly into {parts} characteristic intervals")
    h = 1.0 / n_elem
    loads = np.zeros((n_elem, parts))
    per_part = n_elem // parts
    for e in range(n_elem):
        part = e // per_part
        loads[e, part] += h / 2
        loads[(e + 1) % n_elem, part] += h / 2
    return loads


def make_burgers(n_elem: int = 12, epsilon: float = 5e-3, m: int = 6, p: int = 6, eta: float = 1.0) -> SystemModel:
    """z_t = -z z_x + epsilon z_xx + sum_i chi_i u_i on (0, 1), periodic."""
    if n_elem < 3:
        raise AssemblyError("periodic linear elements need at least three nodes")
    n = n_elem
    h = 1.0 / n
    mass = _periodic_tridiagonal(n, 4.0 * h / 6.0, h / 6.0)
    stiffness = _periodic_tridiagonal(n, 2.0 / h, -1.0 / h)

    # T[i, j, k] = int phi_i phi_j phi_k'
    local_mass = np.array([[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]])
    slope = np.array([-1.0, 1.0])
    T = np.zeros((n, n, n))
    for e in range(n):
        nodes = (e, (e + 1) % n)
        for a in range(2):
            for b_ in range(2):
                for c in range(2):
                    T[nodes[a], nodes[b_], nodes[c]] += local_mass[a, b_] * slope[c]
    T = 0.5 * (T + T.transpose(0, 2, 1))

    B_hat = _characteristic_loads(n_elem, m)
    C = _characteristic_loads(n_elem, p).T
    A = -epsilon * np.linalg.solve(mass, stiffness)
    N = -np.linalg.solve(mass, T.reshape(n, n * n))
    B = np.linalg.solve(mass, B_hat)
    logger.debug("assembled Burgers model: n=%d m=%d p=%d epsilon=%.1e", n, m, p, epsilon)
    return SystemModel(
        A=A, F2=N, B=B, C=C, eta=eta, name="burgers",
        info={"n_elem": n_elem, "epsilon": epsilon, "mass": mass.tolist()},
    )


BUILTIN_SYSTEMS = {
    "scalar": make_scalar,
    "vdp_ring": make_vdp_ring,
    "burgers": make_burgers,
}
