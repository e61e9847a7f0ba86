"""
Kronecker powers, k-way Lyapunov operators and monomial bases.

Kronecker conventions follow numpy: ``kron_power(x, k)`` equals
``np.kron(x, np.kron(x, ...))`` and a length n^k coefficient vector is read as
a C-ordered tensor of shape (n,) * k. For symmetric coefficient tensors the
C-order and column-major flattenings coincide, so exported vectors are
column-major as well.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cache, reduce

import numpy as np

from sosenergy.config import Settings, get_settings


# ============================================================================
# Kronecker powers
# ============================================================================

def kron_power(x: np.ndarray, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError(f"Kronecker power needs k >= 1, got {k}")
    x = np.asarray(x, dtype=float).ravel()
    return reduce(np.kron, [x] * k)


def kron_power_batch(X: np.ndarray, k: int) -> np.ndarray:
    """Row-wise Kronecker powers of an (N, n) batch; k = 0 gives a column of ones."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.ones((X.shape[0], 1))
    for _ in range(k):
        out = (out[:, :, None] * X[:, None, :]).reshape(X.shape[0], -1)
    return out


def kron_power_jacobian_batch(X: np.ndarray, k: int) -> np.ndarray:
    """d(x^{(k)})/dx for every row of X, shape (N, n^k, n)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, n = X.shape
    eye = np.eye(n)
    D = np.broadcast_to(eye, (N, n, n)).copy()
    P = X.copy()
    for _ in range(k - 1):
        # d(a (x) x) = da (x) x + a (x) I
        D = (D[:, :, None, :] * X[:, None, :, None] + P[:, :, None, None] * eye[None, None, :, :]).reshape(N, -1, n)
        P = (P[:, :, None] * X[:, None, :]).reshape(N, -1)
    return D


# ============================================================================
# k-way Lyapunov operator  L_k(M) = sum_i I (x) .. (x) M (x) .. (x) I
# ============================================================================

def kway_lyapunov_apply(M: np.ndarray, k: int, v: np.ndarray) -> np.ndarray:
    """Apply L_k(M) for M of shape (q, n) to v of length n^k without assembling it."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    v = np.asarray(v)
    q, n = M.shape
    if k < 1:
        raise ValueError(f"k-way Lyapunov operator needs k >= 1, got {k}")
    if v.size != n**k:
        raise ValueError(f"vector of length {v.size} does not match n^k = {n}^{k}")
    T = v.reshape((n,) * k)
    out = np.zeros(q * n ** (k - 1), dtype=np.result_type(M, v))
    for axis in range(k):
        out += np.moveaxis(np.tensordot(M, T, axes=([1], [axis])), 0, axis).reshape(-1)
    return out


def kway_lyapunov_matrix(M: np.ndarray, k: int, settings: Settings | None = None) -> np.ndarray:
    """Assemble L_k(M); refused above the configured dense cap."""
    settings = settings or get_settings()
    M = np.atleast_2d(np.asarray(M, dtype=float))
    q, n = M.shape
    if n**k > settings.kron.dense_cap:
        raise ValueError(f"n^k = {n**k} exceeds the dense cap {settings.kron.dense_cap}; use kway_lyapunov_apply")
    eye = np.eye(n)
    total = np.zeros((q * n ** (k - 1), n**k))
    for axis in range(k):
        factors = [eye] * axis + [M] + [eye] * (k - 1 - axis)
        total += reduce(np.kron, factors)
    return total


def mode_product(U: np.ndarray, v: np.ndarray, k: int) -> np.ndarray:
    """Apply U (x) U (x) ... (x) U (k copies) to v of length n^k."""
    n = U.shape[1]
    T = v.reshape((n,) * k)
    for axis in range(k):
        T = np.moveaxis(np.tensordot(U, T, axes=([1], [axis])), 0, axis)
    return T.reshape(-1)


# ============================================================================
# Coefficient vectors and symmetrization
# ============================================================================

@dataclass(frozen=True, eq=False)
class KronCoeff:
    """Coefficient c of x^{(k)}; the scalar it defines is c . kron_power(x, k)."""
    n: int
    k: int
    c: np.ndarray

    def __post_init__(self):
        c = np.array(self.c, dtype=float).ravel()
        if c.size != self.n**self.k:
            raise ValueError(f"coefficient of length {c.size} is not n^k = {self.n}^{self.k}")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    def evaluate(self, x: np.ndarray) -> float:
        return float(self.c @ kron_power(x, self.k))


@cache
def _monomial_classes(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Class id of every Kronecker position and the class sizes.

    Class ids follow the graded-lex order of the degree-k basis block, because
    sorted multi-indices encoded in base n increase lexicographically.
    """
    idx = np.indices((n,) * k).reshape(k, -1).T
    keys = np.sort(idx, axis=1) @ (n ** np.arange(k - 1, -1, -1))
    _, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    inverse.setflags(write=False)
    counts.setflags(write=False)
    return inverse, counts


def symmetrize_vector(c: np.ndarray, n: int, k: int) -> np.ndarray:
    inverse, counts = _monomial_classes(n, k)
    means = np.bincount(inverse, weights=np.asarray(c, dtype=float).ravel(), minlength=counts.size) / counts
    return means[inverse]


def symmetrize(c: KronCoeff) -> KronCoeff:
    return KronCoeff(c.n, c.k, symmetrize_vector(c.c, c.n, c.k))


# ============================================================================
# Monomial bases
# ============================================================================

@cache
def _degree_count(i: int, n: int) -> int:
    if i == 1:
        return n
    return sum(_degree_count(i - 1, j) for j in range(1, n + 1))


def monomial_count(n: int, d: int) -> int:
    """Number of monomials of degree 1..d in n variables."""
    if n < 1 or d < 1:
        raise ValueError("monomial_count needs n >= 1 and d >= 1")
    return sum(_degree_count(i, n) for i in range(1, d + 1))


@dataclass(frozen=True, eq=False)
class MonomialBasis:
    """Monomials of degree 1..r in graded-lex order (x1 > x2 > ... within a degree)."""
    n: int
    r: int
    exponents: np.ndarray
    block_sizes: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(self.exponents.shape[0])

    def block_slice(self, degree: int) -> slice:
        if not 1 <= degree <= self.r:
            raise ValueError(f"degree {degree} outside basis range 1..{self.r}")
        start = sum(self.block_sizes[: degree - 1])
        return slice(start, start + self.block_sizes[degree - 1])

    def columns(self, structure: tuple[int, ...]) -> int:
        return sum(self.block_sizes[b - 1] for b in structure)


@cache
def build_basis(n: int, r: int) -> MonomialBasis:
    rows = []
    sizes = []
    for degree in range(1, r + 1):
        block = list(itertools.combinations_with_replacement(range(n), degree))
        sizes.append(len(block))
        for combo in block:
            rows.append(np.bincount(combo, minlength=n))
    exponents = np.array(rows, dtype=int)
    exponents.setflags(write=False)
    return MonomialBasis(n=n, r=r, exponents=exponents, block_sizes=tuple(sizes))


def eval_basis(basis: MonomialBasis, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z, Jz = eval_basis_batch(basis, np.asarray(x, dtype=float).reshape(1, -1))
    return z[0], Jz[0]


def eval_basis_batch(basis: MonomialBasis, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Monomials z (N, nu) and their Jacobians (N, nu, n) at every row of X."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    alpha = basis.exponents
    # powers[N, n, p] = x^p for p up to r
    powers = X[:, :, None] ** np.arange(basis.r + 1)[None, None, :]
    cols = np.arange(basis.n)
    factors = powers[:, cols[None, :], alpha]  # (N, nu, n)
    z = factors.prod(axis=2)
    Jz = np.empty((X.shape[0], basis.size, basis.n))
    for j in range(basis.n):
        lowered = np.maximum(alpha[:, j] - 1, 0)
        others = factors.copy()
        others[:, :, j] = powers[:, j, :][:, lowered]
        Jz[:, :, j] = alpha[None, :, j] * others.prod(axis=2)
    return z, Jz


# ============================================================================
# Kronecker <-> monomial coefficients
# ============================================================================

def kron_to_monomial(c: KronCoeff, basis: MonomialBasis) -> np.ndarray:
    """Monomial coefficients (length nu, zero outside the degree-k block)."""
    if c.n != basis.n:
        raise ValueError(f"coefficient dimension {c.n} differs from basis dimension {basis.n}")
    block = basis.block_slice(c.k)
    inverse, counts = _monomial_classes(c.n, c.k)
    out = np.zeros(basis.size)
    out[block] = np.bincount(inverse, weights=c.c, minlength=counts.size)
    return out


def monomial_to_kron(coeffs: np.ndarray, basis: MonomialBasis, k: int) -> KronCoeff:
    """Symmetric Kronecker coefficient reproducing the degree-k part of `coeffs`."""
    block = basis.block_slice(k)
    inverse, counts = _monomial_classes(basis.n, k)
    values = np.asarray(coeffs, dtype=float)[block] / counts
    return KronCoeff(basis.n, k, values[inverse])
