"""
Riccati equations, k-way Lyapunov systems and semidefinite Cholesky.

Both energy Riccati equations are brought to the standard form

    At' X + X At - X G X + Qt = 0,    At - G X Hurwitz,

past:   At = -A, G = B B',     Qt = eta C'C   (so A + B B' V2 is anti-stable)
future: At =  A, G = eta B B', Qt = C'C       (so A - eta B B' W2 is stable)

which makes every L_k of the closed-loop operator used by the Taylor
recursions nonsingular.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, gmres

from sosenergy.config import Settings, get_settings
from sosenergy.errors import (
    IterationLimitExceeded,
    NoStabilizingSolution,
    NotPositiveDefinite,
    NotPositiveSemidefinite,
    SingularOperator,
)
from sosenergy.tensor_core import kway_lyapunov_apply, kway_lyapunov_matrix, mode_product

logger = logging.getLogger(__name__)

EnergyKind = Literal["past", "future"]


@dataclass(frozen=True, eq=False)
class AreSolution:
    X: np.ndarray
    residual_norm: float
    kind: EnergyKind
    definite: bool = True


# ============================================================================
# Riccati equations
# ============================================================================

def _as_matrix(M, rows: int | None = None) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if rows is not None and M.shape[0] != rows:
        M = M.T if M.shape[1] == rows else M
    return M


def riccati_residual(At: np.ndarray, G: np.ndarray, Qt: np.ndarray, X: np.ndarray) -> np.ndarray:
    return At.T @ X + X @ At - X @ G @ X + Qt


def _newton_kleinman(At, G, Qt, X, steps: int, tol: float) -> np.ndarray:
    for step in range(steps):
        res = np.linalg.norm(riccati_residual(At, G, Qt, X), "fro")
        if res <= tol * max(1.0, np.linalg.norm(X, "fro")):
            break
        K = At - G @ X
        # (At - G X)' X+ + X+ (At - G X) = -Qt - X G X
        X_next = linalg.solve_continuous_lyapunov(K.T, -Qt - X @ G @ X)
        X = 0.5 * (X_next + X_next.T)
        logger.debug("Newton-Kleinman step %d: residual %.3e", step, res)
    return X


def _solve_standard_are(
    At, B, Qt, g_scale: float, kind: EnergyKind, settings: Settings, require_definite: bool = True
) -> AreSolution:
    n = At.shape[0]
    G = g_scale * (B @ B.T)
    try:
        if g_scale == 0.0 or not np.any(B):
            X = linalg.solve_continuous_lyapunov(At.T, -Qt)
        else:
            X = linalg.solve_continuous_are(At, B, Qt, np.eye(B.shape[1]) / g_scale)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NoStabilizingSolution(f"{kind} Riccati equation: {exc}") from exc
    if not np.all(np.isfinite(X)):
        raise NoStabilizingSolution(f"{kind} Riccati equation produced non-finite entries")
    X = 0.5 * (X + X.T)

    closed = At - G @ X
    if np.max(np.linalg.eigvals(closed).real) >= 0:
        raise NoStabilizingSolution(f"{kind} Riccati solution is not stabilizing")
    X = _newton_kleinman(At, G, Qt, X, settings.riccati.polish_steps, settings.riccati.residual_tol)
    X = 0.5 * (X + X.T)

    eigs = np.linalg.eigvalsh(X)
    floor = settings.riccati.psd_tol * max(1.0, float(np.max(np.abs(eigs))))
    definite = bool(eigs[0] > floor)
    if not definite:
        if require_definite:
            raise NotPositiveDefinite(f"{kind} Riccati solution is not positive definite (eigenvalue {eigs[0]:.3e})")
        if eigs[0] < -floor:
            raise NotPositiveDefinite(f"{kind} Riccati solution is not positive semidefinite (eigenvalue {eigs[0]:.3e})")
        logger.warning(
            "%s Riccati solution is only semidefinite: %d eigenvalues within %.1e of zero",
            kind, int(np.sum(eigs <= floor)), floor,
        )

    residual = float(np.linalg.norm(riccati_residual(At, G, Qt, X), "fro"))
    logger.info("%s Riccati solve: n=%d residual %.3e", kind, n, residual)
    return AreSolution(X=X, residual_norm=residual, kind=kind, definite=definite)


def solve_are_past(
    A, B, C, eta: float, settings: Settings | None = None, require_definite: bool = True
) -> AreSolution:
    """Solve 0 = A'V + VA - eta C'C + V B B' V for the positive definite V2.

    With `require_definite=False` a stabilizing solution that is only
    semidefinite is returned too, flagged by `definite=False`.
    """
    settings = settings or get_settings()
    A = _as_matrix(A)
    B = _as_matrix(B, A.shape[0])
    C = _as_matrix(C)
    return _solve_standard_are(-A, B, eta * (C.T @ C), 1.0, "past", settings, require_definite)


def solve_are_future(
    A, B, C, eta: float, settings: Settings | None = None, require_definite: bool = True
) -> AreSolution:
    """Solve 0 = A'W + WA + C'C - eta W B B' W for the positive definite W2.

    Unobservable modes of (A, C) leave W2 singular; pass
    `require_definite=False` to accept that solution.
    """
    settings = settings or get_settings()
    A = _as_matrix(A)
    B = _as_matrix(B, A.shape[0])
    C = _as_matrix(C)
    return _solve_standard_are(A, B, C.T @ C, float(eta), "future", settings, require_definite)


# ============================================================================
# k-way Lyapunov systems  L_k(M') v = rhs
# ============================================================================
# Above the dense cap the system is solved through the complex Schur form
# M' = Z T Z^H: L_k(M') = Z^{(k)} L_k(T) (Z^H)^{(k)}, and L_k(T) is upper
# triangular, so one sweep of shifted triangular solves over the leading mode
# reduces it to L_{k-1}(T) with a shift.
# ============================================================================

def _shifted_kron_sum_solve(T: np.ndarray, k: int, rhs: np.ndarray, shift: complex, floor: float) -> np.ndarray:
    n = T.shape[0]
    if k == 1:
        shifted = T + shift * np.eye(n)
        if np.min(np.abs(np.diag(shifted))) <= floor:
            raise SingularOperator("k eigenvalues of the operator sum to zero")
        return linalg.solve_triangular(shifted, rhs)
    R = rhs.reshape(n, -1)
    Y = np.zeros_like(R)
    for i in range(n - 1, -1, -1):
        r = R[i] - T[i, i + 1:] @ Y[i + 1:]
        Y[i] = _shifted_kron_sum_solve(T, k - 1, r, shift + T[i, i], floor)
    return Y.reshape(-1)


def _schur_solve(Mt: np.ndarray, k: int, rhs: np.ndarray) -> np.ndarray:
    T, Z = linalg.schur(Mt.astype(complex), output="complex")
    floor = 1e-13 * k * max(1.0, np.max(np.abs(np.diag(T))))
    y = mode_product(Z.conj().T, rhs.astype(complex), k)
    y = _shifted_kron_sum_solve(T, k, y, 0.0, floor)
    return mode_product(Z, y, k).real


def _krylov_refine(Mt, k, rhs, v, settings: Settings) -> np.ndarray:
    size = rhs.size
    operator = LinearOperator((size, size), matvec=lambda u: kway_lyapunov_apply(Mt, k, u), dtype=float)
    correction, info = gmres(
        operator,
        rhs - kway_lyapunov_apply(Mt, k, v),
        rtol=settings.kron.rtol / 10,
        atol=0.0,
        restart=settings.kron.krylov_restart,
        maxiter=settings.kron.krylov_iter_factor * size,
    )
    if info < 0:
        raise SingularOperator("GMRES breakdown on k-way Lyapunov system")
    return v + correction


def solve_kway_system(M, k: int, rhs, settings: Settings | None = None) -> np.ndarray:
    """Solve L_k(M') v = rhs for square M."""
    settings = settings or get_settings()
    M = _as_matrix(M)
    rhs = np.asarray(rhs, dtype=float).ravel()
    n = M.shape[0]
    if M.shape != (n, n) or rhs.size != n**k:
        raise ValueError(f"operator of size {n}^{k} does not match right-hand side of length {rhs.size}")
    Mt = M.T
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)

    if n**k <= settings.kron.dense_cap:
        try:
            v = np.linalg.solve(kway_lyapunov_matrix(Mt, k, settings), rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularOperator(f"L_{k} is singular") from exc
    else:
        v = _schur_solve(Mt, k, rhs)

    def relative_residual(u):
        return np.linalg.norm(kway_lyapunov_apply(Mt, k, u) - rhs) / rhs_norm

    res = relative_residual(v)
    if not np.isfinite(res):
        raise SingularOperator(f"L_{k} solve produced non-finite values")
    if res > settings.kron.rtol:
        logger.warning("k-way solve residual %.3e above tolerance, refining with GMRES", res)
        v = _krylov_refine(Mt, k, rhs, v, settings)
        res = relative_residual(v)
        if res > settings.kron.rtol:
            raise IterationLimitExceeded(f"L_{k} solve did not reach rtol {settings.kron.rtol:.1e}", res)
    return v


# ============================================================================
# Cholesky for positive semidefinite matrices
# ============================================================================

def cholesky_psd(Q, tol: float | None = None) -> np.ndarray:
    """Lower-triangular L with L L' = Q; zero pivots are allowed, negative ones are not.

    Column by column outer-product Cholesky. A pivot within `tol` of zero gets a
    zero column, which requires the rest of that column to vanish as well.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    if Q.shape != (n, n):
        raise ValueError("cholesky_psd needs a square matrix")
    if not np.allclose(Q, Q.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(Q).max())):
        raise ValueError("cholesky_psd needs a symmetric matrix")
    scale = max(1.0, float(np.max(np.abs(np.diag(Q))))) if n else 1.0
    tol = 1e-12 * n * scale if tol is None else tol
    L = np.zeros_like(Q)
    for j in range(n):
        pivot = Q[j, j] - L[j, :j] @ L[j, :j]
        column = Q[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]
        if pivot < -tol:
            raise NotPositiveSemidefinite(f"pivot {pivot:.3e} at position {j}")
        if pivot <= tol:
            if np.max(np.abs(column), initial=0.0) > np.sqrt(tol) * np.sqrt(scale):
                raise NotPositiveSemidefinite(f"zero pivot with nonzero column at position {j}")
            continue
        L[j, j] = np.sqrt(pivot)
        L[j + 1:, j] = column / L[j, j]
    return L
