"""
Least-squares collocation of SOS energies over growing windows.

A window is the hypercube [-a, a]^n with s random samples. On each window
the lower-trapezoidal factor L of E(x) = |L' z(x)|^2 is fitted by
Levenberg-Marquardt on the HJB residuals, warm-started from the previous
window:

    Riccati -> L_0 on Omega_0 -> L_1 on Omega_1 -> ... -> L_r on Omega_r

Windows where most samples leave the unit cube drop the top diagonal block
of L, because there the highest-degree residual terms dominate.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from sosenergy.config import Settings, format_validation_error, get_settings
from sosenergy.errors import ConfigError, NotPositiveDefinite, NumericalError, WindowFailure
from sosenergy.hjb_residual import as_samples, hjb_weights, residual_from_gradients, sum_of_squares
from sosenergy.lin_solvers import EnergyKind, solve_are_future, solve_are_past
from sosenergy.optimizer import OptimizerReport, levenberg_marquardt
from sosenergy.sos_energy import SosEnergy, gradient_from_basis, structure_columns, trapezoid_mask
from sosenergy.systems import SystemModel
from sosenergy.tensor_core import MonomialBasis, build_basis, eval_basis_batch

logger = logging.getLogger(__name__)


# ============================================================================
# Windows
# ============================================================================

class Window(BaseModel):
    """Sampling region [-half_width, half_width]^n."""
    half_width: float = Field(gt=0, description="Half-width a of the hypercube")
    samples: int | None = Field(default=None, ge=1, description="Sample count; None picks a default from the problem size")


def parse_schedule(raw: Sequence[Any]) -> list[Window]:
    """Validate a schedule given as JSON-like data: [{"half_width": a, "samples": s}, ...]."""
    if not raw:
        raise ConfigError("window schedule is empty")
    windows = []
    lines = []
    for i, item in enumerate(raw):
        try:
            windows.append(item if isinstance(item, Window) else Window.model_validate(item))
        except ValidationError as exc:
            lines += [f"schedule[{i}].{line}" for line in format_validation_error(exc)]
    if lines:
        raise ConfigError("invalid window schedule", lines)
    validate_schedule(windows)
    return windows


def validate_schedule(windows: Sequence[Window]) -> None:
    lines = []
    for i in range(1, len(windows)):
        prev, cur = windows[i - 1], windows[i]
        if cur.half_width < prev.half_width:
            lines.append(f"schedule[{i}].half_width: {cur.half_width} is smaller than the previous window {prev.half_width}")
        if prev.samples is not None and cur.samples is not None and cur.samples < prev.samples:
            lines.append(f"schedule[{i}].samples: {cur.samples} is fewer than the previous window {prev.samples}")
    if not windows:
        lines.append("schedule: at least one window is required")
    if lines:
        raise ConfigError("window schedule is not nested", lines)


def doubling_schedule(start: float, stop: float) -> list[Window]:
    widths = [start]
    while widths[-1] * 2 <= stop * (1 + 1e-12):
        widths.append(widths[-1] * 2)
    return [Window(half_width=a) for a in widths]


def sample_window(window: Window, n: int, seed: int | np.random.SeedSequence | np.random.Generator, count: int | None = None) -> np.ndarray:
    """Uniform i.i.d. samples on the window, shape (s, n)."""
    count = count or window.samples
    if count is None or count < 1:
        raise ValueError("sample_window needs a positive sample count")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a = window.half_width
    return rng.uniform(-a, a, size=(count, n))


def default_sample_count(variables: int, settings: Settings | None = None) -> int:
    settings = settings or get_settings()
    return max(settings.collocation.min_samples, settings.collocation.samples_per_variable * variables)


def variable_count(basis: MonomialBasis, structure: tuple[int, ...]) -> int:
    return int(trapezoid_mask(basis.size, structure_columns(basis, structure))[0].size)


# ============================================================================
# Structure selection
# ============================================================================

def full_structure(basis: MonomialBasis) -> tuple[int, ...]:
    return tuple(range(1, basis.r + 1))


def outside_fraction(samples: np.ndarray) -> float:
    samples = np.atleast_2d(samples)
    return float(np.mean(np.max(np.abs(samples), axis=1) > 1.0))


def select_structure(basis: MonomialBasis, samples: np.ndarray, settings: Settings | None = None) -> tuple[int, ...]:
    settings = settings or get_settings()
    full = full_structure(basis)
    if basis.r >= 2 and outside_fraction(as_samples(samples, basis.n)) > settings.collocation.outside_fraction:
        return full[:-1]
    return full


# ============================================================================
# One collocation problem
# ============================================================================

@dataclass(eq=False)
class CollocationProblem:
    """HJB residuals of |L' z(x)|^2 at fixed samples, as a function of the free entries of L."""
    system: SystemModel
    kind: EnergyKind
    basis: MonomialBasis
    samples: np.ndarray
    structure: tuple[int, ...]

    def __post_init__(self):
        self.samples = as_samples(self.samples, self.system.n)
        self.columns = structure_columns(self.basis, self.structure)
        self.rows_idx, self.cols_idx = trapezoid_mask(self.basis.size, self.columns)
        self.Z, self.JZ = eval_basis_batch(self.basis, self.samples)
        self.drift = self.system.drift_batch(self.samples)
        self.output = self.system.output_energy_batch(self.samples)
        self.quad_weight, _ = hjb_weights(self.kind, self.system.eta)

    @property
    def size(self) -> int:
        return int(self.rows_idx.size)

    def pack(self, L: np.ndarray) -> np.ndarray:
        return np.asarray(L, dtype=float)[self.rows_idx, self.cols_idx]

    def unpack(self, theta: np.ndarray) -> np.ndarray:
        L = np.zeros((self.basis.size, self.columns))
        L[self.rows_idx, self.cols_idx] = theta
        return L

    def residuals_of(self, L: np.ndarray) -> np.ndarray:
        G = gradient_from_basis(L, self.Z, self.JZ)
        return residual_from_gradients(G, self.drift, self.output, self.system, self.kind)

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        return self.residuals_of(self.unpack(theta))

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        """dR/dL_ab = 2 (h_a w_b + z_a (L' h)_b) with h = Jz (f + 2q BB' grad E), w = L' z."""
        L = self.unpack(theta)
        G = gradient_from_basis(L, self.Z, self.JZ)
        lin = self.drift + 2.0 * self.quad_weight * (G @ self.system.BBt)
        H = np.einsum("svi,si->sv", self.JZ, lin)
        W = self.Z @ L
        HL = H @ L
        rows, cols = self.rows_idx, self.cols_idx
        return 2.0 * (H[:, rows] * W[:, cols] + self.Z[:, rows] * HL[:, cols])

    def objective(self, L: np.ndarray) -> float:
        return sum_of_squares(self.residuals_of(L))

    def energy(self, L: np.ndarray) -> SosEnergy:
        return SosEnergy(basis=self.basis, L=L, structure=self.structure)


def optimize_factor(problem: CollocationProblem, L_init: np.ndarray, settings: Settings | None = None) -> tuple[np.ndarray, OptimizerReport]:
    settings = settings or get_settings()
    L_init = np.asarray(L_init, dtype=float)
    if L_init.shape != (problem.basis.size, problem.columns):
        raise ValueError(f"initial factor of shape {L_init.shape} does not match structure {problem.structure}")
    theta, report = levenberg_marquardt(problem.residuals, problem.jacobian, problem.pack(L_init), settings.lm)
    return problem.unpack(theta), report


# ============================================================================
# Starting points
# ============================================================================

def riccati_block(system: SystemModel, kind: EnergyKind, settings: Settings | None = None) -> np.ndarray:
    """Lower-triangular L11 with L11 L11' = X/2 for the Riccati solution X."""
    settings = settings or get_settings()
    solve = solve_are_past if kind == "past" else solve_are_future
    sol = solve(system.A, system.B, system.C, system.eta, settings, require_definite=False)
    return jittered_cholesky(0.5 * sol.X, settings.collocation.jitter, semidefinite=not sol.definite)


def jittered_cholesky(half: np.ndarray, jitter: float, semidefinite: bool = False) -> np.ndarray:
    """Cholesky factor of `half`; a semidefinite block gets `jitter` on its diagonal, once."""
    if not semidefinite:
        try:
            return np.linalg.cholesky(half)
        except np.linalg.LinAlgError:
            pass
    logger.warning("Riccati block is semidefinite; adding %.1e jitter", jitter)
    try:
        return np.linalg.cholesky(half + jitter * np.eye(half.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("Riccati block stays singular after jitter") from exc


def cold_start(basis: MonomialBasis, structure: tuple[int, ...], L11: np.ndarray, settings: Settings | None = None) -> np.ndarray:
    """Riccati block in the degree-1 corner, a small seed on the other retained diagonals, zeros elsewhere.

    An all-zero column is a stationary point of J, so the seed lets the
    optimizer move the higher blocks at all.
    """
    settings = settings or get_settings()
    n = basis.n
    L = np.zeros((basis.size, structure_columns(basis, structure)))
    L[:n, :n] = np.tril(L11)
    for degree in structure[1:]:
        block = basis.block_slice(degree)
        idx = np.arange(block.start, block.stop)
        L[idx, idx] = settings.collocation.diag_seed
    return L


def adapt_factor(L: np.ndarray, basis: MonomialBasis, structure: tuple[int, ...], settings: Settings | None = None) -> np.ndarray:
    """Warm start for a new structure: drop or append the trailing block columns."""
    settings = settings or get_settings()
    cols = structure_columns(basis, structure)
    if cols <= L.shape[1]:
        return np.array(L[:, :cols])
    out = np.zeros((basis.size, cols))
    out[:, : L.shape[1]] = L
    idx = np.arange(L.shape[1], cols)
    out[idx, idx] = settings.collocation.diag_seed
    return out


# ============================================================================
# Windowed driver
# ============================================================================

@dataclass(frozen=True, eq=False)
class WindowFit:
    index: int
    window: Window
    structure: tuple[int, ...]
    samples: np.ndarray
    energy: SosEnergy
    initial_factor: np.ndarray
    report: OptimizerReport


def sos_basis(n: int, degree: int) -> MonomialBasis:
    if degree < 2 or degree % 2:
        raise ValueError(f"SOS degree must be even and at least 2, got {degree}")
    return build_basis(n, degree // 2)


def expand_schedule(schedule: Sequence[Window]) -> list[Window]:
    """Prepend Omega_0 at a tenth of the first window when only one window is given."""
    windows = list(schedule)
    validate_schedule(windows)
    if len(windows) == 1:
        first = windows[0]
        windows.insert(0, Window(half_width=first.half_width / 10, samples=first.samples))
    return windows


def iter_window_fits(
    system: SystemModel,
    kind: EnergyKind,
    degree: int,
    schedule: Sequence[Window],
    seed: int,
    settings: Settings | None = None,
) -> Iterator[WindowFit]:
    """Fit every window in turn, yielding each result before moving on."""
    settings = settings or get_settings()
    basis = sos_basis(system.n, degree)
    windows = expand_schedule(schedule)
    seeds = np.random.SeedSequence(seed).spawn(len(windows))
    L11 = riccati_block(system, kind, settings)

    L_prev: np.ndarray | None = None
    last: SosEnergy | None = None
    for i, (window, child) in enumerate(zip(windows, seeds)):
        rng = np.random.default_rng(child)
        try:
            widest = full_structure(basis)
            count = window.samples or default_sample_count(variable_count(basis, widest), settings)
            samples = sample_window(window, system.n, rng, count)
            structure = select_structure(basis, samples, settings)
            if L_prev is None:
                L_init = cold_start(basis, structure, L11, settings)
            else:
                L_init = adapt_factor(L_prev, basis, structure, settings)
            problem = CollocationProblem(system, kind, basis, samples, structure)
            L_opt, report = optimize_factor(problem, L_init, settings)
        except NumericalError as exc:
            raise WindowFailure(str(exc), i, last) from exc
        energy = problem.energy(L_opt)
        logger.info(
            "window %d [-%g, %g]^%d: s=%d structure=%s J %.3e -> %.3e (%s)",
            i, window.half_width, window.half_width, system.n, count, structure,
            report.initial_objective, report.final_objective, report.reason,
        )
        yield WindowFit(i, window, structure, samples, energy, L_init, report)
        L_prev, last = L_opt, energy


def algorithm1(
    system: SystemModel,
    kind: EnergyKind,
    degree: int,
    schedule: Sequence[Window],
    seed: int,
    settings: Settings | None = None,
) -> tuple[SosEnergy, list[OptimizerReport]]:
    """Windowed SOS fit; returns the energy of the last window and one report per window."""
    fits = list(iter_window_fits(system, kind, degree, schedule, seed, settings))
    return fits[-1].energy, [fit.report for fit in fits]
