"""
Experiment drivers: scalar error curves, the oscillator-ring and Burgers
controller tables, and objective landscapes.

Every driver returns plain pydantic rows; writing CSV is left to the CLI.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy.signal import argrelmin

from sosenergy.closed_loop import BatchSummary, run_batch, sample_initial_conditions, simulate_closed_loop, summarize
from sosenergy.collocation import (
    CollocationProblem,
    Window,
    cold_start,
    doubling_schedule,
    iter_window_fits,
    optimize_factor,
    riccati_block,
    sample_window,
    sos_basis,
)
from sosenergy.config import Settings, get_settings
from sosenergy.poly_energy import taylor_future, taylor_past
from sosenergy.systems import ScalarOracle, make_burgers, make_scalar, make_vdp_ring

logger = logging.getLogger(__name__)

PINNED_VDP_STATE = (-0.21, 0.08, 0.06, -0.35, 0.36, -0.47)


# ============================================================================
# Scalar example against the analytic energy
# ============================================================================

class ScalarErrorRow(BaseModel):
    x: float
    analytic: float
    taylor: float
    sos: float
    err_taylor: float = Field(description="Taylor minus analytic")
    err_sos: float = Field(description="SOS minus analytic")


def scalar_error(
    degree: int = 4,
    eta: float = 0.5,
    points: int = 401,
    extent: float = 8.0,
    seed: int = 0,
    settings: Settings | None = None,
    fit_extent: float | None = None,
) -> list[ScalarErrorRow]:
    """Degree-d Taylor and windowed SOS energies on [-extent, extent] vs the analytic past energy.

    The SOS windows double from 1 up to `fit_extent`, which defaults to `extent`.
    """
    settings = settings or get_settings()
    system = make_scalar(eta)
    oracle = ScalarOracle(eta)
    taylor = taylor_past(system, degree, settings)
    fits = list(iter_window_fits(system, "past", degree, doubling_schedule(1.0, fit_extent or extent), seed, settings))
    sos = fits[-1].energy

    xs = np.linspace(-extent, extent, points)
    analytic = np.array([oracle.value(x) for x in xs])
    t_vals = taylor.value_batch(xs.reshape(-1, 1))
    s_vals = sos.value_batch(xs.reshape(-1, 1))
    return [
        ScalarErrorRow(x=x, analytic=a, taylor=t, sos=s, err_taylor=t - a, err_sos=s - a)
        for x, a, t, s in zip(xs, analytic, t_vals, s_vals)
    ]


# ============================================================================
# Ring of van der Pol oscillators
# ============================================================================

class ControllerTableRow(BaseModel):
    half_width: float = Field(description="Initial conditions drawn from [-a, a]^n")
    taylor: BatchSummary
    sos: BatchSummary


class PinnedCase(BaseModel):
    x0: list[float]
    taylor_stable: bool
    sos_stable: bool


class VdpTable(BaseModel):
    rows: list[ControllerTableRow]
    pinned: PinnedCase
    seed: int


def vdp_table(
    half_widths: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5),
    count: int = 100,
    taylor_degree: int = 4,
    sos_degree: int = 4,
    seed: int = 0,
    horizon: float | None = None,
    settings: Settings | None = None,
    show_progress: bool = False,
) -> VdpTable:
    """Fit the future energy window by window; test each window's SOS fit and the Taylor energy there."""
    settings = settings or get_settings()
    system = make_vdp_ring()
    taylor = taylor_future(system, taylor_degree, settings)
    fit_seed, ic_seed = np.random.SeedSequence(seed).spawn(2)
    schedule = [Window(half_width=a) for a in half_widths]
    fits = list(iter_window_fits(system, "future", sos_degree, schedule, int(fit_seed.generate_state(1)[0]), settings))
    # a one-window schedule fits an extra inner window first
    fits = fits[-len(schedule):]

    rows = []
    for fit, ic_child in zip(fits, ic_seed.spawn(len(fits))):
        a = fit.window.half_width
        x0s = sample_initial_conditions(system.n, a, count, ic_child)
        results = run_batch(system, {"taylor": taylor, "sos": fit.energy}, x0s, horizon, settings, show_progress)
        rows.append(ControllerTableRow(
            half_width=a,
            taylor=summarize("taylor", taylor, results["taylor"]),
            sos=summarize("sos", fit.energy, results["sos"]),
        ))
        logger.info("vdp window %.2f: taylor %d/%d stable, sos %d/%d stable", a, rows[-1].taylor.stable, count, rows[-1].sos.stable, count)

    pinned_taylor = simulate_closed_loop(system, taylor, PINNED_VDP_STATE, horizon, settings)
    pinned_sos = simulate_closed_loop(system, fits[-1].energy, PINNED_VDP_STATE, horizon, settings)
    pinned = PinnedCase(x0=list(PINNED_VDP_STATE), taylor_stable=pinned_taylor.stable, sos_stable=pinned_sos.stable)
    return VdpTable(rows=rows, pinned=pinned, seed=seed)


# ============================================================================
# Burgers equation
# ============================================================================

class BurgersTable(BaseModel):
    fit_half_width: float
    samples: int
    rows: list[ControllerTableRow]
    seed: int


def burgers_table(
    eval_half_widths: Sequence[float] = (0.1, 0.2, 0.3, 0.4),
    fit_half_width: float = 0.1,
    samples: int = 500,
    count: int = 100,
    taylor_degree: int = 4,
    sos_degree: int = 4,
    seed: int = 0,
    horizon: float | None = None,
    settings: Settings | None = None,
    show_progress: bool = False,
) -> BurgersTable:
    """Fit once on the inner window, then evaluate both controllers on growing windows."""
    settings = settings or get_settings()
    system = make_burgers()
    taylor = taylor_future(system, taylor_degree, settings)
    fit_seed, ic_seed = np.random.SeedSequence(seed).spawn(2)
    schedule = [Window(half_width=fit_half_width, samples=samples)]
    fits = list(iter_window_fits(system, "future", sos_degree, schedule, int(fit_seed.generate_state(1)[0]), settings))
    sos = fits[-1].energy

    rows = []
    for a, ic_child in zip(eval_half_widths, ic_seed.spawn(len(eval_half_widths))):
        x0s = sample_initial_conditions(system.n, a, count, ic_child)
        results = run_batch(system, {"taylor": taylor, "sos": sos}, x0s, horizon, settings, show_progress)
        rows.append(ControllerTableRow(
            half_width=a,
            taylor=summarize("taylor", taylor, results["taylor"]),
            sos=summarize("sos", sos, results["sos"]),
        ))
    return BurgersTable(fit_half_width=fit_half_width, samples=samples, rows=rows, seed=seed)


# ============================================================================
# Objective landscape of the scalar degree-4 fit
# ============================================================================
# L = [[l11, 0], [l12, l22]] over z = (x, x^2). l11 is held at the Riccati
# entry sqrt(V2/2); the grid is centred on the fitted (l12, |l22|).
# ============================================================================

class Landscape(BaseModel):
    half_width: float
    l11: float = Field(description="Fixed degree-1 entry, the Riccati block")
    optimum: tuple[float, float] = Field(description="Fitted (l12, l22), the grid centre")
    l12: list[float]
    l22: list[float]
    J: list[list[float]] = Field(description="J[i][j] at (l12[i], l22[j])")


def landscape(
    half_width: float,
    samples: int = 101,
    grid: tuple[int, int] = (41, 41),
    span: float | None = None,
    eta: float = 0.5,
    seed: int = 0,
    settings: Settings | None = None,
) -> Landscape:
    """J over an (l12, l22) grid with l11 fixed at the Riccati block.

    `span` is the half-width of the l12 axis; by default it is 0.05 per unit
    of window, capped at 1.
    """
    settings = settings or get_settings()
    system = make_scalar(eta)
    basis = sos_basis(1, 4)
    structure = (1, 2)
    X = sample_window(Window(half_width=half_width, samples=samples), 1, seed)
    problem = CollocationProblem(system, "past", basis, X, structure)
    L11 = riccati_block(system, "past", settings)
    L_fit, _ = optimize_factor(problem, cold_start(basis, structure, L11, settings), settings)

    span = min(1.0, 0.05 * half_width) if span is None else span
    l11, l12_opt, l22_opt = float(L11[0, 0]), L_fit[1, 0], abs(L_fit[1, 1])
    reach = max(span, 2.0 * l22_opt)
    l12_axis = np.linspace(l12_opt - span, l12_opt + span, grid[0])
    l22_axis = np.linspace(-reach, reach, grid[1])
    J = np.empty(grid)
    L = np.array(L_fit)
    L[0, 0] = l11
    for i, a in enumerate(l12_axis):
        for j, b in enumerate(l22_axis):
            L[1, 0], L[1, 1] = a, b
            J[i, j] = problem.objective(L)
    logger.info("landscape on [-%g, %g]: l11=%.6f, J in [%.3e, %.3e]", half_width, half_width, l11, J.min(), J.max())
    return Landscape(
        half_width=half_width,
        l11=l11,
        optimum=(float(l12_opt), float(l22_opt)),
        l12=l12_axis.tolist(),
        l22=l22_axis.tolist(),
        J=J.tolist(),
    )


def count_local_minima(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Strict interior local minima along `axis`, counted per slice."""
    values = np.asarray(values, dtype=float)
    idx = argrelmin(values, axis=axis)
    other = [a for a in range(values.ndim) if a != axis % values.ndim]
    if not other:
        return np.array(idx[0].size)
    keys = idx[other[0]]
    return np.bincount(keys, minlength=values.shape[other[0]])


def slice_variation(land: Landscape) -> tuple[float, float]:
    """Spread of J along l22 (at the l12 nearest the optimum) and along l12 (at l22 nearest the optimum).

    Both are relative to the spread of J over the whole grid.
    """
    J = np.asarray(land.J)
    i = int(np.argmin(np.abs(np.asarray(land.l12) - land.optimum[0])))
    j = int(np.argmin(np.abs(np.asarray(land.l22) - land.optimum[1])))
    total = max(float(np.ptp(J)), np.finfo(float).tiny)
    return float(np.ptp(J[i, :]) / total), float(np.ptp(J[:, j]) / total)
