"""
Closed-loop validation of energy functions.

The feedback u = -B' grad E(x) is simulated with an adaptive Runge-Kutta
integrator while the running cost 1/2 (|C x|^2 + |u|^2) is integrated
alongside the state. For the exact future energy the accumulated cost equals
E(x0), so |E(x0) - cost| / cost measures the quality of an approximation.

Monte-Carlo batches fan out one simulation per (controller, initial
condition) pair and join once all are done.
"""

from __future__ import annotations

import asyncio
import logging
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field
from scipy.integrate import solve_ivp
from tqdm import tqdm

from sosenergy.config import Settings, get_settings
from sosenergy.errors import IntegratorStepFailure, UnstableExcluded
from sosenergy.hjb_residual import EnergyCandidate
from sosenergy.systems import SystemModel

logger = logging.getLogger(__name__)


class ClosedLoopResult(BaseModel):
    """Outcome of one closed-loop simulation."""
    x0: list[float] = Field(description="Initial state")
    horizon: float = Field(description="Simulated time T")
    cost: float = Field(ge=0, description="1/2 of the integral of |y|^2 + |u|^2 up to the final time")
    stable: bool = Field(description="Settled below the stability threshold without diverging")
    final_state: list[float] = Field(description="State at the final time")
    final_state_norm: float = Field(description="|x| at the final time")
    diverged_at: float | None = Field(default=None, description="Time the divergence threshold was crossed")
    message: str = Field(default="", description="Integrator diagnostic for failed runs")


def default_horizon(system: SystemModel, settings: Settings | None = None) -> float:
    settings = settings or get_settings()
    if system.name == "burgers":
        return settings.simulation.horizon_burgers
    return settings.simulation.horizon_vdp


def simulate_closed_loop(
    system: SystemModel,
    energy: EnergyCandidate,
    x0,
    horizon: float | None = None,
    settings: Settings | None = None,
) -> ClosedLoopResult:
    settings = settings or get_settings()
    sim = settings.simulation
    x0 = np.asarray(x0, dtype=float).ravel()
    n = system.n
    if x0.size != n:
        raise ValueError(f"initial state of length {x0.size} for a system with n={n}")
    horizon = horizon if horizon is not None else default_horizon(system, settings)
    if horizon <= 0:
        raise ValueError("simulation horizon must be positive")

    scale = max(1.0, float(np.linalg.norm(x0)))
    threshold = sim.divergence_factor * scale

    def rhs(t, y):
        x = y[:n]
        u = -system.B.T @ energy.gradient(x)
        dx = system.drift(x) + system.B @ u
        Cx = system.C @ x
        dcost = 0.5 * (Cx @ Cx + u @ u)
        if not (np.all(np.isfinite(dx)) and np.isfinite(dcost)):
            raise IntegratorStepFailure(f"non-finite vector field at t={t:.6g}")
        return np.concatenate([dx, [dcost]])

    def diverged(t, y):
        return np.linalg.norm(y[:n]) - threshold

    diverged.terminal = True
    diverged.direction = 1

    y0 = np.concatenate([x0, [0.0]])
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            sol = solve_ivp(rhs, (0.0, horizon), y0, method="RK45", rtol=sim.rtol, atol=sim.atol, events=diverged)
    except IntegratorStepFailure as exc:
        logger.warning("closed-loop run from |x0|=%.3g failed: %s", scale, exc)
        return ClosedLoopResult(
            x0=x0.tolist(), horizon=horizon, cost=0.0, stable=False,
            final_state=x0.tolist(), final_state_norm=float("inf"), message=str(exc),
        )

    y_end = sol.y[:, -1]
    x_end = y_end[:n]
    final_norm = float(np.linalg.norm(x_end))
    cost = float(max(y_end[n], 0.0))
    diverged_at = float(sol.t_events[0][0]) if sol.t_events and sol.t_events[0].size else None
    message = "" if sol.status >= 0 else sol.message
    stable = sol.status == 0 and diverged_at is None and final_norm < sim.stable_factor * scale
    return ClosedLoopResult(
        x0=x0.tolist(),
        horizon=horizon,
        cost=cost,
        stable=stable,
        final_state=x_end.tolist(),
        final_state_norm=final_norm,
        diverged_at=diverged_at,
        message=message,
    )


def relative_error(energy: EnergyCandidate, result: ClosedLoopResult) -> float:
    if not result.stable:
        raise UnstableExcluded("relative errors are only defined for stable runs")
    if result.cost == 0.0:
        return 0.0
    return abs(energy.value(np.asarray(result.x0)) - result.cost) / result.cost


# ============================================================================
# Monte-Carlo batches
# ============================================================================

def sample_initial_conditions(n: int, half_width: float, count: int, seed: int | np.random.SeedSequence) -> np.ndarray:
    """One uniform draw on [-a, a]^n per initial condition, each from its own spawned seed."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.array([np.random.default_rng(child).uniform(-half_width, half_width, n) for child in root.spawn(count)])


@dataclass(frozen=True)
class _Job:
    controller: str
    index: int


class BatchSummary(BaseModel):
    """Stability counts and mean relative error of one controller on one batch."""
    controller: str = Field(description="Controller name")
    stable: int = Field(description="Runs that settled")
    unstable: int = Field(description="Runs that diverged or did not settle")
    mean_relative_error: float | None = Field(description="Mean relative error over stable runs")


async def _run_batch_async(run, jobs: list[_Job], max_workers: int, progress: tqdm | None) -> list[ClosedLoopResult]:
    semaphore = asyncio.Semaphore(max_workers)

    async def one(job: _Job) -> ClosedLoopResult:
        async with semaphore:
            result = await asyncio.to_thread(run, job)
        if progress is not None:
            progress.update(1)
        return result

    return await asyncio.gather(*(one(job) for job in jobs))


def run_batch(
    system: SystemModel,
    controllers: Mapping[str, EnergyCandidate],
    initial_conditions: np.ndarray,
    horizon: float | None = None,
    settings: Settings | None = None,
    show_progress: bool = False,
) -> dict[str, list[ClosedLoopResult]]:
    """Simulate every controller from every initial condition; results keep the input order."""
    settings = settings or get_settings()
    initial_conditions = np.atleast_2d(initial_conditions)
    jobs = [_Job(name, i) for name in controllers for i in range(initial_conditions.shape[0])]

    def run(job: _Job) -> ClosedLoopResult:
        return simulate_closed_loop(system, controllers[job.controller], initial_conditions[job.index], horizon, settings)

    progress = tqdm(total=len(jobs), desc="closed-loop runs", disable=not show_progress)
    try:
        if settings.serial:
            results = []
            for job in jobs:
                results.append(run(job))
                progress.update(1)
        else:
            results = asyncio.run(_run_batch_async(run, jobs, settings.max_workers, progress))
    finally:
        progress.close()

    grouped: dict[str, list[ClosedLoopResult]] = {name: [] for name in controllers}
    for job, result in zip(jobs, results):
        grouped[job.controller].append(result)
    return grouped


def summarize(name: str, energy: EnergyCandidate, results: list[ClosedLoopResult]) -> BatchSummary:
    errors = [relative_error(energy, r) for r in results if r.stable]
    return BatchSummary(
        controller=name,
        stable=len(errors),
        unstable=len(results) - len(errors),
        mean_relative_error=float(np.mean(errors)) if errors else None,
    )
