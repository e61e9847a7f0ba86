"""
Levenberg-Marquardt for the collocation least-squares problems.

Minimizes J(theta) = |r(theta)|^2 with Marquardt diagonal scaling and
Nielsen's damping update. Only steps that lower J are accepted, so the final
objective never exceeds the initial one. When there are fewer residuals than
unknowns the damped normal equations are solved in sample space:

    delta = -D^-1 J' (J D^-1 J' + mu I)^-1 r
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field

from sosenergy.config import LMSettings, get_settings
from sosenergy.errors import NonFiniteObjective

logger = logging.getLogger(__name__)

Termination = Literal["gradient", "stalled", "max_iters"]


class OptimizerReport(BaseModel):
    """Summary of one least-squares solve."""
    initial_objective: float = Field(description="J at the starting point")
    final_objective: float = Field(description="J at the returned point")
    iterations: int = Field(description="Trial steps taken, accepted or not")
    stationarity: float = Field(description="|grad(J/2)|_inf at the returned point")
    reason: Termination = Field(description="Which stopping rule fired")


def _damped_step(Jac: np.ndarray, r: np.ndarray, g: np.ndarray, scale: np.ndarray, mu: float) -> np.ndarray:
    N, p = Jac.shape
    if N < p:
        JD = Jac / scale
        K = JD @ Jac.T
        K[np.diag_indices_from(K)] += mu
        y = np.linalg.solve(K, r)
        return -(Jac.T @ y) / scale
    H = Jac.T @ Jac
    H[np.diag_indices_from(H)] += mu * scale
    return np.linalg.solve(H, -g)


def levenberg_marquardt(
    residuals: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], np.ndarray],
    theta0: np.ndarray,
    settings: LMSettings | None = None,
) -> tuple[np.ndarray, OptimizerReport]:
    """Minimize |residuals(theta)|^2 from theta0."""
    settings = settings or get_settings().lm
    theta = np.array(theta0, dtype=float)
    r = residuals(theta)
    J = float(r @ r)
    if not np.isfinite(J):
        raise NonFiniteObjective("objective is not finite at the starting point; the window may be too large for this degree")
    initial = J

    Jac = jacobian(theta)
    g = Jac.T @ r
    col_norms = np.einsum("ij,ij->j", Jac, Jac)
    floor = 1e-12 * max(float(col_norms.max(initial=0.0)), 1e-300)
    scale = np.maximum(col_norms, floor)
    mu = settings.initial_damping
    nu = 2.0
    history = [J]
    reason: Termination = "max_iters"
    iterations = 0

    while True:
        stationarity = float(np.max(np.abs(g), initial=0.0))
        if stationarity <= settings.grad_tol * max(1.0, J):
            reason = "gradient"
            break
        if len(history) > settings.stall_window:
            before = history[-settings.stall_window - 1]
            if before - J <= settings.step_tol * max(before, np.finfo(float).tiny):
                reason = "stalled"
                break
        if iterations >= settings.max_iters:
            break
        iterations += 1

        try:
            delta = _damped_step(Jac, r, g, scale, mu)
        except np.linalg.LinAlgError:
            delta = None
        trial_J = np.inf
        if delta is not None and np.all(np.isfinite(delta)):
            with np.errstate(over="ignore", invalid="ignore"):
                trial_r = residuals(theta + delta)
                trial_J = float(trial_r @ trial_r)

        if np.isfinite(trial_J) and trial_J < J:
            predicted = float(delta @ (mu * scale * delta - g))
            rho = (J - trial_J) / predicted if predicted > 0 else 0.0
            theta = theta + delta
            r, J = trial_r, trial_J
            Jac = jacobian(theta)
            g = Jac.T @ r
            scale = np.maximum(scale, np.einsum("ij,ij->j", Jac, Jac))
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            history.append(J)
        else:
            mu *= nu
            nu *= 2.0
            if mu > 1e32:
                reason = "stalled"
                break
        logger.debug("LM iter %d: J=%.6e mu=%.3e", iterations, J, mu)

    report = OptimizerReport(
        initial_objective=initial,
        final_objective=J,
        iterations=iterations,
        stationarity=stationarity,
        reason=reason,
    )
    logger.info("LM finished (%s) after %d iterations: J %.3e -> %.3e", reason, iterations, initial, J)
    return theta, report
