"""
Numerical settings for the whole pipeline.

Settings are pydantic models. Values come from, in increasing precedence:
defaults, SOSENERGY_* environment variables (a .env file is honoured), and
the JSON run config handed to the CLI.
"""

from __future__ import annotations

import os
from functools import lru_cache
from typing import Any

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from sosenergy.errors import ConfigError

ENV_PREFIX = "SOSENERGY_"


def _clean_env(name: str) -> str:
    return os.getenv(name, "").strip().strip('"').strip("'")


# ============================================================================
# Setting groups
# ============================================================================

class KronSettings(BaseModel):
    """k-way Lyapunov operators and their linear systems."""
    dense_cap: int = Field(default=4096, ge=1, description="Largest n^k assembled as a dense matrix")
    rtol: float = Field(default=1e-9, gt=0, description="Relative residual required of k-way solves")
    krylov_restart: int = Field(default=60, ge=1, description="GMRES restart length")
    krylov_iter_factor: int = Field(default=10, ge=1, description="GMRES iteration cap is factor * n^k")


class RiccatiSettings(BaseModel):
    """Algebraic Riccati equations."""
    polish_steps: int = Field(default=8, ge=0, description="Newton-Kleinman refinement steps")
    residual_tol: float = Field(default=1e-10, gt=0, description="Residual bound relative to max(1, |X|_F)")
    psd_tol: float = Field(default=1e-10, gt=0, description="Eigenvalues above -psd_tol * max(1, |X|_2) count as semidefinite")


class LMSettings(BaseModel):
    """Levenberg-Marquardt optimizer."""
    max_iters: int = Field(default=500, ge=1, description="Iteration cap")
    grad_tol: float = Field(default=1e-8, gt=0, description="Stop when |grad(J/2)|_inf <= grad_tol * max(1, J)")
    step_tol: float = Field(default=1e-12, ge=0, description="Stop when J decreases less than this (relative) over stall_window iterations")
    stall_window: int = Field(default=5, ge=1, description="Iterations inspected by the stall test")
    initial_damping: float = Field(default=1e-3, gt=0, description="Damping relative to max diag(J^T J)")


class CollocationSettings(BaseModel):
    """Sampling and structure selection."""
    min_samples: int = Field(default=200, ge=1, description="Lower bound on default per-window sample counts")
    samples_per_variable: int = Field(default=20, ge=1, description="Default samples per decision variable")
    outside_fraction: float = Field(default=0.5, ge=0, le=1, description="Drop the top diagonal block above this fraction of samples outside the unit cube")
    diag_seed: float = Field(default=1e-3, ge=0, description="Cold-start value on the diagonal of non-Riccati blocks")
    jitter: float = Field(default=1e-12, ge=0, description="Diagonal jitter for a semidefinite Riccati block")


class SimulationSettings(BaseModel):
    """Closed-loop simulation."""
    rtol: float = Field(default=1e-8, gt=0, description="Integrator relative tolerance")
    atol: float = Field(default=1e-10, gt=0, description="Integrator absolute tolerance")
    stable_factor: float = Field(default=1e-4, gt=0, description="Stable iff |x(T)| < factor * max(1, |x0|)")
    divergence_factor: float = Field(default=1e3, gt=1, description="Diverged once |x(t)| > factor * max(1, |x0|)")
    horizon_vdp: float = Field(default=50.0, gt=0, description="Default horizon for the oscillator ring")
    horizon_burgers: float = Field(default=30.0, gt=0, description="Default horizon for Burgers")


class Settings(BaseModel):
    kron: KronSettings = Field(default_factory=KronSettings)
    riccati: RiccatiSettings = Field(default_factory=RiccatiSettings)
    lm: LMSettings = Field(default_factory=LMSettings)
    collocation: CollocationSettings = Field(default_factory=CollocationSettings)
    simulation: SimulationSettings = Field(default_factory=SimulationSettings)
    serial: bool = Field(default=False, description="Run Monte-Carlo batches in a plain loop")
    max_workers: int = Field(default=4, ge=1, description="Concurrent simulations in a batch")

    def merged(self, overrides: dict[str, Any]) -> Settings:
        """Return a copy with nested or dotted-key overrides applied."""
        data = self.model_dump()
        for key, value in _nest(overrides).items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                data[key].update(value)
            else:
                data[key] = value
        return validate_settings(data)


def _nest(flat: dict[str, Any]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        head, _, tail = key.partition(".")
        if tail:
            nested.setdefault(head, {})[tail] = value
        elif isinstance(value, dict):
            nested.setdefault(head, {}).update(value)
        else:
            nested[head] = value
    return nested


def validate_settings(data: dict[str, Any]) -> Settings:
    try:
        return Settings.model_validate(data)
    except ValidationError as exc:
        raise ConfigError("invalid settings", format_validation_error(exc)) from exc


def format_validation_error(exc: ValidationError) -> list[str]:
    return [f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()]


# ============================================================================
# Environment
# ============================================================================
# SOSENERGY_SERIAL=1, SOSENERGY_MAX_WORKERS=8, SOSENERGY_KRON__DENSE_CAP=1024,
# SOSENERGY_LM__MAX_ITERS=200 ... double underscore separates the group.
# ============================================================================

def settings_from_env() -> dict[str, Any]:
    load_dotenv()
    overrides: dict[str, Any] = {}
    for name in os.environ:
        if not name.startswith(ENV_PREFIX) or name == f"{ENV_PREFIX}LOG_LEVEL":
            continue
        value = _clean_env(name)
        if value == "":
            continue
        key = name[len(ENV_PREFIX):].lower().replace("__", ".")
        overrides[key] = value
    return overrides


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings().merged(settings_from_env())


def log_level() -> str:
    load_dotenv()
    return _clean_env(f"{ENV_PREFIX}LOG_LEVEL") or "WARNING"
