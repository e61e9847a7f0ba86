"""
sosenergy: Taylor and sum-of-squares energy functions for polynomial
control-affine systems, fitted by HJB collocation over growing windows and
checked by closed-loop simulation.
"""

from sosenergy.collocation import Window, algorithm1, iter_window_fits
from sosenergy.closed_loop import ClosedLoopResult, run_batch, simulate_closed_loop
from sosenergy.config import Settings, get_settings
from sosenergy.errors import ConfigError, EnergyError, NumericalError
from sosenergy.hjb_residual import objective, residual_future, residual_past
from sosenergy.poly_energy import PolyEnergy, taylor_future, taylor_past
from sosenergy.sos_energy import SosEnergy, SquaredPolyEnergy, complete_sos, complete_sos_collocation
from sosenergy.systems import SystemModel, make_burgers, make_scalar, make_vdp_ring

__all__ = [
    "ClosedLoopResult",
    "ConfigError",
    "EnergyError",
    "NumericalError",
    "PolyEnergy",
    "Settings",
    "SosEnergy",
    "SquaredPolyEnergy",
    "SystemModel",
    "Window",
    "algorithm1",
    "complete_sos",
    "complete_sos_collocation",
    "get_settings",
    "iter_window_fits",
    "make_burgers",
    "make_scalar",
    "make_vdp_ring",
    "objective",
    "residual_future",
    "residual_past",
    "run_batch",
    "simulate_closed_loop",
    "taylor_future",
    "taylor_past",
]
