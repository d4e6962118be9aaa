"""
Thermal populations and temperature inference.

Frequencies are ordinary frequencies in GHz, so every Boltzmann argument
is h f / (k_B T).
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple, Union

import numpy as np
import structlog
from scipy.optimize import bisect
from scipy.special import expit

from errors import DomainError, InvalidInputError, require_finite
from fit_core import FitReport
from physical_constants import CONSTANTS, GHZ, PhysicalConstants

logger = structlog.get_logger(__name__)

FREEZEOUT_BRACKET_K = (1e-3, 100.0)
FREEZEOUT_XTOL_K = 1e-4


class SpinState(Enum):
    DOWN = "down"
    UP = "up"


@dataclass(frozen=True)
class ThermalState:
    temperature: float
    omega: float

    def __post_init__(self):
        require_finite(temperature=self.temperature, omega=self.omega)
        if self.temperature <= 0:
            raise DomainError(f"temperature must be positive, got {self.temperature} K")
        if self.omega < 0:
            raise InvalidInputError("transition frequency must be non-negative")


def boltzmann_argument(omega, temperature, constants: PhysicalConstants = CONSTANTS):
    """h f / (k_B T), omega in GHz"""
    return constants.planck * np.asarray(omega, dtype=float) * GHZ / (
        constants.boltzmann * np.asarray(temperature, dtype=float)
    )


def spin_steady_populations(state: ThermalState, constants: PhysicalConstants = CONSTANTS) -> Tuple[float, float]:
    """(p_up, p_down) in thermal equilibrium"""
    x = float(boltzmann_argument(state.omega, state.temperature, constants))
    p_up = float(expit(-x))
    return p_up, 1.0 - p_up


def temperature_from_saturation(
    p_up_saturated: float,
    omega: float,
    constants: PhysicalConstants = CONSTANTS,
) -> float:
    """Invert the equilibrium up population: T = (h f / k_B) / ln(1/p - 1)"""
    require_finite(p_up_saturated=p_up_saturated, omega=omega)
    if not 0.0 < p_up_saturated < 0.5:
        raise DomainError(f"saturation population {p_up_saturated} outside (0, 0.5)")
    return constants.h_over_kb() * omega * GHZ / math.log(1.0 / p_up_saturated - 1.0)


def temperature_series(p_up, omega, constants: PhysicalConstants = CONSTANTS) -> np.ndarray:
    """Vectorised temperature_from_saturation"""
    p_up = np.asarray(p_up, dtype=float)
    if np.any(p_up <= 0.0) or np.any(p_up >= 0.5):
        raise DomainError("saturation populations must lie in (0, 0.5)")
    return constants.h_over_kb() * np.asarray(omega, dtype=float) * GHZ / np.log(1.0 / p_up - 1.0)


def bose_occupancy(omega: float, temperature: float, constants: PhysicalConstants = CONSTANTS) -> float:
    """n = 1 / (exp(h f / k_B T) - 1)"""
    require_finite(omega=omega, temperature=temperature)
    if temperature <= 0 or omega <= 0:
        raise DomainError("bose occupancy needs positive frequency and temperature")
    return float(1.0 / np.expm1(boltzmann_argument(omega, temperature, constants)))


def orbital_ground_fraction(delta_gs: float, temperature: float, constants: PhysicalConstants = CONSTANTS) -> float:
    """Boltzmann population of the lower orbital branch, 1 / (1 + exp(-h Delta / k_B T))"""
    require_finite(delta_gs=delta_gs, temperature=temperature)
    if temperature <= 0 or delta_gs < 0:
        raise DomainError("orbital fraction needs positive temperature and non-negative splitting")
    return float(expit(boltzmann_argument(delta_gs, temperature, constants)))


def orbital_freezeout_temperature(
    delta_gs: float,
    fraction: float = 0.99,
    constants: PhysicalConstants = CONSTANTS,
) -> float:
    """Temperature below which the lower orbital branch holds at least `fraction`"""
    if not 0.5 < fraction < 1.0:
        raise DomainError("fraction must lie in (0.5, 1)")
    if delta_gs <= 0:
        raise DomainError("delta_gs must be positive")
    lo, hi = FREEZEOUT_BRACKET_K
    return float(bisect(
        lambda t: fraction - orbital_ground_fraction(delta_gs, t, constants),
        lo,
        hi,
        xtol=FREEZEOUT_XTOL_K,
    ))


def temperature_from_decay_fit(
    report: FitReport,
    omega: float,
    addressed: Union[SpinState, str] = SpinState.DOWN,
    constants: PhysicalConstants = CONSTANTS,
) -> float:
    """
    Spin temperature from the saturation level of a fitted decay curve.

    Probing the down state measures p_down at saturation, so p_up = 1 - p_inf.
    """
    addressed = SpinState(addressed)
    p_inf = report.value("p_inf")
    p_up = 1.0 - p_inf if addressed is SpinState.DOWN else p_inf
    temperature = temperature_from_saturation(p_up, omega, constants)
    logger.info("temperature_inferred", omega_ghz=omega, p_up=p_up, temperature_k=temperature)
    return temperature
