"""
Thermal-motion noise spectra and power-dependent backaction linewidths.

Linewidths in kHz, powers in uW, mechanical frequencies in GHz.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy.integrate import trapezoid

from errors import DomainError, FitFailureError, InvalidInputError
from fit_core import Spectrum
from physical_constants import KHZ_PER_MHZ, MHZ_PER_GHZ
from spin_phonon import MechanicalMode

logger = structlog.get_logger(__name__)

LASING_TOLERANCE = 1e-12


class Sideband(Enum):
    RED = "red"
    BLUE = "blue"

    @property
    def sign(self) -> float:
        """Sign of the backaction term: red broadens, blue narrows"""
        return 1.0 if self is Sideband.RED else -1.0


@dataclass
class SidebandSeries:
    sideband: Sideband
    power: np.ndarray
    linewidth: np.ndarray
    sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        self.sideband = Sideband(self.sideband)
        self.power = np.asarray(self.power, dtype=float)
        self.linewidth = np.asarray(self.linewidth, dtype=float)
        if self.power.shape != self.linewidth.shape or self.power.ndim != 1:
            raise InvalidInputError("power and linewidth must be equal-length 1-D series")
        if not (np.all(np.isfinite(self.power)) and np.all(np.isfinite(self.linewidth))):
            raise InvalidInputError("sideband series contains non-finite values")
        if np.any(self.power < 0):
            raise InvalidInputError("powers must be non-negative")
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
            if self.sigma.shape != self.power.shape or np.any(self.sigma <= 0):
                raise InvalidInputError("sigma must be positive and match the series length")

    def __len__(self) -> int:
        return len(self.power)


@dataclass
class BackactionFit:
    kappa_intrinsic: float
    slope: float
    sigmas: Dict[str, float]
    covariance: np.ndarray
    shared_slope: bool = True
    slope_red: float = float("nan")
    slope_blue: float = float("nan")
    flags: list = field(default_factory=list)

    def linewidth(self, power, sideband: Union[Sideband, str]):
        sideband = Sideband(sideband)
        slope = self.slope
        if not self.shared_slope:
            slope = self.slope_red if sideband is Sideband.RED else self.slope_blue
        return self.kappa_intrinsic + sideband.sign * slope * np.asarray(power, dtype=float)

    def to_dict(self) -> Dict:
        return {
            "kappa_intrinsic_khz": self.kappa_intrinsic,
            "slope_khz_per_uw": self.slope,
            "slope_red_khz_per_uw": self.slope_red,
            "slope_blue_khz_per_uw": self.slope_blue,
            "shared_slope": self.shared_slope,
            "sigmas": dict(self.sigmas),
            "covariance": np.asarray(self.covariance).tolist(),
        }


def thermal_npsd(mode: MechanicalMode, amplitude: float, baseline: float, grid) -> Spectrum:
    """baseline + amplitude (kappa/2)^2 / ((f - f_q)^2 + (kappa/2)^2) on a GHz grid"""
    grid = np.asarray(grid, dtype=float)
    half = mode.kappa_mhz / MHZ_PER_GHZ / 2.0
    values = baseline + amplitude * half * half / ((grid - mode.omega_q) ** 2 + half * half)
    return Spectrum(grid, values, units="GHz")


def mechanical_quality_factor(omega: float, linewidth: float) -> float:
    """Q = f / linewidth; omega in GHz, linewidth in kHz"""
    if linewidth <= 0:
        raise DomainError("linewidth must be positive")
    return omega * MHZ_PER_GHZ * KHZ_PER_MHZ / linewidth


def lorentzian_area(spectrum: Spectrum, baseline: float = 0.0) -> float:
    """Trapezoid area of (values - baseline)"""
    return float(trapezoid(spectrum.values - baseline, spectrum.abscissa))


def backaction_linewidth(
    power: float,
    sideband: Union[Sideband, str],
    kappa0: float,
    slope: float,
) -> Tuple[float, bool]:
    """
    kappa0 + slope P on the red sideband, kappa0 - slope P on the blue one.

    Returns (linewidth, lasing); a blue linewidth at or below zero is
    clamped to 0 and flagged as lasing.
    """
    if slope < 0:
        raise InvalidInputError("slope is a magnitude and must be non-negative")
    sideband = Sideband(sideband)
    linewidth = kappa0 + sideband.sign * slope * power
    if linewidth <= LASING_TOLERANCE * abs(kappa0):
        return 0.0, True
    return linewidth, False


def _stack(red: SidebandSeries, blue: SidebandSeries, shared_slope: bool):
    n_red, n_blue = len(red), len(blue)
    power = np.concatenate([red.power, blue.power])
    y = np.concatenate([red.linewidth, blue.linewidth])
    if shared_slope:
        design = np.column_stack([np.ones_like(power), np.concatenate([red.power, -blue.power])])
    else:
        design = np.column_stack([
            np.ones_like(power),
            np.concatenate([red.power, np.zeros(n_blue)]),
            np.concatenate([np.zeros(n_red), -blue.power]),
        ])
    if (red.sigma is None) != (blue.sigma is None):
        raise InvalidInputError("either both sideband series carry sigma or neither does")
    sigma = None if red.sigma is None else np.concatenate([red.sigma, blue.sigma])
    return design, y, sigma


def fit_backaction_pair(
    red: SidebandSeries,
    blue: SidebandSeries,
    shared_slope: bool = True,
) -> BackactionFit:
    """
    Joint weighted linear fit of both sidebands with a common intercept.

    With shared_slope the slope magnitude is common and enters with
    opposite signs; otherwise each sideband has its own slope.
    """
    if len(red) < 2 or len(blue) < 2:
        raise InvalidInputError("each sideband series needs at least 2 points")
    if Sideband(red.sideband) is not Sideband.RED or Sideband(blue.sideband) is not Sideband.BLUE:
        raise InvalidInputError("expected a red and a blue sideband series")
    design, y, sigma = _stack(red, blue, shared_slope)
    n_params = design.shape[1]
    w = np.ones_like(y) if sigma is None else 1.0 / sigma
    a = design * w[:, None]
    b = y * w
    solution, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < n_params:
        raise FitFailureError("backaction design matrix is rank deficient; powers are degenerate")

    residual = b - a @ solution
    covariance = np.linalg.inv(a.T @ a)
    dof = len(y) - n_params
    if sigma is None:
        covariance = covariance * (float(residual @ residual) / dof if dof > 0 else float("nan"))
    errors = np.sqrt(np.abs(np.diag(covariance)))

    if shared_slope:
        kappa0, slope = solution
        result = BackactionFit(
            kappa_intrinsic=float(kappa0),
            slope=float(slope),
            sigmas={"kappa_intrinsic": float(errors[0]), "slope": float(errors[1])},
            covariance=covariance,
            shared_slope=True,
            slope_red=float(slope),
            slope_blue=float(slope),
        )
    else:
        kappa0, slope_red, slope_blue = solution
        result = BackactionFit(
            kappa_intrinsic=float(kappa0),
            slope=float((slope_red + slope_blue) / 2.0),
            sigmas={
                "kappa_intrinsic": float(errors[0]),
                "slope_red": float(errors[1]),
                "slope_blue": float(errors[2]),
            },
            covariance=covariance,
            shared_slope=False,
            slope_red=float(slope_red),
            slope_blue=float(slope_blue),
        )
    if result.kappa_intrinsic <= 0:
        result.flags.append("non-physical-intercept")
    logger.info(
        "backaction_fit_complete",
        shared_slope=shared_slope,
        kappa_intrinsic=result.kappa_intrinsic,
        slope=result.slope,
    )
    return result


def lasing_threshold_power(fit: BackactionFit) -> float:
    """Blue-sideband power at which the linewidth reaches zero (uW)"""
    slope = fit.slope if fit.shared_slope else fit.slope_blue
    if not slope > 0:
        raise DomainError(f"backaction slope {slope} is not positive; no lasing threshold")
    return fit.kappa_intrinsic / slope


def backaction_series(
    powers: Sequence[float],
    sideband: Union[Sideband, str],
    kappa0: float,
    slope: float,
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> SidebandSeries:
    """
    Synthetic series from the linear model, optional relative Gaussian noise.

    Points clamped at the lasing threshold keep the noise scale of kappa0.
    """
    powers = np.asarray(powers, dtype=float)
    clean = np.array([backaction_linewidth(p, sideband, kappa0, slope)[0] for p in powers])
    if noise > 0:
        if rng is None:
            raise InvalidInputError("noisy series need an rng")
        sigma = noise * np.where(clean > 0, clean, abs(kappa0))
        return SidebandSeries(sideband, powers, clean + rng.normal(0.0, sigma), sigma)
    return SidebandSeries(sideband, powers, clean)
