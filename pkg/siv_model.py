"""
SiV level structure under magnetic field and static strain, and the
four-line calibration of the spin transition frequency.

Frequencies in GHz, fields in kG, angles in degrees.
"""

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from errors import DomainError, InvalidInputError, require_finite
from fit_core import SlopeEstimate, linear_fit_zero_intercept


@dataclass(frozen=True)
class SivParameters:
    """Spin-orbit splittings, strain susceptibilities and gyromagnetic ratio"""
    lambda_so_gs: float = 46.0
    lambda_so_es: float = 255.0
    d: float = 1.3e6
    f: float = -1.7e6
    gyro: float = 2.8

    def __post_init__(self):
        require_finite(
            lambda_so_gs=self.lambda_so_gs,
            lambda_so_es=self.lambda_so_es,
            d=self.d,
            f=self.f,
            gyro=self.gyro,
        )
        if self.lambda_so_gs <= 0:
            raise InvalidInputError("lambda_so_gs must be positive")
        if self.gyro <= 0:
            raise InvalidInputError("gyro must be positive")


@dataclass(frozen=True)
class MagneticField:
    magnitude: float
    theta: float = 0.0
    # azimuth is recorded with the data but enters no formula
    phi: float = 0.0

    def __post_init__(self):
        require_finite(magnitude=self.magnitude, theta=self.theta, phi=self.phi)
        if self.magnitude < 0:
            raise InvalidInputError("field magnitude must be non-negative")
        if not 0.0 <= self.theta <= 180.0:
            raise InvalidInputError("theta must lie in [0, 180] degrees")

    @property
    def b_perp(self) -> float:
        """Component transverse to the SiV axis (kG)"""
        return self.magnitude * math.sin(math.radians(self.theta))

    @property
    def b_parallel(self) -> float:
        return self.magnitude * math.cos(math.radians(self.theta))


@dataclass(frozen=True)
class StrainTensor:
    eps_xx: float = 0.0
    eps_yy: float = 0.0
    eps_zz: float = 0.0
    eps_xy: float = 0.0
    eps_xz: float = 0.0
    eps_yz: float = 0.0

    def __post_init__(self):
        require_finite(
            eps_xx=self.eps_xx,
            eps_yy=self.eps_yy,
            eps_zz=self.eps_zz,
            eps_xy=self.eps_xy,
            eps_xz=self.eps_xz,
            eps_yz=self.eps_yz,
        )


@dataclass(frozen=True)
class StrainProjection:
    beta: float
    gamma_strain: float

    def __post_init__(self):
        require_finite(beta=self.beta, gamma_strain=self.gamma_strain)

    @property
    def magnitude(self) -> float:
        """sqrt(beta^2 + gamma^2)"""
        return math.hypot(self.beta, self.gamma_strain)


@dataclass(frozen=True)
class FineStructure:
    delta_gs: float
    delta_es: float

    def __post_init__(self):
        require_finite(delta_gs=self.delta_gs, delta_es=self.delta_es)
        if self.delta_gs <= 0 or self.delta_es <= 0:
            raise InvalidInputError("orbital splittings must be positive")


@dataclass(frozen=True)
class FourLineSpectrum:
    """Spin-selective optical lines; primes denote excited-state sublevels"""
    f_dd: float
    f_uu: float
    f_du: float
    f_ud: float

    def __post_init__(self):
        require_finite(f_dd=self.f_dd, f_uu=self.f_uu, f_du=self.f_du, f_ud=self.f_ud)


def strain_projection(strain: StrainTensor, params: SivParameters) -> StrainProjection:
    """Project a strain tensor onto the E_g-like components driving the orbital doublet"""
    beta = params.d * (strain.eps_xx - strain.eps_yy) + params.f * strain.eps_xz
    gamma_strain = -2.0 * params.d * strain.eps_xy + params.f * strain.eps_yz
    return StrainProjection(beta=beta, gamma_strain=gamma_strain)


def orbital_splitting(projection: StrainProjection, lambda_so: float) -> float:
    """sqrt(lambda^2 + 4 (beta^2 + gamma^2))"""
    require_finite(lambda_so=lambda_so)
    if lambda_so <= 0:
        raise DomainError("lambda_so must be positive")
    return math.hypot(lambda_so, 2.0 * projection.magnitude)


def transverse_strain_from_splitting(delta: float, lambda_so: float) -> float:
    """Total transverse-strain splitting 2 sqrt(beta^2 + gamma^2) behind an orbital splitting"""
    require_finite(delta=delta, lambda_so=lambda_so)
    if delta < lambda_so:
        raise DomainError(f"orbital splitting {delta} GHz is below the spin-orbit splitting {lambda_so} GHz")
    return math.sqrt((delta - lambda_so) * (delta + lambda_so))


def fine_structure_from_lines(f_b: float, f_c: float, f_d: float) -> FineStructure:
    """
    Orbital splittings from zero-field line positions.

    The C and D lines share an excited branch, so their spacing is the
    ground splitting; B and D share a ground branch.
    """
    require_finite(f_b=f_b, f_c=f_c, f_d=f_d)
    return FineStructure(delta_gs=f_c - f_d, delta_es=f_b - f_d)


def four_lines(nu0: float, omega_s: float, omega_s_excited: float) -> FourLineSpectrum:
    """Line positions of the four spin-selective transitions; nu0 is the down-down' line"""
    require_finite(nu0=nu0, omega_s=omega_s, omega_s_excited=omega_s_excited)
    if omega_s < 0 or omega_s_excited < 0:
        raise InvalidInputError("spin splittings must be non-negative")
    return FourLineSpectrum(
        f_dd=nu0,
        f_uu=nu0 + omega_s_excited - omega_s,
        f_du=nu0 + omega_s_excited,
        f_ud=nu0 - omega_s,
    )


def estimate_spin_splitting(lines: FourLineSpectrum) -> Tuple[float, float]:
    return lines.f_du - lines.f_uu, lines.f_dd - lines.f_ud


def spin_transition_frequency(field: MagneticField, conversion: float) -> float:
    """omega_s = conversion * |B|; conversion in GHz/kG for the field's orientation"""
    require_finite(conversion=conversion)
    if conversion <= 0:
        raise DomainError("conversion constant must be positive")
    return conversion * field.magnitude


def calibrate_conversion(fields: Sequence[float], lines: Sequence[FourLineSpectrum]) -> SlopeEstimate:
    """
    Zero-intercept fit of spin splitting against field magnitude.

    Both four-line estimators contribute one point each per field value.
    """
    fields = np.asarray(fields, dtype=float)
    if len(fields) != len(lines):
        raise InvalidInputError("fields and line sets differ in length")
    estimates = np.array([estimate_spin_splitting(entry) for entry in lines], dtype=float).reshape(-1, 2)
    x = np.concatenate([fields, fields])
    y = np.concatenate([estimates[:, 0], estimates[:, 1]])
    return linear_fit_zero_intercept(x, y)
