"""
Single-sided optical cavity with one embedded two-level emitter.

Optical frequencies are in THz, rates in GHz (ordinary frequency, not
angular); conversion to angular units only happens in photon-number math.
"""

import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple, Union

import numpy as np
import structlog

from coupling_regime_map import CouplingRegime, get_regime_config
from errors import DomainError, FitFailureError, InvalidInputError, require_finite
from fit_core import FitReport, Spectrum, Tolerances, least_squares
from fit_models import BaseModel, ModelConfig
from physical_constants import CONSTANTS, GHZ, THZ, PhysicalConstants

logger = structlog.get_logger(__name__)

GHZ_PER_THZ = THZ / GHZ
PW = 1e-12


@dataclass(frozen=True)
class OpticalCavity:
    """kappa_i may be 0: a lossless cavity coupled only through its port"""
    omega_o: float
    kappa_total: float
    kappa_e: float
    kappa_i: float

    def __post_init__(self):
        require_finite(
            omega_o=self.omega_o,
            kappa_total=self.kappa_total,
            kappa_e=self.kappa_e,
            kappa_i=self.kappa_i,
        )
        if self.kappa_e <= 0 or self.kappa_i < 0:
            raise InvalidInputError("kappa_e must be positive and kappa_i non-negative")
        if not math.isclose(self.kappa_total, self.kappa_e + self.kappa_i, rel_tol=1e-9):
            raise InvalidInputError(
                f"kappa_total {self.kappa_total} != kappa_e + kappa_i = {self.kappa_e + self.kappa_i}"
            )

    @classmethod
    def from_rates(cls, omega_o: float, kappa_total: float, kappa_e: float) -> "OpticalCavity":
        return cls(omega_o=omega_o, kappa_total=kappa_total, kappa_e=kappa_e, kappa_i=kappa_total - kappa_e)

    @property
    def quality_factor(self) -> float:
        return GHZ_PER_THZ * self.omega_o / self.kappa_total

    @property
    def eta(self) -> float:
        """Extrinsic fraction kappa_e / kappa"""
        return self.kappa_e / self.kappa_total


@dataclass(frozen=True)
class Emitter:
    omega_a: float
    gamma_o: float

    def __post_init__(self):
        require_finite(omega_a=self.omega_a, gamma_o=self.gamma_o)
        if self.gamma_o <= 0:
            raise InvalidInputError("emitter linewidth must be positive")


@dataclass(frozen=True)
class CoupledOpticalSystem:
    cavity: OpticalCavity
    emitter: Emitter
    g_so: float

    def __post_init__(self):
        require_finite(g_so=self.g_so)
        if self.g_so < 0:
            raise InvalidInputError("g_so must be non-negative")

    @property
    def cooperativity(self) -> float:
        return optical_cooperativity(self.g_so, self.cavity.kappa_total, self.emitter.gamma_o)


# Cavity states seen during the device's life; the emitter sits on the C line at 406.7 THz.
CAVITY_PRESETS: Dict[str, OpticalCavity] = {
    "bare": OpticalCavity.from_rates(omega_o=409.7, kappa_total=20.0, kappa_e=4.0),
    "ald-clad": OpticalCavity.from_rates(omega_o=406.9, kappa_total=15.0, kappa_e=4.0),
}
C_LINE_THZ = 406.7


def _amplitude(probe: np.ndarray, omega_o, omega_a, g, kappa, kappa_e, gamma):
    delta_c = (probe - omega_o) * GHZ_PER_THZ
    delta_a = (probe - omega_a) * GHZ_PER_THZ
    a = 1j * delta_a + gamma / 2.0
    d = 1j * delta_c + kappa / 2.0 + g * g / a
    return 1.0 - kappa_e / d, a, d


def reflectance(system: CoupledOpticalSystem, probe_freq: Union[float, np.ndarray]):
    """
    |r|^2 with r = 1 - kappa_e / (i dc + kappa/2 + g^2 / (i da + gamma/2)).

    Detunings are probe minus cavity (dc) and probe minus emitter (da) in GHz.
    """
    probe = np.asarray(probe_freq, dtype=float)
    r, _, _ = _amplitude(
        probe,
        system.cavity.omega_o,
        system.emitter.omega_a,
        system.g_so,
        system.cavity.kappa_total,
        system.cavity.kappa_e,
        system.emitter.gamma_o,
    )
    result = np.abs(r) ** 2
    return float(result) if result.ndim == 0 else result


def optical_cooperativity(g_so: float, kappa_total: float, gamma_o: float) -> float:
    """C_o = 4 g^2 / (kappa gamma)"""
    require_finite(g_so=g_so, kappa_total=kappa_total, gamma_o=gamma_o)
    if kappa_total <= 0 or gamma_o <= 0:
        raise DomainError("kappa_total and gamma_o must be positive")
    return 4.0 * g_so * g_so / (kappa_total * gamma_o)


def intracavity_photon_number(
    power_in: float,
    probe_freq: float,
    cavity: OpticalCavity,
    detuning: float = 0.0,
    constants: PhysicalConstants = CONSTANTS,
) -> float:
    """
    n = kappa_e (P / h nu) / ((kappa/2)^2 + Delta^2) in angular units.

    power_in in pW, probe_freq in THz, detuning in GHz.
    """
    require_finite(power_in=power_in, probe_freq=probe_freq, detuning=detuning)
    if power_in < 0:
        raise InvalidInputError("power_in must be non-negative")
    photon_flux = power_in * PW / (constants.planck * probe_freq * THZ)
    to_angular = 2.0 * math.pi * GHZ
    kappa_e = cavity.kappa_e * to_angular
    half_kappa = cavity.kappa_total * to_angular / 2.0
    delta = detuning * to_angular
    return kappa_e * photon_flux / (half_kappa**2 + delta**2)


class ReflectanceModel(BaseModel):
    """
    Reflectance against probe frequency (THz).

    Parameters are (g_so, kappa, eta, gamma_o) with eta = kappa_e / kappa, or
    (kappa, eta) for a bare cavity. Cavity and emitter frequencies are fixed.
    """
    def __init__(self, omega_o: float = C_LINE_THZ, omega_a: float = C_LINE_THZ, with_emitter: bool = True):
        names = ("g_so", "kappa", "eta", "gamma_o") if with_emitter else ("kappa", "eta")
        example = (3.6, 15.0, 4.0 / 15.0, 0.11) if with_emitter else (15.0, 4.0 / 15.0)
        super().__init__(ModelConfig(
            name="reflectance" if with_emitter else "bare_reflectance",
            description="Single-sided cavity reflection with an embedded emitter",
            param_names=names,
            example_x=tuple(omega_o + np.linspace(-0.03, 0.03, 41)),
            example_params=example,
        ))
        self.omega_o = omega_o
        self.omega_a = omega_a
        self.with_emitter = with_emitter

    def _unpack(self, params):
        if self.with_emitter:
            g, kappa, eta, gamma = params
        else:
            kappa, eta = params
            g, gamma = 0.0, 1.0
        return g, kappa, eta, gamma

    def _evaluate(self, x, params):
        g, kappa, eta, gamma = self._unpack(params)
        r, _, _ = _amplitude(x, self.omega_o, self.omega_a, g, kappa, eta * kappa, gamma)
        return np.abs(r) ** 2

    def _jacobian(self, x, params):
        g, kappa, eta, gamma = self._unpack(params)
        kappa_e = eta * kappa
        r, a, d = _amplitude(x, self.omega_o, self.omega_a, g, kappa, kappa_e, gamma)
        d2 = d * d
        dr_dkappa = -eta / d + kappa_e / (2.0 * d2)
        dr_deta = -kappa / d
        columns = [dr_dkappa, dr_deta]
        if self.with_emitter:
            dr_dg = kappa_e / d2 * 2.0 * g / a
            dr_dgamma = -kappa_e * g * g / (2.0 * a * a * d2)
            columns = [dr_dg, dr_dkappa, dr_deta, dr_dgamma]
        r_conj = np.conj(r)
        return np.column_stack([2.0 * np.real(r_conj * c) for c in columns])


@dataclass
class ReflectanceFit:
    system: CoupledOpticalSystem
    sigmas: Dict[str, float]
    covariance: np.ndarray
    report: FitReport

    @property
    def cooperativity(self) -> float:
        return self.system.cooperativity

    def to_dict(self) -> Dict:
        return {
            "g_so_ghz": self.system.g_so,
            "kappa_ghz": self.system.cavity.kappa_total,
            "kappa_e_ghz": self.system.cavity.kappa_e,
            "gamma_o_ghz": self.system.emitter.gamma_o,
            "c_o": self.cooperativity,
            "sigmas": dict(self.sigmas),
            "covariance": np.asarray(self.covariance).tolist(),
            "converged": self.report.converged,
            "iterations": self.report.iterations,
            "residual_norm": self.report.residual_norm,
        }


def _regime_initial_eta(cavity: OpticalCavity, regime) -> Tuple[float, Tuple[float, float]]:
    config = get_regime_config(regime)
    eta = cavity.eta
    if not config.contains(eta):
        # for a bare cavity the kappa_e <-> kappa_i swap leaves |r|^2 unchanged
        eta = 1.0 - eta
    if not config.contains(eta):
        eta = sum(config.eta_bounds) / 2.0
    return eta, config.eta_bounds


def fit_reflectance(
    spectrum: Spectrum,
    init: CoupledOpticalSystem,
    coupling_regime: Union[str, CouplingRegime] = CouplingRegime.UNDER,
    tolerances: Optional[Tolerances] = None,
) -> ReflectanceFit:
    """
    Fit (g_so, kappa, kappa_e, gamma_o) to a reflection spectrum.

    The coupling regime bounds kappa_e / kappa below or above one half.
    An init with g_so = 0 fits the bare cavity (kappa, kappa_e) only.
    """
    if len(spectrum) < 8:
        raise InvalidInputError("need at least 8 points for a reflectance fit")
    if np.ptp(spectrum.values) <= 1e-12:
        raise FitFailureError("reflection spectrum is flat")

    eta0, eta_bounds = _regime_initial_eta(init.cavity, coupling_regime)
    with_emitter = init.g_so > 0
    model = ReflectanceModel(init.cavity.omega_o, init.emitter.omega_a, with_emitter=with_emitter)
    if with_emitter:
        p0 = [init.g_so, init.cavity.kappa_total, eta0, init.emitter.gamma_o]
        bounds = ([0.0, 0.0, eta_bounds[0], 0.0], [None, None, eta_bounds[1], None])
    else:
        p0 = [init.cavity.kappa_total, eta0]
        bounds = ([0.0, eta_bounds[0]], [None, eta_bounds[1]])

    report = least_squares(
        model,
        spectrum.abscissa,
        spectrum.values,
        p0,
        sigma=spectrum.sigmas,
        bounds=bounds,
        tolerances=tolerances,
    )
    if not report.converged:
        raise FitFailureError(
            f"reflectance fit did not converge after {report.iterations} iterations",
            residual_norm=report.residual_norm,
        )

    values = report.params
    kappa, eta = values["kappa"], values["eta"]
    names = list(report.param_names)
    cov = report.covariance
    i_k, i_e = names.index("kappa"), names.index("eta")
    var_kappa_e = eta**2 * cov[i_k, i_k] + kappa**2 * cov[i_e, i_e] + 2.0 * eta * kappa * cov[i_k, i_e]
    sigmas = {
        "kappa": report.sigma("kappa"),
        "kappa_e": math.sqrt(abs(var_kappa_e)),
        "eta": report.sigma("eta"),
    }
    if with_emitter:
        sigmas["g_so"] = report.sigma("g_so")
        sigmas["gamma_o"] = report.sigma("gamma_o")
        g_so, gamma_o = values["g_so"], values["gamma_o"]
    else:
        g_so, gamma_o = 0.0, init.emitter.gamma_o

    system = CoupledOpticalSystem(
        cavity=OpticalCavity.from_rates(init.cavity.omega_o, kappa, eta * kappa),
        emitter=replace(init.emitter, gamma_o=gamma_o),
        g_so=g_so,
    )
    logger.info(
        "reflectance_fit_complete",
        regime=get_regime_config(coupling_regime).description,
        g_so=g_so,
        kappa=kappa,
        kappa_e=eta * kappa,
        iterations=report.iterations,
    )
    return ReflectanceFit(system=system, sigmas=sigmas, covariance=cov, report=report)
