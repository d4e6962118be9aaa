"""
Spin-phonon coupling and the acoustic Purcell effect.

Units: decay rates in kHz, couplings and mechanical linewidths in MHz,
frequencies in GHz. Strain projections are in GHz.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from errors import DomainError, InvalidInputError, require_finite
from fit_core import Spectrum
from physical_constants import KHZ_PER_MHZ, MHZ_PER_GHZ
from siv_model import SivParameters, StrainProjection

logger = structlog.get_logger(__name__)

# Upper bound on the breathing-mode coupling for an ideally placed emitter.
IDEAL_COUPLING_CAP_MHZ = 9.0

# Purcell-resonance linewidths observed for each cavity tuning method (MHz).
TUNING_LINEWIDTHS_MHZ: Dict[str, float] = {
    "gas-tuned": 200.0,
    "ald": 35.0,
}


@dataclass(frozen=True)
class MechanicalMode:
    omega_q: float
    q_factor: float
    g_q: float
    g_om: Optional[float] = None

    def __post_init__(self):
        require_finite(omega_q=self.omega_q, q_factor=self.q_factor, g_q=self.g_q)
        if self.omega_q <= 0:
            raise InvalidInputError("mode frequency must be positive")
        if self.q_factor <= 0:
            raise InvalidInputError("quality factor must be positive")

    @property
    def kappa_mhz(self) -> float:
        return MHZ_PER_GHZ * self.omega_q / self.q_factor

    @property
    def kappa_khz(self) -> float:
        return self.kappa_mhz * KHZ_PER_MHZ


@dataclass(frozen=True)
class ModeTable:
    modes: Tuple[MechanicalMode, ...]

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        for previous, current in zip(self.modes, self.modes[1:]):
            if current.omega_q <= previous.omega_q:
                raise InvalidInputError(
                    f"mode frequencies must be strictly increasing ({current.omega_q} after {previous.omega_q} GHz)"
                )

    @classmethod
    def sorted(cls, modes: Iterable[MechanicalMode]) -> "ModeTable":
        return cls(tuple(sorted(modes, key=lambda m: m.omega_q)))

    def __iter__(self):
        return iter(self.modes)

    def __len__(self) -> int:
        return len(self.modes)


@dataclass(frozen=True)
class SpinQubit:
    omega_s: float
    gamma_s_baseline: float
    gamma_star: float

    def __post_init__(self):
        require_finite(omega_s=self.omega_s, gamma_s_baseline=self.gamma_s_baseline, gamma_star=self.gamma_star)
        if min(self.omega_s, self.gamma_s_baseline, self.gamma_star) < 0:
            raise InvalidInputError("spin qubit rates must be non-negative")


def g_sm_from_strain(projection: StrainProjection, b_perp: float, params: SivParameters) -> float:
    """(2 gyro b_perp / lambda) sqrt(beta^2 + gamma^2), returned in MHz"""
    require_finite(b_perp=b_perp)
    if b_perp < 0:
        raise InvalidInputError("b_perp must be non-negative")
    if params.lambda_so_gs == 0:
        raise DomainError("lambda_so_gs must be non-zero")
    return MHZ_PER_GHZ * 2.0 * params.gyro * b_perp / params.lambda_so_gs * projection.magnitude


def g_sm_on_resonance(omega_m: float, projection: StrainProjection, params: SivParameters) -> float:
    """
    Coupling with the spin tuned onto the mode at the magic angle, where
    gyro * B_X = omega_s / sqrt(2). Returned in MHz.
    """
    require_finite(omega_m=omega_m)
    if params.lambda_so_gs == 0:
        raise DomainError("lambda_so_gs must be non-zero")
    g = MHZ_PER_GHZ * math.sqrt(2.0) * omega_m / params.lambda_so_gs * projection.magnitude
    if g > IDEAL_COUPLING_CAP_MHZ:
        logger.warning("coupling_above_ideal_cap", g_sm_mhz=g, cap_mhz=IDEAL_COUPLING_CAP_MHZ)
    return g


def strain_quenching_factor(delta_gs: float, lambda_so: float) -> float:
    """lambda / Delta_GS; multiplies every g_q under static strain"""
    require_finite(delta_gs=delta_gs, lambda_so=lambda_so)
    if lambda_so <= 0 or delta_gs < lambda_so:
        raise DomainError(f"need delta_gs >= lambda_so > 0, got ({delta_gs}, {lambda_so})")
    return lambda_so / delta_gs


def purcell_rate(g_sm: float, mode: MechanicalMode, omega_s: float, gamma_baseline: float) -> float:
    """
    gamma_baseline + g^2 kappa / (kappa^2/4 + (omega_s - omega_q)^2) in kHz.

    Valid for kappa_m much larger than the spin decay rate.
    """
    require_finite(g_sm=g_sm, omega_s=omega_s, gamma_baseline=gamma_baseline)
    kappa = mode.kappa_mhz
    detuning = (omega_s - mode.omega_q) * MHZ_PER_GHZ
    enhancement = g_sm * g_sm * kappa / (kappa * kappa / 4.0 + detuning * detuning)
    return gamma_baseline + enhancement * KHZ_PER_MHZ


def infer_g_sm(gamma_on: float, gamma_off: float, kappa_m: float) -> float:
    """Invert the on-resonance Purcell rate: sqrt((on - off) kappa / 4) in MHz"""
    require_finite(gamma_on=gamma_on, gamma_off=gamma_off, kappa_m=kappa_m)
    if gamma_on <= gamma_off:
        raise DomainError("no Purcell enhancement to invert (gamma_on <= gamma_off)")
    if kappa_m <= 0:
        raise DomainError("kappa_m must be positive")
    return math.sqrt((gamma_on - gamma_off) / KHZ_PER_MHZ * kappa_m / 4.0)


def effective_quality_factor(q_sim: float, q_damp: float) -> float:
    if q_sim <= 0 or q_damp <= 0:
        raise DomainError("quality factors must be positive")
    return 1.0 / (1.0 / q_sim + 1.0 / q_damp)


def damping_q_for_linewidth(omega_q: float, linewidth_mhz: float, q_sim: float) -> float:
    """Q_damp that broadens a mode of quality q_sim to the given linewidth"""
    target = MHZ_PER_GHZ * omega_q / linewidth_mhz
    if target >= q_sim:
        raise DomainError(f"linewidth {linewidth_mhz} MHz is narrower than the undamped mode")
    return 1.0 / (1.0 / target - 1.0 / q_sim)


def _mode_sum(modes: Sequence[MechanicalMode], grid: np.ndarray, quench: float, q_damp: Optional[float]) -> np.ndarray:
    total = np.zeros_like(grid)
    for mode in modes:
        q = mode.q_factor if q_damp is None else effective_quality_factor(mode.q_factor, q_damp)
        kappa = MHZ_PER_GHZ * mode.omega_q / q
        g = quench * mode.g_q
        detuning = (mode.omega_q - grid) * MHZ_PER_GHZ
        total += 4.0 * g * g * kappa / (kappa * kappa + 4.0 * detuning * detuning)
    return total * KHZ_PER_MHZ


def broadband_decay_spectrum(
    modes: Iterable[MechanicalMode],
    grid,
    quench: float = 1.0,
    q_damp: Optional[float] = None,
    workers: int = 1,
) -> Spectrum:
    """
    Purcell decay rate summed over all modes, in kHz, on a GHz grid.

    Any iterable of modes is accepted so degenerate modes can be summed.
    The grid may be split across worker threads; each point's sum over
    modes runs in the same order either way.
    """
    mode_list: List[MechanicalMode] = sorted(modes, key=lambda m: m.omega_q)
    if not mode_list:
        raise InvalidInputError("mode table is empty")
    if not 0.0 < quench <= 1.0:
        raise InvalidInputError("quench must lie in (0, 1]")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InvalidInputError("frequency grid is empty")

    if workers > 1:
        chunks = np.array_split(grid, workers)
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(lambda chunk: _mode_sum(mode_list, chunk, quench, q_damp), chunks))
        gamma = np.concatenate(parts)
    else:
        gamma = _mode_sum(mode_list, grid, quench, q_damp)
    logger.debug("decay_spectrum_computed", modes=len(mode_list), points=int(grid.size), workers=workers)
    return Spectrum(grid, gamma, units="GHz")


def reference_grid() -> np.ndarray:
    """8.5 to 28 GHz in 10 MHz steps"""
    return 8.5 + 0.01 * np.arange(1951)


def angle_scaling(theta: float, amplitude: float):
    """amplitude * sin^2(theta), theta in degrees"""
    if np.any(np.asarray(amplitude) < 0):
        raise InvalidInputError("amplitude must be non-negative")
    return amplitude * np.sin(np.radians(theta)) ** 2


def spin_mechanical_cooperativities(g_sm: float, kappa_m: float, qubit: SpinQubit) -> Tuple[float, float]:
    """(4 g^2 / (kappa gamma_s0), 4 g^2 / (kappa gamma_star)); gamma_s0 converted from kHz"""
    gamma_s0 = qubit.gamma_s_baseline / KHZ_PER_MHZ
    if kappa_m <= 0 or gamma_s0 <= 0 or qubit.gamma_star <= 0:
        raise DomainError("cooperativities need positive kappa_m, gamma_s and gamma_star")
    numerator = 4.0 * g_sm * g_sm
    return numerator / (kappa_m * gamma_s0), numerator / (kappa_m * qubit.gamma_star)
