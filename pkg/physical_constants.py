"""
CODATA constants and unit conversions.

Frequencies throughout the toolkit are ordinary frequencies (value/2π), so
thermal factors use h·f rather than ħ·ω.
"""

from dataclasses import dataclass

from scipy import constants as codata

GHZ = 1e9
THZ = 1e12
MHZ_PER_GHZ = 1e3
KHZ_PER_MHZ = 1e3
NS_PER_US = 1e3


@dataclass(frozen=True)
class PhysicalConstants:
    """Planck and Boltzmann constants in SI units"""
    planck: float = codata.h
    boltzmann: float = codata.k

    def __post_init__(self):
        if not (self.planck > 0 and self.boltzmann > 0):
            raise ValueError("physical constants must be positive")

    @property
    def hbar(self) -> float:
        return self.planck / (2.0 * codata.pi)

    def h_over_kb(self) -> float:
        """Kelvin per hertz"""
        return self.planck / self.boltzmann


CONSTANTS = PhysicalConstants()
