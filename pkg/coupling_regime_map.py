from dataclasses import dataclass
from enum import Enum
from typing import Dict, Tuple

from errors import InvalidInputError


class CouplingRegime(Enum):
    UNDER = "under"
    OVER = "over"


@dataclass(frozen=True)
class RegimeConfig:
    """Allowed range of the extrinsic fraction kappa_e / kappa"""
    description: str
    eta_bounds: Tuple[float, float]

    def contains(self, eta: float) -> bool:
        lo, hi = self.eta_bounds
        return lo < eta < hi


# Reflection alone cannot tell kappa_e from kappa_i; the regime picks the branch.
COUPLING_REGIME_BEHAVIOR: Dict[str, RegimeConfig] = {
    "under": RegimeConfig(
        description="kappa_e < kappa_i",
        eta_bounds=(0.0, 0.5),
    ),
    "over": RegimeConfig(
        description="kappa_e > kappa_i",
        eta_bounds=(0.5, 1.0),
    ),
}


def get_regime_config(regime) -> RegimeConfig:
    """Get configuration for a coupling regime"""
    if isinstance(regime, CouplingRegime):
        regime = regime.value
    try:
        return COUPLING_REGIME_BEHAVIOR[regime]
    except KeyError:
        raise InvalidInputError(f"unknown coupling regime: {regime!r}")
