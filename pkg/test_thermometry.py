import numpy as np
import pytest

from errors import DomainError, InvalidInputError
from fit_core import FitReport
from physical_constants import CONSTANTS, PhysicalConstants
from thermometry import (
    SpinState,
    ThermalState,
    bose_occupancy,
    orbital_freezeout_temperature,
    orbital_ground_fraction,
    spin_steady_populations,
    temperature_from_decay_fit,
    temperature_from_saturation,
    temperature_series,
)


def decay_report(p_inf):
    return FitReport(
        model="exponential_decay",
        param_names=("gamma_khz", "p_inf", "amplitude"),
        values=np.array([10.0, p_inf, -0.9]),
        sigmas=np.array([0.1, 0.01, 0.01]),
        residual_norm=0.0,
        iterations=5,
        converged=True,
    )


def test_breathing_mode_occupancy_at_150_mk():
    assert bose_occupancy(12.06, 0.150) == pytest.approx(0.0216, abs=0.005)


def test_orbital_fraction_anchor():
    assert orbital_ground_fraction(85.0, 0.885) == pytest.approx(0.990, abs=0.002)


def test_freezeout_temperature_inverts_fraction():
    temperature = orbital_freezeout_temperature(85.0, 0.99)
    assert temperature == pytest.approx(0.888, abs=2e-3)
    assert orbital_ground_fraction(85.0, temperature) == pytest.approx(0.99, abs=1e-4)


def test_freezeout_validation():
    with pytest.raises(DomainError):
        orbital_freezeout_temperature(85.0, 0.3)
    with pytest.raises(DomainError):
        orbital_freezeout_temperature(0.0)


def test_populations_sum_to_one():
    p_up, p_down = spin_steady_populations(ThermalState(0.150, 12.06))
    assert p_up + p_down == pytest.approx(1.0)
    assert p_up < p_down
    assert p_up == pytest.approx(bose_occupancy(12.06, 0.150) / (1.0 + 2.0 * bose_occupancy(12.06, 0.150)))


def test_saturation_round_trip():
    p_up, _ = spin_steady_populations(ThermalState(0.150, 12.06))
    assert temperature_from_saturation(p_up, 12.06) == pytest.approx(0.150, rel=1e-9)


def test_saturation_round_trip_across_temperatures():
    rng = np.random.default_rng(3)
    for _ in range(200):
        temperature = rng.uniform(0.02, 5.0)
        omega = rng.uniform(1.0, 30.0)
        p_up, _ = spin_steady_populations(ThermalState(temperature, omega))
        assert temperature_from_saturation(p_up, omega) == pytest.approx(temperature, rel=1e-9)


def test_saturation_outside_range():
    with pytest.raises(DomainError):
        temperature_from_saturation(0.6, 12.06)
    with pytest.raises(DomainError):
        temperature_from_saturation(0.0, 12.06)


def test_temperature_series_matches_scalar():
    p_up = np.array([0.01, 0.05, 0.2])
    expected = [temperature_from_saturation(p, 12.06) for p in p_up]
    np.testing.assert_allclose(temperature_series(p_up, 12.06), expected)
    with pytest.raises(DomainError):
        temperature_series([0.1, 0.5], 12.06)


def test_temperature_from_fitted_floor():
    p_up, p_down = spin_steady_populations(ThermalState(0.2, 12.06))
    down = temperature_from_decay_fit(decay_report(p_down), 12.06, SpinState.DOWN)
    up = temperature_from_decay_fit(decay_report(p_up), 12.06, "up")
    assert down == pytest.approx(0.2, rel=1e-9)
    assert up == pytest.approx(0.2, rel=1e-9)


def test_thermal_state_validation():
    with pytest.raises(DomainError):
        ThermalState(-1.0, 12.06)
    with pytest.raises(InvalidInputError):
        ThermalState(0.1, float("inf"))
    with pytest.raises(DomainError):
        bose_occupancy(12.06, 0.0)


def test_configured_constants_are_used():
    doubled = PhysicalConstants(planck=2.0 * CONSTANTS.planck, boltzmann=CONSTANTS.boltzmann)
    assert bose_occupancy(6.03, 0.150, doubled) == pytest.approx(bose_occupancy(12.06, 0.150))
