import math

import pytest

from errors import DomainError, InvalidInputError
from siv_model import (
    MagneticField,
    SivParameters,
    StrainProjection,
    StrainTensor,
    calibrate_conversion,
    estimate_spin_splitting,
    fine_structure_from_lines,
    four_lines,
    orbital_splitting,
    spin_transition_frequency,
    strain_projection,
    transverse_strain_from_splitting,
)


def test_transverse_strain_from_measured_splitting():
    assert transverse_strain_from_splitting(85.0, 46.0) == pytest.approx(71.48, abs=0.01)


def test_orbital_splitting_inverts_strain_inference():
    transverse = transverse_strain_from_splitting(85.0, 46.0)
    projection = StrainProjection(beta=transverse / 2.0, gamma_strain=0.0)
    assert orbital_splitting(projection, 46.0) == pytest.approx(85.0, rel=1e-12)


def test_unstrained_splitting_is_spin_orbit():
    assert orbital_splitting(StrainProjection(0.0, 0.0), 46.0) == 46.0


def test_splitting_below_spin_orbit_is_rejected():
    with pytest.raises(DomainError):
        transverse_strain_from_splitting(40.0, 46.0)


def test_strain_projection_components():
    params = SivParameters()
    assert strain_projection(StrainTensor(eps_xx=1e-5), params).beta == pytest.approx(13.0)
    assert strain_projection(StrainTensor(eps_xy=1e-5), params).gamma_strain == pytest.approx(-26.0)
    assert strain_projection(StrainTensor(eps_xz=1e-5), params).beta == pytest.approx(-17.0)
    assert strain_projection(StrainTensor(eps_yz=1e-5), params).gamma_strain == pytest.approx(-17.0)


def test_projection_magnitude():
    assert StrainProjection(3.0, 4.0).magnitude == 5.0


def test_fine_structure_from_zero_field_lines():
    fine = fine_structure_from_lines(f_b=255.0, f_c=46.0, f_d=0.0)
    assert fine.delta_gs == 46.0
    assert fine.delta_es == 255.0


def test_fine_structure_rejects_inverted_lines():
    with pytest.raises(InvalidInputError):
        fine_structure_from_lines(f_b=255.0, f_c=-1.0, f_d=0.0)


def test_four_line_estimators_agree():
    lines = four_lines(nu0=0.0, omega_s=12.0, omega_s_excited=10.0)
    assert (lines.f_dd, lines.f_uu, lines.f_du, lines.f_ud) == (0.0, -2.0, 10.0, -12.0)
    assert estimate_spin_splitting(lines) == (12.0, 12.0)


def test_calibrate_conversion_noise_free():
    fields = [0.5, 1.0, 2.0, 3.0]
    lines = [four_lines(406700.0, 2.5 * b, 3.1 * b) for b in fields]
    estimate = calibrate_conversion(fields, lines)
    assert estimate.slope == pytest.approx(2.5, abs=1e-8)
    assert estimate.sigma < 1e-8


def test_calibrate_conversion_length_mismatch():
    with pytest.raises(InvalidInputError):
        calibrate_conversion([1.0, 2.0], [four_lines(0.0, 1.0, 1.0)])


def test_spin_transition_frequency():
    assert spin_transition_frequency(MagneticField(4.8, theta=90.0), 2.5) == pytest.approx(12.0)
    with pytest.raises(DomainError):
        spin_transition_frequency(MagneticField(4.8), 0.0)


def test_field_components():
    field = MagneticField(2.0, theta=30.0, phi=45.0)
    assert field.b_perp == pytest.approx(1.0)
    assert field.b_parallel == pytest.approx(math.sqrt(3.0))


def test_field_validation():
    with pytest.raises(InvalidInputError):
        MagneticField(1.0, theta=200.0)
    with pytest.raises(InvalidInputError):
        MagneticField(-1.0)


def test_parameters_validation():
    with pytest.raises(InvalidInputError):
        SivParameters(lambda_so_gs=0.0)
    with pytest.raises(InvalidInputError):
        SivParameters(gyro=float("nan"))
