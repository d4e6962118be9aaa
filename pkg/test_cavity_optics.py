import numpy as np
import pytest

from cavity_optics import (
    C_LINE_THZ,
    CAVITY_PRESETS,
    CoupledOpticalSystem,
    Emitter,
    OpticalCavity,
    fit_reflectance,
    intracavity_photon_number,
    optical_cooperativity,
    reflectance,
)
from coupling_regime_map import CouplingRegime, get_regime_config
from errors import DomainError, FitFailureError, InvalidInputError
from fit_core import Spectrum


def coupled_system(g_so=3.6, kappa=15.0, kappa_e=4.0, gamma_o=0.11):
    return CoupledOpticalSystem(
        cavity=OpticalCavity.from_rates(C_LINE_THZ, kappa, kappa_e),
        emitter=Emitter(C_LINE_THZ, gamma_o),
        g_so=g_so,
    )


def test_optical_cooperativity():
    assert optical_cooperativity(3.6, 15.0, 0.11) == pytest.approx(31.0, abs=0.5)
    assert coupled_system().cooperativity == pytest.approx(4.0 * 3.6**2 / (15.0 * 0.11))
    with pytest.raises(DomainError):
        optical_cooperativity(3.6, 0.0, 0.11)


def test_bare_cavity_dip():
    dip = reflectance(coupled_system(g_so=0.0), C_LINE_THZ)
    assert dip == pytest.approx((1.0 - 4.0 / 7.5) ** 2, abs=1e-12)
    assert round(dip, 4) == 0.2178


def test_far_detuned_probe_is_fully_reflected():
    assert reflectance(coupled_system(), C_LINE_THZ + 5.0) == pytest.approx(1.0, abs=1e-4)


def test_emitter_restores_reflection_on_resonance():
    system = coupled_system()
    expected = abs(1.0 - 4.0 / (7.5 + 3.6**2 / 0.055)) ** 2
    assert reflectance(system, C_LINE_THZ) == pytest.approx(expected)
    assert reflectance(system, C_LINE_THZ) > reflectance(coupled_system(g_so=0.0), C_LINE_THZ)


def test_reflectance_accepts_arrays():
    probe = C_LINE_THZ + np.linspace(-0.01, 0.01, 5)
    values = reflectance(coupled_system(), probe)
    assert values.shape == (5,)
    assert np.all((values >= 0.0) & (values <= 1.0 + 1e-12))


def test_cavity_validation():
    with pytest.raises(InvalidInputError):
        OpticalCavity(omega_o=406.7, kappa_total=15.0, kappa_e=4.0, kappa_i=10.0)
    with pytest.raises(InvalidInputError):
        OpticalCavity.from_rates(406.7, 4.0, 5.0)
    with pytest.raises(InvalidInputError):
        OpticalCavity.from_rates(406.7, 4.0, 0.0)


def test_lossless_cavity_is_allowed():
    cavity = OpticalCavity.from_rates(406.7, 15.0, 15.0)
    assert cavity.kappa_i == 0.0
    assert cavity.eta == 1.0
    bare = CoupledOpticalSystem(cavity=cavity, emitter=Emitter(C_LINE_THZ, 0.11), g_so=0.0)
    assert reflectance(bare, 406.7) == pytest.approx(1.0)


def test_reflectance_stays_in_unit_interval():
    rng = np.random.default_rng(11)
    for _ in range(500):
        kappa_e, kappa_i = rng.uniform(0.1, 30.0), rng.uniform(0.0, 30.0)
        system = CoupledOpticalSystem(
            cavity=OpticalCavity.from_rates(C_LINE_THZ, kappa_e + kappa_i, kappa_e),
            emitter=Emitter(C_LINE_THZ + rng.uniform(-0.02, 0.02), rng.uniform(0.01, 2.0)),
            g_so=rng.uniform(0.0, 10.0),
        )
        probe = C_LINE_THZ + rng.uniform(-0.05, 0.05, size=20)
        values = reflectance(system, probe)
        assert np.all(values >= 0.0)
        assert np.all(values <= 1.0 + 1e-12)


def test_cavity_derived_quantities():
    cavity = CAVITY_PRESETS["ald-clad"]
    assert cavity.kappa_i == pytest.approx(11.0)
    assert cavity.eta == pytest.approx(4.0 / 15.0)
    assert cavity.quality_factor == pytest.approx(1000.0 * 406.9 / 15.0)
    assert set(CAVITY_PRESETS) == {"bare", "ald-clad"}


def test_photon_number_at_one_picowatt():
    cavity = OpticalCavity.from_rates(406.0, 15.0, 15.0)
    assert intracavity_photon_number(1.0, 406.0, cavity) == pytest.approx(1.6e-4, rel=0.03)


def test_photon_number_halves_at_half_linewidth_detuning():
    cavity = CAVITY_PRESETS["ald-clad"]
    on = intracavity_photon_number(100.0, 406.9, cavity)
    off = intracavity_photon_number(100.0, 406.9, cavity, detuning=7.5)
    assert on > 0
    assert off == pytest.approx(on / 2.0)
    assert intracavity_photon_number(0.0, 406.9, cavity) == 0.0
    with pytest.raises(InvalidInputError):
        intracavity_photon_number(-1.0, 406.9, cavity)


def test_regime_lookup():
    assert get_regime_config(CouplingRegime.OVER).contains(0.7)
    assert not get_regime_config("under").contains(0.7)
    with pytest.raises(ValueError):
        get_regime_config("critical")


class TestReflectanceFit:
    def setup_method(self):
        self.truth = coupled_system()
        probe = C_LINE_THZ + np.linspace(-0.04, 0.04, 201)
        self.spectrum = Spectrum(probe, reflectance(self.truth, probe), units="THz")

    def test_round_trip(self):
        init = coupled_system(g_so=3.4, kappa=14.0, kappa_e=3.5, gamma_o=0.12)
        fit = fit_reflectance(self.spectrum, init, "under")
        assert fit.system.g_so == pytest.approx(3.6, rel=1e-6)
        assert fit.system.cavity.kappa_total == pytest.approx(15.0, rel=1e-6)
        assert fit.system.cavity.kappa_e == pytest.approx(4.0, rel=1e-6)
        assert fit.system.emitter.gamma_o == pytest.approx(0.11, rel=1e-6)
        assert fit.report.converged
        assert set(fit.sigmas) == {"g_so", "kappa", "kappa_e", "eta", "gamma_o"}
        assert fit.to_dict()["c_o"] == pytest.approx(fit.cooperativity)

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_noisy_spectrum(self, seed):
        probe = C_LINE_THZ + np.linspace(-0.02, 0.02, 200)
        clean = reflectance(self.truth, probe)
        rng = np.random.default_rng(seed)
        noisy = clean * (1.0 + 0.01 * rng.standard_normal(probe.size))
        spectrum = Spectrum(probe, noisy, sigmas=0.01 * clean, units="THz")
        init = coupled_system(g_so=3.4, kappa=14.0, kappa_e=3.5, gamma_o=0.12)
        fit = fit_reflectance(spectrum, init, "under")
        assert fit.report.converged
        assert fit.system.g_so == pytest.approx(3.6, rel=0.05)
        assert fit.system.cavity.kappa_total == pytest.approx(15.0, rel=0.05)
        assert fit.system.cavity.kappa_e == pytest.approx(4.0, rel=0.05)
        # the emitter linewidth hides under the cooperativity-broadened feature
        gamma_tol = max(0.05 * 0.11, 4.0 * fit.sigmas["gamma_o"])
        assert abs(fit.system.emitter.gamma_o - 0.11) <= gamma_tol

    def test_regime_picks_the_branch(self):
        # a bare cavity reflects the same with kappa_e and kappa_i swapped
        truth = coupled_system(g_so=0.0)
        probe = C_LINE_THZ + np.linspace(-0.04, 0.04, 81)
        spectrum = Spectrum(probe, reflectance(truth, probe), units="THz")
        init = coupled_system(g_so=0.0, kappa=12.0, kappa_e=3.0)
        under = fit_reflectance(spectrum, init, CouplingRegime.UNDER)
        over = fit_reflectance(spectrum, init, CouplingRegime.OVER)
        assert under.system.cavity.kappa_e == pytest.approx(4.0, rel=1e-6)
        assert over.system.cavity.kappa_e == pytest.approx(11.0, rel=1e-6)
        assert over.system.cavity.eta > 0.5

    def test_bare_cavity_fit(self):
        truth = coupled_system(g_so=0.0)
        probe = C_LINE_THZ + np.linspace(-0.04, 0.04, 81)
        spectrum = Spectrum(probe, reflectance(truth, probe), units="THz")
        fit = fit_reflectance(spectrum, coupled_system(g_so=0.0, kappa=12.0, kappa_e=3.0), "under")
        assert fit.system.g_so == 0.0
        assert fit.system.cavity.kappa_total == pytest.approx(15.0, rel=1e-6)
        assert fit.system.cavity.kappa_e == pytest.approx(4.0, rel=1e-6)

    def test_flat_spectrum_fails(self):
        probe = C_LINE_THZ + np.linspace(-0.04, 0.04, 20)
        with pytest.raises(FitFailureError):
            fit_reflectance(Spectrum(probe, np.ones_like(probe)), self.truth)

    def test_too_few_points(self):
        probe = C_LINE_THZ + np.linspace(-0.04, 0.04, 5)
        with pytest.raises(InvalidInputError):
            fit_reflectance(Spectrum(probe, reflectance(self.truth, probe)), self.truth)
