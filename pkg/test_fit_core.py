import math

import numpy as np
import pytest

from errors import DomainError, FitFailureError, InvalidInputError
from fit_core import (
    DecayCurve,
    Spectrum,
    Tolerances,
    fit_angle_amplitude,
    fit_exponential_decay,
    fit_lorentzian_peak,
    least_squares,
    linear_fit_zero_intercept,
    scan_peaks,
)
from fit_models import ExponentialDecay, LorentzianPeak, Quadratic, ZeroInterceptLine


def lorentzian(x, center, fwhm, amplitude, baseline=0.0):
    half = fwhm / 2.0
    return baseline + amplitude * half * half / ((x - center) ** 2 + half * half)


class TestLeastSquares:
    def test_recovers_quadratic(self):
        x = np.linspace(-2.0, 2.0, 15)
        y = 0.5 - 1.0 * x + 2.0 * x * x
        report = least_squares(Quadratic(), x, y, [0.0, 0.0, 0.0])
        assert report.converged
        np.testing.assert_allclose(report.values, [0.5, -1.0, 2.0], atol=1e-8)
        assert report.param_names == ("c0", "c1", "c2")
        assert report.params["c2"] == pytest.approx(2.0)

    def test_weighted_fit_reports_parameter_sigmas(self):
        x = np.linspace(0.0, 3.0, 7)
        sigma = np.full_like(x, 0.1)
        report = least_squares(ZeroInterceptLine(), x, 2.0 * x, [1.0], sigma=sigma)
        assert report.value("slope") == pytest.approx(2.0, abs=1e-9)
        assert report.sigma("slope") == pytest.approx(0.1 / math.sqrt(np.sum(x * x)), rel=1e-6)

    def test_lower_bound_is_respected(self):
        x = np.linspace(1.0, 4.0, 6)
        report = least_squares(ZeroInterceptLine(), x, -x, [1.0], bounds=([0.0], [None]))
        assert 0.0 <= report.value("slope") < 1e-4

    def test_two_sided_bound(self):
        x = np.linspace(1.0, 4.0, 6)
        report = least_squares(ZeroInterceptLine(), x, 5.0 * x, [1.0], bounds=([0.0], [3.0]))
        assert 0.0 <= report.value("slope") <= 3.0
        assert report.value("slope") == pytest.approx(3.0, abs=1e-3)

    def test_iteration_cap_gives_non_converged_report(self):
        x = np.linspace(-2.0, 2.0, 15)
        y = 0.5 - 1.0 * x + 2.0 * x * x
        report = least_squares(Quadratic(), x, y, [0.0, 0.0, 0.0], tolerances=Tolerances(max_iterations=1))
        assert not report.converged
        assert "max-iterations" in report.flags
        assert report.iterations == 1

    def test_exact_fit_without_dof_flags_covariance(self):
        report = least_squares(ZeroInterceptLine(), [2.0], [6.0], [1.0])
        assert report.value("slope") == pytest.approx(3.0, rel=1e-8)
        assert "no-dof" in report.flags
        assert math.isnan(report.sigma("slope"))

    def test_rank_deficient_jacobian_raises(self):
        x = np.full(5, 1.5)
        with pytest.raises(FitFailureError):
            least_squares(Quadratic(), x, x, [1.0, 1.0, 1.0])

    def test_non_finite_start_raises(self):
        x = np.linspace(0.0, 1e6, 5)
        with pytest.raises(FitFailureError):
            least_squares(ExponentialDecay(), x, np.zeros(5), [-1e6, 0.0, 1.0])

    def test_too_few_points(self):
        with pytest.raises(InvalidInputError):
            least_squares(Quadratic(), [0.0, 1.0], [0.0, 1.0], [0.0, 0.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            least_squares(ZeroInterceptLine(), [0.0, 1.0, 2.0], [0.0, 1.0], [1.0])

    def test_non_positive_sigma(self):
        with pytest.raises(InvalidInputError):
            least_squares(ZeroInterceptLine(), [1.0, 2.0], [1.0, 2.0], [1.0], sigma=[1.0, 0.0])

    def test_report_serializes(self):
        x = np.linspace(0.0, 3.0, 7)
        document = least_squares(ZeroInterceptLine(), x, 2.0 * x + 0.01 * np.sin(x), [1.0]).to_dict()
        assert document["model"] == "zero_intercept_line"
        assert set(document) >= {"params", "sigmas", "residual_norm", "iterations", "converged", "flags"}


class TestZeroInterceptLine:
    def test_exact_data(self):
        estimate = linear_fit_zero_intercept([1.0, 2.0, 3.0], [2.0, 4.0, 6.0])
        assert estimate.slope == pytest.approx(2.0)
        assert estimate.sigma == pytest.approx(0.0, abs=1e-12)

    def test_sigma_from_weights(self):
        estimate = linear_fit_zero_intercept([1.0, 2.0, 3.0], [2.0, 4.0, 6.0], sigma=[1.0, 1.0, 1.0])
        assert estimate.sigma == pytest.approx(1.0 / math.sqrt(14.0))

    def test_all_zero_abscissa(self):
        with pytest.raises(DomainError):
            linear_fit_zero_intercept([0.0, 0.0], [1.0, 2.0])

    def test_single_point(self):
        with pytest.raises(InvalidInputError):
            linear_fit_zero_intercept([1.0], [1.0])


class TestDecayFit:
    def test_recovers_noise_free_curve(self):
        tau = np.linspace(0.0, 500.0, 20)
        population = 0.95 - 0.9 * np.exp(-10.0 * tau * 1e-3)
        report = fit_exponential_decay(DecayCurve(tau, population))
        assert report.converged
        assert report.value("gamma_khz") == pytest.approx(10.0, rel=1e-6)
        assert report.value("p_inf") == pytest.approx(0.95, abs=1e-6)
        assert report.value("amplitude") == pytest.approx(-0.9, abs=1e-6)

    def test_constant_curve_is_degenerate(self):
        report = fit_exponential_decay(DecayCurve(np.arange(6.0), np.full(6, 0.4)))
        assert not report.converged
        assert "degenerate-amplitude" in report.flags
        assert report.value("p_inf") == pytest.approx(0.4)

    def test_needs_four_points(self):
        with pytest.raises(InvalidInputError):
            fit_exponential_decay(DecayCurve([0.0, 1.0, 2.0], [0.1, 0.5, 0.7]))

    def test_curve_validation(self):
        with pytest.raises(InvalidInputError):
            DecayCurve([0.0, 2.0, 1.0], [0.1, 0.2, 0.3])
        with pytest.raises(InvalidInputError):
            DecayCurve([0.0, 1.0], [0.1, 1.5])


class TestLorentzian:
    def test_recovers_peak(self):
        x = np.linspace(11.9, 12.2, 61)
        spectrum = Spectrum(x, lorentzian(x, 12.06, 0.035, 9.0, 1.0))
        report = fit_lorentzian_peak(spectrum)
        assert report.converged
        assert report.value("center") == pytest.approx(12.06, abs=1e-8)
        assert report.value("fwhm") == pytest.approx(0.035, rel=1e-6)
        assert report.value("amplitude") == pytest.approx(9.0, rel=1e-6)
        assert report.value("baseline") == pytest.approx(1.0, abs=1e-6)

    def test_flat_spectrum_has_no_peak(self):
        x = np.linspace(0.0, 1.0, 20)
        with pytest.raises(FitFailureError):
            fit_lorentzian_peak(Spectrum(x, np.ones_like(x)))

    def test_needs_eight_points(self):
        x = np.linspace(0.0, 1.0, 5)
        with pytest.raises(InvalidInputError):
            fit_lorentzian_peak(Spectrum(x, lorentzian(x, 0.5, 0.1, 1.0)))

    def test_spectrum_must_increase(self):
        with pytest.raises(InvalidInputError):
            Spectrum([1.0, 1.0, 2.0], [0.0, 1.0, 2.0])


class TestScanPeaks:
    def test_two_separated_peaks(self):
        x = 11.5 + 0.005 * np.arange(301)
        values = 1.0 + lorentzian(x, 12.0, 0.035, 9.0) + lorentzian(x, 12.5, 0.035, 6.0)
        peaks = scan_peaks(Spectrum(x, values), prominence=1.0, min_separation=0.05)
        assert len(peaks) == 2
        assert peaks[0].center == pytest.approx(12.0, abs=1e-3)
        assert peaks[1].center == pytest.approx(12.5, abs=1e-3)
        assert peaks[0].amplitude > peaks[1].amplitude

    def test_close_peaks_merge_into_tallest(self):
        x = 11.9 + 0.005 * np.arange(41)
        values = 1.0 + lorentzian(x, 12.0, 0.005, 9.0) + lorentzian(x, 12.02, 0.005, 5.0)
        peaks = scan_peaks(Spectrum(x, values), prominence=1.0, min_separation=0.05)
        assert len(peaks) == 1
        assert 11.99 <= peaks[0].center <= 12.03
        assert "merged" in peaks[0].flags

    def test_nothing_above_prominence(self):
        x = np.linspace(0.0, 1.0, 50)
        assert scan_peaks(Spectrum(x, np.sin(x)), prominence=10.0, min_separation=0.1) == []


class TestAngleFit:
    def test_sin_squared_amplitude(self):
        theta = np.array([30.0, 60.0, 90.0])
        estimate = fit_angle_amplitude(theta, 8.0 * np.sin(np.radians(theta)) ** 2)
        assert estimate.slope == pytest.approx(8.0)

    def test_single_angle(self):
        estimate = fit_angle_amplitude([90.0], [5.0])
        assert estimate.slope == pytest.approx(5.0)
        assert math.isnan(estimate.sigma)

    def test_only_axial_angles(self):
        with pytest.raises(DomainError):
            fit_angle_amplitude([0.0, 180.0], [1.0, 1.0])
