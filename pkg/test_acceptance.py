import unittest

import numpy as np

from acceptance import (
    CRITERIA,
    CriterionResult,
    criterion_cooperativities,
    criterion_optical_cooperativity,
    criterion_reflectance,
    criterion_strain_inference,
    criterion_thermal_anchors,
    generate_report,
    run_acceptance_suite,
    synthetic_calibration,
    t1_pipeline,
)
from siv_model import calibrate_conversion

SEED = 20240601


class TestAnalyticCriteria(unittest.TestCase):
    """Closed-form anchors"""

    def test_optical_cooperativity(self):
        self.assertTrue(criterion_optical_cooperativity(SEED).passed)

    def test_cooperativities_on_interval_edges(self):
        result = criterion_cooperativities(SEED)
        self.assertTrue(result.passed)
        self.assertAlmostEqual(result.measured["c_t1"], 9.0, places=9)

    def test_thermal_and_strain_anchors(self):
        self.assertTrue(criterion_thermal_anchors(SEED).passed)
        self.assertTrue(criterion_strain_inference(SEED).passed)

    def test_reflectance_identifiability(self):
        result = criterion_reflectance(SEED)
        self.assertTrue(result.passed, result.measured)
        self.assertAlmostEqual(result.measured["bare_dip"], 0.2178, places=4)


class TestSyntheticData(unittest.TestCase):
    def test_noise_free_calibration_is_exact(self):
        estimate = calibrate_conversion(*synthetic_calibration(2.7, 0.186, 12, None))
        self.assertAlmostEqual(estimate.slope, 2.7, places=12)

    def test_noisy_calibration_scatter(self):
        rng = np.random.default_rng(3)
        estimate = calibrate_conversion(*synthetic_calibration(2.7, 0.186, 100, rng))
        self.assertLess(abs(estimate.sigma - 0.186), 0.3 * 0.186)

    def test_analytic_t1_pipeline(self):
        self.assertAlmostEqual(t1_pipeline(10.0, SEED, analytic=True) / 10.0, 1.0, places=8)


def test_full_suite_passes():
    results = run_acceptance_suite(SEED)
    assert len(results) == len(CRITERIA) == 13
    assert [r.number for r in results] == list(range(1, 14))
    failed = [(r.number, r.name, r.measured, r.reason) for r in results if not r.passed]
    assert not failed


def test_suite_is_deterministic():
    first = [r.measured for r in run_acceptance_suite(SEED)]
    second = [r.measured for r in run_acceptance_suite(SEED)]
    assert first == second


def test_report_table():
    results = [
        CriterionResult(1, "optical cooperativity", True, {"c_o": 31.4}, "31 +- 0.5"),
        CriterionResult(2, "spin-phonon inversion", False, reason="fit diverged"),
    ]
    report = generate_report(results, SEED)
    assert report.startswith("# Acceptance report")
    assert f"- seed: {SEED}" in report
    assert "- passed: 1/2" in report
    assert "| 1 | optical cooperativity | PASS | c_o=31.4 | 31 +- 0.5 |" in report
    assert "| 2 | spin-phonon inversion | FAIL | fit diverged |  |" in report
