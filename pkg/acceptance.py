"""
Reproduction suite: every analytic anchor and round-trip property the
toolkit must meet, evaluated on seeded synthetic data.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import structlog

from cavity_optics import (
    C_LINE_THZ,
    CoupledOpticalSystem,
    Emitter,
    OpticalCavity,
    fit_reflectance,
    optical_cooperativity,
    reflectance,
)
from errors import PurcellError
from fit_core import DecayCurve, Spectrum, fit_angle_amplitude, fit_exponential_decay, fit_lorentzian_peak
from fit_models import check_jacobian
from measurement_sim import PulseSequence, RateModel, build_decay_curve
from model_registry import get_model_by_name, list_models
from optomechanics import backaction_series, fit_backaction_pair
from run_config import derive_seed
from siv_model import calibrate_conversion, four_lines, transverse_strain_from_splitting
from spin_phonon import (
    MechanicalMode,
    SpinQubit,
    angle_scaling,
    broadband_decay_spectrum,
    infer_g_sm,
    purcell_rate,
    spin_mechanical_cooperativities,
    strain_quenching_factor,
)
from thermometry import bose_occupancy, orbital_ground_fraction

logger = structlog.get_logger(__name__)

# interval ends that the anchors hit exactly in closed form
EDGE_SLACK = 1e-9

BREATHING_MODE_GHZ = 12.06


@dataclass
class CriterionResult:
    """Result of a single acceptance criterion"""
    number: int
    name: str
    passed: bool
    measured: Dict[str, float] = field(default_factory=dict)
    expected: str = ""
    reason: Optional[str] = None
    seconds: float = 0.0


def _within(value: float, lo: float, hi: float) -> bool:
    slack = EDGE_SLACK * max(abs(lo), abs(hi), 1.0)
    return lo - slack <= value <= hi + slack


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b)


def _mode_with_linewidth(kappa_mhz: float, g_mhz: float, omega: float = BREATHING_MODE_GHZ) -> MechanicalMode:
    return MechanicalMode(omega_q=omega, q_factor=1000.0 * omega / kappa_mhz, g_q=g_mhz)


def criterion_optical_cooperativity(seed: int) -> CriterionResult:
    c_o = optical_cooperativity(3.6, 15.0, 0.11)
    return CriterionResult(1, "optical cooperativity", abs(c_o - 31.0) <= 0.5, {"c_o": c_o}, "31 +- 0.5")


def criterion_spin_phonon_inversion(seed: int) -> CriterionResult:
    g = infer_g_sm(10.0, 1.0, 35.0)
    forward = purcell_rate(g, _mode_with_linewidth(35.0, g), BREATHING_MODE_GHZ, 1.0)
    passed = abs(g - 0.3) <= 0.03 and _rel(forward, 10.0) <= 1e-10
    return CriterionResult(
        2, "spin-phonon inversion", passed,
        {"g_sm_mhz": g, "forward_khz": forward},
        "g within 10% of 0.3 MHz; forward rate 10 kHz to 1e-10",
    )


def criterion_cooperativities(seed: int) -> CriterionResult:
    g = infer_g_sm(10.0, 1.0, 35.0)
    c_t1, c_t2 = spin_mechanical_cooperativities(g, 35.0, SpinQubit(BREATHING_MODE_GHZ, 1.0, 1.0))
    passed = _within(c_t1, 9.0, 11.0) and _within(c_t2, 0.009, 0.012)
    return CriterionResult(3, "spin-mechanical cooperativities", passed, {"c_t1": c_t1, "c_t2_star": c_t2}, "C_T1 in [9, 11], C_T2* in [0.009, 0.012]")


def criterion_thermal_anchors(seed: int) -> CriterionResult:
    n_th = bose_occupancy(BREATHING_MODE_GHZ, 0.150)
    fraction = orbital_ground_fraction(85.0, 0.885)
    passed = abs(n_th - 0.0216) <= 0.005 and abs(fraction - 0.990) <= 0.002
    return CriterionResult(4, "thermal anchors", passed, {"n_th": n_th, "orbital_fraction": fraction}, "n 0.0216 +- 0.005; fraction 0.990 +- 0.002")


def criterion_strain_inference(seed: int) -> CriterionResult:
    strain = transverse_strain_from_splitting(85.0, 46.0)
    quench = strain_quenching_factor(85.0, 46.0)
    passed = abs(strain - 71.48) <= 0.01 and abs(quench - 0.541) <= 0.001
    return CriterionResult(5, "strain inference", passed, {"transverse_ghz": strain, "quench": quench}, "71.48 +- 0.01 GHz; 0.541 +- 0.001")


def criterion_mode_sum(seed: int) -> CriterionResult:
    kappa = 35.0
    mode = _mode_with_linewidth(kappa, 0.3)
    step = 0.0005
    grid = BREATHING_MODE_GHZ + step * np.arange(-100, 101)
    spectrum = broadband_decay_spectrum([mode], grid)
    peak = spectrum.values[100]
    expected_peak = 4.0 * mode.g_q**2 / mode.kappa_mhz * 1000.0
    half_index = 100 + int(round(kappa / 2.0 / 1000.0 / step))
    half = spectrum.values[half_index] / peak
    passed = _rel(peak, expected_peak) <= 1e-12 and abs(half - 0.5) <= 1e-9
    return CriterionResult(6, "mode-sum consistency", passed, {"peak_khz": peak, "half_ratio": half}, "peak 4g^2/kappa to 1e-12; half maximum at kappa/2")


def _lorentzian_spectrum(fwhm_ghz: float, noise: float, rng: Optional[np.random.Generator]) -> Spectrum:
    x = BREATHING_MODE_GHZ + np.linspace(-5.0, 5.0, 201) * fwhm_ghz
    half = fwhm_ghz / 2.0
    clean = 1.0 + 9.0 * half * half / ((x - BREATHING_MODE_GHZ) ** 2 + half * half)
    if noise == 0:
        return Spectrum(x, clean)
    sigma = noise * clean
    return Spectrum(x, clean + rng.normal(0.0, sigma), sigma)


def criterion_linewidth_scenarios(seed: int) -> CriterionResult:
    rng = np.random.default_rng(derive_seed(seed, "acceptance:linewidth"))
    measured = {}
    passed = True
    for label, fwhm in (("ald", 0.035), ("gas", 0.200)):
        clean = fit_lorentzian_peak(_lorentzian_spectrum(fwhm, 0.0, None)).value("fwhm")
        noisy = fit_lorentzian_peak(_lorentzian_spectrum(fwhm, 0.05, rng)).value("fwhm")
        measured[f"{label}_noiseless_ghz"] = clean
        measured[f"{label}_noisy_ghz"] = noisy
        passed = passed and _rel(clean, fwhm) <= 0.01 and _rel(noisy, fwhm) <= 0.05
    return CriterionResult(7, "linewidth scenarios", passed, measured, "35 and 200 MHz within 1% (noiseless), 5% (5% noise)")


def criterion_backaction(seed: int) -> CriterionResult:
    rng = np.random.default_rng(derive_seed(seed, "acceptance:backaction"))
    powers = np.linspace(0.0, 50.0, 11)
    measured = {}
    passed = True
    for kappa0 in (350.0, 650.0):
        exact = fit_backaction_pair(
            backaction_series(powers, "red", kappa0, 5.0),
            backaction_series(powers, "blue", kappa0, 5.0),
        )
        noisy = fit_backaction_pair(
            backaction_series(powers, "red", kappa0, 5.0, noise=0.05, rng=rng),
            backaction_series(powers, "blue", kappa0, 5.0, noise=0.05, rng=rng),
        )
        measured[f"exact_{int(kappa0)}_khz"] = exact.kappa_intrinsic
        measured[f"noisy_{int(kappa0)}_khz"] = noisy.kappa_intrinsic
        passed = passed and _rel(exact.kappa_intrinsic, kappa0) <= 1e-10 and _rel(noisy.kappa_intrinsic, kappa0) <= 0.10
    return CriterionResult(8, "backaction extrapolation", passed, measured, "intercepts exact (noiseless), within 10% (5% noise)")


def synthetic_calibration(slope: float, sigma_slope: float, n_fields: int, rng: Optional[np.random.Generator]):
    """Four-line data whose zero-intercept fit has the requested slope scatter"""
    fields = np.linspace(0.1, 3.0, n_fields)
    x = np.concatenate([fields, fields])
    sigma_y = sigma_slope * math.sqrt(float(x @ x))
    # each estimator differences two lines
    sigma_line = sigma_y / math.sqrt(2.0)
    lines = []
    for b in fields:
        clean = four_lines(406700.0, slope * b, 3.1 * b)
        if rng is None:
            lines.append(clean)
            continue
        jitter = rng.normal(0.0, sigma_line, 4)
        lines.append(type(clean)(
            f_dd=clean.f_dd + jitter[0],
            f_uu=clean.f_uu + jitter[1],
            f_du=clean.f_du + jitter[2],
            f_ud=clean.f_ud + jitter[3],
        ))
    return fields, lines


def criterion_calibration(seed: int) -> CriterionResult:
    rng = np.random.default_rng(derive_seed(seed, "acceptance:calibration"))
    exact = calibrate_conversion(*synthetic_calibration(2.7, 0.186, 12, None))
    noisy = calibrate_conversion(*synthetic_calibration(2.7, 0.186, 100, rng))
    passed = abs(exact.slope - 2.7) <= 1e-12 and abs(noisy.sigma - 0.186) <= 0.3 * 0.186
    return CriterionResult(
        9, "calibration", passed,
        {"slope_exact": exact.slope, "slope_noisy": noisy.slope, "sigma_noisy": noisy.sigma},
        "slope 2.700 exact; sigma 0.186 +- 30%",
    )


def t1_pipeline(gamma_s: float, seed: int, analytic: bool) -> float:
    template = PulseSequence(repump_duration=20.0, pump_duration=50.0, wait_tau=0.0, probe_duration=50.0, bin_width=100.0, repetitions=100_000)
    model = RateModel(pump_rate=2.0, gamma_s=gamma_s, p_thermal_up=0.0656, detect_rate_max=5.0, background=0.01, init_fidelity=0.95)
    taus = np.linspace(0.0, 5000.0 / gamma_s, 20)
    curve: DecayCurve = build_decay_curve(template, taus, model, derive_seed(seed, f"acceptance:t1:{gamma_s}"), analytic=analytic)
    report = fit_exponential_decay(curve)
    return report.value("gamma_khz")


def criterion_t1_pipeline(seed: int) -> CriterionResult:
    measured = {}
    passed = True
    for gamma_s in (1.0, 10.0):
        exact = t1_pipeline(gamma_s, seed, analytic=True)
        noisy = t1_pipeline(gamma_s, seed, analytic=False)
        measured[f"analytic_{gamma_s:g}_khz"] = exact
        measured[f"noisy_{gamma_s:g}_khz"] = noisy
        passed = passed and _rel(exact, gamma_s) <= 1e-8 and _rel(noisy, gamma_s) <= 0.02
    return CriterionResult(10, "end-to-end T1 pipeline", passed, measured, "gamma_s within 2% (noisy), 1e-8 (analytic)")


def criterion_angle_law(seed: int) -> CriterionResult:
    amplitude = 50.0
    theta = np.array([0.0, 20.0, 45.0, 70.0, 90.0])
    fit = fit_angle_amplitude(theta, angle_scaling(theta, amplitude))
    at_zero = float(angle_scaling(0.0, amplitude))
    passed = _rel(fit.slope, amplitude) <= 1e-12 and at_zero == 0.0
    return CriterionResult(11, "angle law", passed, {"amplitude_khz": fit.slope, "gamma_at_0": at_zero}, "A to machine precision; Gamma(0) = 0")


def criterion_fitting_engine(seed: int) -> CriterionResult:
    measured = {name: check_jacobian(get_model_by_name(name)) for name in list_models()}
    passed = all(err <= 1e-5 for err in measured.values())
    spectrum = _lorentzian_spectrum(0.035, 0.05, np.random.default_rng(derive_seed(seed, "acceptance:determinism")))
    first = fit_lorentzian_peak(spectrum)
    second = fit_lorentzian_peak(spectrum)
    deterministic = first.to_dict() == second.to_dict() and np.array_equal(first.values, second.values)
    measured["deterministic"] = float(deterministic)
    return CriterionResult(12, "fitting engine", passed and deterministic, measured, "Jacobians within 1e-5; bit-identical repeats")


def criterion_reflectance(seed: int) -> CriterionResult:
    truth = CoupledOpticalSystem(
        cavity=OpticalCavity.from_rates(C_LINE_THZ, 15.0, 4.0),
        emitter=Emitter(C_LINE_THZ, 0.11),
        g_so=3.6,
    )
    probe = C_LINE_THZ + np.linspace(-0.04, 0.04, 201)
    spectrum = Spectrum(probe, reflectance(truth, probe), units="THz")
    init = CoupledOpticalSystem(
        cavity=OpticalCavity.from_rates(C_LINE_THZ, 14.0, 3.5),
        emitter=Emitter(C_LINE_THZ, 0.12),
        g_so=3.4,
    )
    fit = fit_reflectance(spectrum, init, "under")
    recovered = {
        "g_so": (fit.system.g_so, 3.6),
        "kappa": (fit.system.cavity.kappa_total, 15.0),
        "kappa_e": (fit.system.cavity.kappa_e, 4.0),
        "gamma_o": (fit.system.emitter.gamma_o, 0.11),
    }
    bare = CoupledOpticalSystem(truth.cavity, truth.emitter, 0.0)
    dip = reflectance(bare, C_LINE_THZ)
    closed_form = (1.0 - 4.0 / 7.5) ** 2
    passed = all(_rel(v, t) <= 1e-6 for v, t in recovered.values())
    passed = passed and abs(dip - closed_form) <= 1e-6 and round(dip, 4) == 0.2178
    measured = {name: v for name, (v, _) in recovered.items()}
    measured["bare_dip"] = dip
    return CriterionResult(13, "reflectance identifiability", passed, measured, "round trip to 1e-6; bare dip 0.2178")


CRITERIA: List[Callable[[int], CriterionResult]] = [
    criterion_optical_cooperativity,
    criterion_spin_phonon_inversion,
    criterion_cooperativities,
    criterion_thermal_anchors,
    criterion_strain_inference,
    criterion_mode_sum,
    criterion_linewidth_scenarios,
    criterion_backaction,
    criterion_calibration,
    criterion_t1_pipeline,
    criterion_angle_law,
    criterion_fitting_engine,
    criterion_reflectance,
]


def run_acceptance_suite(seed: int) -> List[CriterionResult]:
    """Run every criterion; a raised toolkit error counts as a failure"""
    results = []
    for number, criterion in enumerate(CRITERIA, start=1):
        started = time.perf_counter()
        try:
            result = criterion(seed)
        except PurcellError as e:
            result = CriterionResult(number, criterion.__name__.replace("criterion_", ""), False, reason=str(e))
        result.seconds = time.perf_counter() - started
        logger.info("criterion_evaluated", number=result.number, name=result.name, passed=result.passed)
        results.append(result)
    return results


def generate_report(results: List[CriterionResult], seed: int) -> str:
    """Markdown summary of an acceptance run"""
    passed = sum(r.passed for r in results)
    lines = [
        "# Acceptance report",
        "",
        f"- seed: {seed}",
        f"- passed: {passed}/{len(results)}",
        "",
        "| # | criterion | result | measured | expected |",
        "|---|-----------|--------|----------|----------|",
    ]
    for r in results:
        measured = ", ".join(f"{k}={v:.6g}" for k, v in r.measured.items()) or (r.reason or "")
        lines.append(f"| {r.number} | {r.name} | {'PASS' if r.passed else 'FAIL'} | {measured} | {r.expected} |")
    lines.append("")
    return "\n".join(lines)
