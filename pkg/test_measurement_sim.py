import math
from dataclasses import replace

import numpy as np
import pytest

from errors import ExtractionError, InvalidInputError
from measurement_sim import (
    Histogram,
    PulseSequence,
    RateModel,
    build_decay_curve,
    expected_counts,
    extract_population,
    population_trajectory,
    simulate_histogram,
    truth_curve,
)
from thermometry import SpinState

SEQUENCE = PulseSequence(repump_duration=20.0, pump_duration=50.0, wait_tau=50.0, probe_duration=50.0)
MODEL = RateModel(pump_rate=2.0, gamma_s=10.0, detect_rate_max=5.0)


def test_segment_markers():
    hist = simulate_histogram(SEQUENCE, MODEL, seed=1, analytic=True)
    assert hist.markers == {"repump": (0, 200), "pump": (200, 700), "wait": (700, 1200), "probe": (1200, 1700)}
    assert len(hist.counts) == 1700
    assert hist.effective_tau_us == pytest.approx(50.0)
    assert hist.bin_starts[200] == pytest.approx(20000.0)
    assert not hist.warnings


def test_wait_rounds_down_to_whole_bins():
    seq = PulseSequence(20.0, 50.0, 0.15, 50.0)
    hist = simulate_histogram(seq, MODEL, seed=1, analytic=True)
    assert hist.effective_tau_us == pytest.approx(0.1)
    assert any("wait" in w for w in hist.warnings)


def test_pulse_shorter_than_a_bin():
    with pytest.raises(InvalidInputError):
        expected_counts(PulseSequence(20.0, 0.05, 1.0, 50.0), MODEL)


def test_sequence_validation():
    with pytest.raises(InvalidInputError):
        PulseSequence(20.0, 50.0, -1.0, 50.0)
    with pytest.raises(InvalidInputError):
        PulseSequence(20.0, 50.0, 1.0, 50.0, repetitions=0)


def test_rate_model_validation():
    with pytest.raises(InvalidInputError):
        RateModel(init_fidelity=0.0)
    with pytest.raises(InvalidInputError):
        RateModel(p_thermal_up=1.5)
    assert RateModel(addressed_state="up").p_equilibrium == pytest.approx(0.0656)
    assert RateModel().p_equilibrium == pytest.approx(1.0 - 0.0656)


def test_relaxation():
    model = RateModel(gamma_s=10.0, addressed_state=SpinState.DOWN)
    assert model.relaxed_population(0.0, 100.0) == pytest.approx(model.p_equilibrium * (1.0 - math.exp(-1.0)))


def test_same_seed_same_histogram():
    seq = PulseSequence(20.0, 50.0, 50.0, 50.0, repetitions=25_000)
    first = simulate_histogram(seq, MODEL, seed=42)
    second = simulate_histogram(seq, MODEL, seed=42)
    other = simulate_histogram(seq, MODEL, seed=43)
    assert np.array_equal(first.counts, second.counts)
    assert not np.array_equal(first.counts, other.counts)
    assert first.counts.dtype.kind == "i"


def test_analytic_histogram_is_expected_counts():
    mean, _, _ = expected_counts(SEQUENCE, MODEL)
    hist = simulate_histogram(SEQUENCE, MODEL, seed=0, analytic=True)
    assert np.array_equal(hist.counts, mean)
    assert hist.analytic


def test_trajectory_follows_pump():
    t, p = population_trajectory(SEQUENCE, MODEL)
    assert len(t) == len(p) == 1700
    assert p[200] == pytest.approx(0.95 * math.exp(-2.0 * 0.05))
    assert np.all(np.diff(t) > 0)


def test_saturated_wait_extracts_thermal_population():
    seq = PulseSequence(20.0, 50.0, 5000.0, 50.0)
    hist = simulate_histogram(seq, MODEL, seed=0, analytic=True)
    estimate = extract_population(hist, 1000.0)
    assert estimate.population == pytest.approx((1.0 - 0.0656) / 0.95, rel=1e-9)
    assert estimate.sigma > 0
    assert float(estimate) == estimate.population


@pytest.mark.parametrize("wait_tau", [0.0, 30.0, 120.0, 800.0])
def test_population_ignores_overall_count_scale(wait_tau):
    seq = PulseSequence(20.0, 50.0, wait_tau, 50.0, repetitions=50_000)
    hist = simulate_histogram(seq, MODEL, seed=0, analytic=True)
    population = extract_population(hist, 1000.0).population
    assert extract_population(hist.scaled(3.0), 1000.0).population == pytest.approx(population, rel=1e-12)
    doubled = simulate_histogram(replace(seq, repetitions=100_000), MODEL, seed=0, analytic=True)
    assert extract_population(doubled, 1000.0).population == pytest.approx(population, rel=1e-12)


def test_extraction_window_too_short():
    hist = simulate_histogram(SEQUENCE, MODEL, seed=0, analytic=True)
    with pytest.raises(InvalidInputError):
        extract_population(hist, 100.0)


def test_extraction_without_pump_signal():
    hist = Histogram(
        bin_width=100.0,
        counts=np.zeros(1700, dtype=np.int64),
        markers={"repump": (0, 200), "pump": (200, 700), "wait": (700, 1200), "probe": (1200, 1700)},
        effective_tau_us=50.0,
    )
    with pytest.raises(ExtractionError):
        extract_population(hist, 1000.0)


def test_analytic_decay_curve_matches_truth():
    taus = np.linspace(0.0, 500.0, 11)
    curve = build_decay_curve(SEQUENCE, taus, MODEL, seed=3, analytic=True)
    np.testing.assert_allclose(curve.population, truth_curve(SEQUENCE, curve.tau, MODEL), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(curve.tau, taus)


def test_adding_taus_keeps_existing_points():
    seq = PulseSequence(20.0, 50.0, 0.0, 50.0, repetitions=20_000)
    short = build_decay_curve(seq, [10.0, 50.0], MODEL, seed=9)
    longer = build_decay_curve(seq, [10.0, 30.0, 50.0], MODEL, seed=9)
    assert short.population[0] == longer.population[0]
    assert short.population[1] == longer.population[2]


def test_noisy_curve_tracks_truth():
    seq = PulseSequence(20.0, 50.0, 0.0, 50.0)
    taus = [0.0, 100.0, 300.0]
    curve = build_decay_curve(seq, taus, MODEL, seed=11)
    np.testing.assert_allclose(curve.population, truth_curve(seq, taus, MODEL), atol=0.05)


def test_decay_curve_needs_increasing_taus():
    with pytest.raises(InvalidInputError):
        build_decay_curve(SEQUENCE, [50.0, 10.0], MODEL, seed=0)
    with pytest.raises(InvalidInputError):
        build_decay_curve(SEQUENCE, [], MODEL, seed=0)
