"""
Pump-probe photon-counting simulator and population extraction.

Sequence per repetition: repump, pump, wait tau, probe. The addressed spin
state is emptied by the pump, relaxes toward its thermal population during
the wait, and is read out by the initial fluorescence of the probe.

Durations in us, bins in ns, rates in 1/us except gamma_s (kHz).
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from errors import ExtractionError, InvalidInputError, require_finite
from fit_core import DecayCurve
from physical_constants import KHZ_PER_MHZ, NS_PER_US
from run_config import derive_seed
from thermometry import SpinState

logger = structlog.get_logger(__name__)

REPETITION_BLOCK = 10_000
ROUNDING_WARN_FRACTION = 0.01
TAIL_FRACTION = 0.2
SEGMENTS = ("repump", "pump", "wait", "probe")


@dataclass(frozen=True)
class PulseSequence:
    repump_duration: float
    pump_duration: float
    wait_tau: float
    probe_duration: float
    bin_width: float = 100.0
    repetitions: int = 100_000

    def __post_init__(self):
        require_finite(
            repump_duration=self.repump_duration,
            pump_duration=self.pump_duration,
            wait_tau=self.wait_tau,
            probe_duration=self.probe_duration,
            bin_width=self.bin_width,
        )
        for name in ("repump_duration", "pump_duration", "probe_duration", "bin_width"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.wait_tau < 0:
            raise InvalidInputError("wait_tau must be non-negative")
        if self.repetitions <= 0:
            raise InvalidInputError("repetitions must be positive")

    def durations(self) -> Dict[str, float]:
        return {
            "repump": self.repump_duration,
            "pump": self.pump_duration,
            "wait": self.wait_tau,
            "probe": self.probe_duration,
        }


@dataclass(frozen=True)
class RateModel:
    pump_rate: float = 2.0
    gamma_s: float = 10.0
    p_thermal_up: float = 0.0656
    detect_rate_max: float = 0.5
    background: float = 0.01
    init_fidelity: float = 0.95
    addressed_state: SpinState = SpinState.DOWN

    def __post_init__(self):
        require_finite(
            pump_rate=self.pump_rate,
            gamma_s=self.gamma_s,
            p_thermal_up=self.p_thermal_up,
            detect_rate_max=self.detect_rate_max,
            background=self.background,
            init_fidelity=self.init_fidelity,
        )
        if min(self.pump_rate, self.gamma_s, self.detect_rate_max, self.background) < 0:
            raise InvalidInputError("rates must be non-negative")
        if not 0.0 <= self.p_thermal_up <= 1.0:
            raise InvalidInputError("p_thermal_up must lie in [0, 1]")
        if not 0.0 < self.init_fidelity <= 1.0:
            raise InvalidInputError("init_fidelity must lie in (0, 1]")
        object.__setattr__(self, "addressed_state", SpinState(self.addressed_state))

    @property
    def p_equilibrium(self) -> float:
        """Thermal population of the addressed state"""
        if self.addressed_state is SpinState.DOWN:
            return 1.0 - self.p_thermal_up
        return self.p_thermal_up

    def relaxed_population(self, p_start: float, tau_us: float) -> float:
        decay = math.exp(-self.gamma_s * tau_us / KHZ_PER_MHZ)
        return self.p_equilibrium + (p_start - self.p_equilibrium) * decay


@dataclass
class Histogram:
    bin_width: float
    counts: np.ndarray
    markers: Dict[str, Tuple[int, int]]
    effective_tau_us: float
    analytic: bool = False
    warnings: List[str] = field(default_factory=list)

    @property
    def bin_starts(self) -> np.ndarray:
        return np.arange(len(self.counts)) * self.bin_width

    def segment(self, name: str) -> np.ndarray:
        start, stop = self.markers[name]
        return self.counts[start:stop]

    def scaled(self, factor: float) -> "Histogram":
        return replace(self, counts=self.counts * factor, warnings=list(self.warnings))


@dataclass(frozen=True)
class PopulationEstimate:
    population: float
    sigma: float

    def __float__(self) -> float:
        return self.population


def _segment_bins(seq: PulseSequence) -> Tuple[Dict[str, int], List[str]]:
    bins: Dict[str, int] = {}
    warnings: List[str] = []
    for name, duration in seq.durations().items():
        n = math.floor(duration * NS_PER_US / seq.bin_width + 1e-9)
        if name != "wait" and n == 0:
            raise InvalidInputError(f"{name} pulse is shorter than one bin")
        if duration > 0:
            lost = (duration - n * seq.bin_width / NS_PER_US) / duration
            if lost > ROUNDING_WARN_FRACTION:
                message = f"{name} rounded down to {n} bins, losing {lost:.1%}"
                warnings.append(message)
                logger.warning("bin_rounding_loss", segment=name, bins=n, lost_fraction=lost)
        bins[name] = n
    return bins, warnings


def _decaying_counts(edges_us: np.ndarray, p_start: float, k: float, detect: float, background: float) -> np.ndarray:
    """Per-repetition expected counts for rate detect * p_start exp(-k t) + background"""
    t0, t1 = edges_us[:-1], edges_us[1:]
    if k > 0:
        signal = detect * p_start / k * (np.exp(-k * t0) - np.exp(-k * t1))
    else:
        signal = detect * p_start * (t1 - t0)
    return signal + background * (t1 - t0)


def _segment_edges(n_bins: int, bin_width: float) -> np.ndarray:
    return np.arange(n_bins + 1) * (bin_width / NS_PER_US)


def _populations(model: RateModel, bins: Dict[str, int], bin_width: float) -> Dict[str, float]:
    """Addressed population at the start of each segment"""
    bin_us = bin_width / NS_PER_US
    f = model.init_fidelity
    pump_end = f * math.exp(-model.pump_rate * bins["pump"] * bin_us)
    probe_start = model.relaxed_population(pump_end, bins["wait"] * bin_us)
    probe_end = probe_start * math.exp(-model.pump_rate * bins["probe"] * bin_us)
    return {"repump": probe_end, "pump": f, "wait": pump_end, "probe": probe_start}


def expected_counts(seq: PulseSequence, model: RateModel) -> Tuple[np.ndarray, Dict[str, Tuple[int, int]], List[str]]:
    """Expected counts per bin summed over all repetitions"""
    bins, warnings = _segment_bins(seq)
    starts = _populations(model, bins, seq.bin_width)
    k, detect, bg = model.pump_rate, model.detect_rate_max, model.background

    parts = []
    markers: Dict[str, Tuple[int, int]] = {}
    cursor = 0
    for name in SEGMENTS:
        edges = _segment_edges(bins[name], seq.bin_width)
        if name == "repump":
            # fluorescence from the unaddressed state while it is pumped back
            f = model.init_fidelity
            part = _decaying_counts(edges, f - starts["repump"], k, detect, bg)
            part += detect * (1.0 - f) * np.diff(edges)
        elif name == "wait":
            part = bg * np.diff(edges)
        else:
            part = _decaying_counts(edges, starts[name], k, detect, bg)
        parts.append(part)
        markers[name] = (cursor, cursor + bins[name])
        cursor += bins[name]
    return np.concatenate(parts) * seq.repetitions, markers, warnings


def population_trajectory(seq: PulseSequence, model: RateModel) -> Tuple[np.ndarray, np.ndarray]:
    """Addressed population at each bin centre, (t_us, p)"""
    bins, _ = _segment_bins(seq)
    starts = _populations(model, bins, seq.bin_width)
    bin_us = seq.bin_width / NS_PER_US
    f = model.init_fidelity
    times, values = [], []
    offset = 0.0
    for name in SEGMENTS:
        t = (np.arange(bins[name]) + 0.5) * bin_us
        if name == "repump":
            p = f + (starts["repump"] - f) * np.exp(-model.pump_rate * t)
        elif name == "wait":
            p = np.array([model.relaxed_population(starts["wait"], ti) for ti in t])
        else:
            p = starts[name] * np.exp(-model.pump_rate * t)
        times.append(t + offset)
        values.append(p)
        offset += bins[name] * bin_us
    return np.concatenate(times), np.concatenate(values)


def simulate_histogram(seq: PulseSequence, model: RateModel, seed: int, analytic: bool = False) -> Histogram:
    """
    Photon-count histogram accumulated over all repetitions.

    Repetitions are drawn in fixed blocks; block b uses the b-th child of
    SeedSequence(seed), so counts do not depend on how blocks are scheduled.
    With analytic=True the expected counts are returned instead of draws.
    """
    mean, markers, warnings = expected_counts(seq, model)
    effective_tau = markers["wait"][1] - markers["wait"][0]
    effective_tau_us = effective_tau * seq.bin_width / NS_PER_US
    if analytic:
        counts = mean
    else:
        per_repetition = mean / seq.repetitions
        n_blocks = math.ceil(seq.repetitions / REPETITION_BLOCK)
        streams = np.random.SeedSequence(seed).spawn(n_blocks)
        counts = np.zeros(len(mean), dtype=np.int64)
        for block, stream in enumerate(streams):
            size = min(REPETITION_BLOCK, seq.repetitions - block * REPETITION_BLOCK)
            rng = np.random.default_rng(stream)
            counts += rng.poisson(per_repetition * size)
    logger.debug(
        "histogram_simulated",
        bins=len(counts),
        repetitions=seq.repetitions,
        effective_tau_us=effective_tau_us,
        analytic=analytic,
    )
    return Histogram(
        bin_width=seq.bin_width,
        counts=counts,
        markers=markers,
        effective_tau_us=effective_tau_us,
        analytic=analytic,
        warnings=warnings,
    )


def _peak(hist: Histogram, name: str, window_bins: int) -> Tuple[float, float]:
    """Background-subtracted initial-window counts and their Poisson variance"""
    counts = np.asarray(hist.segment(name), dtype=float)
    if len(counts) < window_bins:
        raise InvalidInputError(f"{name} pulse is shorter than the extraction window")
    n_tail = max(1, int(TAIL_FRACTION * len(counts)))
    tail = counts[-n_tail:]
    background = float(np.mean(tail))
    head = float(np.sum(counts[:window_bins]))
    peak = head - window_bins * background
    variance = head + window_bins**2 * float(np.sum(tail)) / n_tail**2
    return peak, variance


def extract_population(hist: Histogram, window: float) -> PopulationEstimate:
    """
    Ratio of background-subtracted initial-fluorescence counts, probe over pump.

    The background of each pulse is the mean of its last 20 %; window is in ns.
    """
    window_bins = int(round(window / hist.bin_width))
    if window_bins < 2:
        raise InvalidInputError("extraction window must cover at least 2 bins")
    pump, var_pump = _peak(hist, "pump", window_bins)
    probe, var_probe = _peak(hist, "probe", window_bins)
    if pump <= 0:
        raise ExtractionError(f"pump peak is not above background ({pump:.3g} counts)")
    ratio = probe / pump
    # at least one count of uncertainty so sigma stays positive
    var_probe = max(var_probe, 1.0)
    sigma = math.sqrt(var_probe / pump**2 + ratio**2 * var_pump / pump**2)
    return PopulationEstimate(population=ratio, sigma=sigma)


def build_decay_curve(
    template: PulseSequence,
    tau_list: Sequence[float],
    model: RateModel,
    seed: int,
    window: float = 1000.0,
    analytic: bool = False,
) -> DecayCurve:
    """
    Simulate and extract one population per wait time.

    Each tau draws from the stream derive_seed(seed, "tau=<tau>"), so
    adding points leaves existing ones unchanged.
    """
    taus = np.asarray(tau_list, dtype=float)
    if taus.size == 0:
        raise InvalidInputError("tau_list is empty")
    if np.any(np.diff(taus) <= 0):
        raise InvalidInputError("tau_list must be strictly increasing")
    effective, population, sigma = [], [], []
    for tau in taus:
        seq = replace(template, wait_tau=float(tau))
        hist = simulate_histogram(seq, model, derive_seed(seed, f"tau={float(tau)!r}"), analytic=analytic)
        estimate = extract_population(hist, window)
        effective.append(hist.effective_tau_us)
        population.append(estimate.population)
        sigma.append(estimate.sigma)
    logger.info("decay_curve_built", points=len(taus), analytic=analytic)
    return DecayCurve(np.array(effective), np.array(population), np.array(sigma))


def truth_curve(template: PulseSequence, tau_list: Sequence[float], model: RateModel) -> np.ndarray:
    """Noise-free extracted population p(tau) / init_fidelity for equal pump and probe pulses"""
    bins, _ = _segment_bins(template)
    pump_end = model.init_fidelity * math.exp(-model.pump_rate * bins["pump"] * template.bin_width / NS_PER_US)
    return np.array([model.relaxed_population(pump_end, tau) for tau in tau_list]) / model.init_fidelity
