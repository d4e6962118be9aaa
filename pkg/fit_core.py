"""
Deterministic fitting engine.

Damped Gauss-Newton (Levenberg-Marquardt) least squares with box bounds
handled by smooth variable transforms, plus the specialised fitters built
on it: zero-intercept lines, exponential decays, Lorentzian peaks, peak
scanning over broadband spectra and the sin^2 angle law.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from errors import DomainError, FitFailureError, InvalidInputError
from fit_models import BaseModel, ExponentialDecay, LorentzianPeak

logger = structlog.get_logger(__name__)

LAMBDA_START = 1e-3
LAMBDA_MIN = 1e-15
LAMBDA_MAX = 1e30
MAD_TO_SIGMA = 1.4826


@dataclass(frozen=True)
class Tolerances:
    xtol: float = 1e-10
    gtol: float = 1e-12
    max_iterations: int = 200


DEFAULT_TOLERANCES = Tolerances()


def _as_finite_array(name: str, values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


@dataclass
class Spectrum:
    """Ordered (abscissa, value, sigma) series"""
    abscissa: np.ndarray
    values: np.ndarray
    sigmas: Optional[np.ndarray] = None
    units: str = "GHz"

    def __post_init__(self):
        self.abscissa = _as_finite_array("abscissa", self.abscissa)
        self.values = _as_finite_array("values", self.values)
        if len(self.abscissa) != len(self.values):
            raise InvalidInputError("abscissa and values differ in length")
        if self.sigmas is not None:
            self.sigmas = _as_finite_array("sigmas", self.sigmas)
            if len(self.sigmas) != len(self.values):
                raise InvalidInputError("sigmas and values differ in length")
        if np.any(np.diff(self.abscissa) <= 0):
            raise InvalidInputError("abscissa must be strictly increasing")

    def __len__(self) -> int:
        return len(self.abscissa)


@dataclass
class DecayCurve:
    """Population versus wait time; tau in microseconds"""
    tau: np.ndarray
    population: np.ndarray
    sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        self.tau = _as_finite_array("tau", self.tau)
        self.population = _as_finite_array("population", self.population)
        if len(self.tau) != len(self.population):
            raise InvalidInputError("tau and population differ in length")
        if self.sigma is not None:
            self.sigma = _as_finite_array("sigma", self.sigma)
            if len(self.sigma) != len(self.tau):
                raise InvalidInputError("sigma and tau differ in length")
        if np.any(np.diff(self.tau) <= 0):
            raise InvalidInputError("tau must be strictly increasing")
        # shot noise can push extracted populations slightly outside [0, 1]
        if np.any(self.population < -0.1) or np.any(self.population > 1.1):
            raise InvalidInputError("population outside [-0.1, 1.1]")

    def __len__(self) -> int:
        return len(self.tau)


@dataclass
class FitReport:
    model: str
    param_names: Tuple[str, ...]
    values: np.ndarray
    sigmas: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    gradient_norm: float = float("nan")
    covariance: Optional[np.ndarray] = None
    reduced_chi2: float = float("nan")
    flags: List[str] = field(default_factory=list)

    @property
    def params(self) -> Dict[str, float]:
        return {name: float(v) for name, v in zip(self.param_names, self.values)}

    @property
    def uncertainties(self) -> Dict[str, float]:
        return {name: float(s) for name, s in zip(self.param_names, self.sigmas)}

    def value(self, name: str) -> float:
        return float(self.values[self.param_names.index(name)])

    def sigma(self, name: str) -> float:
        return float(self.sigmas[self.param_names.index(name)])

    def to_dict(self) -> Dict:
        return {
            "model": self.model,
            "params": self.params,
            "sigmas": self.uncertainties,
            "residual_norm": float(self.residual_norm),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "gradient_norm": float(self.gradient_norm),
            "reduced_chi2": float(self.reduced_chi2),
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class SlopeEstimate:
    slope: float
    sigma: float

    def to_dict(self) -> Dict[str, float]:
        return {"slope": self.slope, "sigma": self.sigma}


class _BoundTransform:
    """Maps bounded external parameters to unbounded internal ones"""

    def __init__(self, lower: np.ndarray, upper: np.ndarray):
        self.lower = lower
        self.upper = upper
        self.two_sided = np.isfinite(lower) & np.isfinite(upper)
        self.lower_only = np.isfinite(lower) & ~np.isfinite(upper)
        self.upper_only = ~np.isfinite(lower) & np.isfinite(upper)

    def to_internal(self, p: np.ndarray) -> np.ndarray:
        u = p.copy()
        lo, hi = self.lower, self.upper
        m = self.two_sided
        u[m] = np.arcsin(np.clip(2.0 * (p[m] - lo[m]) / (hi[m] - lo[m]) - 1.0, -1.0, 1.0))
        m = self.lower_only
        u[m] = np.sqrt((p[m] - lo[m] + 1.0) ** 2 - 1.0)
        m = self.upper_only
        u[m] = np.sqrt((hi[m] - p[m] + 1.0) ** 2 - 1.0)
        return u

    def to_external(self, u: np.ndarray) -> np.ndarray:
        p = u.copy()
        lo, hi = self.lower, self.upper
        m = self.two_sided
        p[m] = lo[m] + (hi[m] - lo[m]) * (np.sin(u[m]) + 1.0) / 2.0
        m = self.lower_only
        p[m] = lo[m] - 1.0 + np.sqrt(u[m] ** 2 + 1.0)
        m = self.upper_only
        p[m] = hi[m] + 1.0 - np.sqrt(u[m] ** 2 + 1.0)
        return p

    def derivative(self, u: np.ndarray) -> np.ndarray:
        """dp/du"""
        d = np.ones_like(u)
        m = self.two_sided
        d[m] = (self.upper[m] - self.lower[m]) * np.cos(u[m]) / 2.0
        m = self.lower_only
        d[m] = u[m] / np.sqrt(u[m] ** 2 + 1.0)
        m = self.upper_only
        d[m] = -u[m] / np.sqrt(u[m] ** 2 + 1.0)
        return d


def _prepare_bounds(bounds, p0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = len(p0)
    if bounds is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    lower = np.array([-np.inf if b is None else b for b in bounds[0]], dtype=float)
    upper = np.array([np.inf if b is None else b for b in bounds[1]], dtype=float)
    if lower.shape != (n,) or upper.shape != (n,):
        raise InvalidInputError("bounds must match the number of parameters")
    if np.any(lower >= upper):
        raise InvalidInputError("lower bounds must lie below upper bounds")
    if np.any(p0 < lower) or np.any(p0 > upper):
        raise InvalidInputError("initial parameters outside bounds")
    return lower, upper


def _nudge_inside(p0: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """A parameter sitting exactly on a bound has zero dp/du; move it inside"""
    p = p0.copy()
    width = np.where(np.isfinite(upper - lower), upper - lower, 1.0)
    at_lower = np.isfinite(lower) & (p == lower)
    at_upper = np.isfinite(upper) & (p == upper)
    p[at_lower] += 1e-6 * width[at_lower]
    p[at_upper] -= 1e-6 * width[at_upper]
    return p


def least_squares(
    model: BaseModel,
    x,
    y,
    p0,
    sigma=None,
    bounds=None,
    tolerances: Optional[Tolerances] = None,
) -> FitReport:
    """
    Damped Gauss-Newton fit of model to (x, y).

    Damping starts at 1e-3 and is divided by 10 after an accepted step and
    multiplied by 10 after a rejected one (Marquardt diagonal scaling).
    Converges when the internal step satisfies |du| <= xtol (|u| + xtol) or
    the gradient norm drops below gtol. Hitting the iteration cap returns a
    non-converged report. Bounds are (lower, upper) sequences with None or
    +-inf for free sides.
    """
    tol = tolerances or DEFAULT_TOLERANCES
    x = _as_finite_array("x", x)
    y = _as_finite_array("y", y)
    p0 = _as_finite_array("p0", p0)
    n_params = model.n_params or len(p0)
    if len(x) != len(y):
        raise InvalidInputError("x and y differ in length")
    if len(p0) != n_params:
        raise InvalidInputError(f"{model.config.name} takes {n_params} parameters, got {len(p0)}")
    if len(x) < n_params:
        raise InvalidInputError(f"need at least {n_params} points, got {len(x)}")
    if sigma is None:
        sqrt_w = np.ones_like(y)
    else:
        sigma = _as_finite_array("sigma", sigma)
        if len(sigma) != len(y):
            raise InvalidInputError("sigma and y differ in length")
        if np.any(sigma <= 0):
            raise InvalidInputError("sigma must be positive")
        sqrt_w = 1.0 / sigma

    lower, upper = _prepare_bounds(bounds, p0)
    transform = _BoundTransform(lower, upper)
    u = transform.to_internal(_nudge_inside(p0, lower, upper))
    p = transform.to_external(u)

    def weighted_residual(params: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            return (y - model.evaluate(x, params)) * sqrt_w

    def weighted_jacobian(params: np.ndarray) -> np.ndarray:
        return model.jacobian(x, params) * sqrt_w[:, None]

    r = weighted_residual(p)
    cost = float(r @ r)
    if not math.isfinite(cost):
        raise FitFailureError("model is not finite at the initial parameters")
    if np.linalg.matrix_rank(weighted_jacobian(p)) < n_params:
        raise FitFailureError(
            f"singular Jacobian for {model.config.name} at the initial parameters",
            residual_norm=math.sqrt(cost),
        )

    lam = LAMBDA_START
    converged = False
    flags: List[str] = []
    gradient_norm = float("nan")
    iteration = 0
    for iteration in range(1, tol.max_iterations + 1):
        ju = weighted_jacobian(p) * transform.derivative(u)[None, :]
        a = ju.T @ ju
        g = ju.T @ r
        gradient_norm = float(np.linalg.norm(g))
        if gradient_norm < tol.gtol:
            converged = True
            break
        diag = np.diag(a)
        diag = np.maximum(diag, 1e-12 * max(float(diag.max()), 1e-300))
        accepted = False
        small_step = False
        while lam <= LAMBDA_MAX:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                raise FitFailureError(
                    f"singular normal matrix for {model.config.name}",
                    residual_norm=math.sqrt(cost),
                )
            small_step = float(np.linalg.norm(step)) <= tol.xtol * (float(np.linalg.norm(u)) + tol.xtol)
            u_trial = u + step
            p_trial = transform.to_external(u_trial)
            r_trial = weighted_residual(p_trial)
            cost_trial = float(r_trial @ r_trial)
            if math.isfinite(cost_trial) and cost_trial < cost:
                u, p, r, cost = u_trial, p_trial, r_trial, cost_trial
                lam = max(lam / 10.0, LAMBDA_MIN)
                accepted = True
                break
            if small_step:
                break
            lam *= 10.0
        if small_step:
            converged = True
            break
        if not accepted:
            flags.append("stalled")
            break

    n_points = len(x)
    dof = n_points - n_params
    jp = weighted_jacobian(p)
    try:
        covariance = np.linalg.inv(jp.T @ jp)
    except np.linalg.LinAlgError:
        covariance = np.linalg.pinv(jp.T @ jp)
        flags.append("singular-covariance")
    reduced_chi2 = cost / dof if dof > 0 else float("nan")
    if sigma is None:
        if dof > 0:
            covariance = covariance * reduced_chi2
        else:
            covariance = np.full_like(covariance, np.nan)
            flags.append("no-dof")
    sigmas = np.sqrt(np.abs(np.diag(covariance)))

    if not converged and not flags:
        flags.append("max-iterations")
    report = FitReport(
        model=model.config.name,
        param_names=tuple(model.config.param_names) or tuple(f"p{i}" for i in range(n_params)),
        values=p,
        sigmas=sigmas,
        residual_norm=math.sqrt(cost),
        iterations=iteration,
        converged=converged,
        gradient_norm=gradient_norm,
        covariance=covariance,
        reduced_chi2=reduced_chi2,
        flags=flags,
    )
    logger.debug(
        "fit_complete",
        model=report.model,
        iterations=report.iterations,
        converged=report.converged,
        residual_norm=report.residual_norm,
    )
    return report


def linear_fit_zero_intercept(x, y, sigma=None) -> SlopeEstimate:
    """
    Weighted slope through the origin: sum(w x y) / sum(w x^2).

    Without sigmas the slope uncertainty is scaled by the reduced chi-square.
    """
    x = _as_finite_array("x", x)
    y = _as_finite_array("y", y)
    if len(x) != len(y):
        raise InvalidInputError("x and y differ in length")
    if len(x) < 2:
        raise InvalidInputError("need at least 2 points")
    if np.all(x == 0):
        raise DomainError("all x are zero; slope is undefined")
    if sigma is None:
        w = np.ones_like(x)
    else:
        sigma = _as_finite_array("sigma", sigma)
        if np.any(sigma <= 0):
            raise InvalidInputError("sigma must be positive")
        w = 1.0 / sigma**2
    sxx = float(np.sum(w * x * x))
    slope = float(np.sum(w * x * y)) / sxx
    if sigma is None:
        residual = y - slope * x
        sigma_slope = math.sqrt(float(residual @ residual) / (len(x) - 1) / sxx)
    else:
        sigma_slope = math.sqrt(1.0 / sxx)
    return SlopeEstimate(slope=slope, sigma=sigma_slope)


def _degenerate_decay(curve: DecayCurve) -> FitReport:
    model = ExponentialDecay()
    return FitReport(
        model=model.config.name,
        param_names=model.config.param_names,
        values=np.array([float("nan"), float(np.mean(curve.population)), 0.0]),
        sigmas=np.full(3, float("nan")),
        residual_norm=0.0,
        iterations=0,
        converged=False,
        flags=["degenerate-amplitude"],
    )


def _seed_decay(tau: np.ndarray, population: np.ndarray) -> np.ndarray:
    tail = max(1, len(tau) // 5)
    p_inf = float(np.mean(population[-tail:]))
    amplitude = float(population[0] - p_inf)
    span_us = float(tau[-1] - tau[0])
    gamma = 3.0e3 / span_us if span_us > 0 else 1.0
    if amplitude != 0.0:
        offset = (population - p_inf) / amplitude
        usable = offset > 0.05
        if np.count_nonzero(usable) >= 2:
            slope, _ = np.polyfit(tau[usable], np.log(offset[usable]), 1)
            if slope < 0:
                gamma = -slope * 1e3
    return np.array([gamma, p_inf, amplitude])


def fit_exponential_decay(curve: DecayCurve, tolerances: Optional[Tolerances] = None) -> FitReport:
    """p(tau) = p_inf + amplitude * exp(-gamma_s * tau); gamma_s in kHz, tau in us"""
    if len(curve) < 4:
        raise InvalidInputError("need at least 4 points for a decay fit")
    if np.ptp(curve.population) <= 1e-12 * max(1.0, float(np.max(np.abs(curve.population)))):
        logger.warning("degenerate_decay_curve", points=len(curve))
        return _degenerate_decay(curve)
    p0 = _seed_decay(curve.tau, curve.population)
    return least_squares(
        ExponentialDecay(),
        curve.tau,
        curve.population,
        p0,
        sigma=curve.sigma,
        tolerances=tolerances,
    )


def _noise_level(spectrum: Spectrum) -> float:
    if spectrum.sigmas is not None:
        return float(np.median(spectrum.sigmas))
    diffs = np.diff(spectrum.values)
    return float(MAD_TO_SIGMA * np.median(np.abs(diffs - np.median(diffs))) / math.sqrt(2.0))


def _half_max_crossing(x: np.ndarray, v: np.ndarray, peak: int, level: float, direction: int) -> Optional[float]:
    i = peak
    while 0 <= i + direction < len(x):
        j = i + direction
        if v[j] < level:
            frac = (v[i] - level) / (v[i] - v[j])
            return float(x[i] + frac * (x[j] - x[i]))
        i = j
    return None


def _seed_lorentzian(spectrum: Spectrum) -> np.ndarray:
    x, v = spectrum.abscissa, spectrum.values
    edge = max(1, len(x) // 10)
    baseline = float(min(np.mean(v[:edge]), np.mean(v[-edge:])))
    peak = int(np.argmax(v))
    amplitude = float(v[peak] - baseline)
    level = baseline + amplitude / 2.0
    left = _half_max_crossing(x, v, peak, level, -1)
    right = _half_max_crossing(x, v, peak, level, +1)
    if left is not None and right is not None:
        fwhm = right - left
    elif left is not None:
        fwhm = 2.0 * (x[peak] - left)
    elif right is not None:
        fwhm = 2.0 * (right - x[peak])
    else:
        fwhm = float(x[-1] - x[0]) / 4.0
    fwhm = max(fwhm, float(np.min(np.diff(x))))
    return np.array([float(x[peak]), fwhm, amplitude, baseline])


def fit_lorentzian_peak(spectrum: Spectrum, tolerances: Optional[Tolerances] = None) -> FitReport:
    """Fit baseline + amplitude (fwhm/2)^2 / ((x - center)^2 + (fwhm/2)^2)"""
    if len(spectrum) < 8:
        raise InvalidInputError("need at least 8 points for a Lorentzian fit")
    p0 = _seed_lorentzian(spectrum)
    noise = _noise_level(spectrum)
    if p0[2] <= 3.0 * noise:
        raise FitFailureError(f"no peak above baseline by 3 sigma (amplitude {p0[2]:.3g}, noise {noise:.3g})")
    report = least_squares(
        LorentzianPeak(),
        spectrum.abscissa,
        spectrum.values,
        p0,
        sigma=spectrum.sigmas,
        tolerances=tolerances,
    )
    report.values[1] = abs(report.values[1])
    return report


@dataclass
class PeakFit:
    center: float
    fwhm: float
    amplitude: float
    baseline: float
    report: Optional[FitReport] = None
    flags: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "center": self.center,
            "fwhm": self.fwhm,
            "amplitude": self.amplitude,
            "baseline": self.baseline,
            "flags": list(self.flags),
        }


def _local_maxima(values: np.ndarray) -> np.ndarray:
    # equal-height neighbours resolve to the lower-frequency bin
    left = np.concatenate(([-np.inf], values[:-1]))
    right = np.concatenate((values[1:], [-np.inf]))
    return np.flatnonzero((values > left) & (values >= right))


def scan_peaks(
    spectrum: Spectrum,
    prominence: float,
    min_separation: float,
    tolerances: Optional[Tolerances] = None,
) -> List[PeakFit]:
    """
    Find local maxima above median(values) + prominence, keep the tallest
    ones at least min_separation apart, and refine each with a Lorentzian
    fit over the window reaching halfway to its neighbours.
    """
    if len(spectrum) == 0:
        raise InvalidInputError("spectrum is empty")
    x, v = spectrum.abscissa, spectrum.values
    floor = float(np.median(v))
    candidates = [i for i in _local_maxima(v) if v[i] - floor > prominence]
    candidates.sort(key=lambda i: (-v[i], x[i]))

    accepted: List[int] = []
    merged = set()
    for i in candidates:
        near = [j for j in accepted if abs(x[j] - x[i]) < min_separation]
        if near:
            merged.add(min(near, key=lambda j: abs(x[j] - x[i])))
            continue
        accepted.append(i)
    accepted.sort(key=lambda i: x[i])

    peaks: List[PeakFit] = []
    for k, i in enumerate(accepted):
        lo = x[0] if k == 0 else 0.5 * (x[accepted[k - 1]] + x[i])
        hi = x[-1] if k == len(accepted) - 1 else 0.5 * (x[i] + x[accepted[k + 1]])
        window = (x >= lo) & (x <= hi)
        flags = ["merged"] if i in merged else []
        try:
            report = fit_lorentzian_peak(
                Spectrum(
                    x[window],
                    v[window],
                    None if spectrum.sigmas is None else spectrum.sigmas[window],
                    spectrum.units,
                ),
                tolerances=tolerances,
            )
            if not report.converged:
                raise FitFailureError("peak fit did not converge")
            peaks.append(PeakFit(
                center=report.value("center"),
                fwhm=report.value("fwhm"),
                amplitude=report.value("amplitude"),
                baseline=report.value("baseline"),
                report=report,
                flags=flags,
            ))
        except (FitFailureError, InvalidInputError) as e:
            logger.info("peak_fit_fallback", center=float(x[i]), reason=str(e))
            peaks.append(PeakFit(
                center=float(x[i]),
                fwhm=float("nan"),
                amplitude=float(v[i] - floor),
                baseline=floor,
                flags=flags + ["fit-failed"],
            ))
    peaks.sort(key=lambda peak: peak.center)
    logger.debug("peaks_scanned", candidates=len(candidates), peaks=len(peaks))
    return peaks


def fit_angle_amplitude(theta_deg: Sequence[float], gamma, sigma=None) -> SlopeEstimate:
    """Single-parameter fit of Gamma = A sin^2(theta); theta in degrees"""
    theta = _as_finite_array("theta", theta_deg)
    gamma = _as_finite_array("gamma", gamma)
    if len(theta) != len(gamma) or len(theta) == 0:
        raise InvalidInputError("theta and gamma must be non-empty and equal in length")
    s2 = np.sin(np.radians(theta)) ** 2
    # sin(pi) is 1e-16, not 0
    s2[s2 < 1e-20] = 0.0
    if np.all(s2 == 0):
        raise DomainError("all angles have sin(theta) = 0; amplitude is undefined")
    if len(theta) == 1:
        amplitude = float(gamma[0] / s2[0])
        spread = float("nan") if sigma is None else float(np.asarray(sigma, dtype=float)[0] / s2[0])
        return SlopeEstimate(slope=amplitude, sigma=spread)
    return linear_fit_zero_intercept(s2, gamma, sigma)
