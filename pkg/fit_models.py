from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np


@dataclass
class ModelConfig:
    """Model configuration"""
    name: str
    description: str
    param_names: Tuple[str, ...]
    example_x: Sequence[float] = field(default_factory=tuple)
    example_params: Sequence[float] = field(default_factory=tuple)


class BaseModel:
    """Base class for least-squares models"""
    def __init__(self, config: Optional[ModelConfig] = None):
        self.config = config or ModelConfig(
            name="base",
            description="Base model",
            param_names=(),
        )

    @property
    def n_params(self) -> int:
        return len(self.config.param_names)

    def evaluate(self, x: np.ndarray, params: np.ndarray) -> np.ndarray:
        """Evaluate model at x"""
        return np.asarray(self._evaluate(np.asarray(x, dtype=float), np.asarray(params, dtype=float)), dtype=float)

    def jacobian(self, x: np.ndarray, params: np.ndarray) -> np.ndarray:
        """d model / d params, shape (len(x), n_params)"""
        return np.asarray(self._jacobian(np.asarray(x, dtype=float), np.asarray(params, dtype=float)), dtype=float)

    def _evaluate(self, x: np.ndarray, params: np.ndarray) -> np.ndarray:
        raise NotImplementedError()

    def _jacobian(self, x: np.ndarray, params: np.ndarray) -> np.ndarray:
        return finite_difference_jacobian(self, x, params)


def finite_difference_jacobian(
    model: BaseModel,
    x: np.ndarray,
    params: np.ndarray,
    rel_step: float = 1e-6
) -> np.ndarray:
    """Central differences with a relative step"""
    params = np.asarray(params, dtype=float)
    columns = []
    for i, value in enumerate(params):
        h = rel_step * max(abs(value), 1e-3)
        up = params.copy()
        down = params.copy()
        up[i] += h
        down[i] -= h
        columns.append((model._evaluate(x, up) - model._evaluate(x, down)) / (2.0 * h))
    return np.column_stack(columns)


def check_jacobian(model: BaseModel, x=None, params=None, rel_step: float = 1e-6) -> float:
    """Worst per-column error of the analytic Jacobian against central differences"""
    x = np.asarray(model.config.example_x if x is None else x, dtype=float)
    params = np.asarray(model.config.example_params if params is None else params, dtype=float)
    analytic = model.jacobian(x, params)
    numeric = finite_difference_jacobian(model, x, params, rel_step=rel_step)
    worst = 0.0
    for j in range(analytic.shape[1]):
        scale = np.max(np.abs(analytic[:, j]))
        if scale == 0.0:
            continue
        worst = max(worst, float(np.max(np.abs(analytic[:, j] - numeric[:, j])) / scale))
    return worst


class ZeroInterceptLine(BaseModel):
    """y = slope * x"""
    def __init__(self):
        super().__init__(ModelConfig(
            name="zero_intercept_line",
            description="Proportional model through the origin",
            param_names=("slope",),
            example_x=tuple(np.linspace(0.0, 3.0, 7)),
            example_params=(2.7,),
        ))

    def _evaluate(self, x, params):
        return params[0] * x

    def _jacobian(self, x, params):
        return x[:, None]


class Quadratic(BaseModel):
    """y = c0 + c1 x + c2 x^2"""
    def __init__(self):
        super().__init__(ModelConfig(
            name="quadratic",
            description="Second-order polynomial",
            param_names=("c0", "c1", "c2"),
            example_x=tuple(np.linspace(-2.0, 2.0, 9)),
            example_params=(0.5, -1.0, 2.0),
        ))

    def _evaluate(self, x, params):
        return params[0] + params[1] * x + params[2] * x * x

    def _jacobian(self, x, params):
        return np.column_stack([np.ones_like(x), x, x * x])


class ExponentialDecay(BaseModel):
    """
    p(tau) = p_inf + amplitude * exp(-gamma * tau)

    gamma in kHz and tau in microseconds; the exponent carries the 1e-3.
    """
    def __init__(self):
        super().__init__(ModelConfig(
            name="exponential_decay",
            description="Single-exponential relaxation toward a floor",
            param_names=("gamma_khz", "p_inf", "amplitude"),
            example_x=tuple(np.linspace(0.0, 500.0, 21)),
            example_params=(10.0, 0.95, -0.9),
        ))

    def _evaluate(self, x, params):
        gamma, p_inf, amplitude = params
        return p_inf + amplitude * np.exp(-gamma * x * 1e-3)

    def _jacobian(self, x, params):
        gamma, _, amplitude = params
        decay = np.exp(-gamma * x * 1e-3)
        return np.column_stack([-amplitude * x * 1e-3 * decay, np.ones_like(x), decay])


class LorentzianPeak(BaseModel):
    """baseline + amplitude * (fwhm/2)^2 / ((x - center)^2 + (fwhm/2)^2)"""
    def __init__(self):
        super().__init__(ModelConfig(
            name="lorentzian",
            description="Lorentzian peak on a constant baseline",
            param_names=("center", "fwhm", "amplitude", "baseline"),
            example_x=tuple(np.linspace(11.9, 12.2, 61)),
            example_params=(12.06, 0.035, 9.0, 1.0),
        ))

    def _evaluate(self, x, params):
        center, fwhm, amplitude, baseline = params
        half = 0.5 * fwhm
        return baseline + amplitude * half * half / ((x - center) ** 2 + half * half)

    def _jacobian(self, x, params):
        center, fwhm, amplitude, _ = params
        half = 0.5 * fwhm
        dx = x - center
        den = dx * dx + half * half
        shape = half * half / den
        d_center = amplitude * half * half * 2.0 * dx / (den * den)
        d_fwhm = amplitude * half * dx * dx / (den * den)
        return np.column_stack([d_center, d_fwhm, shape, np.ones_like(x)])
