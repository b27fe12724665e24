"""Closed-form rates, kernels and temperatures for the DP and CSL models.

All functions take and return SI quantities. Vector arguments are accepted
wherever the formula is elementwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import erf

from .errors import ConfigurationError
from .units import (CONSTANTS, CoarseGraining, CSLParams, DPParams, FormFactor,
                    ModelParams, PhysicalConstants, RigidBodySpec)

SQRT_PI = math.sqrt(math.pi)

# erf(x)/x switches to its Taylor series below this argument; the two
# branches agree to better than 1e-15 there.
ERF_SERIES_THRESHOLD = 1e-4
# relative decoherence function uses a longer series further out to dodge
# the 1 - (1 - x^2/3) cancellation
D_SERIES_THRESHOLD = 1e-2


class _Sentinel:
    def __init__(self, name):
        self._name = name

    def __repr__(self):
        return self._name

    def __str__(self):
        return self._name

    def __reduce__(self):
        return self._name


NO_DECAY = _Sentinel("NO_DECAY")
"""Damping time at zero separation: diagonal elements never decay."""

INFINITE_TEMPERATURE = _Sentinel("INFINITE_TEMPERATURE")
"""Noise temperature of the non-dissipative model (m_r = 0)."""


def _erf_over_x(x):
    """erf(x)/x, regular at the origin."""
    x = np.asarray(x, dtype=float)
    small = x < ERF_SERIES_THRESHOLD
    safe = np.where(small, 1.0, x)
    x2 = x * x
    series = (2.0 / SQRT_PI) * (1.0 - x2 / 3.0 + x2**2 / 10.0 - x2**3 / 42.0 + x2**4 / 216.0)
    return np.where(small, series, erf(safe) / safe)


def _one_minus_erf_ratio(x):
    """1 - (sqrt(pi)/2) erf(x)/x, the DP decoherence profile in x = delta/2R0."""
    x = np.asarray(x, dtype=float)
    small = x < D_SERIES_THRESHOLD
    safe = np.where(small, 1.0, x)
    x2 = x * x
    series = x2 * (1.0 / 3.0 - x2 / 10.0 + x2**2 / 42.0 - x2**3 / 216.0 + x2**4 / 1320.0)
    return np.where(small, series, 1.0 - 0.5 * SQRT_PI * erf(safe) / safe)


def _require_gaussian(dp: DPParams):
    if dp.coarse_graining is not CoarseGraining.GAUSSIAN:
        raise ConfigurationError(
            "closed-form DP rates assume Gaussian coarse-graining; the sphere "
            "variant is available through damping_function only"
        )


def _scalar_or_array(value):
    value = np.asarray(value)
    return float(value) if value.ndim == 0 else value


def self_energy_U(delta, m: float, R0: float, constants: PhysicalConstants = CONSTANTS):
    """Newtonian self-interaction of two Gaussian-smeared copies at separation delta.

    U = -G m^2 erf(delta / 2R0) / delta, tending to -G m^2 / (sqrt(pi) R0).
    """
    if not R0 > 0:
        raise ConfigurationError(f"R0 must be positive, got {R0!r}")
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0):
        raise ConfigurationError("delta must be non-negative")
    x = delta / (2.0 * R0)
    return _scalar_or_array(-constants.G * m**2 * _erf_over_x(x) / (2.0 * R0))


def csl_phi(delta, m: float, csl: CSLParams):
    """Fourier transform of the one-particle CSL rate; Phi(0) is the CSL collapse rate."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0):
        raise ConfigurationError("delta must be non-negative")
    lam = (m / csl.m0) ** 2 * csl.gamma / (4.0 * math.pi * csl.r_c**2) ** 1.5
    return _scalar_or_array(lam * np.exp(-delta**2 / (4.0 * csl.r_c**2)))


def collapse_rate_point(model: str, m: float, params: ModelParams) -> float:
    """Total one-particle collapse rate (s^-1)."""
    if m < 0:
        raise ConfigurationError("mass must be non-negative")
    c = params.constants
    if model == "dp":
        _require_gaussian(params.dp)
        return c.G * m**2 / (SQRT_PI * c.hbar * params.dp.R0)
    if model == "csl":
        csl = params.csl
        return (m / csl.m0) ** 2 * csl.gamma / (4.0 * math.pi * csl.r_c**2) ** 1.5
    raise ConfigurationError(f"unknown model {model!r}")


@dataclass(frozen=True)
class DecoherenceKernel:
    """Position-space decoherence function D(delta) = rate * profile(delta/length).

    DP:  profile = 1 - sqrt(pi) * length * erf(delta/2 length) / delta
    CSL: profile = 1 - exp(-delta^2 / 4 length^2)

    The same class serves SI evaluation (rate = collapse rate, length = R0
    or r_c) and scaled dynamics (rate = 1, length = 1).
    """

    model: str
    rate: float
    length: float

    def __post_init__(self):
        if self.model not in ("dp", "csl"):
            raise ConfigurationError(f"unknown model {self.model!r}")
        if not self.length > 0:
            raise ConfigurationError("kernel length must be positive")
        if not self.rate >= 0:
            raise ConfigurationError("kernel rate must be non-negative")

    @classmethod
    def from_params(cls, model: str, params: ModelParams, mass: float) -> "DecoherenceKernel":
        length = params.dp.R0 if model == "dp" else params.csl.r_c
        return cls(model, collapse_rate_point(model, mass, params), length)

    def scaled(self) -> "DecoherenceKernel":
        return DecoherenceKernel(self.model, 1.0, 1.0)

    def profile(self, delta):
        """D(delta) / rate, in [0, 1)."""
        x = np.abs(np.asarray(delta, dtype=float)) / self.length
        if self.model == "dp":
            return _one_minus_erf_ratio(0.5 * x)
        return -np.expm1(-0.25 * x * x)

    def evaluate(self, delta):
        return _scalar_or_array(self.rate * self.profile(delta))

    __call__ = evaluate

    def correlation(self, delta):
        """Noise correlation rate - D(delta); equals the rate at zero separation."""
        x = np.abs(np.asarray(delta, dtype=float)) / self.length
        if self.model == "dp":
            return _scalar_or_array(self.rate * 0.5 * SQRT_PI * _erf_over_x(0.5 * x))
        return _scalar_or_array(self.rate * np.exp(-0.25 * x * x))


def damping_time(kernel: DecoherenceKernel, delta: float):
    """Lifetime 1/D(delta) of the coherence between two points; NO_DECAY at delta = 0."""
    if delta < 0:
        raise ConfigurationError("delta must be non-negative")
    d = float(kernel.evaluate(delta))
    if d == 0.0:
        return NO_DECAY
    return 1.0 / d


@dataclass(frozen=True)
class RateFunction:
    """Momentum-transfer rate density Gamma(Q) in s^-1 (kg m/s)^-3."""

    model: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    momentum_scale: float
    hbar: float


def damping_function(Q, R0: float, coarse_graining=CoarseGraining.GAUSSIAN,
                     hbar: float = CONSTANTS.hbar):
    """Suppression f(Q) of high momentum transfers by the mass-density smearing."""
    x = np.asarray(Q, dtype=float) * R0 / hbar
    if CoarseGraining(coarse_graining) is CoarseGraining.GAUSSIAN:
        return _scalar_or_array(np.exp(-x * x))
    return _scalar_or_array(_sphere_shape(x) ** 2)


def _sphere_shape(x):
    """3 (sin x - x cos x) / x^3, with its small-x series."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    safe = np.where(small, 1.0, x)
    x2 = x * x
    series = 1.0 - x2 / 10.0 + x2**2 / 280.0 - x2**3 / 15120.0
    return np.where(small, series, 3.0 * (np.sin(safe) - safe * np.cos(safe)) / safe**3)


def form_factor(body: RigidBodySpec, Q, hbar: float = CONSTANTS.hbar):
    """Fourier transform of a homogeneous sphere's mass density (kg)."""
    x = np.asarray(Q, dtype=float) * body.R / hbar
    if np.any(np.asarray(Q) < 0):
        raise ConfigurationError("Q must be non-negative")
    if body.form_factor is FormFactor.GAUSSIAN_APPROX:
        return _scalar_or_array(body.M * np.exp(-0.5 * x * x))
    return _scalar_or_array(body.M * _sphere_shape(x))


def _width(length, body):
    # the Gaussian form factor narrows the rate to hbar / sqrt(length^2 + R^2)
    if body is None or body.form_factor is not FormFactor.GAUSSIAN_APPROX:
        return length
    return math.hypot(length, body.R)


def rate_function(model: str, params: ModelParams, mass: float | None = None,
                  body: RigidBodySpec | None = None) -> RateFunction:
    """Build Gamma(Q) for ``dp``, ``csl`` (one particle) or ``dp_cm``, ``csl_cm`` (rigid body)."""
    c = params.constants
    hbar = c.hbar
    if model in ("dp", "csl"):
        if mass is None:
            raise ConfigurationError(f"model {model!r} needs a particle mass")
    elif model in ("dp_cm", "csl_cm"):
        if body is None:
            raise ConfigurationError(f"model {model!r} needs a rigid body")
    else:
        raise ConfigurationError(f"unknown rate model {model!r}")

    if model.startswith("dp"):
        R0 = params.dp.R0
        cg = params.dp.coarse_graining
        pref = c.G / (2.0 * math.pi**2 * hbar**2)

        def weight(Q):
            if model == "dp":
                return mass**2
            return form_factor(body, Q, hbar) ** 2

        def gamma(Q):
            Q = np.asarray(Q, dtype=float)
            return pref * weight(Q) * damping_function(Q, R0, cg, hbar) / Q**2

        return RateFunction(model, gamma, hbar / _width(R0, body), hbar)

    csl = params.csl
    pref = csl.gamma / (2.0 * math.pi * hbar) ** 3 / csl.m0**2

    def gamma(Q):
        Q = np.asarray(Q, dtype=float)
        w = mass**2 if model == "csl" else form_factor(body, Q, hbar) ** 2
        return pref * w * np.exp(-(Q * csl.r_c / hbar) ** 2)

    return RateFunction(model, gamma, hbar / _width(csl.r_c, body), hbar)


def collapse_rate_cm(model: str, body: RigidBodySpec, params: ModelParams) -> float:
    """Centre-of-mass collapse rate of a rigid sphere, Gaussian form-factor approximation."""
    c = params.constants
    M, R = body.M, body.R
    if model == "dp":
        _require_gaussian(params.dp)
        return c.G * M**2 / (c.hbar * math.sqrt(math.pi * (R**2 + params.dp.R0**2)))
    if model == "csl":
        csl = params.csl
        return csl.gamma * M**2 / (8.0 * math.pi**1.5 * csl.m0**2 * (R**2 + csl.r_c**2) ** 1.5)
    raise ConfigurationError(f"unknown model {model!r}")


class HeatingRate(NamedTuple):
    power: float             # J/s
    temperature_rate: float  # K/s under E = (3/2) kB T
    convention: str = "E = (3/2) kB T"


def heating_rate(m: float, R0: float, constants: PhysicalConstants = CONSTANTS) -> HeatingRate:
    """Linear energy growth of the non-dissipative DP model."""
    if m < 0:
        raise ConfigurationError("mass must be non-negative")
    if not R0 > 0:
        raise ConfigurationError("R0 must be positive")
    power = m * constants.G * constants.hbar / (4.0 * SQRT_PI * R0**3)
    return HeatingRate(power, power / (1.5 * constants.kB))


class DissipativeCoefficients(NamedTuple):
    gamma: float   # energy injection, J/s
    xi: float      # energy damping rate, 1/s
    T: object      # K, or INFINITE_TEMPERATURE
    k: float       # m_r / m


def noise_temperature(m_r: float, R0: float, constants: PhysicalConstants = CONSTANTS):
    """hbar^2 / (8 kB m_r R0^2); INFINITE_TEMPERATURE when m_r = 0."""
    if m_r == 0:
        return INFINITE_TEMPERATURE
    return constants.hbar**2 / (8.0 * constants.kB * m_r * R0**2)


def reference_mass_for_temperature(T: float, R0: float,
                                   constants: PhysicalConstants = CONSTANTS) -> float:
    """Invert the noise-temperature relation for m_r (kg)."""
    if not T > 0:
        raise ConfigurationError("temperature must be positive")
    return constants.hbar**2 / (8.0 * constants.kB * T * R0**2)


def dissipative_coeffs(m: float, dp: DPParams,
                       constants: PhysicalConstants = CONSTANTS) -> DissipativeCoefficients:
    if not m > 0:
        raise ConfigurationError(f"mass must be positive, got {m!r}")
    k = dp.m_r / m
    c3 = (1.0 + k) ** 3
    G, hbar, R0 = constants.G, constants.hbar, dp.R0
    gamma = m * G * hbar / (4.0 * SQRT_PI * c3 * R0**3)
    xi = 4.0 * m**2 * G * k / (3.0 * SQRT_PI * c3 * hbar * R0)
    return DissipativeCoefficients(gamma, xi, noise_temperature(dp.m_r, R0, constants), k)


def energy_trajectory(E0: float, t, coeffs: DissipativeCoefficients):
    """Mean energy E0 exp(-xi t) + (gamma/xi)(1 - exp(-xi t)).

    Falls back to E0 + gamma t when xi t is below 1e-12.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ConfigurationError("time must be non-negative")
    gamma, xi = coeffs.gamma, coeffs.xi
    xt = xi * t
    linear = E0 + gamma * t
    safe_xi = xi if xi > 0 else 1.0
    relax = E0 * np.exp(-xt) - (gamma / safe_xi) * np.expm1(-xt)
    return _scalar_or_array(np.where(xt < 1e-12, linear, relax))


class Figure1Data(NamedTuple):
    distance: np.ndarray        # delta / d
    tau_lambda_dp: np.ndarray
    tau_lambda_csl: np.ndarray


def figure1_dataset(dp: DPParams, csl: CSLParams, m: float, points: int,
                    x_min: float = 0.1, x_max: float = 50.0) -> Figure1Data:
    """Damping time in units of 1/rate versus distance in units of the kernel length.

    The abscissa is log-spaced from ``x_min`` to ``x_max``. Mass and
    parameter values cancel in the normalized curves; they are accepted so
    that callers can validate them in one place.
    """
    if points < 2:
        raise ConfigurationError("need at least two points")
    if not 0 < x_min < x_max:
        raise ConfigurationError("need 0 < x_min < x_max")
    if m < 0:
        raise ConfigurationError("mass must be non-negative")
    x = np.geomspace(x_min, x_max, points)
    dp_curve = 1.0 / DecoherenceKernel("dp", 1.0, 1.0).profile(x)
    csl_curve = 1.0 / DecoherenceKernel("csl", 1.0, 1.0).profile(x)
    return Figure1Data(x, dp_curve, csl_curve)
