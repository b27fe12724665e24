"""Adaptive Gauss-Kronrod quadrature used as the brute-force oracle.

Every closed-form rate and moment in :mod:`gravcollapse.rates` has a
numerical counterpart here. The integrator is a globally adaptive G7/K15
scheme (QUADPACK's error heuristic), written out so that the oracle does
not share code with the closed forms it checks.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, OracleFailure
from .units import CONSTANTS, DPParams, PhysicalConstants

# 15-point Kronrod nodes (positive half) and weights, with the embedded
# 7-point Gauss weights on the odd-indexed nodes.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])          # 15 nodes, ascending
_WK = np.concatenate([_WGK[:-1], _WGK[::-1]])
_WG15 = np.zeros(15)
_WG15[[1, 3, 5]] = _WG[:3]
_WG15[[13, 11, 9]] = _WG[:3]
_WG15[7] = _WG[3]

_EPS = np.finfo(float).eps

# Semi-infinite ranges are cut at this many decay scales. For the
# Gaussian-damped integrands here exp(-10**2) < 1e-40.
TRUNCATION_SCALES = 10.0


@dataclass
class Integrand1D:
    """A vectorized scalar integrand on ``[lower, upper]``.

    ``upper`` may be ``inf``; then ``decay_scale`` sets where the range is
    truncated (``lower + 10 * decay_scale``).
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    lower: float = 0.0
    upper: float = math.inf
    singularity_hints: Sequence[float] = field(default_factory=tuple)
    decay_scale: float | None = None

    def finite_domain(self) -> tuple[float, float]:
        if math.isfinite(self.upper):
            return self.lower, self.upper
        if self.decay_scale is None or not self.decay_scale > 0:
            raise ConfigurationError("semi-infinite integrand needs a positive decay_scale")
        return self.lower, self.lower + TRUNCATION_SCALES * self.decay_scale


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    abs_error_estimate: float
    evaluations: int


def _kronrod_panel(f, a, b):
    center = 0.5 * (a + b)
    half = 0.5 * (b - a)
    values = np.asarray(f(center + half * _NODES), dtype=float)
    if values.shape != (15,):
        values = np.broadcast_to(values, (15,)).astype(float)
    if not np.all(np.isfinite(values)):
        raise OracleFailure(f"integrand not finite on [{a}, {b}]")
    k15 = half * float(_WK @ values)
    g7 = half * float(_WG15 @ values)
    resabs = abs(half) * float(_WK @ np.abs(values))
    mean = k15 / (b - a) if b != a else 0.0
    resasc = abs(half) * float(_WK @ np.abs(values - mean))
    err = abs(k15 - g7)
    if resasc != 0.0 and err != 0.0:
        err = resasc * min(1.0, (200.0 * err / resasc) ** 1.5)
    if resabs > np.finfo(float).tiny / (50 * _EPS):
        err = max(50 * _EPS * resabs, err)
    return k15, err


def integrate(integrand: Integrand1D, rel_tol: float = 1e-9, abs_tol: float = 0.0,
              max_subdivisions: int = 4000) -> QuadratureResult:
    """Globally adaptive G7/K15 integration of ``integrand``.

    Subdivides the panel with the largest error estimate until the summed
    estimate drops below ``max(abs_tol, rel_tol * |I|)``.
    """
    if not (1e-14 < rel_tol < 1e-2) and abs_tol <= 0:
        raise ConfigurationError(f"rel_tol must lie in (1e-14, 1e-2), got {rel_tol}")
    a, b = integrand.finite_domain()
    if b <= a:
        return QuadratureResult(0.0, 0.0, 0)
    breaks = sorted({a, b, *(h for h in integrand.singularity_hints if a < h < b)})
    f = integrand.evaluate
    heap = []
    total = 0.0
    total_err = 0.0
    evaluations = 0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        val, err = _kronrod_panel(f, lo, hi)
        evaluations += 15
        total += val
        total_err += err
        heapq.heappush(heap, (-err, lo, hi, val))

    while total_err > max(abs_tol, rel_tol * abs(total)):
        if len(heap) >= max_subdivisions:
            raise OracleFailure(
                f"no convergence after {len(heap)} subdivisions "
                f"(estimate {total:.17g}, error {total_err:.3g})",
                best_estimate=total, error_estimate=total_err,
            )
        neg_err, lo, hi, val = heapq.heappop(heap)
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            raise OracleFailure("panel width reached machine resolution",
                                best_estimate=total, error_estimate=total_err)
        left, left_err = _kronrod_panel(f, lo, mid)
        right, right_err = _kronrod_panel(f, mid, hi)
        evaluations += 30
        total += left + right - val
        total_err += left_err + right_err + neg_err
        heapq.heappush(heap, (-left_err, lo, mid, left))
        heapq.heappush(heap, (-right_err, mid, hi, right))

    # re-sum to shed the accumulated update round-off
    total = math.fsum(item[3] for item in heap)
    total_err = math.fsum(-item[0] for item in heap)
    return QuadratureResult(total, total_err, evaluations)


def integrate_radial(f: Integrand1D, rel_tol: float = 1e-9) -> QuadratureResult:
    """Integrate a radial integrand, truncating a semi-infinite range.

    For the 1/Q**2 rates the Q**2 volume element is part of ``f``, so the
    Q -> 0 end is regular and needs no special treatment.
    """
    return integrate(f, rel_tol=rel_tol)


def _sinc(x):
    # sin(x)/x with the removable point handled; np.sinc uses sin(pi x)/(pi x)
    return np.sinc(x / np.pi)


def fourier_of_rate(rate, delta: float, rel_tol: float = 1e-9) -> float:
    """Radial reduction of  int d^3Q exp(i Q.x / hbar) Gamma(Q).

    ``rate`` is any object with ``evaluate(Q)``, ``momentum_scale`` (the
    Gaussian width hbar/length) and ``hbar`` (see
    :class:`gravcollapse.rates.RateFunction`).
    """
    if delta < 0:
        raise ConfigurationError("delta must be non-negative")
    k = delta / rate.hbar
    hints = ()
    if delta > 0:
        # first few zeros of the sinc help the adaptive split on oscillatory tails
        period = math.pi / k
        limit = TRUNCATION_SCALES * rate.momentum_scale
        hints = tuple(np.arange(period, limit, period)[:400])

    def radial(Q):
        return 4.0 * math.pi * Q**2 * rate.evaluate(Q) * _sinc(k * Q)

    q = rate.momentum_scale
    # magnitude of the integral, used only as an absolute-error floor for
    # large delta where the oscillating integral becomes tiny
    scale = 4.0 * math.pi * q**3 * abs(float(rate.evaluate(np.array([q]))[0]))
    integrand = Integrand1D(radial, 0.0, math.inf, hints, q)
    return integrate(integrand, rel_tol=rel_tol, abs_tol=1e-3 * rel_tol * scale).value


def dissipative_energy_moment(p, m: float, dp: DPParams,
                              constants: PhysicalConstants = CONSTANTS,
                              rel_tol: float = 1e-10) -> float:
    """Mean kinetic-energy growth rate of a momentum eigenstate ``p``.

    Evaluates  (1/2m) int d^3Q |L(Q,p)|^2 (Q^2 + 2 p.Q)  as nested radial
    (outer) and polar (inner) adaptive quadratures; the azimuth gives 2 pi.
    """
    if not m > 0:
        raise ConfigurationError("mass must be positive")
    G, hbar = constants.G, constants.hbar
    p_mag = float(np.linalg.norm(np.atleast_1d(np.asarray(p, dtype=float))))
    k = dp.m_r / m
    c = 1.0 + k
    b = 2.0 * k * p_mag
    a = dp.R0**2 / hbar**2
    # Q^2 |L|^2 with the 1/Q^2 of L^2 cancelled by the volume element
    amplitude = m**2 * G / (2.0 * math.pi**2 * hbar**2)
    q_width = hbar / (dp.R0 * c)

    def inner(Q):
        def polar(u):
            shift = c * Q + b * u
            return np.exp(-a * shift**2) * (Q**2 + 2.0 * p_mag * Q * u)
        hints = ()
        if b > 0:
            u_star = -c * Q / b
            if -1.0 < u_star < 1.0:
                hints = (u_star,)
        res = integrate(Integrand1D(polar, -1.0, 1.0, hints), rel_tol=rel_tol,
                        abs_tol=1e-15 * (Q**2 + 2.0 * p_mag * Q) + 1e-300)
        return res.value

    def radial(Qs):
        return np.array([inner(Q) for Q in np.atleast_1d(Qs)])

    upper = (b + TRUNCATION_SCALES * hbar / dp.R0) / c
    hints = (b / c,) if 0 < b / c < upper else ()
    scale = q_width**3 + p_mag**2 * q_width
    res = integrate(Integrand1D(radial, 0.0, upper, hints), rel_tol=rel_tol,
                    abs_tol=1e-14 * scale)
    return 2.0 * math.pi * amplitude * res.value / (2.0 * m)
