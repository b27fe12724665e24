"""Momentum jump process of the dissipative DP model.

The generator is translation covariant, so momentum populations evolve on
their own as a linear Boltzmann process: a particle of momentum p receives
a kick Q at rate density |L(Q, p)|^2 per d^3Q. In spherical coordinates
around p (Q >= 0, u = cos of the angle to p) the rate density per dQ du is

    A exp(-a ((1+k) Q + 2 k p u)^2),   A = m^2 G / (pi hbar^2),  a = R0^2 / hbar^2.

Reflecting (Q, u) -> (-Q, -u) leaves the kick vector and the density
unchanged, so on the full line Q ~ N(-2kpu/(1+k), hbar^2 / (2 (1+k)^2 R0^2))
with u uniform. Hence the total rate is Lambda/(1+k) for every p and the
exact sampler below needs one uniform direction and one Gaussian.

Everything here is in scaled units (hbar = kB = 1; by default R0 = 1 and
G = sqrt(pi), which makes the k = 0 rate of a unit mass equal to 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import erf, erfc, erfcinv, erfcx, ndtr, ndtri
from scipy.stats import kstest, maxwell, qmc

from . import kernels
from .errors import ConfigurationError, ExtrapolationError
from .quadrature import Integrand1D, dissipative_energy_moment, integrate
from .rates import INFINITE_TEMPERATURE, dissipative_coeffs
from .units import DPParams, PhysicalConstants

SQRT_PI = math.sqrt(math.pi)
N_CHECKPOINTS = 32


@dataclass(frozen=True)
class ScaledDissipativeParams:
    gamma: float
    xi: float
    T: object

    def equipartition_residual(self) -> float:
        """|2 gamma / (3 xi) - T| / T (zero up to rounding)."""
        if self.T is INFINITE_TEMPERATURE:
            return 0.0 if self.xi == 0 else math.inf
        return abs(2.0 * self.gamma / (3.0 * self.xi) - self.T) / self.T


@dataclass(frozen=True)
class DissipativeKernel:
    m: float = 1.0
    k: float = 0.0
    R0: float = 1.0
    G: float = SQRT_PI
    hbar: float = 1.0

    def __post_init__(self):
        if not self.m > 0:
            raise ConfigurationError("mass must be positive")
        if not self.k >= 0:
            raise ConfigurationError("k must be non-negative")
        if not (self.R0 > 0 and self.G > 0 and self.hbar > 0):
            raise ConfigurationError("R0, G and hbar must be positive")

    @classmethod
    def with_reference_mass(cls, m: float, m_r: float, **kw) -> "DissipativeKernel":
        return cls(m=m, k=m_r / m, **kw)

    @property
    def m_r(self) -> float:
        return self.k * self.m

    @property
    def c(self) -> float:
        return 1.0 + self.k

    @property
    def a(self) -> float:
        return (self.R0 / self.hbar) ** 2

    @property
    def amplitude(self) -> float:
        return self.m**2 * self.G / (math.pi * self.hbar**2)

    @property
    def rate_k0(self) -> float:
        """Non-dissipative collapse rate G m^2 / (sqrt(pi) hbar R0)."""
        return self.m**2 * self.G / (SQRT_PI * self.hbar * self.R0)

    @property
    def total_rate_closed(self) -> float:
        return self.rate_k0 / self.c

    @property
    def kick_sigma(self) -> float:
        return self.hbar / (math.sqrt(2.0) * self.c * self.R0)

    @property
    def drag(self) -> float:
        return 2.0 * self.k / self.c

    def beta(self, p):
        """Dimensionless tilt 2 k |p| R0 / hbar of the angular distribution."""
        return 2.0 * self.k * np.asarray(p, dtype=float) * self.R0 / self.hbar

    @property
    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(G=self.G, hbar=self.hbar, kB=1.0, amu=1.0, proton_mass=1.0)

    def dp_params(self) -> DPParams:
        return DPParams(self.R0, self.m_r)

    def coefficients(self) -> ScaledDissipativeParams:
        co = dissipative_coeffs(self.m, self.dp_params(), self.constants)
        return ScaledDissipativeParams(co.gamma, co.xi, co.T)


def rate_density(kernel: DissipativeKernel, Q, cos_theta, p):
    """Rate per dQ d(cos theta) for a kick of size Q at angle theta to p."""
    Q = np.asarray(Q, dtype=float)
    u = np.asarray(cos_theta, dtype=float)
    if np.any(Q < 0) or np.any(np.abs(u) > 1) or np.any(np.asarray(p) < 0):
        raise ConfigurationError("need Q >= 0, |cos theta| <= 1, p >= 0")
    shift = kernel.c * Q + 2.0 * kernel.k * p * u
    return kernel.amplitude * np.exp(-kernel.a * shift**2)


def total_rate(kernel: DissipativeKernel, p: float, rel_tol: float = 1e-11) -> float:
    """Integral of :func:`rate_density` over Q >= 0 and cos theta, by nested quadrature."""
    if p < 0:
        raise ConfigurationError("p must be non-negative")
    width = kernel.hbar / (kernel.R0 * kernel.c)
    shift_max = 2.0 * kernel.k * p / kernel.c

    def inner(us):
        out = []
        for u in np.atleast_1d(us):
            centre = -2.0 * kernel.k * p * u / kernel.c
            hints = (centre,) if centre > 0 else ()
            f = Integrand1D(lambda Q, u=u: rate_density(kernel, Q, u, p), 0.0,
                            max(centre, 0.0) + 10.0 * width, hints)
            out.append(integrate(f, rel_tol=rel_tol, abs_tol=1e-300).value)
        return np.array(out)

    hints = (0.0,) if shift_max > 0 else ()
    return integrate(Integrand1D(inner, -1.0, 1.0, hints), rel_tol=rel_tol).value


def large_k_density(kernel: DissipativeKernel, Q, cos_theta, p):
    """Large-k approximation: (1+k) -> k in the exponent, same prefactor."""
    Q = np.asarray(Q, dtype=float)
    shift = kernel.k * (Q + 2.0 * p * np.asarray(cos_theta, dtype=float))
    return kernel.amplitude * np.exp(-kernel.a * shift**2)


def large_k_deviation(kernel: DissipativeKernel, p: float, n_q: int = 3000,
                      n_u: int = 2001) -> float:
    """Total-variation distance between the normalized exact and large-k kick laws."""
    width = kernel.hbar / (kernel.R0 * max(kernel.k, 1e-12))
    q_max = 2.0 * p + 12.0 * width
    Q = np.linspace(0.0, q_max, n_q)
    u = np.linspace(-1.0, 1.0, n_u)
    QQ, UU = np.meshgrid(Q, u, indexing="ij")
    exact = rate_density(kernel, QQ, UU, p)
    approx = large_k_density(kernel, QQ, UU, p)
    exact /= exact.sum()
    approx /= approx.sum()
    return 0.5 * float(np.abs(exact - approx).sum())


def large_k_validity(p: float, ks, threshold: float = 0.1, **kernel_kw):
    """TV distance per k, and the smallest k from which it stays below ``threshold``.

    Returns (distances, k_valid) with k_valid = None when no tail of ``ks``
    qualifies.
    """
    ks = np.asarray(ks, dtype=float)
    tv = np.array([large_k_deviation(DissipativeKernel(k=k, **kernel_kw), p) for k in ks])
    ok = tv <= threshold
    k_valid = None
    for i in range(len(ks)):
        if ok[i:].all():
            k_valid = float(ks[i])
            break
    return tv, k_valid


# --- samplers -------------------------------------------------------------

def _unit_vectors(cos_polar, azimuth):
    rho = np.sqrt(np.maximum(0.0, 1.0 - cos_polar**2))
    return np.stack([rho * np.cos(azimuth), rho * np.sin(azimuth), cos_polar], axis=-1)


def _frame(p):
    """Orthonormal (e1, e2, phat) per row; phat = z for p = 0."""
    norm = np.linalg.norm(p, axis=1)
    phat = np.where(norm[:, None] > 0, p / np.where(norm > 0, norm, 1.0)[:, None],
                    np.array([0.0, 0.0, 1.0]))
    helper = np.where(np.abs(phat[:, :1]) < 0.9, np.array([1.0, 0.0, 0.0]),
                      np.array([0.0, 1.0, 0.0]))
    e1 = np.cross(helper, phat)
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(phat, e1)
    return e1, e2, phat


class ExactKickSampler:
    """Direct sampler: direction uniform on the sphere, signed Gaussian magnitude."""

    def __init__(self, kernel: DissipativeKernel):
        self.kernel = kernel

    def kicks(self, p, rnd):
        """Kick vectors for momenta ``p`` (N, 3); ``rnd`` columns: U(0,1), U(0,1), N(0,1)."""
        n = _unit_vectors(2.0 * rnd[:, 0] - 1.0, 2.0 * math.pi * rnd[:, 1])
        q = self.kernel.kick_sigma * rnd[:, 2] - self.kernel.drag * np.sum(p * n, axis=1)
        return q[:, None] * n


def _u_cdf(u, beta):
    """CDF on [-1, 1] of the angular marginal, density proportional to erfc(beta u)."""
    u, beta = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(beta, dtype=float))
    out = 0.5 * (u + 1.0)
    pos = beta > 0
    if np.any(pos):
        b, v = beta[pos], u[pos]
        # exp(-b^2) - exp(-b^2 v^2), via expm1 when b is small
        small = b < 1.0
        tail = np.empty_like(b)
        tail[small] = -np.exp(-b[small] ** 2) * np.expm1(-b[small] ** 2 * (v[small] ** 2 - 1.0))
        tail[~small] = np.exp(-b[~small] ** 2) - np.exp(-(b[~small] * v[~small]) ** 2)
        out[pos] = 0.5 * (v * erfc(b * v) + erfc(-b) + tail / (b * SQRT_PI))
    return out


def _excess_cdf(e, z):
    """CDF of the excess e = s - z for s with density proportional to exp(-s^2) on s >= z."""
    e, z = np.broadcast_arrays(np.asarray(e, dtype=float), np.asarray(z, dtype=float))
    s = z + e
    ratio = np.empty_like(s)
    pos = z > 0
    # erfc(s)/erfc(z) via erfcx to stay finite for large z
    ratio[pos] = erfcx(s[pos]) / erfcx(z[pos]) * np.exp(-e[pos] * (2.0 * z[pos] + e[pos]))
    ratio[~pos] = erfc(s[~pos]) / erfc(z[~pos])
    return 1.0 - ratio


def _excess_quantile(z, survival):
    """Excess e = s - z at which P(S > s) = ``survival`` for S ~ exp(-s^2) on s >= z.

    z <= 0 inverts erfc directly; z > 0 bisects the log of the erfcx form,
    which stays finite where erfc(z) underflows.
    """
    z, survival = np.broadcast_arrays(np.asarray(z, float), np.asarray(survival, float))
    out = np.empty(z.shape)
    neg = z <= 0
    out[neg] = erfcinv(survival[neg] * erfc(z[neg])) - z[neg]
    zp, sp = z[~neg], survival[~neg]
    target = np.log(sp)
    lo = np.zeros_like(zp)
    hi = np.full_like(zp, 12.0)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        s = zp + mid
        val = np.log(erfcx(s) / erfcx(zp)) - mid * (2.0 * zp + mid)
        above = val > target
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    out[~neg] = 0.5 * (lo + hi)
    return np.maximum(out, 0.0)


class KickSampler:
    """Tabulated inverse-CDF sampler.

    Two tables are built: the angular quantile u(beta, r) on log-spaced
    anchor values of beta (plus beta = 0), and the magnitude quantile on a
    512 x 256 grid over (z = beta u, r). The magnitude table holds the
    quantile s of exp(-s^2) truncated to s >= z, and
    Q = (s - z) / ((1+k) sqrt(a)). Probability nodes sit at r = Phi(w) with
    w evenly spaced, so the tails are resolved.
    """

    def __init__(self, kernel: DissipativeKernel, p_max: float, p_min: float | None = None,
                 anchors_per_decade: int = 16, n_z: int = 512, n_prob: int = 256,
                 w_max: float = 5.5):
        if not p_max >= 0:
            raise ConfigurationError("p_max must be non-negative")
        self.kernel = kernel
        self.p_max = float(p_max)
        self.w = np.linspace(-w_max, w_max, n_prob)
        self.r = ndtr(self.w)
        beta_max = float(kernel.beta(p_max))
        if beta_max > 0:
            p_min = 1e-3 * p_max if p_min is None else p_min
            beta_lo = float(kernel.beta(p_min))
            n_anchor = max(2, int(math.ceil(math.log10(beta_max / beta_lo) * anchors_per_decade)) + 1)
            self.beta_anchor = np.concatenate([[0.0], np.geomspace(beta_lo, beta_max, n_anchor)])
        else:
            self.beta_anchor = np.array([0.0])
        self.u_table = self._build_u_table()
        z_max = max(beta_max, 1.0)
        self.v = np.linspace(-math.asinh(z_max), math.asinh(z_max), n_z)
        self.z = np.sinh(self.v)
        # store s itself: constant for z << 0 and close to z for z >> 0, both
        # exact under interpolation that is linear in z
        zc = self.z[:, None]
        self.s_table = _excess_quantile(zc, ndtr(-self.w)[None, :]) + zc

    def _build_u_table(self):
        beta = self.beta_anchor[:, None]
        r = np.broadcast_to(self.r[None, :], (beta.shape[0], self.r.size))
        lo = -np.ones_like(r)
        hi = np.ones_like(r)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            below = _u_cdf(mid, beta) < r
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def _prob_index(self, r):
        w = np.clip(ndtri(np.clip(r, 1e-300, 1.0)), self.w[0], self.w[-1])
        pos = (w - self.w[0]) / (self.w[1] - self.w[0])
        i = np.clip(pos.astype(int), 0, self.w.size - 2)
        return i, pos - i

    def quantile_u(self, beta, r):
        beta = np.asarray(beta, dtype=float)
        if np.any(beta > self.beta_anchor[-1] * (1 + 1e-12)):
            raise ExtrapolationError(
                f"|p| beyond the tabulated range (p_max = {self.p_max:g})")
        ia, fa = self._anchor_index(beta)
        ir, fr = self._prob_index(r)
        t = self.u_table
        lo = t[ia, ir] * (1 - fr) + t[ia, ir + 1] * fr
        if t.shape[0] == 1:
            return lo
        hi = t[ia + 1, ir] * (1 - fr) + t[ia + 1, ir + 1] * fr
        return lo * (1 - fa) + hi * fa

    def _anchor_index(self, beta):
        anchors = self.beta_anchor
        if anchors.size == 1:
            return np.zeros(beta.shape, dtype=int), np.zeros(beta.shape)
        i = np.clip(np.searchsorted(anchors, beta, side="right") - 1, 0, anchors.size - 2)
        lo, hi = anchors[i], anchors[i + 1]
        # linear in beta on the first cell (which starts at 0), log-linear beyond
        with np.errstate(divide="ignore", invalid="ignore"):
            f_log = np.log(np.maximum(beta, lo) / lo) / np.log(hi / lo)
        f = np.where(i == 0, beta / hi, f_log)
        return i, np.clip(f, 0.0, 1.0)

    def quantile_excess(self, z, r):
        z = np.asarray(z, dtype=float)
        # nodes are found in asinh(z) but weighted linearly in z
        pos = (np.arcsinh(z) - self.v[0]) / (self.v[1] - self.v[0])
        iz = np.clip(pos.astype(int), 0, self.v.size - 2)
        z0, z1 = self.z[iz], self.z[iz + 1]
        fz = np.clip((z - z0) / (z1 - z0), 0.0, 1.0)
        ir, fr = self._prob_index(r)
        t = self.s_table
        lo = t[iz, ir] * (1 - fr) + t[iz, ir + 1] * fr
        hi = t[iz + 1, ir] * (1 - fr) + t[iz + 1, ir + 1] * fr
        return np.maximum(lo * (1 - fz) + hi * fz - z, 0.0)

    def magnitude_and_cosine(self, p_mag, r_u, r_q):
        beta = self.kernel.beta(p_mag)
        u = self.quantile_u(beta, r_u)
        e = self.quantile_excess(beta * u, r_q)
        return e / (self.kernel.c * math.sqrt(self.kernel.a)), u

    def kicks(self, p, rnd):
        """Same random layout as :class:`ExactKickSampler`; the normal is mapped to U(0,1)."""
        p = np.atleast_2d(np.asarray(p, dtype=float))
        Q, u = self.magnitude_and_cosine(np.linalg.norm(p, axis=1), rnd[:, 0], ndtr(rnd[:, 2]))
        e1, e2, phat = _frame(p)
        phi = 2.0 * math.pi * rnd[:, 1]
        s = np.sqrt(np.maximum(0.0, 1.0 - u**2))
        n = (s * np.cos(phi))[:, None] * e1 + (s * np.sin(phi))[:, None] * e2 + u[:, None] * phat
        return Q[:, None] * n

    def tabulation_error(self, n_beta: int = 40, n_r: int = 400) -> float:
        """Largest CDF error of both interpolated quantile functions on a probe grid."""
        r = (np.arange(n_r) + 0.5) / n_r
        betas = np.linspace(0.0, self.beta_anchor[-1], n_beta)
        worst = 0.0
        for b in betas:
            u = self.quantile_u(np.full(n_r, b), r)
            worst = max(worst, float(np.max(np.abs(_u_cdf(u, b) - r))))
        for z in np.linspace(self.z[0], self.z[-1], n_beta):
            e = self.quantile_excess(np.full(n_r, z), r)
            worst = max(worst, float(np.max(np.abs(_excess_cdf(e, z) - r))))
        return worst


def sample_kick(sampler, p, rng: np.random.Generator) -> np.ndarray:
    """Kick vector(s) for momentum ``p`` (shape (3,) or (N, 3))."""
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    n = p2.shape[0]
    rnd = np.column_stack([rng.random(n), rng.random(n), rng.standard_normal(n)])
    q = sampler.kicks(p2, rnd)
    return q[0] if single else q


def kick_marginal_cdfs(kernel: DissipativeKernel, p: float):
    """Exact CDFs of cos theta and of Q for momentum magnitude ``p``.

    Integrating the joint law over u gives
    F_Q(q) = [G(x + beta) - G(x - beta)] / (2 beta),  x = (1+k) sqrt(a) q,
    with G(x) = x erf(x) + exp(-x^2)/sqrt(pi); a short series covers beta -> 0.
    """
    beta = float(kernel.beta(p))
    kappa = kernel.c * math.sqrt(kernel.a)

    def G(x):
        return x * erf(x) + np.exp(-x * x) / SQRT_PI

    def cdf_q(q):
        x = kappa * np.maximum(np.asarray(q, dtype=float), 0.0)
        if beta < 1e-3:
            return erf(x) - (2.0 * beta**2 / (3.0 * SQRT_PI)) * x * np.exp(-x * x)
        return (G(x + beta) - G(x - beta)) / (2.0 * beta)

    return (lambda u: _u_cdf(u, beta)), cdf_q


def sampler_ks(sampler, p: float, log2_n: int = 17, seed: int = 0):
    """KS distances of the sampled cos theta and Q marginals from the exact CDFs.

    Inputs come from a scrambled Sobol sequence, so the distances measure
    the sampler's error rather than Monte Carlo noise.
    """
    kernel = sampler.kernel
    pts = qmc.Sobol(d=2, scramble=True, seed=seed).random_base2(log2_n)
    n = pts.shape[0]
    pts = np.clip(pts, 1e-15, 1 - 1e-15)
    if isinstance(sampler, KickSampler):
        Q, u = sampler.magnitude_and_cosine(np.full(n, p), pts[:, 0], pts[:, 1])
    else:
        pvec = np.tile([0.0, 0.0, p], (n, 1))
        rnd = np.column_stack([pts[:, 0], np.full(n, 0.25), ndtri(pts[:, 1])])
        kick = sampler.kicks(pvec, rnd)
        Q = np.linalg.norm(kick, axis=1)
        u = np.where(Q > 0, kick[:, 2] / np.where(Q > 0, Q, 1.0), 0.0)
    cdf_u, cdf_q = kick_marginal_cdfs(kernel, p)
    return float(kstest(u, cdf_u).statistic), float(kstest(Q, cdf_q).statistic)


FLIP_CONE = 0.999


def parallel_kicks(sampler, p: float, n: int, seed: int, cone: float = FLIP_CONE) -> np.ndarray:
    """Q . phat for the kicks of ``n`` draws whose direction lies within |cos| >= cone of p."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    kick = sample_kick(sampler, np.tile([0.0, 0.0, p], (n, 1)), rng)
    Q = np.linalg.norm(kick, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(Q > 0, kick[:, 2] / Q, 0.0)
    return kick[np.abs(u) >= cone, 2]


def histogram_mode(values, bin_width: float, lo: float, hi: float) -> tuple[float, float]:
    """Centre of the most populated bin on a fixed grid, and the bin width."""
    edges = np.arange(lo, hi + 0.5 * bin_width, bin_width)
    counts, edges = np.histogram(values, bins=edges)
    i = int(np.argmax(counts))
    return 0.5 * (edges[i] + edges[i + 1]), bin_width


def flip_mode_oracle(kernel: DissipativeKernel, p: float, cone: float = FLIP_CONE,
                     n_u: int = 401, resolution: float = 1e-4) -> float:
    """Mode of Q . phat restricted to |cos| >= cone, from a dense tabulation of the density.

    With q = Q u the density per dq is the integral over the cone of
    rate_density(q/u, u, p) / |u| for sign(u) = sign(q).
    """
    width = kernel.hbar / (kernel.R0 * kernel.c)
    reach = 2.0 * kernel.drag * p + 10.0 * width
    q = np.arange(-reach, reach + resolution, resolution)
    q = q[q != 0.0]
    u = np.linspace(cone, 1.0, n_u)
    dens = np.empty_like(q)
    for lo in range(0, q.size, 2048):
        qc = q[lo:lo + 2048, None]
        uu = np.where(qc > 0, u[None, :], -u[None, :])
        f = rate_density(kernel, qc / uu, uu, p) / u[None, :]
        dens[lo:lo + 2048] = trapezoid(f, u, axis=1)
    return float(q[np.argmax(dens)])


# --- ensembles -------------------------------------------------------------

@dataclass
class MomentumEnsemble:
    momenta: np.ndarray
    time: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.momenta = np.ascontiguousarray(self.momenta, dtype=float)
        if self.momenta.ndim != 2 or self.momenta.shape[1] != 3:
            raise ConfigurationError("momenta must have shape (N, 3)")
        if not np.all(np.isfinite(self.momenta)):
            raise ConfigurationError("momenta must be finite")

    @property
    def size(self) -> int:
        return self.momenta.shape[0]

    def kinetic_energies(self, m: float) -> np.ndarray:
        return np.sum(self.momenta**2, axis=1) / (2.0 * m)

    @classmethod
    def shell(cls, n: int, p0: float, seed: int) -> "MomentumEnsemble":
        """``n`` momenta of magnitude ``p0`` with isotropic directions."""
        rng = np.random.Generator(np.random.Philox(seed))
        dirs = _unit_vectors(rng.uniform(-1, 1, n), rng.uniform(0, 2 * math.pi, n))
        return cls(p0 * dirs, 0.0, seed)

    @classmethod
    def thermal(cls, n: int, m: float, T: float, seed: int) -> "MomentumEnsemble":
        rng = np.random.Generator(np.random.Philox(seed))
        return cls(rng.normal(0.0, math.sqrt(m * T), (n, 3)), 0.0, seed)


@dataclass(frozen=True)
class EnergySeries:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray


def default_checkpoints(t_final: float, n: int = N_CHECKPOINTS) -> np.ndarray:
    """t = 0 followed by ``n - 1`` log-spaced times from t_final/1000 to t_final."""
    if t_final <= 0:
        return np.zeros(1)
    return np.concatenate([[0.0], np.geomspace(t_final * 1e-3, t_final, n - 1)])


def _particle_draws(gen, rate, t_final):
    expected = rate * t_final
    chunk = int(math.ceil(expected + 6.0 * math.sqrt(expected) + 10))
    waits = gen.standard_exponential(chunk)
    times = np.cumsum(waits) / rate
    while times[-1] < t_final:
        more = np.cumsum(gen.standard_exponential(chunk)) / rate + times[-1]
        times = np.concatenate([times, more])
    times = times[times < t_final]
    j = times.size
    rnd = np.empty((j, 3))
    rnd[:, :2] = gen.random((j, 2))
    rnd[:, 2] = gen.standard_normal(j)
    return times, rnd


def _relax_with_sampler(p, times, rnd, sampler, checkpoints, inv_two_m):
    # numpy loop over jump index, kicks drawn through ``sampler.kicks``
    B, J = times.shape
    K = checkpoints.size
    energies = np.empty((B, K))
    next_ck = np.zeros(B, dtype=int)
    for j in range(J + 1):
        t_next = times[:, j] if j < J else np.full(B, np.inf)
        while True:
            pending = next_ck < K
            record = pending & (checkpoints[np.minimum(next_ck, K - 1)] < t_next)
            if not record.any():
                break
            idx = np.flatnonzero(record)
            energies[idx, next_ck[idx]] = inv_two_m * np.sum(p[idx] ** 2, axis=1)
            next_ck[idx] += 1
        if j == J:
            break
        active = np.isfinite(t_next)
        if active.any():
            p[active] += sampler.kicks(p[active], rnd[active, j])
    return p, energies


def evolve_ensemble(ensemble: MomentumEnsemble, kernel: DissipativeKernel, t_final: float,
                    seed: int, checkpoints=None, sampler=None, block: int = 2000,
                    backend: str | None = None):
    """Jump process for every particle; returns (final ensemble, EnergySeries).

    Particle i draws its waiting times and kicks from the substream
    (seed, i). The jump rate does not depend on p, so waiting times are
    plain exponentials with the closed-form total rate.
    """
    if t_final < 0:
        raise ConfigurationError("t_final must be non-negative")
    sampler = ExactKickSampler(kernel) if sampler is None else sampler
    ck = default_checkpoints(t_final) if checkpoints is None else np.asarray(checkpoints, float)
    if np.any(np.diff(ck) < 0) or np.any(ck < 0) or np.any(ck > t_final):
        raise ConfigurationError("checkpoints must be increasing and within [0, t_final]")
    ck = np.ascontiguousarray(ck)
    rate = kernel.total_rate_closed
    inv_two_m = 1.0 / (2.0 * kernel.m)
    N = ensemble.size
    final = np.empty_like(ensemble.momenta)
    energies = np.empty((N, ck.size))
    impl = kernels.get(backend)
    for lo in range(0, N, block):
        hi = min(N, lo + block)
        draws = [_particle_draws(np.random.Generator(np.random.Philox(
                     np.random.SeedSequence(seed, spawn_key=(i,)))), rate, t_final)
                 for i in range(lo, hi)]
        J = max(1, max(t.size for t, _ in draws))
        times = np.full((hi - lo, J), np.inf)
        rnd = np.zeros((hi - lo, J, 3))
        for b, (t, r) in enumerate(draws):
            times[b, :t.size] = t
            rnd[b, :t.size] = r
        p = ensemble.momenta[lo:hi].copy()
        if isinstance(sampler, ExactKickSampler):
            p, e = impl.relax_block(p, times, rnd, kernel.kick_sigma, kernel.drag, ck, inv_two_m)
        else:
            p, e = _relax_with_sampler(p, times, rnd, sampler, ck, inv_two_m)
        final[lo:hi] = p
        energies[lo:hi] = e
    mean = energies.mean(axis=0)
    stderr = energies.std(axis=0, ddof=1) / math.sqrt(N) if N > 1 else np.zeros(ck.size)
    return (MomentumEnsemble(final, ensemble.time + t_final, seed),
            EnergySeries(ck + ensemble.time, mean, stderr))


@dataclass(frozen=True)
class ThermalizationResult:
    T_estimate: float
    T_stderr: float
    ks_statistic: float
    ks_pvalue: float
    T_reference: float


def thermalization_test(final: MomentumEnsemble, kernel: DissipativeKernel,
                        T_reference: float | None = None) -> ThermalizationResult:
    """Equipartition temperature and a KS test of |p| against the Maxwell law.

    The KS reference temperature is ``T_reference`` when given, otherwise
    the estimate itself.
    """
    E = final.kinetic_energies(kernel.m)
    T_est = (2.0 / 3.0) * float(E.mean())
    T_err = (2.0 / 3.0) * float(E.std(ddof=1)) / math.sqrt(E.size)
    T_ref = T_est if T_reference is None else float(T_reference)
    res = kstest(np.linalg.norm(final.momenta, axis=1), maxwell(scale=math.sqrt(kernel.m * T_ref)).cdf)
    return ThermalizationResult(T_est, T_err, float(res.statistic), float(res.pvalue), T_ref)


def initial_energy_rate(ensemble: MomentumEnsemble, kernel: DissipativeKernel, seed: int,
                        sampler=None) -> tuple[float, float]:
    """dE/dt at t = 0 as total rate times the mean energy change of one kick, with its error."""
    sampler = ExactKickSampler(kernel) if sampler is None else sampler
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    p = ensemble.momenta
    n = p.shape[0]
    rnd = np.column_stack([rng.random(n), rng.random(n), rng.standard_normal(n)])
    q = sampler.kicks(p, rnd)
    dE = (np.sum((p + q) ** 2, axis=1) - np.sum(p**2, axis=1)) / (2.0 * kernel.m)
    rate = kernel.total_rate_closed
    return rate * float(dE.mean()), rate * float(dE.std(ddof=1)) / math.sqrt(n)


def energy_moment_oracle(ensemble: MomentumEnsemble, kernel: DissipativeKernel,
                         rel_tol: float = 1e-10) -> float:
    """Quadrature value of dE/dt averaged over the ensemble's momentum magnitudes."""
    mags, counts = np.unique(np.round(np.linalg.norm(ensemble.momenta, axis=1), 12),
                             return_counts=True)
    vals = [dissipative_energy_moment(np.array([0.0, 0.0, pm]), kernel.m, kernel.dp_params(),
                                      kernel.constants, rel_tol) for pm in mags]
    return float(np.dot(vals, counts) / counts.sum())


def shell_transitions(ensemble: MomentumEnsemble, kernel: DissipativeKernel, edges,
                      seed: int, sampler=None) -> np.ndarray:
    """Counts N[i, j] of one-kick transitions from |p|-shell i to shell j."""
    sampler = ExactKickSampler(kernel) if sampler is None else sampler
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    p = ensemble.momenta
    n = p.shape[0]
    rnd = np.column_stack([rng.random(n), rng.random(n), rng.standard_normal(n)])
    after = p + sampler.kicks(p, rnd)
    edges = np.asarray(edges, dtype=float)
    i = np.digitize(np.linalg.norm(p, axis=1), edges) - 1
    j = np.digitize(np.linalg.norm(after, axis=1), edges) - 1
    nb = edges.size - 1
    keep = (i >= 0) & (i < nb) & (j >= 0) & (j < nb)
    counts = np.zeros((nb, nb), dtype=np.int64)
    np.add.at(counts, (i[keep], j[keep]), 1)
    return counts


def momentum_ladder_rates(kernel: DissipativeKernel, p_values, edges, rel_tol: float = 1e-11):
    """Cell-to-cell rates on a momentum ladder along z, computed two ways.

    Row i starts from p = p_values[i] z; column j is the slab
    edges[j] <= p'_z < edges[j+1] (outer edges may be infinite).

    ``jump``: total rate times the kick law of the jump process (uniform
    direction, Gaussian signed magnitude).
    ``lindblad``: the rate density |L(Q, p)|^2 integrated over the slab
    on the half-line Q >= 0.
    """
    p_values = np.asarray(p_values, dtype=float)
    edges = np.asarray(edges, dtype=float)
    sa = math.sqrt(kernel.a)
    c, k = kernel.c, kernel.k
    sigma = kernel.kick_sigma
    rate = kernel.total_rate_closed
    pref = kernel.amplitude * SQRT_PI / (2.0 * c * sa)
    nc = edges.size - 1
    jump = np.zeros((p_values.size, nc))
    lind = np.zeros_like(jump)

    for i, pz in enumerate(p_values):
        P = abs(pz)
        sgn = 1.0 if pz >= 0 else -1.0
        for j in range(nc):
            lo, hi = edges[j] - pz, edges[j + 1] - pz

            def f_jump(us, lo=lo, hi=hi):
                nz = sgn * us
                mu = -2.0 * k * P * us / c * nz
                s = sigma * np.abs(nz)
                with np.errstate(divide="ignore", invalid="ignore"):
                    a_ = np.where(s > 0, (hi - mu) / s, np.where(hi > 0, np.inf, -np.inf))
                    b_ = np.where(s > 0, (lo - mu) / s, np.where(lo >= 0, np.inf, -np.inf))
                return 0.5 * rate * (ndtr(a_) - ndtr(b_))

            def f_lind(us, lo=lo, hi=hi):
                nz = sgn * us
                with np.errstate(divide="ignore", invalid="ignore"):
                    q1 = np.where(nz > 0, lo / nz, -hi / -nz)
                    q2 = np.where(nz > 0, hi / nz, -lo / -nz)
                q1 = np.clip(np.nan_to_num(q1, nan=0.0, posinf=np.inf, neginf=0.0), 0.0, np.inf)
                q2 = np.clip(np.nan_to_num(q2, nan=0.0, posinf=np.inf, neginf=0.0), 0.0, np.inf)
                shift = 2.0 * k * P * us * sa
                val = pref * (erf(c * sa * q2 + shift) - erf(c * sa * q1 + shift))
                val = np.where(q2 > q1, val, 0.0)
                # kicks perpendicular to z stay in the slab that holds pz
                zero = (nz == 0) & (lo <= 0) & (hi > 0)
                return np.where(zero, pref * erfc(shift), val)

            hints = (0.0,)
            jump[i, j] = integrate(Integrand1D(f_jump, -1.0, 1.0, hints), rel_tol=rel_tol,
                                   abs_tol=1e-14 * rate).value
            lind[i, j] = integrate(Integrand1D(f_lind, -1.0, 1.0, hints), rel_tol=rel_tol,
                                   abs_tol=1e-14 * rate).value
    return jump, lind
