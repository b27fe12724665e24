"""Stochastic Schrödinger trajectories on a 1D lattice.

Each site carries a projector; the noise field has covariance
C_ij = Lambda - D(|x_i - x_j|), so that averaging |psi><psi| over
trajectories reproduces the lattice master equation of :mod:`master`.
One Itô step reads

    dpsi_a = -i (H psi)_a dt + (dW_a - <dW>) psi_a
             - 1/2 [C_aa - 2 (C P)_a + P.C.P] psi_a dt

with P_a = |psi_a|^2 and <dW> = sum_a P_a dW_a, followed by
renormalization. The unitary part is applied first as exp(-i H dt).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest, chisquare

from . import kernels
from .errors import ConfigurationError, NumericalError
from .master import DensityMatrixGrid, Grid1D, KineticOperator
from .rates import DecoherenceKernel

MAX_STEP_RATE = 1e-3
MIN_NORM = 1e-6
CLASSIFY_THRESHOLD = 0.95
INCONCLUSIVE_FRACTION = 0.10
CHUNK_STEPS = 64


@dataclass
class WaveFunctionLattice:
    grid: Grid1D
    psi: np.ndarray
    mass: float | None = 1.0

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape != (self.grid.n_sites,):
            raise ConfigurationError("psi length must match the grid")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.psi))

    def normalized(self) -> "WaveFunctionLattice":
        return WaveFunctionLattice(self.grid, self.psi / self.norm, self.mass)


@dataclass(frozen=True)
class NoiseModel:
    covariance: np.ndarray
    factor: np.ndarray
    rate: float
    kernel: DecoherenceKernel | None = None

    @classmethod
    def zero(cls, n_sites: int) -> "NoiseModel":
        z = np.zeros((n_sites, n_sites))
        return cls(z, z.copy(), 0.0, None)


def build_noise_covariance(kernel: DecoherenceKernel, grid: Grid1D) -> NoiseModel:
    """Site covariance C_ij = Lambda - D(|x_i - x_j|) and its Cholesky factor."""
    if grid.spacing > 0.5 * kernel.length:
        warnings.warn(
            f"lattice spacing {grid.spacing:g} exceeds half the kernel length "
            f"({kernel.length:g}); the lattice does not resolve the kernel",
            RuntimeWarning, stacklevel=2)
    sep = grid.separations()
    C = np.asarray(kernel.correlation(sep), dtype=float)
    np.fill_diagonal(C, kernel.rate)
    C = 0.5 * (C + C.T)
    jitter = 1e-12 * np.diag(C)
    try:
        L = np.linalg.cholesky(C + np.diag(jitter))
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError(f"noise covariance is not positive definite: {exc}") from None
    return NoiseModel(C, L, float(kernel.rate), kernel)


def _generators(seed: int, n: int, start: int = 0) -> list[np.random.Generator]:
    # one counter-based substream per trajectory, keyed by (seed, index)
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(i,))))
            for i in range(start, start + n)]


def _check_step(noise: NoiseModel, dt: float) -> None:
    if not dt > 0:
        raise NumericalError("dt must be positive")
    if dt * noise.rate > MAX_STEP_RATE * (1 + 1e-12):
        raise NumericalError(
            f"dt * Lambda = {dt * noise.rate:.3g} exceeds {MAX_STEP_RATE:g}; reduce the step")


def _unitary(grid, kinetic, dt):
    if kinetic is None or not kinetic.enabled:
        return None
    return np.ascontiguousarray(kinetic.unitary(grid, dt))


def _advance(psi, gens, n_steps, noise, unitary, dt, backend=None):
    impl = kernels.get(backend)
    n = psi.shape[1]
    factor = np.ascontiguousarray(noise.factor, dtype=float)
    cov = np.ascontiguousarray(noise.covariance, dtype=float)
    done = 0
    while done < n_steps:
        s = min(CHUNK_STEPS, n_steps - done)
        xi = np.stack([g.standard_normal((s, n)) for g in gens])
        psi, min_norm = impl.sse_chunk(psi, xi, factor, cov, unitary, dt)
        if min_norm < MIN_NORM:
            raise NumericalError(
                f"norm fell to {min_norm:.3g} before renormalization; reduce the step")
        done += s
    return psi


def sse_step(state: WaveFunctionLattice, noise: NoiseModel, kinetic: KineticOperator | None,
             dt: float, rng: np.random.Generator) -> WaveFunctionLattice:
    """One Euler-Maruyama step followed by renormalization."""
    _check_step(noise, dt)
    psi = state.psi[None, :].copy()
    xi = rng.standard_normal((1, 1, state.grid.n_sites))
    psi, min_norm = kernels.get().sse_chunk(
        psi, xi, np.ascontiguousarray(noise.factor), np.ascontiguousarray(noise.covariance),
        _unitary(state.grid, kinetic, dt), dt)
    if min_norm < MIN_NORM:
        raise NumericalError(f"norm fell to {min_norm:.3g} before renormalization")
    return WaveFunctionLattice(state.grid, psi[0], state.mass)


@dataclass
class EnsembleResult:
    mean_rho: DensityMatrixGrid
    n_traj: int
    seed: int
    statistics: dict[str, tuple[float, float]]
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    variance_series: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    final_psi: np.ndarray | None = field(default=None, repr=False)


def _position_stats(psi, x):
    prob = np.abs(psi) ** 2
    mean = prob @ x
    var = prob @ x**2 - mean**2
    return mean, var


def _mean_and_error(values):
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = math.fsum(values) / n
    err = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, err


def run_ensemble(psi0: WaveFunctionLattice, noise: NoiseModel, kinetic: KineticOperator | None,
                 t_final: float, n_traj: int, seed: int, dt: float = 1e-3,
                 n_records: int = 0, batch_size: int = 500,
                 backend: str | None = None) -> EnsembleResult:
    """Average |psi><psi| over ``n_traj`` trajectories with substreams (seed, index).

    ``n_records`` > 0 also records the ensemble mean of the per-trajectory
    position variance at that many evenly spaced times (plus t = 0).
    """
    if n_traj < 1:
        raise ConfigurationError("n_traj must be at least 1")
    if t_final < 0:
        raise ConfigurationError("t_final must be non-negative")
    _check_step(noise, dt)
    grid = psi0.grid
    n_steps = int(round(t_final / dt))
    if abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ConfigurationError("t_final must be a whole number of steps")
    unitary = _unitary(grid, kinetic, dt)
    start = psi0.psi / psi0.norm
    x = grid.x

    n_rec = max(0, int(n_records))
    marks = np.unique(np.linspace(0, n_steps, n_rec + 1).round().astype(int)) if n_rec else np.array([0])
    finals = np.empty((n_traj, grid.n_sites), dtype=complex)
    var_at = np.empty((n_traj, marks.size))
    for lo in range(0, n_traj, batch_size):
        b = min(batch_size, n_traj - lo)
        gens = _generators(seed, b, lo)
        psi = np.tile(start, (b, 1))
        var_at[lo:lo + b, 0] = _position_stats(psi, x)[1]
        done = 0
        for r, mark in enumerate(marks[1:], start=1):
            psi = _advance(psi, gens, mark - done, noise, unitary, dt, backend)
            done = mark
            var_at[lo:lo + b, r] = _position_stats(psi, x)[1]
        if done < n_steps:
            psi = _advance(psi, gens, n_steps - done, noise, unitary, dt, backend)
        finals[lo:lo + b] = psi

    # ordered reduction by trajectory index
    rho = np.zeros((grid.n_sites, grid.n_sites), dtype=complex)
    for psi in finals:
        rho += np.outer(psi, psi.conj())
    rho /= n_traj
    means, variances = _position_stats(finals, x)
    stats = {
        "position_mean": _mean_and_error(means),
        "position_variance": _mean_and_error(variances),
        "norm": _mean_and_error(np.linalg.norm(finals, axis=1)),
    }
    series = np.array([_mean_and_error(var_at[:, r]) for r in range(marks.size)])
    mass = None if kinetic is None else kinetic.mass
    return EnsembleResult(DensityMatrixGrid(grid, rho, mass, n_steps * dt), n_traj, seed, stats,
                          marks * dt, series, finals)


@dataclass(frozen=True)
class CollapseStatistics:
    freq_left: float
    freq_right: float
    n_left: int
    n_right: int
    n_unresolved: int
    ci_left: tuple[float, float]
    ci_right: tuple[float, float]
    stderr_left: float
    chi2_pvalue: float
    inconclusive: bool

    @property
    def n_resolved(self) -> int:
        return self.n_left + self.n_right


def two_site_superposition(grid: Grid1D, left: int, right: int, weight_left: float) -> WaveFunctionLattice:
    """a|left> + b|right> with |a|^2 = weight_left."""
    if not 0.0 <= weight_left <= 1.0:
        raise ConfigurationError("weight must lie in [0, 1]")
    psi = np.zeros(grid.n_sites, dtype=complex)
    psi[left] = math.sqrt(weight_left)
    psi[right] = math.sqrt(1.0 - weight_left)
    return WaveFunctionLattice(grid, psi, None)


def collapse_statistics(psi0: WaveFunctionLattice, noise: NoiseModel, t_run: float, n_traj: int,
                        seed: int, split: int | None = None, dt: float = 1e-3,
                        kinetic: KineticOperator | None = None,
                        backend: str | None = None) -> CollapseStatistics:
    """Classify final trajectories by which half of the lattice holds >95% of the norm.

    Sites below ``split`` (default n/2) form the left packet. Frequencies
    are over resolved trajectories, with Wilson 95% intervals; the
    chi-square test compares resolved counts with the initial weights.
    """
    n = psi0.grid.n_sites
    split = n // 2 if split is None else split
    prob0 = np.abs(psi0.psi) ** 2
    w_left = float(prob0[:split].sum() / prob0.sum())
    res = run_ensemble(psi0, noise, kinetic, t_run, n_traj, seed, dt=dt, backend=backend)
    prob = np.abs(res.final_psi) ** 2
    left_mass = prob[:, :split].sum(axis=1)
    is_left = left_mass > CLASSIFY_THRESHOLD
    is_right = left_mass < 1.0 - CLASSIFY_THRESHOLD
    n_left, n_right = int(is_left.sum()), int(is_right.sum())
    n_unres = n_traj - n_left - n_right
    n_res = n_left + n_right
    if n_res == 0:
        nan = float("nan")
        return CollapseStatistics(nan, nan, 0, 0, n_unres, (nan, nan), (nan, nan), nan, nan, True)
    ci_l = binomtest(n_left, n_res).proportion_ci(method="wilson")
    ci_r = binomtest(n_right, n_res).proportion_ci(method="wilson")
    f_left = n_left / n_res
    stderr = math.sqrt(max(w_left * (1 - w_left), 1e-300) / n_res)
    expected = np.array([w_left, 1 - w_left]) * n_res
    if np.all(expected > 0):
        pvalue = float(chisquare([n_left, n_right], expected).pvalue)
    else:
        # a certain outcome: the test passes iff the impossible bin is empty
        pvalue = 1.0 if (n_left if w_left == 0 else n_right) == 0 else 0.0
    return CollapseStatistics(
        f_left, n_right / n_res, n_left, n_right, n_unres,
        (float(ci_l.low), float(ci_l.high)), (float(ci_r.low), float(ci_r.high)),
        stderr, pvalue, n_unres > INCONCLUSIVE_FRACTION * n_traj)
