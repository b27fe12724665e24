"""One-particle master equation on a 1D position lattice.

The generator is free kinetic evolution plus the decoherence term, which
in position representation multiplies rho(x, x') by -D(x - x'). States
are propagated with a Strang split (half kinetic, full decoherence, half
kinetic); all quantities are in scaled units with hbar = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigurationError, NumericalError
from .rates import DecoherenceKernel

MIN_BOX_KERNEL_LENGTHS = 20.0
MAX_STEP_DECOHERENCE = 1e-2


@dataclass(frozen=True)
class Grid1D:
    """Periodic lattice of ``n_sites`` points, centred on zero by default."""

    n_sites: int
    spacing: float
    origin: float | None = None

    def __post_init__(self):
        n = self.n_sites
        if not (16 <= n <= 1024 and n & (n - 1) == 0):
            raise ConfigurationError(f"n_sites must be a power of two in [16, 1024], got {n}")
        if not self.spacing > 0:
            raise ConfigurationError("spacing must be positive")
        if self.origin is None:
            object.__setattr__(self, "origin", -0.5 * n * self.spacing)

    @property
    def length(self) -> float:
        return self.n_sites * self.spacing

    @property
    def x(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.n_sites)

    @property
    def momenta(self) -> np.ndarray:
        return 2.0 * math.pi * np.fft.fftfreq(self.n_sites, self.spacing)

    def separations(self) -> np.ndarray:
        x = self.x
        return np.abs(x[:, None] - x[None, :])

    def check_kernel_range(self, kernel_length: float) -> None:
        if self.length < MIN_BOX_KERNEL_LENGTHS * kernel_length:
            raise ConfigurationError(
                f"grid of length {self.length:g} is shorter than "
                f"{MIN_BOX_KERNEL_LENGTHS:g} kernel lengths ({kernel_length:g})"
            )


@dataclass(frozen=True)
class KineticOperator:
    """Free Hamiltonian p^2 / 2m applied spectrally; ``mass=None`` disables it."""

    mass: float | None = 1.0

    @property
    def enabled(self) -> bool:
        return self.mass is not None

    def energies(self, grid: Grid1D) -> np.ndarray:
        if not self.enabled:
            return np.zeros(grid.n_sites)
        return grid.momenta**2 / (2.0 * self.mass)

    def phases(self, grid: Grid1D, dt: float) -> np.ndarray:
        return np.exp(-1j * self.energies(grid) * dt)

    def hamiltonian(self, grid: Grid1D) -> np.ndarray:
        """Dense position-space matrix of the spectral kinetic operator."""
        n = grid.n_sites
        fourier = np.fft.fft(np.eye(n), axis=0)
        return (fourier.conj().T * self.energies(grid)) @ fourier / n

    def unitary(self, grid: Grid1D, dt: float) -> np.ndarray:
        n = grid.n_sites
        fourier = np.fft.fft(np.eye(n), axis=0)
        return (fourier.conj().T * self.phases(grid, dt)) @ fourier / n

    def evolve_density(self, rho: np.ndarray, grid: Grid1D, dt: float) -> np.ndarray:
        """U rho U^dagger with U = exp(-i H dt), via FFTs on both indices."""
        if not self.enabled:
            return rho.copy()
        ph = self.phases(grid, dt)
        return _conjugate_by_phases(rho, np.outer(ph, ph.conj()))


def _conjugate_by_phases(rho, phase_matrix):
    out = np.fft.ifft(np.fft.fft(rho, axis=0), axis=1)
    out *= phase_matrix
    return np.fft.fft(np.fft.ifft(out, axis=0), axis=1)


@dataclass
class DensityMatrixGrid:
    grid: Grid1D
    rho: np.ndarray
    mass: float | None = 1.0
    time: float = 0.0

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        n = self.grid.n_sites
        if self.rho.shape != (n, n):
            raise ConfigurationError(f"rho must be {n}x{n}, got {self.rho.shape}")

    @classmethod
    def from_wavefunction(cls, grid: Grid1D, psi, mass=1.0) -> "DensityMatrixGrid":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(grid, np.outer(psi, psi.conj()), mass)

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.rho))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))

    def min_eigenvalue(self) -> float:
        herm = 0.5 * (self.rho + self.rho.conj().T)
        return float(np.linalg.eigvalsh(herm)[0])

    def validate(self, tol: float = 1e-10, psd_tol: float = 1e-8) -> None:
        if self.hermiticity_error() > tol:
            raise NumericalError("density matrix is not Hermitian")
        if abs(self.trace - 1.0) > tol:
            raise NumericalError(f"trace is {self.trace}, expected 1")
        if self.min_eigenvalue() < -psd_tol:
            raise NumericalError("density matrix is not positive semidefinite")

    def position_moments(self) -> tuple[float, float]:
        """Mean and variance of position from the diagonal."""
        p = self.rho.diagonal().real
        x = self.grid.x
        mean = float(p @ x)
        return mean, float(p @ (x - mean) ** 2)


def gaussian_packet(grid: Grid1D, center: float, width: float, momentum: float = 0.0) -> np.ndarray:
    """Normalized lattice samples of a Gaussian wave packet (position std ``width``)."""
    x = grid.x
    psi = np.exp(-((x - center) ** 2) / (4.0 * width**2) + 1j * momentum * x)
    return psi / np.linalg.norm(psi)


def build_decoherence_matrix(kernel: DecoherenceKernel, grid: Grid1D) -> np.ndarray:
    """D_ij = D(|x_i - x_j|), zero on the diagonal."""
    grid.check_kernel_range(kernel.length)
    D = np.asarray(kernel.evaluate(grid.separations()), dtype=float)
    np.fill_diagonal(D, 0.0)
    return D


@dataclass
class StrangPropagator:
    """Precomputed factors for repeated Strang steps of fixed dt."""

    grid: Grid1D
    D: np.ndarray
    kinetic: KineticOperator
    dt: float
    _decay: np.ndarray = field(init=False, repr=False)
    _half_phase: np.ndarray | None = field(init=False, repr=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise NumericalError("dt must be positive")
        if self.dt * float(np.max(self.D)) > MAX_STEP_DECOHERENCE:
            raise NumericalError(
                f"dt * max(D) = {self.dt * float(np.max(self.D)):.3g} exceeds "
                f"{MAX_STEP_DECOHERENCE:g}; reduce the step"
            )
        self._decay = np.exp(-self.D * self.dt)
        if self.kinetic.enabled:
            ph = self.kinetic.phases(self.grid, 0.5 * self.dt)
            self._half_phase = np.outer(ph, ph.conj())
        else:
            self._half_phase = None

    def apply(self, rho: np.ndarray, n_steps: int = 1) -> np.ndarray:
        rho = np.array(rho, dtype=complex, copy=True)
        if self._half_phase is None:
            # pure decoherence is exact: fold all steps into one factor
            return rho * self._decay**n_steps
        for _ in range(n_steps):
            rho = _conjugate_by_phases(rho, self._half_phase)
            rho *= self._decay
            rho = _conjugate_by_phases(rho, self._half_phase)
        return rho


def step(state: DensityMatrixGrid, D: np.ndarray, kinetic: KineticOperator,
         dt: float) -> DensityMatrixGrid:
    """One Strang step: half kinetic, decoherence exp(-D dt), half kinetic."""
    prop = StrangPropagator(state.grid, D, kinetic, dt)
    return DensityMatrixGrid(state.grid, prop.apply(state.rho), state.mass, state.time + dt)


def propagate(state: DensityMatrixGrid, D: np.ndarray, kinetic: KineticOperator,
              dt: float, n_steps: int) -> DensityMatrixGrid:
    prop = StrangPropagator(state.grid, D, kinetic, dt)
    return DensityMatrixGrid(state.grid, prop.apply(state.rho, n_steps), state.mass,
                             state.time + n_steps * dt)


def propagate_analytic_free(rho0: DensityMatrixGrid, t: float, kernel: DecoherenceKernel,
                            kinetic: KineticOperator | None = None,
                            n_tau: int = 96) -> DensityMatrixGrid:
    """Closed-form free-particle solution evaluated on the lattice.

    rho(x, x', t) = int dy dP/2pi  rho_free(x+y, x'+y, t) exp(-i y P)
                    * exp(-int_0^t D(x - x' - P tau / m) dtau)

    On the lattice the y-shifts run along the diagonals of rho, so the
    y-integral is a DFT along each diagonal, P runs over the conjugate
    momenta and the P-integral is the inverse DFT. The tau-integral uses
    Gauss-Legendre nodes.
    """
    if t < 0:
        raise ConfigurationError("time must be non-negative")
    if kinetic is None:
        kinetic = KineticOperator(rho0.mass)
    grid = rho0.grid
    if t == 0:
        return DensityMatrixGrid(grid, rho0.rho.copy(), rho0.mass, rho0.time)
    free = kinetic.evolve_density(rho0.rho, grid, t)
    n = grid.n_sites
    P = grid.momenta
    nodes, weights = leggauss(n_tau)
    tau = 0.5 * t * (nodes + 1.0)
    w = 0.5 * t * weights
    inv_mass = 0.0 if not kinetic.enabled else 1.0 / kinetic.mass

    j = np.arange(n)
    out = np.empty_like(free)
    for r in range(n):
        i = (j + r) % n
        diag = free[i, j]
        r_phys = (r if r < n // 2 else r - n) * grid.spacing
        shifted = r_phys - np.outer(P * inv_mass, tau)
        exponent = np.asarray(kernel.evaluate(shifted)) @ w
        out[i, j] = np.fft.ifft(np.fft.fft(diag) * np.exp(-exponent))
    return DensityMatrixGrid(grid, out, rho0.mass, rho0.time + t)


def coherence_profile(state: DensityMatrixGrid) -> tuple[np.ndarray, np.ndarray]:
    """Mean |rho(x, x + delta)| for each lattice offset delta (non-periodic)."""
    n = state.grid.n_sites
    a = np.abs(state.rho)
    offsets = np.arange(n)
    means = np.array([np.mean(np.diagonal(a, offset=k)) for k in offsets])
    return offsets * state.grid.spacing, means


def trace_distance(a, b) -> float:
    """(1/2) || a - b ||_1 for Hermitian matrices or DensityMatrixGrid states."""
    a = getattr(a, "rho", a)
    b = getattr(b, "rho", b)
    diff = np.asarray(a) - np.asarray(b)
    diff = 0.5 * (diff + diff.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))
