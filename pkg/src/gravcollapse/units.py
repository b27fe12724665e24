"""Physical constants, model parameter sets, presets and unit handling.

Everything here is SI with double precision. The dynamical modules run in
dimensionless units obtained from :func:`dimensionless_scaling`.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum

from .errors import ConfigurationError, NumericalError, UnitError


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA 2018 values; immutable."""

    G: float = 6.67430e-11
    hbar: float = 1.054571817e-34
    kB: float = 1.380649e-23
    amu: float = 1.66053906660e-27
    proton_mass: float = 1.67262192369e-27

    def __post_init__(self):
        for name in ("G", "hbar", "kB", "amu", "proton_mass"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"constant {name} must be positive")


CONSTANTS = PhysicalConstants()


class CoarseGraining(str, Enum):
    GAUSSIAN = "gaussian"
    SPHERE = "sphere"


class FormFactor(str, Enum):
    SPHERE_EXACT = "sphere_exact"
    GAUSSIAN_APPROX = "gaussian_approx"


@dataclass(frozen=True)
class DPParams:
    R0: float
    m_r: float = 0.0
    coarse_graining: CoarseGraining = CoarseGraining.GAUSSIAN

    def __post_init__(self):
        if not (math.isfinite(self.R0) and self.R0 > 0):
            raise ConfigurationError(f"R0 must be positive, got {self.R0!r}")
        if not (math.isfinite(self.m_r) and self.m_r >= 0):
            raise ConfigurationError(f"m_r must be non-negative, got {self.m_r!r}")
        object.__setattr__(self, "coarse_graining", CoarseGraining(self.coarse_graining))


@dataclass(frozen=True)
class CSLParams:
    gamma: float = 1e-36
    r_c: float = 1e-7
    m0: float = CONSTANTS.amu

    def __post_init__(self):
        for name in ("gamma", "r_c", "m0"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class ParticleSpec:
    m: float

    def __post_init__(self):
        if not (math.isfinite(self.m) and self.m >= 0):
            raise ConfigurationError(f"mass must be non-negative, got {self.m!r}")


@dataclass(frozen=True)
class RigidBodySpec:
    M: float
    R: float
    form_factor: FormFactor = FormFactor.GAUSSIAN_APPROX

    def __post_init__(self):
        if not (math.isfinite(self.M) and self.M >= 0):
            raise ConfigurationError(f"M must be non-negative, got {self.M!r}")
        if not (math.isfinite(self.R) and self.R >= 0):
            raise ConfigurationError(f"R must be non-negative, got {self.R!r}")
        object.__setattr__(self, "form_factor", FormFactor(self.form_factor))


@dataclass(frozen=True)
class ModelParams:
    """A complete parameter set: which model is active plus both blocks.

    ``model`` selects the kernel used by rate and dynamics code; the other
    block is carried along so that comparisons (e.g. the damping-time
    figure) need only one object.
    """

    model: str
    dp: DPParams = field(default_factory=lambda: DPParams(R0=1e-15))
    csl: CSLParams = field(default_factory=CSLParams)
    constants: PhysicalConstants = CONSTANTS
    provenance: str = ""

    def __post_init__(self):
        if self.model not in ("dp", "csl"):
            raise ConfigurationError(f"model must be 'dp' or 'csl', got {self.model!r}")

    @property
    def length(self) -> float:
        """Kernel length: R0 for DP, r_c for CSL."""
        return self.dp.R0 if self.model == "dp" else self.csl.r_c


_PRESETS = {
    "diosi": lambda: ModelParams(
        "dp", dp=DPParams(R0=1e-15),
        provenance="DP cut-off at the nucleon Compton wavelength (overheating discussion)",
    ),
    "ghirardi": lambda: ModelParams(
        "dp", dp=DPParams(R0=1e-7),
        provenance="DP cut-off enlarged to the CSL correlation length (overheating discussion)",
    ),
    "csl_grw": lambda: ModelParams(
        "csl", csl=CSLParams(gamma=1e-36, r_c=1e-7, m0=CONSTANTS.amu),
        provenance="mass-proportional CSL, standard strength gamma=1e-36 m^3/s",
    ),
    "csl_adler": lambda: ModelParams(
        "csl", csl=CSLParams(gamma=1e-28, r_c=1e-7, m0=CONSTANTS.amu),
        provenance="mass-proportional CSL, enhanced strength gamma=1e-28 m^3/s",
    ),
}

PRESET_NAMES = tuple(_PRESETS)


def preset(name: str) -> ModelParams:
    try:
        return _PRESETS[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; choose one of {', '.join(PRESET_NAMES)}"
        ) from None


# --- units -----------------------------------------------------------------

# dimension vector: (length, mass, time, temperature)
_BASE_UNITS = {
    "m": (1.0, (1, 0, 0, 0)),
    "cm": (1e-2, (1, 0, 0, 0)),
    "mm": (1e-3, (1, 0, 0, 0)),
    "um": (1e-6, (1, 0, 0, 0)),
    "nm": (1e-9, (1, 0, 0, 0)),
    "fm": (1e-15, (1, 0, 0, 0)),
    "kg": (1.0, (0, 1, 0, 0)),
    "g": (1e-3, (0, 1, 0, 0)),
    "amu": (CONSTANTS.amu, (0, 1, 0, 0)),
    "u": (CONSTANTS.amu, (0, 1, 0, 0)),
    "s": (1.0, (0, 0, 1, 0)),
    "ms": (1e-3, (0, 0, 1, 0)),
    "J": (1.0, (2, 1, -2, 0)),
    "W": (1.0, (2, 1, -3, 0)),
    "eV": (1.602176634e-19, (2, 1, -2, 0)),
    "K": (1.0, (0, 0, 0, 1)),
    # kinetic temperature: an energy, E = (3/2) kB T
    "K_kinetic": (1.5 * CONSTANTS.kB, (2, 1, -2, 0)),
}

_TOKEN = re.compile(r"^([A-Za-z_]+)(?:\^?(-?\d+))?$")


def _parse_unit(unit: str):
    unit = unit.strip()
    if unit in ("", "1"):
        return 1.0, (0, 0, 0, 0)
    factor = 1.0
    dims = [0, 0, 0, 0]
    parts = unit.split("/")
    if len(parts) > 2:
        raise UnitError(f"cannot parse unit {unit!r}: more than one '/'")
    for sign, part in zip((1, -1), parts):
        for token in re.split(r"[*\s]+", part.strip()):
            if token in ("", "1"):
                continue
            match = _TOKEN.match(token)
            if not match or match.group(1) not in _BASE_UNITS:
                raise UnitError(f"unknown unit {token!r} in {unit!r}")
            base, power = match.group(1), int(match.group(2) or 1)
            scale, dim = _BASE_UNITS[base]
            factor *= scale ** (sign * power)
            for i in range(4):
                dims[i] += sign * power * dim[i]
    return factor, tuple(dims)


def convert(value: float, from_unit: str, to_unit: str) -> float:
    """Linear conversion between dimensionally compatible units.

    ``K_kinetic`` denotes the equipartition temperature of an energy,
    E = (3/2) kB T.
    """
    f_from, d_from = _parse_unit(from_unit)
    f_to, d_to = _parse_unit(to_unit)
    if d_from != d_to:
        raise UnitError(f"cannot convert {from_unit!r} to {to_unit!r}: dimensions differ")
    if from_unit.strip() == to_unit.strip():
        return value
    return value * (f_from / f_to)


_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def parse_quantity(text, expected: str | None = None) -> float:
    """Parse ``"1e-15 m"`` or ``"1amu"`` into an SI float.

    ``expected`` is a unit whose dimension the quantity must share.
    """
    if isinstance(text, (int, float)):
        if expected is not None and _parse_unit(expected)[1] != (0, 0, 0, 0):
            raise UnitError(f"bare number {text!r} where a quantity in {expected!r} was expected")
        return float(text)
    match = _QUANTITY.match(str(text))
    if not match:
        raise UnitError(f"cannot parse quantity {text!r}")
    number, unit = float(match.group(1)), match.group(2)
    factor, dims = _parse_unit(unit)
    if expected is not None and _parse_unit(expected)[1] != dims:
        raise UnitError(f"quantity {text!r} is not compatible with {expected!r}")
    return number * factor


# --- dimensionless units ---------------------------------------------------

@dataclass(frozen=True)
class ScaleSet:
    """Units in which hbar = 1, the collapse rate is 1 and the kernel length is 1.

    Only three base units exist, so once length, time and hbar are fixed
    the mass unit follows: ``mass = hbar * time / length**2``. A particle's
    scaled mass is therefore a genuine dimensionless parameter.
    """

    length: float
    time: float
    hbar: float = CONSTANTS.hbar

    @property
    def energy(self) -> float:
        return self.hbar / self.time

    @property
    def mass(self) -> float:
        return self.hbar * self.time / self.length**2

    @property
    def momentum(self) -> float:
        return self.hbar / self.length

    def _unit(self, length=0, mass=0, time=0) -> float:
        return self.length**length * self.mass**mass * self.time**time

    def to_scaled(self, value, length=0, mass=0, time=0):
        return value / self._unit(length, mass, time)

    def to_si(self, value, length=0, mass=0, time=0):
        return value * self._unit(length, mass, time)


def dimensionless_scaling(params: ModelParams, particle: ParticleSpec) -> ScaleSet:
    from .rates import collapse_rate_point

    if not particle.m > 0:
        raise NumericalError("degenerate scale: particle mass is zero, so the collapse rate vanishes")
    rate = collapse_rate_point(params.model, particle.m, params)
    if not rate > 0:
        raise NumericalError("degenerate scale: collapse rate is zero")
    return ScaleSet(length=params.length, time=1.0 / rate, hbar=params.constants.hbar)
