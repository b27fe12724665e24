"""Gravity-related (DP) and CSL collapse models.

Closed-form rates are checked against a quadrature oracle. Lattice
master-equation and trajectory simulators sit alongside a momentum jump
process for the dissipative variant.
"""

__version__ = "0.1.0"

from .errors import (CollapseError, ConfigurationError, ExtrapolationError,  # noqa: F401
                     InconclusiveStatistics, NumericalError, OracleFailure, UnitError)
from .kernels import BACKEND  # noqa: F401
from .units import (CONSTANTS, CSLParams, DPParams, ModelParams, ParticleSpec,  # noqa: F401
                    PhysicalConstants, RigidBodySpec, ScaleSet, preset)
