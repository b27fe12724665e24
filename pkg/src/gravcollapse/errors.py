"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes, so every failure raised by the
library falls into one of three buckets.
"""


class CollapseError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(CollapseError, ValueError):
    """Bad parameters, presets, units or grid/kernel mismatch."""

    exit_code = 2


class UnitError(ConfigurationError):
    """Dimensionally incompatible unit conversion or unparseable unit."""


class NumericalError(CollapseError, ArithmeticError):
    """Step-size violations, degenerate scales, failed factorizations."""

    exit_code = 3


class OracleFailure(NumericalError):
    """Adaptive quadrature did not converge.

    ``best_estimate`` and ``error_estimate`` carry whatever the
    integrator had when it gave up.
    """

    def __init__(self, message, best_estimate=float("nan"), error_estimate=float("inf")):
        super().__init__(message)
        self.best_estimate = best_estimate
        self.error_estimate = error_estimate


class InconclusiveStatistics(CollapseError):
    """Monte Carlo result flagged as inconclusive (e.g. unresolved collapses)."""

    exit_code = 4


class ExtrapolationError(NumericalError):
    """A tabulated sampler was queried outside its parameter range."""
