"""Exception hierarchy shared across the package.

Errors are grouped by how the CLI maps them to exit codes: configuration
problems, data problems, and numerical failures.  ``StiffnessError`` is the
one failure the optimizers are expected to catch and recover from.
"""


class OscidError(Exception):
    """Base class for all package errors."""


class ConfigError(OscidError):
    """Invalid configuration (unknown key, bad value, missing path)."""


class DataError(OscidError):
    """Input data cannot be used (parse failure, too short, degenerate)."""


class DegenerateSignalError(DataError):
    """Signal has zero variance where variation is required."""


class NoDominantFrequencyError(DataError):
    """Power spectrum has no peak standing clear of the noise floor."""


class SelectionError(DataError):
    """Grid selection failed (autocorrelation never crosses threshold)."""


class InsufficientDataError(DataError):
    """Too many empty cells in the Kramers-Moyal sample grid."""


class InitializerError(DataError):
    """Extrapolation initializer could not produce a starting point."""


class NumericalError(OscidError):
    """Numerical failure (blow-up, solver breakdown, divergence)."""


class SimulationBlowUpError(NumericalError):
    """Simulated state left the finite range."""

    def __init__(self, message: str, t_blowup: float):
        super().__init__(message)
        self.t_blowup = t_blowup


class StiffnessError(NumericalError):
    """Adjoint solver broke down (step-size underflow or non-finite state).

    Carries the offending parameters and the integration time reached so an
    optimizer can report where a candidate failed and back off.
    """

    def __init__(self, message: str, theta=None, t_fail: float | None = None):
        super().__init__(message)
        self.theta = theta
        self.t_fail = t_fail


class JacobianError(NumericalError):
    """A finite-difference perturbation failed; names the coordinate."""

    def __init__(self, message: str, coordinate: str):
        super().__init__(message)
        self.coordinate = coordinate
