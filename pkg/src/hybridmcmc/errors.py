"""Exception types raised across the package."""


class ParameterError(ValueError):
    """An argument is outside its admissible range."""


class ContractViolation(ValueError):
    """An input breaks a structural precondition (shape, symmetry)."""


class DegeneratePriorError(ValueError):
    """The prior spectrum is identically zero."""


class ConfigurationError(ValueError):
    """A sampler or experiment configuration is inconsistent."""


class AdaptationError(RuntimeError):
    """The adapted proposal covariance cannot be factorized."""


class StartupError(RuntimeError):
    """The hybrid sampler cannot seed its covariance from the pre-run."""


class NonFinitePotential(ArithmeticError):
    """A proposal produced a non-finite potential and must be rejected."""


class ZeroVarianceError(ValueError):
    """A series has zero variance, so autocorrelations are undefined."""
