"""Exception types shared by the solver, operator and experiment layers."""


class RungeLabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RungeLabError, ValueError):
    """Invalid geometry, coefficients or experiment configuration."""


class SolvabilityError(RungeLabError):
    """Zero is (numerically) a Dirichlet eigenvalue of the operator."""


class PreconditionError(RungeLabError, ValueError):
    """An operation was called on data outside its domain of validity."""


class NumericalError(RungeLabError):
    """A factorization or eigen-solver failed."""
