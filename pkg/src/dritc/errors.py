"""Exception types shared across the package.

Every computational failure raises a subclass of :class:`DritcError`, so the
CLI can distinguish computation errors (exit code 2) from usage errors.
"""


class DritcError(Exception):
    """Base class for all estimation and data errors raised by dritc."""


class DataError(DritcError):
    """Malformed input data or configuration."""


class SeparationError(DritcError):
    """Quasi-complete separation detected while fitting a Bernoulli GLM."""


class GlmConvergenceError(DritcError):
    """A GLM solve failed in a way that cannot be reported as converged=False."""


class NonOverlapError(DritcError):
    """A propensity prediction of (numerically) zero produced an infinite weight."""


class InfeasibleBalanceError(DritcError):
    """The balance target lies outside the convex hull of the sample moments."""

    def __init__(self, message, feasibility=None):
        super().__init__(message)
        self.feasibility = feasibility


class DegenerateOutcomeError(DritcError):
    """A mean outcome of exactly 0 or 1 makes the log-odds scale undefined."""


class UnboundedMeanError(DritcError):
    """A Horvitz-Thompson mean fell outside the (0, 1) probability range."""


class UnstableBootstrapError(DritcError):
    """More than the allowed fraction of bootstrap resamples failed."""
