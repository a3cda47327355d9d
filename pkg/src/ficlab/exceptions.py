"""Exception hierarchy shared across ficlab."""


class FicError(Exception):
    """Base class for all ficlab errors."""


class NumericalFailure(FicError):
    """A matrix was too ill-conditioned to invert reliably."""


class FitError(FicError):
    """Maximum-likelihood fitting failed."""


class ConvergenceError(FitError):
    pass


class SeparationError(FitError):
    """Logistic coefficients diverged (complete or quasi-complete separation)."""


class RankDeficiencyError(FitError):
    pass


class ConfigError(FicError):
    """Invalid user configuration (bad columns, dimensions, levels)."""
