"""Exception hierarchy shared across the toolkit."""


class TerrakoopError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(TerrakoopError):
    """Invalid or inconsistent configuration."""


class DomainError(TerrakoopError):
    """Input outside the admissible domain of an operation."""


class SinkageOverflowError(DomainError):
    """Requested sinkage at or beyond the wheel axle (h_f >= r)."""


class NoEquilibriumError(TerrakoopError):
    """Vertical soil force cannot balance the requested normal load
    anywhere in the admissible sinkage bracket."""


class ConvergenceError(TerrakoopError):
    """Iteration budget exhausted before reaching tolerance.

    Carries the last residual so callers can judge how close the
    iteration got.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NumericalError(TerrakoopError):
    """Non-finite value encountered during a numerical computation."""


class InsufficientExcitationError(TerrakoopError):
    """Input data too poor (rank-deficient input Hankel) to identify
    the requested quantities."""


class OrderTooHighError(TerrakoopError):
    """Requested model order exceeds the numerical rank of the data."""


class SolverError(TerrakoopError):
    """Optimization solver failed (non-finite cost or diverging iterates)."""
