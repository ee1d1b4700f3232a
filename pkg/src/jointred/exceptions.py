"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`JointRedError`
so callers can catch the whole family at once.
"""


class JointRedError(Exception):
    """Base class for all package errors."""


class InvalidConfigError(JointRedError, ValueError):
    """A configuration value or constructor argument is invalid."""


class ShapeError(JointRedError, ValueError):
    """Array dimensions do not match."""


class FactorizationError(JointRedError, ArithmeticError):
    """A covariance or precision factorization failed."""


class ModelEvalError(JointRedError, RuntimeError):
    """A forward (or adjoint) model evaluation failed.

    The ``diagnostics`` attribute carries whatever the solver reported.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class WeightEvalError(ModelEvalError):
    """A full-model evaluation inside an importance weight failed."""


class EmptyBasisError(JointRedError, ValueError):
    """A truncation left no basis vectors."""


class DegenerateWeightsError(JointRedError, ValueError):
    """Importance weights are all zero, non-finite, or too concentrated."""


class DeimSingularError(JointRedError, ArithmeticError):
    """The DEIM greedy met a rank-deficient column."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ReducedSolveError(JointRedError, ArithmeticError):
    """The reduced-order system is singular at the requested point."""

    def __init__(self, message, x_r=None):
        super().__init__(message)
        self.x_r = x_r


class SnapshotCollectionError(JointRedError, RuntimeError):
    """Too many forward solves failed while collecting snapshots."""


class ChainFailedError(JointRedError, RuntimeError):
    """An MCMC chain hit too many non-finite proposals."""


class BoxTooSmallError(JointRedError, ValueError):
    """Quadrature box misses too much probability mass."""


class NotConvergedWarning(UserWarning):
    """An iterative solver stopped before reaching its tolerance."""


class DegenerateLaplaceWarning(UserWarning):
    """The Laplace spectrum is empty, so its covariance equals the prior."""


class DegenerateWeightsWarning(UserWarning):
    """Importance weights fell below the effective-sample-size floor."""
