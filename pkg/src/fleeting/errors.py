"""Exception hierarchy shared by every module."""


class FleetingError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParamsError(FleetingError, ValueError):
    """Parameters fall outside the admissible domain."""


class NotPositiveDefiniteError(FleetingError, ValueError):
    """A matrix that must be inverted has an eigenvalue at or below the floor."""


class SingularMatrixError(NotPositiveDefiniteError):
    """A sampled Wishart matrix is numerically non-invertible."""


class DimensionMismatchError(FleetingError, ValueError):
    pass


class NumericalFailureError(FleetingError, ArithmeticError):
    """An iterative linear-algebra routine failed to converge."""


class DataError(FleetingError, ValueError):
    """Input data is malformed, has gaps, or violates price invariants."""


class InsufficientHistoryError(FleetingError, ValueError):
    pass


class DegenerateFactorError(FleetingError, ValueError):
    """A factor vector vanished (e.g. every asset tied in the cross-section)."""


class UniverseMismatchError(FleetingError, ValueError):
    pass


class ParamsMismatchError(FleetingError, ValueError):
    pass


class EmptyPartitionError(FleetingError, ValueError):
    pass
