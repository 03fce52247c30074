"""Exception hierarchy shared by every module."""


class AmipError(Exception):
    """Base class for all library errors."""


class UsageError(AmipError):
    """Bad input, schema or configuration (CLI exit code 2)."""


class SchemaError(UsageError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ParseError(UsageError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(UsageError):
    pass


class InsufficientDataError(UsageError):
    pass


class BoundsError(UsageError, IndexError):
    pass


class AlphaTooSmallError(UsageError):
    pass


class NumericalError(AmipError):
    """Runtime numerical failure (CLI exit code 1)."""


class DegenerateDesignError(NumericalError):
    pass


class DegenerateSubsetError(NumericalError):
    """The weighted design lost full rank, e.g. because of a drop set."""


class WeakInstrumentError(DegenerateSubsetError):
    pass


class SingularJacobianError(NumericalError):
    pass


class SolverError(NumericalError):
    def __init__(self, message, theta=None, residual_norm=None, iterations=None):
        super().__init__(message)
        self.theta = theta
        self.residual_norm = residual_norm
        self.iterations = iterations


class MissingGradientError(AmipError):
    pass


class EnumerationTooLargeError(AmipError):
    pass
