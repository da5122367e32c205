"""Exception hierarchy shared by every module in the package."""


class NNKError(Exception):
    """Base class for all errors raised by nnkood."""


class FormatError(NNKError):
    """A file or header could not be parsed."""


class DataError(NNKError):
    """Input values violate a data invariant (non-finite entries, zero rows, ...)."""


class ShapeError(NNKError, ValueError):
    """Array dimensions do not agree."""


class PreconditionError(NNKError, ValueError):
    """An operation was called with arguments outside its domain."""


class GenerationError(NNKError):
    pass


class SingularError(NNKError):
    """A factorization failed even after ridge escalation."""


class ConvergenceError(NNKError):
    pass


class ConfigError(NNKError, ValueError):
    """Detector or run configuration is inconsistent."""


class MetricError(NNKError, ValueError):
    pass


class InternalError(NNKError):
    pass
