"""Exception hierarchy shared by every module in the package."""


class BQNESError(Exception):
    """Base class for all package errors."""


class InvalidArchitectureError(BQNESError, ValueError):
    pass


class EnumerationCapError(BQNESError):
    pass


class NoMutationError(BQNESError):
    pass


class KindError(BQNESError, TypeError):
    """Architectures from different space kinds were mixed."""


class ShapeError(BQNESError, ValueError):
    pass


class MissingRecordError(BQNESError, KeyError):
    pass


class FormatError(BQNESError):
    """A benchmark file could not be parsed."""


class InputError(BQNESError, ValueError):
    pass


class ConditioningError(BQNESError):
    """A Gram matrix stayed indefinite after the maximum jitter."""


class DegenerateMeasureError(BQNESError):
    pass


class DegenerateKernelError(BQNESError):
    pass


class RecombinationError(BQNESError):
    pass


class ProtocolError(BQNESError):
    pass


class ExhaustionError(BQNESError):
    """The search space has fewer unqueried architectures than requested."""


class ConfigError(BQNESError, ValueError):
    pass
