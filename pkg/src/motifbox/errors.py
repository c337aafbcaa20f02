"""Exception types raised across the package."""


class MotifboxError(Exception):
    pass


class FormatError(MotifboxError, ValueError):
    """Malformed input file (bad RIFF header, bad CQT cache, bad checkpoint)."""


class UnsupportedError(MotifboxError, ValueError):
    pass


class InsufficientInputError(MotifboxError, ValueError):
    pass


class RangeError(MotifboxError, ValueError):
    pass


class OutOfClipError(MotifboxError, ValueError):
    pass


class DomainError(MotifboxError, ValueError):
    pass


class DegenerateClusterError(MotifboxError, ValueError):
    pass


class SchemaError(MotifboxError, ValueError):
    pass


class InvalidIntervalError(MotifboxError, ValueError):
    pass


class ConfigError(MotifboxError, ValueError):
    pass


class ShapeError(MotifboxError, ValueError):
    pass


class StateError(MotifboxError, RuntimeError):
    pass


class CompatibilityError(MotifboxError, ValueError):
    pass


class TrainingDivergedError(MotifboxError, RuntimeError):
    pass
