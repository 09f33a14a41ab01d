"""Exception types shared across the package."""


class ReduxError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ReduxError, ValueError):
    pass


class DegenerateRowError(ReduxError, ValueError):
    """A softmax row had every position masked."""


class ZeroVectorError(ReduxError, ValueError):
    pass


class InvalidCountError(ReduxError, ValueError):
    pass


class ScheduleError(ReduxError, ValueError):
    pass


class FactorError(ReduxError, ValueError):
    pass


class ModeError(ReduxError, ValueError):
    pass


class ConfigError(ReduxError, ValueError):
    """Invalid configuration. ``field`` names the offending dotted key."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class WeightsFormatError(ReduxError, ValueError):
    """Malformed weights file. ``offset`` is the byte position of the failure."""

    def __init__(self, offset, message):
        self.offset = offset
        super().__init__(f"at byte {offset}: {message}")
