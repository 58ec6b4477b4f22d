"""Exception hierarchy shared across the package."""


class TorusDiffError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TorusDiffError, ValueError):
    pass


class IntegrationDivergedError(TorusDiffError, FloatingPointError):
    """Raised when the Euler-Maruyama state becomes non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InvalidStrideError(InvalidInputError):
    pass


class InsufficientDataError(InvalidInputError):
    pass


class EmptyDatasetError(InvalidInputError):
    pass


class TrainingDivergedError(TorusDiffError, FloatingPointError):
    """Raised when a training loss becomes non-finite."""

    def __init__(self, message, stage=None, epoch=None, step=None):
        super().__init__(message)
        self.stage = stage
        self.epoch = epoch
        self.step = step


class UndefinedCorrelationError(TorusDiffError, ValueError):
    pass


class ConfigError(TorusDiffError, ValueError):
    """Configuration problem; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
