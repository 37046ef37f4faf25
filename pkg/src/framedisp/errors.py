"""Exception hierarchy shared by all modules."""


class FrameDispError(Exception):
    """Base class for package errors."""


class ConfigError(FrameDispError, ValueError):
    """Invalid configuration value. ``key`` names the offending field."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class ShapeError(FrameDispError, ValueError):
    """Array dimensions or vector lengths do not agree."""


class DomainError(FrameDispError, ValueError):
    """Argument outside the domain of the operation."""


class SingularBasisError(FrameDispError, ArithmeticError):
    """Least-squares basis is rank deficient."""

    def __init__(self, message: str, sections: list[int]):
        super().__init__(message)
        self.sections = sections


class InvalidInputError(FrameDispError, ValueError):
    """Input data unusable (e.g. empty dataset)."""


class IngestionError(FrameDispError, OSError):
    """A frame in a sequence could not be read."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class StorageError(FrameDispError, OSError):
    """Reading or writing a persisted artifact failed."""


class FormatError(FrameDispError, ValueError):
    """A file does not follow the expected binary layout."""
