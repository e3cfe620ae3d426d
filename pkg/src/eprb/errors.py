"""Exception hierarchy.

Everything raised deliberately by the library derives from :class:`EprbError`,
so callers (and the CLI) can separate data problems from programming errors.
"""


class EprbError(Exception):
    """Base class for all library errors."""


class LoadError(EprbError):
    pass


class ParseError(EprbError):
    def __init__(self, path, row, message):
        self.path = path
        self.row = row
        super().__init__(f"{path}: row {row} (file line {row + 1}): {message}")


class RangeError(EprbError):
    pass


class ParameterError(EprbError, ValueError):
    pass


class NoPeakError(EprbError):
    pass


class SizeError(EprbError):
    pass


class EmptyCellError(EprbError):
    pass


class NotTestableError(EprbError):
    pass


class IncompleteSetError(EprbError):
    pass


class SingularModelError(EprbError):
    pass


class InvalidMomentError(EprbError):
    pass


class ConfigError(EprbError):
    pass


class InsufficientSolutionsError(EprbError):
    pass
