"""Exception hierarchy. Each class carries the CLI exit status it maps to."""


class SbkaError(Exception):
    exit_code = 1


class ConfigError(SbkaError, ValueError):
    exit_code = 2


class DimensionError(ConfigError):
    """Shapes of the operands do not agree."""


class DataError(SbkaError, ValueError):
    exit_code = 3


class LabelError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


class FormatError(DataError):
    """A binary or text artifact is truncated, malformed or has the wrong magic."""


class IntegrityError(DataError):
    """Two artifacts that must describe the same gallery disagree."""


class UndefinedMetricError(DataError):
    pass


class GalleryIndexError(SbkaError, IndexError):
    exit_code = 3


class NumericError(SbkaError, ArithmeticError):
    exit_code = 4
