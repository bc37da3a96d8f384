"""Exception hierarchy.

Every error raised on purpose by the library derives from ``TsstratError``.
The three families map onto CLI exit codes: configuration problems (2),
data problems (3) and sweeps where nothing could run (4).
"""

from __future__ import annotations


class TsstratError(Exception):
    exit_code = 1


class ConfigError(TsstratError):
    exit_code = 2


class DataError(TsstratError):
    exit_code = 3


# -- data ingestion / validation ---------------------------------------------


class MissingColumn(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyDataset(DataError):
    pass


class DuplicateKey(DataError):
    pass


class SeriesTooShort(DataError):
    def __init__(self, message: str, series_id: str | None = None):
        self.series_id = series_id
        super().__init__(message)


class NotAligned(DataError):
    pass


class MissingCovariates(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class TooShortForFolds(DataError):
    pass


class TooShortForBacktest(DataError):
    pass


# -- transforms --------------------------------------------------------------


class TransformError(TsstratError):
    pass


class OrdinalTimestamps(TransformError):
    pass


class UnknownSeries(TransformError):
    pass


class ZeroDivision(TransformError):
    def __init__(self, message: str, series_id: str | None = None, timestamp: int | None = None):
        self.series_id = series_id
        self.timestamp = timestamp
        super().__init__(message)


class ZeroAnchor(TransformError):
    pass


class MissingAnchor(TransformError):
    pass


class TransformOrderError(ConfigError):
    pass


# -- models ------------------------------------------------------------------


class ModelError(TsstratError):
    pass


class SingularSystem(ModelError):
    pass


class TooFewSamples(ModelError):
    pass


class InsufficientLags(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


# -- strategies / validation / reporting ------------------------------------


class InvalidStrategySpec(ConfigError):
    pass


class SchemaError(ConfigError):
    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ConstraintError(ConfigError):
    pass


class LengthMismatch(TsstratError):
    pass


class DegenerateGroup(TsstratError):
    pass


class EmptyReport(TsstratError):
    pass


class NoRunnableCells(TsstratError):
    exit_code = 4
