EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


class TsExprException(Exception):
    """Base exception for all errors raised by this package.

    The class attribute `exit_code` tells the command line tool which exit status to
    use when the exception is not handled by the caller.
    """

    exit_code = EXIT_RUNTIME

    @property
    def reason(self) -> str:
        """Single-line, machine parsable description of the error."""
        message = " ".join(str(self).split())
        return f"{self.__class__.__name__}: {message}"


class ConfigurationError(TsExprException):
    """Invalid configuration, or a required artifact is missing."""

    exit_code = EXIT_USAGE


class DataError(TsExprException):
    """Exception for problems with the input data."""

    exit_code = EXIT_DATA


class InvalidSeriesError(DataError):
    """Time series does not satisfy the length or ordering invariants."""


class InsufficientDataError(DataError):
    """Series is too short for the requested window or horizon."""


class CSVParseError(DataError):
    """Malformed row in an input file.

    The offending line number (1-based) is available as `line`.
    """

    def __init__(self, message, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class OrderingError(DataError):
    """Timestamps are duplicated or decreasing."""


class UnknownGeneratorError(DataError):
    """Requested synthetic generator does not exist."""


class UndefinedVarianceError(DataError):
    """A metric is undefined because one of the inputs has zero variance."""


class SearchError(TsExprException):
    """Exception for errors in expression construction and search."""


class GrammarError(SearchError):
    """Token cannot be appended to the expression path."""


class IncompleteExpressionError(SearchError):
    """Expression path still has open argument slots."""


class ArityError(SearchError):
    """Number of coefficients does not match the coefficient slots."""


class LibraryError(SearchError):
    """Function library cannot be constructed from the given symbols."""


class ExhaustedLibraryError(SearchError):
    """No symbol or augmented pattern is available for sampling."""


class ExpansionExhaustedError(SearchError):
    """Search node has no untried actions left."""


class TerminalNodeError(SearchError):
    """Search node is complete or at the path length budget."""


class ContractViolationError(SearchError):
    """A value is outside of its documented range."""


class EmptyProblemError(SearchError):
    """Optimization problem has no free variables."""


class NetworkError(TsExprException):
    """Exception for policy-value network errors."""


class VocabularyError(NetworkError):
    """Symbol id is not part of the network vocabulary."""


class ShapeError(NetworkError):
    """Distributions or tensors have incompatible shapes."""


class TrainingDivergenceError(NetworkError):
    """Training produced a non-finite loss.

    Reducing the learning rate usually helps.
    """


class FormatError(TsExprException):
    """Persisted file is corrupt or does not match the expected layout."""
