"""
Exceptions raised by the benchmarking library.

Every class carries the exit code the command-line entry point uses for it.
"""

EXIT_ACCEPT = 0
EXIT_REJECT = 3
EXIT_USAGE = 64
EXIT_IO = 74


class BenchmarkError(ValueError):
    exit_code = 67


class DataParseError(BenchmarkError):
    """Malformed input file; `row` is the 1-based data row (header excluded)."""
    exit_code = 65

    def __init__(self, message, row=None, column=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column


class MissingInputError(BenchmarkError):
    exit_code = 66

    def __init__(self, path):
        super().__init__(f"Input file not found: {path}")
        self.path = path


class ConfigurationError(BenchmarkError):
    exit_code = 67


class ShapeError(BenchmarkError):
    exit_code = 67


class BoundsError(BenchmarkError):
    exit_code = 67


class DomainError(BenchmarkError):
    exit_code = 67


class FitError(BenchmarkError):
    exit_code = 67


class DegenerateVarianceError(BenchmarkError):
    """The cross U-statistic has zero variance, so it cannot be studentized."""
    exit_code = 70


class OptimizationError(BenchmarkError):
    exit_code = 71


class PlanFailedError(BenchmarkError):
    exit_code = 72
