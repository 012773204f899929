"""Exception types shared across the package."""


class ProcovaError(Exception):
    """Base class for every error raised by this package."""


class DomainError(ProcovaError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class DegenerateInputError(ProcovaError, ValueError):
    """Input data carries no usable variation (e.g. a constant vector)."""


class CollinearityError(ProcovaError, ValueError):
    """A design-matrix column is (numerically) collinear with earlier ones."""

    def __init__(self, column: int, message: str | None = None):
        self.column = int(column)
        super().__init__(
            message
            or f"design matrix column {column} is collinear with the other columns"
        )


class InfeasibleReductionError(ProcovaError, ValueError):
    """The requested sample-size reduction cannot produce a valid arm size."""


class EvaluabilityError(ProcovaError, ValueError):
    """Too few evaluable participants for the requested evaluation."""


class ReliabilityError(ProcovaError, RuntimeError):
    """Too many degenerate replicates for the resampling result to be trusted."""


class LeakageError(ProcovaError, RuntimeError):
    """Training data reached an evaluation path that must be held out."""


class UnderdeterminedError(ProcovaError, ValueError):
    """Fewer usable training rows than model parameters."""


class ReestimationError(ProcovaError, ValueError):
    """Blinded re-estimation is impossible on the interim data provided."""


class AnalysisError(ProcovaError, ValueError):
    """A trial analysis cannot be run on the data provided."""


class ReportValidationError(ProcovaError, ValueError):
    """A credibility report references inputs inconsistently."""


class DataFormatError(ProcovaError, ValueError):
    """An input file violates the expected schema."""

    def __init__(self, message: str, *, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
