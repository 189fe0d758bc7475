"""Exception hierarchy shared by all toolkit services."""

from __future__ import annotations

from typing import Optional


class ToolkitError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(ToolkitError):
    """Invalid configuration value or unknown configuration key."""


class SchemaError(ToolkitError):
    """Missing or inconsistent column / feature schema."""

    def __init__(self, message: str, column: Optional[str] = None) -> None:
        super().__init__(message)
        self.column = column


class RowError(ToolkitError):
    """A single input row could not be parsed.

    ``row_number`` is the 1-based data row (the header is not counted).
    """

    def __init__(self, message: str, row_number: int, column: Optional[str] = None) -> None:
        super().__init__(f"row {row_number}: {message}")
        self.row_number = row_number
        self.column = column


class EmptyDatasetError(ToolkitError):
    """No rows left after ingestion or filtering."""


class DomainError(ToolkitError, ValueError):
    """Argument outside its mathematical domain."""


class ShapeError(ToolkitError, ValueError):
    """Array shapes do not chain or match."""


class UnseenCategoryError(ToolkitError, IndexError):
    """Category index outside ``[0, m_i)`` and no fallback was requested."""

    def __init__(self, feature: int, category: int, cardinality: int) -> None:
        super().__init__(
            f"feature {feature}: category {category} outside [0, {cardinality})"
        )
        self.feature = feature
        self.category = category
        self.cardinality = cardinality


class ModeError(ToolkitError):
    """Operation not available for the network's input mode."""


class DegenerateInputError(ToolkitError, ValueError):
    """Input too small or with zero variance for the requested statistic."""


class SingularCovarianceError(DegenerateInputError):
    """Covariance matrix is not invertible."""


class PerplexityError(ToolkitError, ValueError):
    """t-SNE perplexity too large for the number of points."""


class StepError(ToolkitError):
    """Failure inside a named pipeline step."""

    def __init__(self, step: str, cause: BaseException) -> None:
        super().__init__(f"step '{step}' failed: {cause}")
        self.step = step
        self.cause = cause


class DataSourceError(ToolkitError):
    """Input or artifact file could not be fetched or has the wrong format."""
