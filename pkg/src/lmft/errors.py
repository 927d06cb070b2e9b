"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: UsageError and its subclasses exit
with 2, DataError and CompatibilityError with 3, NumericalFault with 4.
"""


class ToolkitError(Exception):
    """Base class for every error raised by this package."""


class UsageError(ToolkitError):
    """Invalid arguments, out-of-range parameters, violated preconditions."""


class ShapeError(UsageError):
    """Incompatible tensor shapes; the message names both shapes."""


class DataError(ToolkitError):
    """Unreadable, malformed, or insufficient input data."""


class SchemaError(DataError):
    """A record is missing a required field or violates the task schema."""


class IngestionError(DataError):
    """A corpus file could not be read or decoded."""


class CoverageError(DataError):
    """A character in the corpus is not covered by the vocabulary."""


class CorruptionError(DataError):
    """A serialized file failed an integrity check."""


class CompatibilityError(ToolkitError):
    """Artifacts that must match (vocabulary, checkpoint, task) do not."""


class NumericalFault(ToolkitError):
    """NaN or Inf appeared where finite values are required."""
