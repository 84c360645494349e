"""Exception hierarchy shared across the package.

The CLI maps exceptions to exit codes:
  2  InputError  (unreadable files, malformed manifests or configs)
  3  DataError   (class coverage, degenerate slides, metric preconditions)
  4  anything else (internal invariant failures)
"""


class Her2ScoreError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 4


class InputError(Her2ScoreError):
    """The caller supplied something unreadable or malformed."""

    exit_code = 2


class DataError(Her2ScoreError):
    """The data itself cannot support the requested operation."""

    exit_code = 3


class EmptyInputError(InputError):
    """An image or collection that must be nonempty is empty."""


class InsufficientSupportError(InputError):
    """The input is too small for the operation (e.g. LBP on < 3x3)."""


class ManifestError(InputError):
    """A dataset manifest row violates the schema."""


class ConfigError(InputError):
    """A run configuration file violates the schema."""


class ModelFormatError(InputError):
    """A model file has the wrong format version or is corrupt."""


class DimensionMismatchError(DataError):
    """Feature dimensionality does not match the trained model."""


class EmptyTrainingSetError(DataError):
    """A classifier was asked to train on zero samples."""


class MissingClassError(DataError):
    """A required class has no samples in the training data."""


class DegenerateSlideError(DataError):
    """A slide has no scorable patches (empty, or all noise when noise is excluded)."""


class UndefinedMetricError(DataError):
    """A metric's denominator is empty for the given confusion matrix."""
