"""Exception hierarchy shared across the package."""


class DrfError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(DrfError):
    """Schema file is malformed or does not match the data file."""


class ParseError(DrfError):
    """A data file cell could not be parsed."""


class EmptyDatasetError(DrfError):
    """The data file has a header but no rows."""


class StratificationError(DrfError):
    """A class has too few rows to stratify."""


class EncodingError(DrfError):
    """Input does not conform to the expected schema."""


class RegionNotFoundError(DrfError, KeyError):
    """A (layer, tree, region) lookup failed."""


class FitError(DrfError):
    """A model cannot be fit on the given data."""


class ConvergenceError(FitError):
    """An iterative solver exhausted its iteration budget.

    Carries the last iterate and solver diagnostics so callers can inspect
    how far the fit got.
    """

    def __init__(self, message, coef=None, diagnostics=None):
        super().__init__(message)
        self.coef = coef
        self.diagnostics = dict(diagnostics or {})


class MetricError(DrfError):
    """A metric is undefined for the given inputs."""


class ModelIOError(DrfError):
    """Base class for model file problems."""


class ModelVersionError(ModelIOError):
    """The model file carries an unsupported format version."""


class ModelTruncatedError(ModelIOError):
    """The model file ends mid-document."""


class ModelCorruptError(ModelIOError):
    """The model file is not a valid model document."""


class UsageError(DrfError):
    """Bad command-line invocation."""
