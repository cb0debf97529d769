"""Exception hierarchy shared across the package.

Everything raised on bad data or bad parameters derives from AdexpandError
so the CLI can map it to a single "data error" exit code.
"""


class AdexpandError(Exception):
    """Base class for all adexpand data and parameter errors."""


class ZeroVectorError(AdexpandError):
    """Vector has (near-)zero L2 norm and cannot be normalized."""


class NonFiniteError(AdexpandError):
    """Vector or value contains NaN or infinity."""


class DimensionMismatchError(AdexpandError):
    """Vector dimensions disagree."""


class ParseError(AdexpandError):
    """A data file is malformed; message carries the line number."""


class DuplicateKeywordError(AdexpandError):
    """The same (market, keyword) pair appears twice."""


class EmptySetError(AdexpandError):
    """An operation requires a non-empty collection."""


class TooManyClustersError(AdexpandError):
    """Requested more clusters than there are points."""


class UnassignedKeywordError(AdexpandError):
    """A keyword in the embedding set has no cluster assignment."""


class EmptyInputError(AdexpandError):
    """A numeric computation received no values."""


class InvalidQuantileError(AdexpandError):
    """Quantile fraction outside (0, 1]."""


class DegenerateInputError(AdexpandError):
    """Statistic undefined because an input has zero variance."""


class EmptyDatasetError(AdexpandError):
    """A model operation requires a non-empty dataset."""


class SchemaMismatchError(AdexpandError):
    """Feature vector does not match the model's feature schema."""


class ConstraintViolationError(AdexpandError):
    """Adjustment-model size limits exceeded without an explicit override."""


class DanglingReferenceError(AdexpandError):
    """Snapshot input references a keyword that no campaign declares."""


class VersionRegressionError(AdexpandError):
    """Snapshot version does not increase."""


class UnknownMarketError(AdexpandError):
    """Query names a market the snapshot does not serve."""


class NoPositivePairsError(AdexpandError):
    """Label set contains no positive pair among retrieved candidates."""
