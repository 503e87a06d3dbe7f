"""Exception types raised across the package."""


class LimescopeError(Exception):
    """Base class for all errors raised by this package."""


class IoError(LimescopeError):
    """A file is missing or unreadable."""


class DecodeError(LimescopeError):
    """A file exists but is not a decodable supported image format."""


class InvalidDimension(LimescopeError):
    """A requested image dimension is out of range."""


class InvalidParam(LimescopeError):
    """A parameter violates its documented precondition."""


class DimensionMismatch(LimescopeError):
    """Two inputs that must share dimensions do not."""


class SingularSystem(LimescopeError):
    """Rank-deficient unregularized least squares; reported, never silently regularized."""


class LabelOutOfRange(LimescopeError):
    """A class label falls outside [0, num_classes)."""


class EmptyMatrix(LimescopeError):
    """Metric requested on a confusion matrix with zero total count."""


class NoValidClass(LimescopeError):
    """ROC-AUC requested but no class has both positives and negatives."""


class ClassCountMismatch(LimescopeError):
    """Classifier and dataset disagree on the number of classes."""


class MalformedCsv(LimescopeError):
    """An annotation CSV row cannot be parsed; message names file and line."""


class UnknownClass(LimescopeError):
    """An annotation names a class index outside the expected range."""


class EmptyClass(LimescopeError):
    """Stratified split requires at least one item per class."""


class SegmentationMismatch(LimescopeError):
    """An explanation or mask does not belong to the given segmentation."""


class NormalizationError(LimescopeError):
    """A classifier returned probability rows that do not sum to 1 within tolerance."""


class BridgeError(LimescopeError):
    """Failure while talking to an external classifier."""


class BridgeTransportError(BridgeError):
    """Process or connection level failure (spawn, broken pipe, HTTP error)."""


class BridgeProtocolError(BridgeError):
    """A response line was malformed or did not match the request."""


class BridgeTimeout(BridgeError):
    """No response within the configured timeout."""
