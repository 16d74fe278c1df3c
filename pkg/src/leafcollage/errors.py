"""Exception types raised across the package."""


class LeafCollageError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LeafCollageError):
    """Input rasters or parameters violate a documented precondition."""


class EmptyExtractionError(LeafCollageError):
    """An annotated image contains no nonzero instance labels."""


class DegenerateMaskError(LeafCollageError):
    """A mask operation received an empty (all-zero) mask."""


class DegenerateScaleError(LeafCollageError):
    """Scaling would produce a raster with a zero dimension."""


class InvalidPlacementError(LeafCollageError):
    """A placement is out of order or its anchor falls outside the scene."""


class ConfigurationError(LeafCollageError):
    """A generator was invoked with an unusable bank, background set, or parameters."""


class IngestionError(LeafCollageError):
    """A source image pair could not be loaded; the message names the file."""


class PreparationError(LeafCollageError):
    """A background image cannot be brought to the requested canvas size."""


class EvaluationError(LeafCollageError):
    """Prediction and ground-truth trees share no evaluable images."""
