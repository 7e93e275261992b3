"""Exception types raised across the retargeting pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class DataLoadError(PipelineError):
    """A dataset file is missing or unreadable."""


class DataValidationError(PipelineError):
    """Loaded data violates a structural contract (shapes, ranges, counts)."""


class ConfigurationError(PipelineError):
    """A layout, schema, or run configuration is inconsistent."""


class GeometryError(PipelineError):
    """Degenerate geometry (collinear points, zero-area boxes, ...)."""


class TrainingDivergedError(PipelineError):
    """Training hit a non-finite loss; carries iteration diagnostics."""

    def __init__(self, message, iteration=None, element=None, batch_stats=None):
        super().__init__(message)
        self.iteration = iteration
        self.element = element
        self.batch_stats = batch_stats or {}


class ArtifactMismatchError(PipelineError):
    """Trained artifacts disagree on layout/config hashes; refusing to combine them."""
