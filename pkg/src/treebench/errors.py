"""Exception types shared across the toolkit."""


class InputError(ValueError):
    """An operation rejected its inputs."""


class RegistrationError(RuntimeError):
    """Alignment failed (degenerate correspondences, rank-deficient geometry)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class EmptySegmentationError(RuntimeError):
    """The segmentation cascade removed every pixel."""

    def __init__(self, message, stage_counts=None):
        super().__init__(message)
        self.stage_counts = dict(stage_counts or {})


class SkeletonError(RuntimeError):
    """Skeleton extraction failed; carries the k-NN graph component sizes."""

    def __init__(self, message, component_sizes=None):
        super().__init__(message)
        self.component_sizes = list(component_sizes or [])


class TraitUnavailable(RuntimeError):
    """Geometry too degraded for structural analysis.

    This is a first-class evaluation outcome, not a crash: report tables
    render it as a "--" cell.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class IngestError(ValueError):
    """External geometry failed validation; ``location`` names the offender."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class DegradationError(RuntimeError):
    """A degradation spec removed all geometry."""


class ConfigError(ValueError):
    """An experiment configuration failed schema validation."""
