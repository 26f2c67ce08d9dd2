"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Raster dimensions or channel counts do not match the operation's contract."""


class ParameterError(ValueError):
    """An operation parameter is outside its allowed domain."""


class NotFittedError(RuntimeError):
    """A classifier was asked to predict before being trained."""


class RectificationError(RuntimeError):
    """Rectification is undefined for this epipolar geometry (e.g. epipole in-image)."""


class PipelineError(RuntimeError):
    """A pipeline stage failed; carries the stage name for CLI reporting."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


class InsufficientMatchesError(PipelineError):
    """Fewer mask-gated matches than the fundamental-matrix estimation needs."""

    def __init__(self, stage: str = "matching", message: str = "insufficient matches"):
        super().__init__(stage, message)
