"""Exception types shared across the toolkit."""


class StainNormError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(StainNormError):
    """Two images/tensors that must share dimensions do not."""


class MalformedImageError(StainNormError):
    """A raster file exists but cannot be decoded."""


class UnsupportedFormatError(StainNormError):
    """A raster file decodes to a bit depth / mode we do not accept."""


class NoTissueError(StainNormError):
    """No pixel exceeded the optical-density tissue threshold."""


class DegenerateStainsError(StainNormError):
    """The tissue OD cloud has rank < 2: cannot separate two stains."""


class NonConvergenceError(StainNormError):
    """Iterative factorization hit max_iters while still moving."""


class WeightFormatError(StainNormError):
    """Weight archive is structurally invalid or violates a load invariant."""


class MissingTensorError(WeightFormatError):
    """A tensor required by the architecture manifest is absent."""


class PatchGridError(StainNormError):
    """Patch set inconsistent with its grid (missing/duplicate coordinates)."""


class ConfigError(StainNormError):
    """CLI/runtime configuration is invalid (exit code 1)."""


class ProcessingError(StainNormError):
    """Work item failed during processing (exit code 2 under fail-fast)."""
