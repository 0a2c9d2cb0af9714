"""Exception types raised across the package."""


class LeanVAEError(Exception):
    """Base class for all package errors."""


class DimensionError(LeanVAEError, ValueError):
    """Shapes or extents violate an operation's contract."""


class CacheError(DimensionError):
    """A streaming cache has the wrong shape for the layer it feeds."""


class ParameterError(LeanVAEError, ValueError):
    """A scalar parameter is out of its valid range."""


class GraphError(LeanVAEError, RuntimeError):
    """Misuse of the autodiff tape (non-scalar root, repeated backward)."""


class InputError(LeanVAEError, ValueError):
    """User-supplied video or latent data is malformed."""


class ChunkingError(InputError):
    """Temporal chunk lengths break the 1 + 4k / 4k framing rules."""


class IntegrityError(LeanVAEError, ValueError):
    """A serialized file is truncated, corrupt, or has a bad magic."""


class VersionError(LeanVAEError, ValueError):
    """A serialized file or checkpoint does not match the expected version/config."""


class NonFiniteLossError(LeanVAEError, FloatingPointError):
    """Training produced a NaN or infinite loss."""
