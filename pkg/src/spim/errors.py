"""Exception hierarchy shared by every tier.

Wire-visible failures carry the protocol error code they map to (see
``spim.wire.ErrorCode``); purely local failures (config, cache file,
render) do not travel over the wire and carry no code.
"""


class SpimError(Exception):
    """Base class for every error raised by this package."""

    wire_code = None  # overridden where the error maps to a protocol code


class MalformedMessageError(SpimError):
    """Bytes that do not parse as a valid protocol document."""

    wire_code = "MALFORMED"


class TruncatedFrameError(SpimError):
    """Byte stream ended in the middle of a frame."""


class OversizeFrameError(SpimError):
    """Declared frame length exceeds the configured maximum."""


class NotFoundError(SpimError):
    """Table absent, or the requested key range matched zero records."""

    wire_code = "NOT_FOUND"


class UnauthorizedError(SpimError):
    """Request token is not in the server's accepted set."""

    wire_code = "UNAUTHORIZED"


class ConnectionFailedError(SpimError):
    """Could not reach the server, or the connection dropped mid-send."""


class MalformedCacheFileError(SpimError):
    """Cache persistence file violates the line format."""


class CacheLockedError(SpimError):
    """Another client handle already owns the cache file."""


class RenderError(SpimError):
    """Renderer was handed an ERROR-status response."""


class ComposeError(SpimError):
    """Composition input contained an ERROR-status part."""


class ConfigError(SpimError):
    """Invalid configuration file or invalid run setup."""
