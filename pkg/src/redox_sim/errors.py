"""Exception hierarchy shared by every module."""


class RedoxError(Exception):
    """Base class for all errors raised by redox_sim."""


class ConfigError(RedoxError, ValueError):
    """A configuration violates a divisibility or range constraint."""


class ProtocolViolation(RedoxError, AssertionError):
    """An internal protocol invariant failed.

    Carries the reproducer seeds when raised from a simulation run.
    """

    def __init__(self, message, **context):
        self.context = context
        if context:
            detail = ", ".join(f"{k}={v}" for k, v in sorted(context.items()))
            message = f"{message} ({detail})"
        super().__init__(message)


class StorageError(RedoxError, OSError):
    """A chunk container could not be read or is corrupt."""


class CorruptChunkError(StorageError):
    pass


class RemoteError(RedoxError):
    """An owner node answered with an error response."""

    def __init__(self, code, message):
        self.code = code
        super().__init__(f"remote error {code}: {message}")


class WireFormatError(RedoxError, ValueError):
    pass
