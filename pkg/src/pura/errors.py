"""Exception taxonomy for the package.

Everything raised on purpose derives from PuraError so callers can catch
broadly; the CLI maps any PuraError to exit code 2.
"""


class PuraError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(PuraError):
    """Invalid or inconsistent parameter set."""


class DomainError(PuraError):
    """A value lies outside the domain an operation accepts."""


class RangeError(PuraError):
    """A decoded or unpacked value falls outside its expected range."""


class CapacityError(PuraError):
    """A packing capacity would be exceeded."""


class IntegrityError(PuraError):
    """An internal consistency check failed (corrupt key or ciphertext)."""


class ResourceExhaustedError(PuraError):
    """A randomized search ran out of its attempt budget."""


class KeyFormatError(PuraError):
    """A key, shard, or config file is malformed."""


class TransportError(PuraError):
    """Base class for wire-level failures."""


class ConnectionClosedError(TransportError):
    """The peer closed the connection (or it was closed locally)."""


class MalformedFrameError(TransportError):
    """A frame failed to parse; carries the stream byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (stream offset {offset})")
        self.offset = offset


class OversizeFrameError(TransportError):
    """A frame body exceeds the 64 MiB cap."""


class TransportTimeoutError(TransportError):
    """A blocking receive timed out."""


class ProtocolError(PuraError):
    """A peer sent something that violates the protocol state machine."""
