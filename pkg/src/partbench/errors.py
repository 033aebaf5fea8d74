"""Exception types shared across the package."""


class PartbenchError(Exception):
    """Base class for every error raised by this package."""


class InvalidLinkCount(PartbenchError):
    """Requested chain length outside the supported {2, 3} range."""


class UnplaceableInstance(PartbenchError):
    """No in-frame placement found within the resample budget."""


class IncompatibleStates(PartbenchError):
    """Flow requested between states of different objects."""


class DegenerateMask(PartbenchError):
    """Mask too small for rigid registration."""


class DegenerateObject(PartbenchError):
    """Object has too few links for the requested policy."""


class UndefinedMetric(PartbenchError):
    """Metric undefined for the given inputs (e.g. empty ground truth)."""


class InconsistentContext(PartbenchError):
    """Reward context whose flow flag contradicts the update case."""


class InvalidEpisode(PartbenchError):
    """Episode aborted mid-run (remote policy failure or similar)."""


class UnsupportedSchema(PartbenchError):
    """Persisted record written with an unknown schema version."""


class CorruptRecord(PartbenchError):
    """Persisted record missing files or failing to decode."""


class ProtocolError(PartbenchError):
    """Wire-protocol violation."""

    def __init__(self, message: str, code: str = "bad_message"):
        super().__init__(message)
        self.code = code


class PolicyTimeout(ProtocolError):
    """Remote policy did not answer in time."""

    def __init__(self, message: str = "remote policy timed out"):
        super().__init__(message, code="timeout")


class DecodeError(ProtocolError):
    """Frame or message could not be decoded."""


class FrameTooLarge(DecodeError):
    """Declared frame length exceeds the protocol limit."""

    def __init__(self, message: str = "frame exceeds 16 MiB limit"):
        super().__init__(message, code="frame_too_large")


class VersionError(ProtocolError):
    """Protocol version mismatch."""

    def __init__(self, message: str = "unsupported protocol version"):
        super().__init__(message, code="version")
