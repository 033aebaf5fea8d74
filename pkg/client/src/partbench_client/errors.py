class ClientProtocolError(Exception):
    """Wire-protocol violation, including error messages sent by the server."""

    def __init__(self, message: str, code: str = "bad_message"):
        super().__init__(message)
        self.code = code


class VersionError(ClientProtocolError):
    """Server speaks a different protocol version."""

    def __init__(self, message: str = "protocol version mismatch"):
        super().__init__(message, code="version")


class RolloutFormatError(Exception):
    """Episode directory does not match the documented file formats."""
