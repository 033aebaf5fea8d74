"""Wire protocol: length-prefixed JSON messages over TCP.

Every frame is a 4-byte big-endian unsigned payload length followed by that
many bytes of UTF-8 JSON. Each message is an object with a "type" field;
see PROTOCOL.md for the full schemas and byte-level examples.
"""
from __future__ import annotations

import json
import socket
import struct

from .errors import DecodeError, FrameTooLarge

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 16 * 1024 * 1024
MESSAGE_TYPES = ("hello", "reset", "obs", "act", "step_result", "episode_end", "error")


def encode_message(message: dict) -> bytes:
    """Serialize a message dict to one framed byte string."""
    if message.get("type") not in MESSAGE_TYPES:
        raise DecodeError(f"unknown message type {message.get('type')!r}")
    payload = json.dumps(message, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise FrameTooLarge()
    return struct.pack(">I", len(payload)) + payload


def decode_message(data: bytes) -> dict:
    """Parse one framed byte string back into a message dict."""
    if len(data) < 4:
        raise DecodeError("frame shorter than its length prefix")
    (length,) = struct.unpack(">I", data[:4])
    if length > MAX_FRAME_BYTES:
        raise FrameTooLarge()
    if len(data) - 4 < length:
        raise DecodeError("truncated frame")
    return _parse_payload(data[4 : 4 + length])


def _parse_payload(payload: bytes) -> dict:
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"invalid JSON payload: {exc}") from exc
    if not isinstance(message, dict) or message.get("type") not in MESSAGE_TYPES:
        raise DecodeError("message must be an object with a known 'type'")
    return message


def send_message(sock: socket.socket, message: dict) -> None:
    sock.sendall(encode_message(message))


def recv_message(sock: socket.socket) -> dict:
    """Read exactly one frame from a socket. Raises DecodeError on EOF/truncation."""
    header = _recv_exact(sock, 4)
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise FrameTooLarge()
    return _parse_payload(_recv_exact(sock, length))


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining > 0:
        chunk = sock.recv(remaining)
        if not chunk:
            raise DecodeError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def validate_act(message: dict, frame_size: int) -> tuple[tuple[int, int] | None, tuple[int, int], int]:
    """Check an act message and return (hold, push, direction)."""
    from .errors import ProtocolError

    if message.get("type") != "act":
        raise ProtocolError(f"expected act, got {message.get('type')!r}", code="bad_message")
    hold = message.get("hold", None)
    push = message.get("push")
    direction = message.get("dir")

    def _pixel(value, name):
        if (
            not isinstance(value, (list, tuple))
            or len(value) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
            or not all(0 <= v < frame_size for v in value)
        ):
            raise ProtocolError(f"invalid {name} pixel {value!r}", code="bad_action")
        return (value[0], value[1])

    if hold is not None:
        hold = _pixel(hold, "hold")
    push = _pixel(push, "push")
    if not isinstance(direction, int) or isinstance(direction, bool) or not (0 <= direction <= 7):
        raise ProtocolError(f"invalid direction {direction!r}", code="bad_action")
    return hold, push, direction
