"""Framing codec: 4-byte big-endian length prefix, UTF-8 JSON payload."""
from __future__ import annotations

import json
import socket
import struct

from .errors import ClientProtocolError

MAX_FRAME_BYTES = 16 * 1024 * 1024
PROTOCOL_VERSION = 1


def encode_message(message: dict) -> bytes:
    payload = json.dumps(message, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise ClientProtocolError("frame exceeds 16 MiB", code="frame_too_large")
    return struct.pack(">I", len(payload)) + payload


def send_message(sock: socket.socket, message: dict) -> None:
    sock.sendall(encode_message(message))


def recv_message(sock: socket.socket) -> dict:
    header = _recv_exact(sock, 4)
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise ClientProtocolError("frame exceeds 16 MiB", code="frame_too_large")
    payload = _recv_exact(sock, length)
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ClientProtocolError(f"invalid JSON payload: {exc}") from exc
    if not isinstance(message, dict) or "type" not in message:
        raise ClientProtocolError("message must be an object with a 'type'")
    return message


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining > 0:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ClientProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)
