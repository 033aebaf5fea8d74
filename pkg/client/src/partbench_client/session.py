"""Episode sessions against a partbench environment server.

The client performs no simulation or scoring; it decodes observations,
forwards actions from a user policy, and returns the server's metrics.
One connection serves exactly one episode.
"""
from __future__ import annotations

import base64
import io
import socket
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ClientProtocolError, VersionError
from .protocol import PROTOCOL_VERSION, recv_message, send_message


@dataclass
class ClientSession:
    sock: socket.socket
    address: tuple[str, int]
    version: int
    episode: int | None = None
    seed: int | None = None
    step_index: int = 0
    last_observation: np.ndarray | None = None
    closed: bool = False

    def close(self) -> None:
        if not self.closed:
            try:
                self.sock.close()
            finally:
                self.closed = True

    def __enter__(self) -> "ClientSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def connect(address, episode: int | None = None, seed: int | None = None, timeout: float = 30.0) -> ClientSession:
    """Open a session: TCP connect plus the version handshake.

    address is (host, port). Optional episode/seed ask the server for a
    specific benchmark entry; otherwise the server assigns one.
    """
    sock = socket.create_connection(tuple(address), timeout=timeout)
    sock.settimeout(timeout)
    hello: dict = {"type": "hello", "version": PROTOCOL_VERSION}
    if episode is not None:
        hello["episode"] = episode
    if seed is not None:
        hello["seed"] = seed
    try:
        send_message(sock, hello)
        reply = recv_message(sock)
    except Exception:
        sock.close()
        raise
    if reply.get("type") == "error":
        sock.close()
        if reply.get("code") == "version":
            raise VersionError(reply.get("message", "version mismatch"))
        raise ClientProtocolError(reply.get("message", "handshake rejected"), code=reply.get("code", "bad_message"))
    if reply.get("type") != "hello" or reply.get("version") != PROTOCOL_VERSION:
        sock.close()
        raise VersionError(f"unexpected handshake reply {reply!r}")
    return ClientSession(
        sock=sock,
        address=tuple(address),
        version=PROTOCOL_VERSION,
        episode=reply.get("episode"),
        seed=reply.get("seed"),
    )


def run_episode(session: ClientSession, policy_fn) -> dict:
    """Drive the protocol loop to episode_end; returns the server's metrics.

    policy_fn maps (image, memory_image, step) to (hold or None, push, dir)
    where pixels are (row, col) pairs. The session is closed on return.
    """
    try:
        while True:
            message = recv_message(session.sock)
            kind = message.get("type")
            if kind == "obs":
                image = _decode_png_b64(message["image_png_b64"])
                memory_image = _decode_png_b64(message["memory_png_b64"])
                session.step_index = message["step"]
                session.last_observation = image
                hold, push, direction = policy_fn(image, memory_image, message["step"])
                send_message(
                    session.sock,
                    {
                        "type": "act",
                        "hold": list(hold) if hold is not None else None,
                        "push": list(push),
                        "dir": int(direction),
                    },
                )
            elif kind == "step_result":
                continue
            elif kind == "episode_end":
                return message["metrics"]
            elif kind == "error":
                raise ClientProtocolError(
                    message.get("message", "server error"), code=message.get("code", "bad_message")
                )
            else:
                raise ClientProtocolError(f"unexpected message type {kind!r}")
    finally:
        session.close()


def _decode_png_b64(data: str) -> np.ndarray:
    img = Image.open(io.BytesIO(base64.b64decode(data)))
    img.load()
    return np.asarray(img)
