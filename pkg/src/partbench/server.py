"""Environment service: episodes for remote policies over the wire protocol.

One episode per connection. After a version handshake the server streams
observations, waits for one action per step, reports the touch reading, and
finishes with the episode metrics. Connections each own an isolated
environment, so any number may run concurrently.
"""
from __future__ import annotations

import base64
import socket
import threading
from pathlib import Path

from . import formats
from .errors import InvalidEpisode, PolicyTimeout, ProtocolError, DecodeError
from .geometry import FRAME_SIZE
from .harness import (
    MANIFEST_NAME,
    RunConfig,
    episode_dir_name,
    persist_episode,
    run_episode,
)
from .assets import load_benchmark
from .memory import flatten
from .protocol import (
    PROTOCOL_VERSION,
    recv_message,
    send_message,
    validate_act,
)
from .sim import Action

IDLE_TIMEOUT = 30.0


class RemotePolicySession:
    """Server-side protocol driver for one episode over one connection."""

    def __init__(self, sock: socket.socket, total_steps: int):
        self._sock = sock
        self._total_steps = total_steps
        self._pending_result: dict | None = None

    def request_action(self, policy_input) -> Action:
        """Send the current observation and block for a valid act message."""
        self._flush_result()
        obs_png = formats.rgb_to_png_bytes(policy_input.observation)
        mem_png = formats.labels_to_png_bytes(flatten(policy_input.memory))
        send_message(
            self._sock,
            {
                "type": "obs",
                "step": policy_input.step_index,
                "image_png_b64": base64.b64encode(obs_png).decode("ascii"),
                "memory_png_b64": base64.b64encode(mem_png).decode("ascii"),
                "touch_prev": self._last_touch,
                "steps_remaining": self._total_steps - policy_input.step_index,
            },
        )
        try:
            message = recv_message(self._sock)
        except socket.timeout as exc:
            raise PolicyTimeout() from exc
        hold, push, direction = validate_act(message, FRAME_SIZE)
        try:
            return Action(hold=hold, push=push, direction=direction)
        except ValueError as exc:
            raise ProtocolError(str(exc), code="bad_action") from exc

    _last_touch: list | None = None

    def on_step(self, step_index: int, step_record, done: bool) -> None:
        touch = step_record.touch
        self._last_touch = [touch.hold_contact, touch.push_contact, touch.shear]
        self._pending_result = {"type": "step_result", "touch": self._last_touch, "done": done}

    def finish(self, record) -> None:
        self._flush_result()
        metrics = record.final_metrics()
        send_message(
            self._sock,
            {
                "type": "episode_end",
                "metrics": {
                    "ape": metrics.ape,
                    "iou": metrics.iou,
                    "dh95": metrics.dh95,
                    "effective_rate": sum(s.metrics.effective for s in record.steps) / len(record.steps),
                    "optimal_rate": sum(s.metrics.optimal for s in record.steps) / len(record.steps),
                },
            },
        )

    def _flush_result(self) -> None:
        if self._pending_result is not None:
            send_message(self._sock, self._pending_result)
            self._pending_result = None


class EnvServer:
    """TCP environment server bound to a benchmark set."""

    def __init__(self, config: RunConfig, host: str = "127.0.0.1", port: int = 0):
        if config.benchmark_path is None:
            raise ValueError("server needs a benchmark path")
        self.config = config
        self.benchmark = load_benchmark(config.benchmark_path)
        self._sock = socket.create_server((host, port))
        self.host, self.port = self._sock.getsockname()[:2]
        self._counter = 0
        self._lock = threading.Lock()
        self._stopped = threading.Event()

    def serve_forever(self) -> None:
        """Accept connections until shutdown; one episode per connection."""
        self._sock.settimeout(0.2)
        threads = []
        while not self._stopped.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            thread = threading.Thread(target=self._handle, args=(conn,), daemon=True)
            thread.start()
            threads.append(thread)
        for thread in threads:
            thread.join(timeout=IDLE_TIMEOUT)

    def shutdown(self) -> None:
        self._stopped.set()
        try:
            self._sock.close()
        except OSError:
            pass

    def _next_entry(self) -> int:
        with self._lock:
            index = self._counter % len(self.benchmark.entries)
            self._counter += 1
            return index

    def _handle(self, conn: socket.socket) -> None:
        conn.settimeout(IDLE_TIMEOUT)
        try:
            try:
                hello = recv_message(conn)
            except DecodeError as exc:
                self._error(conn, exc.code, str(exc))
                return
            if hello.get("type") != "hello":
                self._error(conn, "bad_message", "expected hello")
                return
            if hello.get("version") != PROTOCOL_VERSION:
                self._error(conn, "version", f"server speaks version {PROTOCOL_VERSION}")
                return
            entry_index = hello.get("episode")
            if entry_index is None:
                entry_index = self._next_entry()
            if not isinstance(entry_index, int) or not (0 <= entry_index < len(self.benchmark.entries)):
                self._error(conn, "bad_message", f"episode index {entry_index!r} out of range")
                return
            seed = hello.get("seed", self.config.seeds[0])
            if not isinstance(seed, int):
                self._error(conn, "bad_message", "seed must be an integer")
                return
            send_message(conn, {"type": "hello", "version": PROTOCOL_VERSION, "episode": entry_index, "seed": seed})

            session = RemotePolicySession(conn, self.config.steps)
            init = self.benchmark.entries[entry_index]
            try:
                record = run_episode(
                    init,
                    self.config,
                    seed,
                    entry_index=entry_index,
                    policy_fn=lambda inp, ctx: session.request_action(inp),
                    step_listener=session.on_step,
                )
            except InvalidEpisode as exc:
                cause = exc.__cause__
                code = cause.code if isinstance(cause, ProtocolError) else "bad_message"
                self._error(conn, code, str(exc))
                return
            if self.config.record_dir is not None:
                directory = Path(self.config.record_dir) / episode_dir_name(entry_index, seed)
                if not (directory / MANIFEST_NAME).exists():
                    persist_episode(record, directory)
            session.finish(record)
        except (OSError, ProtocolError):
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass

    @staticmethod
    def _error(conn: socket.socket, code: str, message: str) -> None:
        try:
            send_message(conn, {"type": "error", "code": code, "message": message})
        except OSError:
            pass


def serve(port: int, config: RunConfig, host: str = "127.0.0.1") -> EnvServer:
    """Bind an EnvServer; the caller runs serve_forever (CLI does so inline)."""
    return EnvServer(config, host=host, port=port)


def run_benchmark_remote(config: RunConfig, port: int, host: str = "127.0.0.1", progress=None, ready=None):
    """Benchmark runner for remote policies: one inbound connection per episode.

    Listens on the given port; each episode accepts a fresh connection,
    performs the handshake, and drives the protocol exactly like the
    standing server. Records persist under config.record_dir when set.
    ready, when given, is called with (host, port) once the listener is
    bound.
    """
    from .metrics import aggregate
    from .harness import load_episode

    bench = load_benchmark(config.benchmark_path)
    tasks = [
        (entry_index, init, seed)
        for entry_index, init in enumerate(bench.entries)
        for seed in config.seeds
    ]
    records = []
    with socket.create_server((host, port)) as listener:
        listener.settimeout(IDLE_TIMEOUT)
        if ready is not None:
            ready(*listener.getsockname()[:2])
        for i, (entry_index, init, seed) in enumerate(tasks):
            directory = None
            if config.record_dir is not None:
                directory = Path(config.record_dir) / episode_dir_name(entry_index, seed)
                if (directory / MANIFEST_NAME).exists():
                    records.append(load_episode(directory))
                    continue
            conn, _ = listener.accept()
            conn.settimeout(IDLE_TIMEOUT)
            try:
                hello = recv_message(conn)
                if hello.get("type") != "hello" or hello.get("version") != PROTOCOL_VERSION:
                    EnvServer._error(conn, "version", "bad handshake")
                    raise InvalidEpisode("handshake failed")
                send_message(
                    conn,
                    {"type": "hello", "version": PROTOCOL_VERSION, "episode": entry_index, "seed": seed},
                )
                session = RemotePolicySession(conn, config.steps)
                record = run_episode(
                    init,
                    config,
                    seed,
                    entry_index=entry_index,
                    policy_fn=lambda inp, ctx: session.request_action(inp),
                    step_listener=session.on_step,
                )
                if directory is not None:
                    persist_episode(record, directory)
                session.finish(record)
                records.append(record)
            finally:
                try:
                    conn.close()
                except OSError:
                    pass
            if progress:
                progress(i + 1, len(tasks))
    return aggregate(records, config.seeds)
