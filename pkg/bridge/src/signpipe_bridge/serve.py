"""The single-threaded request loop: one session per process.

The loop reads init, loads the backend (or arms the mock), reports the
session's true shape in ready, then answers each frame in arrival order
until end, when it sends done and returns 0. Failures raise; the CLI
turns them into a final stderr line and a nonzero exit.
"""

from __future__ import annotations

import sys
from typing import Callable, TextIO

from .backends import BackendSession, open_session
from .config import BridgeConfig
from .errors import BridgeError, ConfigError, ProtocolViolation
from .protocol import (
    Frame,
    landmarks_message,
    no_detection_message,
    parse_frame,
    read_message,
    ready_message,
    write_message,
    zero_rows,
)


def _read_init(stdin: TextIO) -> dict:
    message = read_message(stdin)
    if message is None:
        raise ProtocolViolation("stream closed before init")
    if message.get("type") != "init":
        raise ProtocolViolation(f"expected init, got {message.get('type')!r}")
    return message


def _mock_shape(init: dict) -> tuple[int, int]:
    shape = []
    for key in ("expected_keypoints", "channels"):
        value = init.get(key)
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ProtocolViolation(f"init {key} must be an integer >= 1, got {value!r}")
        shape.append(value)
    return shape[0], shape[1]


def _mock_answer(frame: Frame, num_keypoints: int, channels: int) -> list[list[float]] | None:
    """Zero landmarks, except a blank image reads as nobody there."""
    if frame.transport == "inline_rgb" and not any(frame.data):
        return None
    return zero_rows(num_keypoints, channels)


def serve(
    stdin: TextIO,
    stdout: TextIO,
    *,
    mock: bool = False,
    config: BridgeConfig | None = None,
    session_factory: Callable[[BridgeConfig], BackendSession] | None = None,
    stderr: TextIO = sys.stderr,
) -> int:
    """Run one session over the given streams and return the exit code.

    With mock=True no toolkit loads: the reported shape comes from the
    init message (so any recorded session replays) and every frame gets
    zero landmarks, or no_detection for a blank inline image. Otherwise
    config selects a backend, loaded via session_factory (the real
    toolkit loader by default), and the session's declared shape is
    reported whether or not it matches what init asked for; shape
    disagreements are the consumer's handshake check to enforce.
    """
    if not mock and config is None:
        raise ConfigError("a backend is required unless --mock is given")
    init = _read_init(stdin)
    session: BackendSession | None = None
    if mock:
        num_keypoints, channels = _mock_shape(init)
        backend_name = str(init.get("backend", "mock"))
    else:
        session = (session_factory or open_session)(config)
        num_keypoints = session.info.num_keypoints
        channels = session.info.channels
        backend_name = session.info.name
        if init.get("backend") != backend_name:
            print(
                f"note: init names backend {init.get('backend')!r}, serving {backend_name!r}",
                file=stderr,
            )

    try:
        write_message(stdout, ready_message(backend_name, num_keypoints, channels))
        answered: set[int] = set()
        while True:
            message = read_message(stdin)
            if message is None:
                raise ProtocolViolation("stream closed before end")
            kind = message["type"]
            if kind == "end":
                write_message(stdout, {"type": "done"})
                return 0
            if kind != "frame":
                raise ProtocolViolation(f"unexpected message type {kind!r}")
            frame = parse_frame(message)
            if frame.index in answered:
                raise ProtocolViolation(f"duplicate frame index {frame.index}")
            answered.add(frame.index)
            if mock:
                rows = _mock_answer(frame, num_keypoints, channels)
            else:
                rows = session.infer(frame)
            if rows is None:
                write_message(stdout, no_detection_message(frame.index))
                continue
            if len(rows) != num_keypoints or any(len(row) != channels for row in rows):
                raise BridgeError(
                    f"backend produced a bad shape for frame {frame.index}:"
                    f" session promised {num_keypoints}x{channels}"
                )
            write_message(stdout, landmarks_message(frame.index, rows))
    finally:
        if session is not None:
            session.close()
