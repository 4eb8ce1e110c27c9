"""Line-delimited JSON framing for the extractor wire protocol.

One JSON object per line, a "type" field on every object. Requests
arrive on stdin, responses leave on stdout; anything else on stdout
would be a protocol violation, so diagnostics belong on stderr.
"""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass
from typing import Any, TextIO

from .errors import ProtocolViolation

TRANSPORTS = ("inline_rgb", "file_ref")


@dataclass(frozen=True, slots=True)
class Frame:
    """One decoded frame request.

    Exactly one payload form is populated: data for inline_rgb, the
    path and frame_index pair for file_ref.
    """

    index: int
    width: int
    height: int
    bbox: tuple[float, float, float, float] | None
    transport: str
    data: bytes | None = None
    path: str | None = None
    frame_index: int | None = None


def read_message(stream: TextIO) -> dict[str, Any] | None:
    """Next message on the stream, or None at end of stream."""
    line = stream.readline()
    if line == "":
        return None
    line = line.strip()
    if not line:
        raise ProtocolViolation("blank line in request stream")
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolViolation(f"request line is not JSON: {exc}") from exc
    if not isinstance(message, dict) or not isinstance(message.get("type"), str):
        raise ProtocolViolation("request is not an object with a string 'type'")
    return message


def write_message(stream: TextIO, message: dict[str, Any]) -> None:
    stream.write(json.dumps(message, separators=(",", ":"), ensure_ascii=False) + "\n")
    stream.flush()


def _require_int(message: dict[str, Any], key: str, *, at_least: int) -> int:
    value = message.get(key)
    if isinstance(value, bool) or not isinstance(value, int) or value < at_least:
        raise ProtocolViolation(f"frame {key} must be an integer >= {at_least}, got {value!r}")
    return value


def parse_frame(message: dict[str, Any]) -> Frame:
    """Validate and decode one frame request."""
    index = _require_int(message, "index", at_least=0)
    width = _require_int(message, "width", at_least=1)
    height = _require_int(message, "height", at_least=1)

    bbox = message.get("bbox")
    if bbox is not None:
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise ProtocolViolation(f"frame {index}: bbox must be null or four numbers")
        try:
            bbox = tuple(float(value) for value in bbox)
        except (TypeError, ValueError) as exc:
            raise ProtocolViolation(f"frame {index}: bbox must be numeric") from exc

    transport = message.get("transport")
    if transport not in TRANSPORTS:
        raise ProtocolViolation(f"frame {index}: unknown transport {transport!r}")
    payload = message.get("payload")

    if transport == "inline_rgb":
        if not isinstance(payload, str):
            raise ProtocolViolation(f"frame {index}: inline_rgb payload must be a string")
        try:
            data = base64.b64decode(payload, validate=True)
        except binascii.Error as exc:
            raise ProtocolViolation(f"frame {index}: payload is not base64: {exc}") from exc
        expected = width * height * 3
        if len(data) != expected:
            raise ProtocolViolation(
                f"frame {index}: payload is {len(data)} bytes, {width}x{height} RGB needs {expected}"
            )
        return Frame(index, width, height, bbox, transport, data=data)

    if not isinstance(payload, dict):
        raise ProtocolViolation(f"frame {index}: file_ref payload must be an object")
    path = payload.get("path")
    if not isinstance(path, str) or not path:
        raise ProtocolViolation(f"frame {index}: file_ref path must be a non-empty string")
    frame_index = payload.get("frame_index")
    if isinstance(frame_index, bool) or not isinstance(frame_index, int) or frame_index < 0:
        raise ProtocolViolation(f"frame {index}: file_ref frame_index must be an integer >= 0")
    return Frame(index, width, height, bbox, transport, path=path, frame_index=frame_index)


def ready_message(backend: str, num_keypoints: int, channels: int) -> dict[str, Any]:
    return {
        "type": "ready",
        "backend": backend,
        "num_keypoints": num_keypoints,
        "channels": channels,
    }


def landmarks_message(index: int, rows: list[list[float]]) -> dict[str, Any]:
    return {"type": "landmarks", "index": index, "keypoints": rows}


def no_detection_message(index: int) -> dict[str, Any]:
    return {"type": "no_detection", "index": index}


def zero_rows(num_keypoints: int, channels: int) -> list[list[float]]:
    return [[0.0] * channels for _ in range(num_keypoints)]
