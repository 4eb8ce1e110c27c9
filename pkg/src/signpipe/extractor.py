"""Backend-agnostic landmark extraction.

Backends are either in-process (the deterministic synthetic one) or child
processes speaking a line-delimited JSON protocol over their standard
streams: one UTF-8 object per line, no pretty-printing. Message flow:

    -> {"type": "init", "backend": ..., "params": {...},
        "expected_keypoints": K, "channels": C}
    <- {"type": "ready", "backend": ..., "num_keypoints": K, "channels": C}
    -> {"type": "frame", "index": i, "width": w, "height": h,
        "bbox": [x0, y0, x1, y1] | null, "transport": "inline_rgb" | "file_ref",
        "payload": base64 | {"path": ..., "frame_index": ...}}
    <- {"type": "landmarks", "index": i, "keypoints": [[...], ...]}
       or {"type": "no_detection", "index": i}
    -> {"type": "end"}
    <- {"type": "done"}

Responses are matched to requests by index and may arrive out of order.
The full byte-exact grammar lives in docs/protocol.md, with recorded
conformance transcripts under tests/fixtures/protocol/.
"""

from __future__ import annotations

import base64
import hashlib
import json
import shlex
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping

import numpy as np

from .errors import (
    BackendCrash,
    HandshakeMismatch,
    InvalidValue,
    ProtocolError,
    SpawnFailure,
)
from .geometry import Box
from .posepost import DEFAULT_SEMANTICS, LandmarkClip

TRANSPORTS = ("inline_rgb", "file_ref")


@dataclass(frozen=True, slots=True)
class ExtractorSpec:
    """Which backend to run and the array shape it must produce."""

    backend_name: str
    expected_keypoints: int
    channels: int
    params: dict[str, Any] = field(default_factory=dict)
    command: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.expected_keypoints <= 0 or self.channels <= 0:
            raise InvalidValue("expected_keypoints and channels must be > 0")


def spec_from_config(config, seed: int) -> ExtractorSpec:
    """Build an ExtractorSpec from a validated extractor config section.

    The runtime seed rides along in params so the synthetic backend is a
    pure function of the job config.
    """
    params = dict(config.params)
    params.setdefault("seed", seed)
    command = params.pop("command", None)
    if command is not None:
        if isinstance(command, str):
            command = tuple(shlex.split(command))
        else:
            command = tuple(str(part) for part in command)
    return ExtractorSpec(
        backend_name=config.backend_name,
        expected_keypoints=config.expected_keypoints,
        channels=config.channels,
        params=params,
        command=command,
    )


@dataclass(frozen=True, slots=True)
class FrameRequest:
    """One frame offered to the backend."""

    index: int
    width: int
    height: int
    bbox: Box | None = None
    transport: str = "file_ref"
    payload: Any = None

    def __post_init__(self) -> None:
        if self.transport not in TRANSPORTS:
            raise InvalidValue(f"unknown transport '{self.transport}'")
        if self.transport == "inline_rgb":
            if not isinstance(self.payload, (bytes, bytearray)):
                raise InvalidValue("inline_rgb payload must be raw RGB bytes")
            expected = self.width * self.height * 3
            if len(self.payload) != expected:
                raise InvalidValue(
                    f"inline payload is {len(self.payload)} bytes, "
                    f"expected {expected} for {self.width}x{self.height}"
                )


@dataclass(frozen=True, slots=True)
class LandmarkResponse:
    index: int
    keypoints: tuple[tuple[float, ...], ...] | None  # None = no_detection


@dataclass(frozen=True, slots=True)
class ClipFrames:
    """Ordered frame source for one clip."""

    sample_id: str
    fps: float
    frames: tuple[FrameRequest, ...]


# --- wire codec ---------------------------------------------------------------

def encode_message(message: Mapping[str, Any]) -> bytes:
    """One protocol line: compact JSON, UTF-8, trailing newline."""
    return (json.dumps(message, separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")


def decode_message(line: bytes | str) -> dict[str, Any]:
    """Parse one protocol line.

    Raises:
        ProtocolError: not JSON, not an object, or missing "type".
    """
    if isinstance(line, bytes):
        line = line.decode("utf-8", errors="replace")
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed protocol line: {line!r}") from exc
    if not isinstance(message, dict) or "type" not in message:
        raise ProtocolError(f"protocol line is not a typed object: {line!r}")
    return message


def frame_to_message(request: FrameRequest) -> dict[str, Any]:
    if request.transport == "inline_rgb":
        payload: Any = base64.b64encode(bytes(request.payload)).decode("ascii")
    else:
        payload = request.payload
    bbox = request.bbox
    return {
        "type": "frame",
        "index": request.index,
        "width": request.width,
        "height": request.height,
        "bbox": None if bbox is None else [bbox.x0, bbox.y0, bbox.x1, bbox.y1],
        "transport": request.transport,
        "payload": payload,
    }


def message_to_frame(message: Mapping[str, Any]) -> FrameRequest:
    """Inverse of :func:`frame_to_message`; used by tests and bridges."""
    if message.get("type") != "frame":
        raise ProtocolError(f"expected frame message, got {message.get('type')!r}")
    transport = message.get("transport")
    payload = message.get("payload")
    if transport == "inline_rgb":
        try:
            payload = base64.b64decode(str(payload), validate=True)
        except (ValueError, TypeError) as exc:
            raise ProtocolError("frame payload is not valid base64") from exc
    raw_bbox = message.get("bbox")
    bbox = None if raw_bbox is None else Box(*[float(v) for v in raw_bbox])
    try:
        return FrameRequest(
            index=int(message["index"]),
            width=int(message["width"]),
            height=int(message["height"]),
            bbox=bbox,
            transport=str(transport),
            payload=payload,
        )
    except (KeyError, TypeError, ValueError, InvalidValue) as exc:
        raise ProtocolError(f"bad frame message: {exc}") from exc


def parse_response(message: Mapping[str, Any], keypoints: int, channels: int) -> LandmarkResponse:
    """Validate a landmarks/no_detection message against handshake dims.

    Raises:
        ProtocolError: wrong type, shape, or non-numeric values.
    """
    kind = message.get("type")
    if kind == "no_detection":
        try:
            return LandmarkResponse(index=int(message["index"]), keypoints=None)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"bad no_detection message: {exc}") from exc
    if kind != "landmarks":
        raise ProtocolError(f"expected landmarks or no_detection, got {kind!r}")
    try:
        index = int(message["index"])
        points = message["keypoints"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad landmarks message: {exc}") from exc
    if not isinstance(points, list) or len(points) != keypoints:
        raise ProtocolError(
            f"frame {index}: {len(points) if isinstance(points, list) else '?'} "
            f"keypoints, handshake said {keypoints}"
        )
    rows = []
    for row in points:
        if not isinstance(row, list) or len(row) != channels:
            raise ProtocolError(f"frame {index}: keypoint row with wrong channel count")
        try:
            rows.append(tuple(float(v) for v in row))
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"frame {index}: non-numeric keypoint value") from exc
    return LandmarkResponse(index=index, keypoints=tuple(rows))


# --- synthetic backend ----------------------------------------------------------

def synthetic_keypoint(seed: int, sample_id: str, frame: int, k: int, c: int) -> float:
    """Deterministic pseudo-coordinate in [0, 1).

    SHA-256 over the UTF-8 concatenation of the decimal seed, sample_id,
    and decimal frame/keypoint/channel indices joined by 0x1F separators;
    the first 8 digest bytes, read big-endian, scaled by 2**-64.
    """
    payload = "\x1f".join((str(seed), sample_id, str(frame), str(k), str(c)))
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


class SyntheticSession:
    """In-process backend: a pure function of seed, sample_id, and indices.

    Ignores frame pixels entirely, so tests and golden files need no media
    stack. Values land in [0, 1) and the visibility channel, when present,
    is the same kind of uniform value.
    """

    space = "frame_normalized"

    def __init__(self, spec: ExtractorSpec):
        self.spec = spec
        self.seed = int(spec.params.get("seed", 0))

    def handshake(self) -> dict[str, Any]:
        return {
            "num_keypoints": self.spec.expected_keypoints,
            "channels": self.spec.channels,
            "backend": self.spec.backend_name,
        }

    def extract_clip(self, clip: ClipFrames) -> LandmarkClip:
        k = self.spec.expected_keypoints
        c = self.spec.channels
        data = np.empty((len(clip.frames), k, c), dtype=np.float32)
        for t, request in enumerate(clip.frames):
            for kp in range(k):
                for ch in range(c):
                    data[t, kp, ch] = synthetic_keypoint(
                        self.seed, clip.sample_id, request.index, kp, ch
                    )
        return LandmarkClip(
            data=data,
            channel_semantics=DEFAULT_SEMANTICS[c],
            space=self.space,
            backend_name=self.spec.backend_name,
            fps=clip.fps,
            sample_id=clip.sample_id,
        )

    def close(self) -> None:
        pass

    def __enter__(self) -> "SyntheticSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# --- external command backend -----------------------------------------------------

class _StreamReader:
    """Drains a child's stdout on a thread so writes never deadlock."""

    def __init__(self, stream):
        self._lines: list[bytes] = []
        self._cond = threading.Condition()
        self._eof = False
        self._thread = threading.Thread(target=self._run, args=(stream,), daemon=True)
        self._thread.start()

    def _run(self, stream) -> None:
        for line in stream:
            with self._cond:
                self._lines.append(line)
                self._cond.notify()
        with self._cond:
            self._eof = True
            self._cond.notify()

    def next_line(self, timeout: float) -> bytes | None:
        """Next line, or None on EOF; raises ProtocolError on timeout."""
        with self._cond:
            while not self._lines and not self._eof:
                if not self._cond.wait(timeout):
                    raise ProtocolError(f"backend sent nothing for {timeout:.0f}s")
            if self._lines:
                return self._lines.pop(0)
            return None


class CommandSession:
    """One child-process backend speaking the wire protocol."""

    space = "frame_normalized"

    def __init__(self, spec: ExtractorSpec, *, timeout_s: float = 60.0):
        if not spec.command:
            raise SpawnFailure(
                f"backend '{spec.backend_name}' needs a command in extractor params"
            )
        self.spec = spec
        self.timeout_s = timeout_s
        try:
            self._proc = subprocess.Popen(
                list(spec.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
            )
        except OSError as exc:
            raise SpawnFailure(f"cannot start {spec.command[0]}: {exc}") from exc
        self._reader = _StreamReader(self._proc.stdout)
        self._handshaken = False
        self._finished = False

    # -- low-level IO --

    def _send(self, message: Mapping[str, Any]) -> None:
        try:
            self._proc.stdin.write(encode_message(message))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise self._crash(f"backend pipe closed while sending: {exc}") from exc

    def _receive(self) -> dict[str, Any]:
        line = self._reader.next_line(self.timeout_s)
        if line is None:
            raise self._crash("backend closed its stream early")
        return decode_message(line)

    def _crash(self, context: str) -> Exception:
        try:
            code = self._proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            code = self._proc.poll()
        stderr = b""
        if self._proc.stderr is not None:
            try:
                stderr = self._proc.stderr.read() or b""
            except OSError:
                stderr = b""
        detail = stderr.decode("utf-8", errors="replace").strip()
        suffix = f": {detail}" if detail else ""
        if code is not None and code != 0:
            return BackendCrash(f"backend exited with code {code}{suffix}")
        return ProtocolError(f"{context}{suffix}")

    # -- protocol --

    def handshake(self) -> dict[str, Any]:
        self._send(
            {
                "type": "init",
                "backend": self.spec.backend_name,
                "params": self.spec.params,
                "expected_keypoints": self.spec.expected_keypoints,
                "channels": self.spec.channels,
            }
        )
        message = self._receive()
        if message.get("type") != "ready":
            raise ProtocolError(f"expected ready, got {message.get('type')!r}")
        reported_k = message.get("num_keypoints")
        reported_c = message.get("channels")
        if reported_k != self.spec.expected_keypoints or reported_c != self.spec.channels:
            raise HandshakeMismatch(
                f"backend reports {reported_k} keypoints x {reported_c} channels, "
                f"config expects {self.spec.expected_keypoints} x {self.spec.channels}"
            )
        self._handshaken = True
        return {
            "num_keypoints": reported_k,
            "channels": reported_c,
            "backend": message.get("backend", self.spec.backend_name),
        }

    def extract_clip(self, clip: ClipFrames) -> LandmarkClip:
        """Run the whole frame stream for one clip and collect responses.

        Frames are all written up front (a reader thread keeps the child's
        output drained, so neither side can deadlock on a full pipe), then
        ``end`` closes the stream. The backend may answer in any order;
        once ``done`` arrives the response index set must equal the request
        index set exactly.
        """
        if self._finished:
            raise ProtocolError("session already ran a clip; open a new one")
        if not self._handshaken:
            self.handshake()
        self._finished = True
        k = self.spec.expected_keypoints
        c = self.spec.channels
        wanted = {request.index for request in clip.frames}
        if len(wanted) != len(clip.frames):
            raise InvalidValue(f"{clip.sample_id}: duplicate frame indices")
        for request in clip.frames:
            self._send(frame_to_message(request))
        self._send({"type": "end"})

        responses: dict[int, LandmarkResponse] = {}
        while True:
            message = self._receive()
            if message.get("type") == "done":
                break
            response = parse_response(message, k, c)
            if response.index not in wanted:
                raise ProtocolError(f"{clip.sample_id}: unrequested index {response.index}")
            if response.index in responses:
                raise ProtocolError(f"{clip.sample_id}: duplicate index {response.index}")
            responses[response.index] = response
        if set(responses) != wanted:
            missing = sorted(wanted - set(responses))
            raise ProtocolError(
                f"{clip.sample_id}: stream done with {len(missing)} unanswered "
                f"frames (first missing index: {missing[0]})"
            )

        data = np.zeros((len(clip.frames), k, c), dtype=np.float32)
        for t, request in enumerate(clip.frames):
            response = responses[request.index]
            if response.keypoints is not None:
                data[t] = np.asarray(response.keypoints, dtype=np.float32)
        return LandmarkClip(
            data=data,
            channel_semantics=DEFAULT_SEMANTICS[c],
            space=self.space,
            backend_name=self.spec.backend_name,
            fps=clip.fps,
            sample_id=clip.sample_id,
        )

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                if self._handshaken and not self._finished:
                    self._send({"type": "end"})
                    message = self._receive()
                    if message.get("type") != "done":
                        raise ProtocolError(f"expected done, got {message.get('type')!r}")
            except (ProtocolError, BackendCrash):
                pass
            finally:
                try:
                    self._proc.stdin.close()
                except OSError:
                    pass
                try:
                    self._proc.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
                    self._proc.wait()
        elif self._proc.stdin is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass

    def __enter__(self) -> "CommandSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_session(spec: ExtractorSpec):
    """Session for a spec: synthetic in-process, anything else by command."""
    if spec.backend_name == "synthetic":
        return SyntheticSession(spec)
    return CommandSession(spec)


def extract_clip(frames: ClipFrames, spec: ExtractorSpec, bbox: Box | None = None) -> LandmarkClip:
    """One-shot extraction: open a session, run one clip, close.

    The optional clip-level bbox is stamped onto frames that lack one; it
    is a hint, and backends decide whether to use it.
    """
    if bbox is not None:
        frames = ClipFrames(
            sample_id=frames.sample_id,
            fps=frames.fps,
            frames=tuple(
                request if request.bbox is not None else _with_bbox(request, bbox)
                for request in frames.frames
            ),
        )
    with open_session(spec) as session:
        session.handshake()
        return session.extract_clip(frames)


def _with_bbox(request: FrameRequest, bbox: Box) -> FrameRequest:
    return FrameRequest(
        index=request.index,
        width=request.width,
        height=request.height,
        bbox=bbox,
        transport=request.transport,
        payload=request.payload,
    )


def iter_protocol_lines(path) -> Iterator[dict[str, Any]]:
    """Parse a recorded conformance transcript (JSON lines with direction tags)."""
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            if not isinstance(entry, dict) or "direction" not in entry or "message" not in entry:
                raise ProtocolError(f"bad transcript entry: {line!r}")
            yield entry
