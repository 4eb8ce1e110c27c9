"""Video probing, frame sampling, and clip rendering.

Two interchangeable backends: SyntheticMedia reads JSON descriptors
(extension .synth.json) that script the media properties and any person
boxes, so the full pipeline runs without a codec stack; CommandMedia
shells out to user-configured command templates, keeping the exact
invocation auditable.
"""

from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import (
    BadMetadata,
    CommandFailure,
    DecodeFailure,
    InvalidRange,
    InvalidValue,
    Unreadable,
)
from .geometry import Box, CropPlan

SYNTH_SUFFIX = ".synth.json"

RENDER_TOKENS = ("input", "start", "end", "x", "y", "w", "h", "out_w", "out_h", "output")


@dataclass(frozen=True, slots=True)
class MediaInfo:
    """Container-level facts about one source video."""

    duration_s: float
    fps: float
    width: int
    height: int

    def __post_init__(self) -> None:
        for name in ("duration_s", "fps", "width", "height"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise BadMetadata(f"{name} must be a number, got {type(value).__name__}")
            if not math.isfinite(value) or value <= 0:
                raise BadMetadata(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True, slots=True)
class DecodedFrame:
    """One sampled frame: where it lives and what the scene script says."""

    time_s: float
    frame_index: int
    width: int
    height: int
    path: str
    boxes: tuple[Box, ...] = ()


def sample_times(start_s: float, end_s: float, rate_hz: float) -> list[float]:
    """Timestamps start_s + i/rate_hz for i = 0..floor((end-start)*rate).

    Samples landing at or past end_s are dropped, but the first sample is
    always start_s, so the result is never empty.

    Raises:
        InvalidRange: start_s >= end_s or rate_hz <= 0.
    """
    if not (math.isfinite(start_s) and math.isfinite(end_s) and math.isfinite(rate_hz)):
        raise InvalidRange("start, end, and rate must be finite")
    if start_s >= end_s:
        raise InvalidRange(f"start {start_s!r} must be before end {end_s!r}")
    if rate_hz <= 0:
        raise InvalidRange(f"rate must be positive, got {rate_hz!r}")
    count = math.floor((end_s - start_s) * rate_hz)
    times = [start_s]
    for i in range(1, count + 1):
        t = start_s + i / rate_hz
        if t >= end_s:
            break
        times.append(t)
    return times


def nearest_frame(time_s: float, info: MediaInfo) -> int:
    """Frame index on the source grid closest to a timestamp."""
    last = max(0, int(round(info.duration_s * info.fps)) - 1)
    return min(max(0, int(round(time_s * info.fps))), last)


def substitute_template(template: Sequence[str] | str, values: Mapping[str, Any]) -> list[str]:
    """Fill {token} placeholders in a command template.

    String templates are split shell-style first. Unknown tokens raise so a
    typo in config fails loudly instead of reaching the command.
    """
    import shlex

    parts = shlex.split(template) if isinstance(template, str) else [str(p) for p in template]
    rendered = []
    for part in parts:
        try:
            rendered.append(part.format(**values))
        except (KeyError, IndexError) as exc:
            raise InvalidValue(f"unknown template token in {part!r}: {exc}") from exc
    return rendered


def _render_values(path: str, start_s: float, end_s: float, plan: CropPlan, out_path: str) -> dict:
    crop = plan.crop
    return {
        "input": path,
        "start": start_s,
        "end": end_s,
        "x": int(crop.x0),
        "y": int(crop.y0),
        "w": int(crop.width),
        "h": int(crop.height),
        "out_w": plan.output_width,
        "out_h": plan.output_height,
        "output": out_path,
    }


def plan_from_descriptor(descriptor: Mapping[str, Any]) -> CropPlan:
    """Rebuild the crop plan a synthetic render descriptor recorded."""
    x = float(descriptor["x"])
    y = float(descriptor["y"])
    return CropPlan(
        crop=Box(x, y, x + float(descriptor["w"]), y + float(descriptor["h"])),
        output_width=int(descriptor["out_w"]),
        output_height=int(descriptor["out_h"]),
    )


class SyntheticMedia:
    """Backend over scripted JSON descriptors instead of real video.

    A descriptor holds duration_s, fps, width, height, and an optional
    scene: a list of {start_s, end_s, boxes} entries scripting which
    person boxes are visible during each time range. Rendering writes a
    JSON record of the exact crop parameters instead of pixels.
    """

    def __init__(self, params: Mapping[str, Any] | None = None):
        self.params = dict(params or {})

    def probe(self, path: str) -> MediaInfo:
        descriptor = self._load(path)
        info = _info_from_mapping(descriptor, path)
        _validate_scene(descriptor.get("scene", []), info, path)
        return info

    def decode_frames(self, path: str, times: Sequence[float]) -> list[DecodedFrame]:
        """Scripted scene content at each timestamp, nearest-frame indexed."""
        descriptor = self._load(path)
        info = _info_from_mapping(descriptor, path)
        scene = _validate_scene(descriptor.get("scene", []), info, path)
        frames = []
        for t in times:
            if t < 0 or t >= info.duration_s:
                raise DecodeFailure(f"{path}: time {t!r} outside [0, {info.duration_s})")
            boxes = tuple(
                box
                for span_start, span_end, span_boxes in scene
                for box in span_boxes
                if span_start <= t < span_end
            )
            frames.append(
                DecodedFrame(
                    time_s=t,
                    frame_index=nearest_frame(t, info),
                    width=info.width,
                    height=info.height,
                    path=path,
                    boxes=boxes,
                )
            )
        return frames

    def render_clip(
        self, path: str, start_s: float, end_s: float, plan: CropPlan, out_path: str
    ) -> dict[str, Any]:
        if start_s >= end_s:
            raise InvalidRange(f"start {start_s!r} must be before end {end_s!r}")
        descriptor = _render_values(path, start_s, end_s, plan, out_path)
        descriptor["kind"] = "synthetic_render"
        data = json.dumps(descriptor, sort_keys=True, separators=(",", ":")) + "\n"
        Path(out_path).write_text(data, encoding="utf-8")
        return descriptor

    def _load(self, path: str) -> dict[str, Any]:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise Unreadable(f"cannot read {path}: {exc}") from exc
        try:
            descriptor = json.loads(text)
        except json.JSONDecodeError as exc:
            raise Unreadable(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(descriptor, dict):
            raise BadMetadata(f"{path}: descriptor must be a JSON object")
        return descriptor


class CommandMedia:
    """Backend that delegates probing and rendering to command templates.

    params:
        probe_command: template printing a flat JSON object with
            duration_s, fps, width, height on stdout. Token: {input}.
        render_command: template producing {output} from {input} with all
            crop tokens ({start}, {end}, {x}, {y}, {w}, {h}, {out_w},
            {out_h}) substituted.

    Frame decoding never touches pixels here: sampled frames are returned
    as references into the source file, and pose backends that accept
    file_ref transport open the media themselves.
    """

    def __init__(self, params: Mapping[str, Any] | None = None):
        self.params = dict(params or {})

    def probe(self, path: str) -> MediaInfo:
        if not Path(path).exists():
            raise Unreadable(f"no such file: {path}")
        template = self.params.get("probe_command")
        if not template:
            raise InvalidValue("external_command media needs a probe_command param")
        argv = substitute_template(template, {"input": path})
        try:
            result = _run(argv)
        except CommandFailure as exc:
            raise Unreadable(f"probe of {path} failed: {exc}") from exc
        try:
            payload = json.loads(result.stdout.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise BadMetadata(f"probe output for {path} is not JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise BadMetadata(f"probe output for {path} must be a JSON object")
        return _info_from_mapping(payload, path)

    def decode_frames(self, path: str, times: Sequence[float]) -> list[DecodedFrame]:
        info = self.probe(path)
        frames = []
        for t in times:
            if t < 0 or t >= info.duration_s:
                raise DecodeFailure(f"{path}: time {t!r} outside [0, {info.duration_s})")
            frames.append(
                DecodedFrame(
                    time_s=t,
                    frame_index=nearest_frame(t, info),
                    width=info.width,
                    height=info.height,
                    path=path,
                )
            )
        return frames

    def render_clip(
        self, path: str, start_s: float, end_s: float, plan: CropPlan, out_path: str
    ) -> dict[str, Any]:
        if start_s >= end_s:
            raise InvalidRange(f"start {start_s!r} must be before end {end_s!r}")
        template = self.params.get("render_command")
        if not template:
            raise InvalidValue("external_command media needs a render_command param")
        values = _render_values(path, start_s, end_s, plan, out_path)
        _run(substitute_template(template, values))
        return values


def _run(argv: list[str]) -> subprocess.CompletedProcess:
    try:
        result = subprocess.run(argv, capture_output=True, timeout=600)
    except OSError as exc:
        raise CommandFailure(f"cannot run {argv[0]}: {exc}") from exc
    except subprocess.TimeoutExpired as exc:
        raise CommandFailure(f"{argv[0]} timed out", output=_text(exc.stdout)) from exc
    if result.returncode != 0:
        raise CommandFailure(
            f"{argv[0]} exited with code {result.returncode}",
            output=_text(result.stderr) or _text(result.stdout),
        )
    return result


def _text(raw: bytes | str | None) -> str:
    if raw is None:
        return ""
    if isinstance(raw, bytes):
        return raw.decode("utf-8", errors="replace").strip()
    return raw.strip()


def _info_from_mapping(payload: Mapping[str, Any], path: str) -> MediaInfo:
    try:
        info = MediaInfo(
            duration_s=payload["duration_s"],
            fps=payload["fps"],
            width=payload["width"],
            height=payload["height"],
        )
    except KeyError as exc:
        raise BadMetadata(f"{path}: missing media field {exc}") from exc
    if int(info.width) != info.width or int(info.height) != info.height:
        raise BadMetadata(f"{path}: width/height must be integers")
    return MediaInfo(
        duration_s=float(info.duration_s),
        fps=float(info.fps),
        width=int(info.width),
        height=int(info.height),
    )


def _validate_scene(raw: Any, info: MediaInfo, path: str) -> list[tuple[float, float, tuple[Box, ...]]]:
    if not isinstance(raw, list):
        raise BadMetadata(f"{path}: scene must be a list")
    frame = Box(0.0, 0.0, float(info.width), float(info.height))
    scene = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise BadMetadata(f"{path}: scene[{i}] must be an object")
        try:
            span_start = float(entry["start_s"])
            span_end = float(entry["end_s"])
            raw_boxes = entry["boxes"]
        except (KeyError, TypeError, ValueError) as exc:
            raise BadMetadata(f"{path}: scene[{i}] is malformed: {exc}") from exc
        if not span_start < span_end:
            raise BadMetadata(f"{path}: scene[{i}] has an empty time range")
        boxes = []
        for j, coords in enumerate(raw_boxes):
            try:
                box = Box(*[float(v) for v in coords])
            except (TypeError, ValueError, InvalidValue) as exc:
                raise BadMetadata(f"{path}: scene[{i}].boxes[{j}] is malformed: {exc}") from exc
            if not frame.contains(box):
                raise BadMetadata(f"{path}: scene[{i}].boxes[{j}] leaves the frame")
            boxes.append(box)
        scene.append((span_start, span_end, tuple(boxes)))
    return scene


def write_synthetic_descriptor(
    path: str | Path,
    *,
    duration_s: float,
    fps: float,
    width: int,
    height: int,
    scene: Sequence[Mapping[str, Any]] = (),
) -> None:
    """Write a .synth.json descriptor; the mirror of SyntheticMedia.probe."""
    payload = {
        "duration_s": duration_s,
        "fps": fps,
        "width": width,
        "height": height,
        "scene": [dict(entry) for entry in scene],
    }
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )


def backend_for_path(path: str, params: Mapping[str, Any] | None = None):
    """Pick a backend by file extension: descriptors synthetic, else command."""
    if str(path).endswith(SYNTH_SUFFIX):
        return SyntheticMedia(params)
    return CommandMedia(params)
