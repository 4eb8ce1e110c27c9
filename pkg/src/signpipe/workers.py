"""Per-sample work: media probing, detection, extraction, and rendering.

Everything here is pure function-of-inputs so the pipeline can fan
samples out to worker processes. Failures that only concern one sample
come back as reject outcomes; failures that would poison the whole run
(a backend that cannot start, a handshake mismatch) propagate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from . import mediaio
from .config import DatasetConfig, JobConfig
from .errors import (
    BackendCrash,
    BadMetadata,
    CommandFailure,
    DecodeFailure,
    InvalidRange,
    InvalidValue,
    ProtocolError,
    Unreadable,
    Unsatisfiable,
)
from .errors import DegenerateBox as DegenerateBoxError
from .export import encode_array, sanitize_key
from .extractor import ClipFrames, FrameRequest, extract_clip, spec_from_config
from .geometry import (
    Box,
    Detection,
    Skip,
    expand_to_aspect,
    make_crop_plan,
    pad_box,
    select_signer_region,
)
from .manifest import ManifestRecord

DETECTOR_BACKENDS = ("none", "scripted")

DEFAULT_MEDIA_EXT = ".synth.json"

# Exception type -> reject reason for faults that spoil one sample only.
_SAMPLE_FAULTS: tuple[tuple[type, str], ...] = (
    (BackendCrash, "BackendCrash"),
    (ProtocolError, "ProtocolError"),
    (Unreadable, "Unreadable"),
    (BadMetadata, "BadMetadata"),
    (DecodeFailure, "DecodeFailure"),
    (CommandFailure, "CommandFailure"),
    (Unsatisfiable, "Unsatisfiable"),
    (DegenerateBoxError, "DegenerateBox"),
    (InvalidRange, "BadTiming"),
)

_SAMPLE_FAULT_TYPES = tuple(kind for kind, _ in _SAMPLE_FAULTS)


@dataclass(frozen=True, slots=True)
class SampleOutcome:
    sample_id: str
    key: str | None
    reason: str | None

    @property
    def ok(self) -> bool:
        return self.reason is None


def media_path_for(record: ManifestRecord, dataset: DatasetConfig) -> str:
    root = dataset.params.get("media_root")
    if root is None:
        root = str(Path(dataset.source_path).parent)
    ext = dataset.params.get("media_ext", DEFAULT_MEDIA_EXT)
    return str(Path(root) / f"{record.video_id}{ext}")


def media_backend_for(path: str, dataset: DatasetConfig):
    params = {
        name: dataset.params[name]
        for name in ("probe_command", "render_command")
        if name in dataset.params
    }
    name = dataset.params.get("media_backend")
    if name is None:
        return mediaio.backend_for_path(path, params)
    if name == "synthetic":
        return mediaio.SyntheticMedia(params)
    if name == "external_command":
        return mediaio.CommandMedia(params)
    raise InvalidValue(f"unknown media backend '{name}'")


def resolve_span(record: ManifestRecord, info: mediaio.MediaInfo) -> tuple[float, float]:
    """Concrete [start, end) for a record, clamped to the media duration.

    Records may omit timing when the filter allows it; they then cover the
    whole source video.

    Raises:
        InvalidRange: nothing of the span lies inside the media.
    """
    start = 0.0 if record.start_s is None else record.start_s
    end = info.duration_s if record.end_s is None else min(record.end_s, info.duration_s)
    if start >= end:
        raise InvalidRange(
            f"{record.sample_id}: span [{start}, {end}) is empty after clamping "
            f"to duration {info.duration_s}"
        )
    return start, end


def detect_region(
    record: ManifestRecord,
    config: JobConfig,
    frames: list[mediaio.DecodedFrame],
) -> Box | Skip | None:
    """Signer region for a clip: scripted detections, manifest bbox, or none."""
    detector = config.processing.detector
    if detector.backend_name == "none":
        return record.bbox
    if detector.backend_name != "scripted":
        raise InvalidValue(f"unknown detector backend '{detector.backend_name}'")
    sampled = frames[:: detector.sample_stride]
    detections = {
        frame.frame_index: [
            Detection(frame_index=frame.frame_index, box=box, score=1.0)
            for box in frame.boxes
        ]
        for frame in sampled
    }
    min_score = float(detector.params.get("min_score", 0.25))
    return select_signer_region(detections, min_score=min_score)


def write_sidecar(path: Path, payload: Mapping[str, Any]) -> None:
    data = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    path.write_text(data + "\n", encoding="utf-8")


def read_sidecar(path: Path) -> dict[str, Any]:
    return json.loads(path.read_text(encoding="utf-8"))


def _base_sidecar(record: ManifestRecord, key: str, start: float, end: float, config: JobConfig) -> dict[str, Any]:
    return {
        "sample_id": record.sample_id,
        "key": key,
        "video_id": record.video_id,
        "start_s": start,
        "end_s": end,
        "text": record.text,
        "split": record.split,
        "processor": config.processing.mode,
    }


def pose_processor(record: ManifestRecord, config: JobConfig, out_dir: Path) -> SampleOutcome:
    """Extract one landmark clip and persist it as array plus sidecar."""
    key = sanitize_key(record.sample_id)
    path = media_path_for(record, config.dataset)
    media = media_backend_for(path, config.dataset)
    info = media.probe(path)
    start, end = resolve_span(record, info)
    times = mediaio.sample_times(start, end, config.processing.frame_rate_hz)
    frames = media.decode_frames(path, times)

    region = detect_region(record, config, frames)
    if isinstance(region, Skip):
        return SampleOutcome(record.sample_id, None, region.reason)

    spec = spec_from_config(config.processing.extractor, seed=config.runtime.seed)
    clip_frames = ClipFrames(
        sample_id=record.sample_id,
        fps=config.processing.frame_rate_hz,
        frames=tuple(
            FrameRequest(
                index=i,
                width=frame.width,
                height=frame.height,
                transport="file_ref",
                payload={"path": frame.path, "frame_index": frame.frame_index},
            )
            for i, frame in enumerate(frames)
        ),
    )
    clip = extract_clip(clip_frames, spec, bbox=region)

    payload_file = f"{key}.pose.npy"
    (out_dir / payload_file).write_bytes(encode_array(clip.data))
    sidecar = _base_sidecar(record, key, start, end, config)
    sidecar.update(
        {
            "payload_file": payload_file,
            "payload_ext": "pose.npy",
            "fps": clip.fps,
            "space": clip.space,
            "backend_name": clip.backend_name,
            "channel_semantics": list(clip.channel_semantics),
            "frames": int(clip.data.shape[0]),
            "flattened": False,
        }
    )
    write_sidecar(out_dir / f"{key}.meta.json", sidecar)
    return SampleOutcome(record.sample_id, key, None)


def video_processor(record: ManifestRecord, config: JobConfig, out_dir: Path) -> SampleOutcome:
    """Render one cropped clip via the media backend and persist a sidecar."""
    key = sanitize_key(record.sample_id)
    path = media_path_for(record, config.dataset)
    media = media_backend_for(path, config.dataset)
    info = media.probe(path)
    start, end = resolve_span(record, info)
    crop_cfg = config.processing.crop

    detector = config.processing.detector
    if detector.backend_name == "scripted":
        times = mediaio.sample_times(start, end, config.processing.frame_rate_hz)
        frames = media.decode_frames(path, times)
    else:
        frames = []
    region = detect_region(record, config, frames)
    if isinstance(region, Skip):
        return SampleOutcome(record.sample_id, None, region.reason)
    frame_w, frame_h = float(info.width), float(info.height)
    if region is None:
        region = Box(0.0, 0.0, frame_w, frame_h)

    box = pad_box(region, crop_cfg.pad_fraction, frame_w, frame_h)
    if crop_cfg.target_aspect is not None:
        box = expand_to_aspect(box, crop_cfg.target_aspect, frame_w, frame_h)
    resize = None
    if crop_cfg.resize is not None:
        resize = (crop_cfg.resize.width, crop_cfg.resize.height)
    plan = make_crop_plan(box, resize, frame_w, frame_h)

    if isinstance(media, mediaio.SyntheticMedia):
        payload_ext = "clip.json"
    else:
        payload_ext = str(config.dataset.params.get("clip_ext", "mp4")).lstrip(".")
    payload_file = f"{key}.{payload_ext}"
    media.render_clip(path, start, end, plan, str(out_dir / payload_file))

    sidecar = _base_sidecar(record, key, start, end, config)
    sidecar.update(
        {
            "payload_file": payload_file,
            "payload_ext": payload_ext,
            "crop": [plan.crop.x0, plan.crop.y0, plan.crop.x1, plan.crop.y1],
            "output_size": [plan.output_width, plan.output_height],
        }
    )
    write_sidecar(out_dir / f"{key}.meta.json", sidecar)
    return SampleOutcome(record.sample_id, key, None)


def process_sample(record: ManifestRecord, config: JobConfig, out_dir: Path) -> SampleOutcome:
    """Run one record through the mode's processor, mapping sample faults."""
    processor = pose_processor if config.processing.mode == "pose" else video_processor
    try:
        return processor(record, config, out_dir)
    except _SAMPLE_FAULT_TYPES as exc:
        reason = next(name for kind, name in _SAMPLE_FAULTS if isinstance(exc, kind))
        return SampleOutcome(record.sample_id, None, reason)


def process_partition(
    config_mapping: Mapping[str, Any],
    records: list[ManifestRecord],
    indices: list[int],
    out_dir: str,
) -> list[tuple[int, str, str | None, str | None]]:
    """Worker entry point: process an index-aligned slice of the manifest.

    Returns (global_index, sample_id, key, reason) per record, in input
    order. Shaped for pickling across the process pool boundary.
    """
    config = JobConfig.from_mapping(config_mapping)
    out = Path(out_dir)
    results = []
    for index, record in zip(indices, records):
        outcome = process_sample(record, config, out)
        results.append((index, outcome.sample_id, outcome.key, outcome.reason))
    return results
