"""Landmark clip post-processing.

Clips are (frames x keypoints x channels) float32 arrays with an ordered
channel semantics tuple, a coordinate-space tag, and the producing backend
name. The transformations here are pure: preset keypoint reduction,
visibility masking, unit-bounding-box normalization, depth dropping, and
flattening. Missing detections are always encoded as coordinates 0 with
visibility 0, never NaN, so arrays stay finite and masks stay recoverable.

The standard chain order is reduce, mask, normalize, flatten.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BackendMismatch,
    IndexOutOfRange,
    InvalidValue,
    NoDepthChannel,
    NoValidPoints,
)

CHANNEL_NAMES = ("x", "y", "z", "visibility")
SPACES = ("pixel", "frame_normalized", "unit_bbox")

# Default channel layout per channel count.
DEFAULT_SEMANTICS = {
    2: ("x", "y"),
    3: ("x", "y", "visibility"),
    4: ("x", "y", "z", "visibility"),
}


@dataclass(frozen=True, slots=True)
class LandmarkClip:
    """Per-frame keypoint arrays in the shared structured format."""

    data: np.ndarray
    channel_semantics: tuple[str, ...]
    space: str
    backend_name: str
    fps: float
    sample_id: str

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise InvalidValue(f"clip data must be (T,K,C), got shape {self.data.shape}")
        t, k, c = self.data.shape
        if t < 1 or k < 1:
            raise InvalidValue(f"clip needs T >= 1 and K >= 1, got {self.data.shape}")
        if c != len(self.channel_semantics):
            raise InvalidValue(
                f"{c} channels but semantics {self.channel_semantics}"
            )
        for name in self.channel_semantics:
            if name not in CHANNEL_NAMES:
                raise InvalidValue(f"unknown channel '{name}'")
        if len(set(self.channel_semantics)) != len(self.channel_semantics):
            raise InvalidValue("duplicate channel semantics")
        if self.space not in SPACES:
            raise InvalidValue(f"unknown space '{self.space}'")
        if not self.fps > 0:
            raise InvalidValue("fps must be > 0")
        if not np.isfinite(self.data).all():
            raise InvalidValue("clip data must be finite")

    @property
    def frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def keypoints(self) -> int:
        return int(self.data.shape[1])

    def channel_index(self, name: str) -> int | None:
        try:
            return self.channel_semantics.index(name)
        except ValueError:
            return None


@dataclass(frozen=True, slots=True)
class KeypointPreset:
    """Named, backend-specific keypoint subset."""

    name: str
    backend_name: str
    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.indices:
            raise InvalidValue(f"preset '{self.name}' has no indices")
        if any(i < 0 for i in self.indices):
            raise InvalidValue(f"preset '{self.name}' has negative indices")
        if len(set(self.indices)) != len(self.indices):
            raise InvalidValue(f"preset '{self.name}' has duplicate indices")


def load_preset(name_or_path: str) -> KeypointPreset:
    """Load a preset by packaged name or filesystem path.

    Preset files are JSON objects {"name", "backend", "indices"}.
    """
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        text = path.read_text(encoding="utf-8")
    else:
        resource = resources.files("signpipe.presets").joinpath(f"{name_or_path}.json")
        try:
            text = resource.read_text(encoding="utf-8")
        except (FileNotFoundError, ModuleNotFoundError):
            raise InvalidValue(f"no keypoint preset named '{name_or_path}'") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidValue(f"preset '{name_or_path}' is not valid JSON: {exc}") from exc
    for key in ("name", "backend", "indices"):
        if key not in raw:
            raise InvalidValue(f"preset '{name_or_path}' missing '{key}'")
    indices = raw["indices"]
    if not isinstance(indices, list) or not all(isinstance(i, int) for i in indices):
        raise InvalidValue(f"preset '{name_or_path}' indices must be integers")
    return KeypointPreset(
        name=str(raw["name"]),
        backend_name=str(raw["backend"]),
        indices=tuple(indices),
    )


def reduce_keypoints(clip: LandmarkClip, preset: KeypointPreset) -> LandmarkClip:
    """Select the preset's keypoint rows, preserving values bit-exactly.

    Raises:
        BackendMismatch: preset targets a different backend.
        IndexOutOfRange: preset indexes beyond the clip's keypoints.
    """
    if preset.backend_name != clip.backend_name:
        raise BackendMismatch(
            f"preset '{preset.name}' is for backend '{preset.backend_name}', "
            f"clip came from '{clip.backend_name}'"
        )
    if max(preset.indices) >= clip.keypoints:
        raise IndexOutOfRange(
            f"preset '{preset.name}' index {max(preset.indices)} "
            f">= clip keypoints {clip.keypoints}"
        )
    data = np.ascontiguousarray(clip.data[:, list(preset.indices), :])
    return replace(clip, data=data)


def compute_valid_mask(clip: LandmarkClip, visibility_threshold: float) -> np.ndarray:
    """(T,K) boolean mask: true where visible enough or no visibility channel."""
    vis = clip.channel_index("visibility")
    if vis is None:
        return np.ones(clip.data.shape[:2], dtype=bool)
    return clip.data[:, :, vis] >= visibility_threshold


def mask_invisible(clip: LandmarkClip, visibility_threshold: float) -> LandmarkClip:
    """Zero out points below the visibility threshold (coords and visibility)."""
    vis = clip.channel_index("visibility")
    if vis is None:
        return clip
    mask = compute_valid_mask(clip, visibility_threshold)
    data = clip.data.copy()
    data[~mask] = 0.0
    return replace(clip, data=data)


def unit_bbox_normalize(
    clip: LandmarkClip,
    scope: str,
    visibility_threshold: float,
    epsilon: float,
) -> tuple[LandmarkClip, list[int]]:
    """Map coordinates into the unit bounding box of the valid points.

    Per scope unit (the whole clip or each frame), x and y are shifted and
    scaled by the valid-point extent with an epsilon floor on the
    denominator, and z is scaled by the dominant planar extent. Invalid
    points come out as coordinates 0 with visibility 0.

    Idempotence: re-applying the transform is bit-stable when, per scope
    unit, the larger planar extent over valid points is at least epsilon
    (the normal case for pixel-scale landmarks) and no axis extent falls
    strictly between 0 and epsilon. Outside that domain, for example a
    single valid point with nonzero z, the epsilon denominator rescales
    depth on every pass.

    Returns the normalized clip plus the list of zeroed frame indices
    (always empty for per_clip scope).

    Raises:
        InvalidValue: unknown scope or missing x/y channels.
        NoValidPoints: per_clip scope with no valid point anywhere; for
            per_frame scope the offending frames are zeroed and reported
            instead, and only an all-invalid clip raises.
    """
    if scope not in ("per_clip", "per_frame"):
        raise InvalidValue(f"unknown normalization scope '{scope}'")
    xi = clip.channel_index("x")
    yi = clip.channel_index("y")
    if xi is None or yi is None:
        raise InvalidValue("normalization requires x and y channels")
    zi = clip.channel_index("z")

    mask = compute_valid_mask(clip, visibility_threshold)
    data = clip.data.astype(np.float32, copy=True)
    zeroed_frames: list[int] = []

    if scope == "per_clip":
        if not mask.any():
            raise NoValidPoints(f"{clip.sample_id}: no valid points in clip")
        _normalize_unit(data, mask, xi, yi, zi, epsilon)
    else:
        if not mask.any():
            raise NoValidPoints(f"{clip.sample_id}: no valid points in any frame")
        for t in range(clip.frames):
            frame = data[t:t + 1]
            frame_mask = mask[t:t + 1]
            if not frame_mask.any():
                frame[:] = 0.0
                zeroed_frames.append(t)
                continue
            _normalize_unit(frame, frame_mask, xi, yi, zi, epsilon)

    # All channels of invalid points, visibility included, come out as 0.
    data[~mask] = 0.0
    result = replace(clip, data=data, space="unit_bbox")
    return result, zeroed_frames


def _normalize_unit(
    data: np.ndarray,
    mask: np.ndarray,
    xi: int,
    yi: int,
    zi: int | None,
    epsilon: float,
) -> None:
    """In-place unit-bbox transform of one scope unit (clip or frame)."""
    xs = data[:, :, xi][mask]
    ys = data[:, :, yi][mask]
    xmin = np.float32(xs.min())
    xmax = np.float32(xs.max())
    ymin = np.float32(ys.min())
    ymax = np.float32(ys.max())
    eps = np.float32(epsilon)
    width = np.maximum(xmax - xmin, eps)
    height = np.maximum(ymax - ymin, eps)
    data[:, :, xi] = (data[:, :, xi] - xmin) / width
    data[:, :, yi] = (data[:, :, yi] - ymin) / height
    if zi is not None:
        data[:, :, zi] = data[:, :, zi] / np.maximum(np.maximum(xmax - xmin, ymax - ymin), eps)


def drop_depth(clip: LandmarkClip) -> LandmarkClip:
    """Remove the z channel.

    Raises:
        NoDepthChannel: clip has no z channel.
    """
    zi = clip.channel_index("z")
    if zi is None:
        raise NoDepthChannel(f"{clip.sample_id}: clip has no z channel")
    keep = [i for i in range(len(clip.channel_semantics)) if i != zi]
    data = np.ascontiguousarray(clip.data[:, :, keep])
    semantics = tuple(n for n in clip.channel_semantics if n != "z")
    return replace(clip, data=data, channel_semantics=semantics)


def flatten(clip: LandmarkClip) -> np.ndarray:
    """(T,K,C) -> (T, K*C); (t,k,c) lands in column k*C + c."""
    t, k, c = clip.data.shape
    return np.ascontiguousarray(clip.data.reshape(t, k * c))


def unflatten(array: np.ndarray, keypoints: int, channels: int) -> np.ndarray:
    """Inverse of :func:`flatten` given the original K and C."""
    t = array.shape[0]
    return array.reshape(t, keypoints, channels)


def standard_chain(
    clip: LandmarkClip,
    *,
    preset: KeypointPreset | None,
    mask_low_visibility: bool,
    normalize_scope: str | None,
    visibility_threshold: float,
    epsilon: float,
    flatten_output: bool,
) -> tuple[LandmarkClip, np.ndarray, list[int]]:
    """Composition in the fixed order reduce, mask, normalize, flatten.

    Returns the transformed clip, the export array (flattened 2-D when
    requested, otherwise the 3-D clip data), and any zeroed frame indices.
    """
    current = clip
    if preset is not None:
        current = reduce_keypoints(current, preset)
    if mask_low_visibility:
        current = mask_invisible(current, visibility_threshold)
    zeroed: list[int] = []
    if normalize_scope is not None:
        current, zeroed = unit_bbox_normalize(
            current, normalize_scope, visibility_threshold, epsilon
        )
    array = flatten(current) if flatten_output else current.data
    return current, array, zeroed
