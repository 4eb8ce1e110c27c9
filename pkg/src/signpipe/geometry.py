"""Signer-region geometry.

Turns per-frame person detections into one crop instruction for the whole
clip: score thresholding, multi-person and no-detection skip rules, box
union, fractional padding, aspect expansion, and outward integer rounding.
All functions are pure.

The bounding region is the union over all sampled-frame detections, so the
signer stays inside the crop for the entire clip. Aspect correction always
expands and shifts, never shrinks, to avoid cutting off hands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import DegenerateBox, EmptyInput, InvalidValue, Unsatisfiable

DEFAULT_MIN_SCORE = 0.25

MULTI_PERSON = "MultiPerson"
NO_DETECTION = "NoDetection"

# Slack for float round-off when an expanded box lands exactly on the frame
# edge; anything beyond this is a real containment failure.
_EDGE_TOLERANCE = 1e-9


@dataclass(frozen=True, slots=True)
class Box:
    """Axis-aligned rectangle in pixel coordinates, corners inclusive."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        for value in (self.x0, self.y0, self.x1, self.y1):
            if not math.isfinite(value):
                raise InvalidValue("box coordinates must be finite")
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise InvalidValue(f"box corners out of order: {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    def contains(self, other: "Box", tolerance: float = _EDGE_TOLERANCE) -> bool:
        return (
            self.x0 - tolerance <= other.x0
            and self.y0 - tolerance <= other.y0
            and other.x1 <= self.x1 + tolerance
            and other.y1 <= self.y1 + tolerance
        )


@dataclass(frozen=True, slots=True)
class Detection:
    """One detector hit on one sampled frame."""

    frame_index: int
    box: Box
    score: float

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise InvalidValue("frame_index must be >= 0")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidValue(f"score must be in [0,1], got {self.score}")


@dataclass(frozen=True, slots=True)
class Skip:
    """Clip-level skip decision; a value, not an error."""

    reason: str


@dataclass(frozen=True, slots=True)
class CropPlan:
    """Integer-aligned crop region plus the final output resolution."""

    crop: Box
    output_width: int
    output_height: int

    def __post_init__(self) -> None:
        if self.output_width <= 0 or self.output_height <= 0:
            raise InvalidValue("crop plan output dims must be positive")


def union_boxes(boxes: Sequence[Box]) -> Box:
    """Componentwise envelope of all boxes.

    Raises:
        EmptyInput: no boxes given.
    """
    if not boxes:
        raise EmptyInput("union_boxes requires at least one box")
    return Box(
        x0=min(b.x0 for b in boxes),
        y0=min(b.y0 for b in boxes),
        x1=max(b.x1 for b in boxes),
        y1=max(b.y1 for b in boxes),
    )


def clamp_box(box: Box, frame_w: float, frame_h: float) -> Box:
    return Box(
        x0=min(max(box.x0, 0.0), frame_w),
        y0=min(max(box.y0, 0.0), frame_h),
        x1=min(max(box.x1, 0.0), frame_w),
        y1=min(max(box.y1, 0.0), frame_h),
    )


def pad_box(box: Box, pad_fraction: float, frame_w: float, frame_h: float) -> Box:
    """Extend each side by pad_fraction of the box dimension, then clamp."""
    if pad_fraction < 0:
        raise InvalidValue("pad_fraction must be >= 0")
    dx = pad_fraction * box.width
    dy = pad_fraction * box.height
    return clamp_box(
        Box(box.x0 - dx, box.y0 - dy, box.x1 + dx, box.y1 + dy), frame_w, frame_h
    )


def select_signer_region(
    detections: Mapping[int, Sequence[Detection]],
    min_score: float = DEFAULT_MIN_SCORE,
) -> Box | Skip:
    """Decide the clip's signer region from sampled-frame detections.

    Detections below ``min_score`` are discarded first. Any frame left with
    two or more detections marks the clip multi-person; a clip whose frames
    all end up empty has no detection. Otherwise the region is the union of
    every surviving detection box.
    """
    surviving: list[Detection] = []
    multi_person = False
    for frame_index in detections:
        frame_hits = [d for d in detections[frame_index] if d.score >= min_score]
        if len(frame_hits) >= 2:
            multi_person = True
        surviving.extend(frame_hits)
    if multi_person:
        return Skip(MULTI_PERSON)
    if not surviving:
        return Skip(NO_DETECTION)
    return union_boxes([d.box for d in surviving])


def expand_to_aspect(box: Box, target_aspect: float, frame_w: float, frame_h: float) -> Box:
    """Grow the box about its center until width/height = target_aspect.

    Only ever expands. If the grown box no longer fits the frame along the
    expanded axis it is shifted, not shrunk; when even shifting cannot fit
    it, Unsatisfiable is raised and the caller falls back to the clamped
    input box.
    """
    if target_aspect <= 0:
        raise InvalidValue("target_aspect must be > 0")
    w, h = box.width, box.height
    desired_w = h * target_aspect
    if w < desired_w:
        cx = (box.x0 + box.x1) / 2.0
        grown = Box(cx - desired_w / 2.0, box.y0, cx + desired_w / 2.0, box.y1)
    elif w > desired_w:
        desired_h = w / target_aspect
        cy = (box.y0 + box.y1) / 2.0
        grown = Box(box.x0, cy - desired_h / 2.0, box.x1, cy + desired_h / 2.0)
    else:
        return box
    if grown.width - frame_w > _EDGE_TOLERANCE or grown.height - frame_h > _EDGE_TOLERANCE:
        raise Unsatisfiable(
            f"aspect {target_aspect} needs {grown.width:.1f}x{grown.height:.1f} "
            f"inside {frame_w}x{frame_h}"
        )
    shift_x = max(0.0, -grown.x0) - max(0.0, grown.x1 - frame_w)
    shift_y = max(0.0, -grown.y0) - max(0.0, grown.y1 - frame_h)
    shifted = Box(
        grown.x0 + shift_x, grown.y0 + shift_y, grown.x1 + shift_x, grown.y1 + shift_y
    )
    return clamp_box(shifted, frame_w, frame_h)


def make_crop_plan(
    box: Box,
    resize: tuple[int, int] | None,
    frame_w: float,
    frame_h: float,
) -> CropPlan:
    """Round the crop outward to whole pixels and fix the output size.

    Raises:
        DegenerateBox: the rounded crop has zero area.
    """
    crop = clamp_box(
        Box(math.floor(box.x0), math.floor(box.y0), math.ceil(box.x1), math.ceil(box.y1)),
        frame_w,
        frame_h,
    )
    crop_w = int(round(crop.width))
    crop_h = int(round(crop.height))
    if crop_w <= 0 or crop_h <= 0:
        raise DegenerateBox(f"crop {crop} has zero area")
    if resize is not None:
        out_w, out_h = resize
    else:
        out_w, out_h = crop_w, crop_h
    return CropPlan(crop=crop, output_width=out_w, output_height=out_h)
