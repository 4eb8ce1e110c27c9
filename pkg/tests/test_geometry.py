"""Box math against brute-force oracles and the stated skip rules."""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signpipe.errors import DegenerateBox, EmptyInput, InvalidValue, Unsatisfiable
from signpipe.geometry import (
    MULTI_PERSON,
    NO_DETECTION,
    Box,
    CropPlan,
    Detection,
    Skip,
    clamp_box,
    expand_to_aspect,
    make_crop_plan,
    pad_box,
    select_signer_region,
    union_boxes,
)

FRAME_W, FRAME_H = 640.0, 480.0


def coords(max_value):
    return st.floats(0.0, max_value, allow_nan=False, allow_infinity=False)


@st.composite
def frame_boxes(draw, max_w=FRAME_W, max_h=FRAME_H):
    xa, xb = sorted((draw(coords(max_w)), draw(coords(max_w))))
    ya, yb = sorted((draw(coords(max_h)), draw(coords(max_h))))
    return Box(xa, ya, xb, yb)


def brute_force_union(boxes):
    xs0 = [b.x0 for b in boxes]
    ys0 = [b.y0 for b in boxes]
    xs1 = [b.x1 for b in boxes]
    ys1 = [b.y1 for b in boxes]
    return min(xs0), min(ys0), max(xs1), max(ys1)


# --- Box and union -----------------------------------------------------------

def test_box_rejects_inverted_corners():
    with pytest.raises(InvalidValue):
        Box(10, 0, 0, 10)


def test_box_rejects_non_finite():
    with pytest.raises(InvalidValue):
        Box(0, 0, math.inf, 10)


def test_union_example():
    got = union_boxes([Box(0, 0, 10, 10), Box(5, 5, 20, 15)])
    assert (got.x0, got.y0, got.x1, got.y1) == (0, 0, 20, 15)


def test_union_single_box_identity():
    box = Box(3, 4, 5, 6)
    assert union_boxes([box]) == box


def test_union_empty_input():
    with pytest.raises(EmptyInput):
        union_boxes([])


@settings(max_examples=100, deadline=None)
@given(st.lists(frame_boxes(), min_size=1, max_size=20))
def test_union_matches_brute_force(boxes):
    got = union_boxes(boxes)
    assert (got.x0, got.y0, got.x1, got.y1) == brute_force_union(boxes)
    for box in boxes:
        assert got.contains(box)


# --- padding -----------------------------------------------------------------

def test_pad_example():
    got = pad_box(Box(10, 10, 20, 20), 0.1, 100, 100)
    assert (got.x0, got.y0, got.x1, got.y1) == (9, 9, 21, 21)


def test_pad_zero_identity():
    box = Box(10, 10, 20, 20)
    assert pad_box(box, 0.0, 100, 100) == box


def test_pad_clamps_at_frame():
    got = pad_box(Box(0, 0, 100, 100), 0.5, 100, 100)
    assert (got.x0, got.y0, got.x1, got.y1) == (0, 0, 100, 100)


@settings(max_examples=100, deadline=None)
@given(frame_boxes(), st.floats(0.0, 2.0, allow_nan=False), st.floats(0.0, 2.0, allow_nan=False))
def test_pad_monotone_in_fraction(box, pad_a, pad_b):
    small, large = sorted((pad_a, pad_b))
    inner = pad_box(box, small, FRAME_W, FRAME_H)
    outer = pad_box(box, large, FRAME_W, FRAME_H)
    assert outer.contains(inner)
    assert Box(0, 0, FRAME_W, FRAME_H).contains(outer)


# --- signer-region selection -------------------------------------------------

def det(frame, x0, y0, x1, y1, score=0.9):
    return Detection(frame, Box(x0, y0, x1, y1), score)


def test_single_detection_per_frame_unions():
    region = select_signer_region({0: [det(0, 0, 0, 10, 10)], 1: [det(1, 5, 5, 20, 15)]})
    assert isinstance(region, Box)
    assert (region.x0, region.y0, region.x1, region.y1) == (0, 0, 20, 15)


def test_two_detections_same_frame_multi_person():
    region = select_signer_region({0: [det(0, 0, 0, 10, 10), det(0, 30, 30, 40, 40)]})
    assert region == Skip(MULTI_PERSON)


def test_no_detections_skipped():
    assert select_signer_region({0: [], 1: []}) == Skip(NO_DETECTION)
    assert select_signer_region({}) == Skip(NO_DETECTION)


def test_threshold_applies_before_multi_person_rule():
    region = select_signer_region(
        {0: [det(0, 0, 0, 10, 10, score=0.9), det(0, 30, 30, 40, 40, score=0.1)]},
        min_score=0.25,
    )
    assert isinstance(region, Box)


def test_all_below_threshold_is_no_detection():
    region = select_signer_region({0: [det(0, 0, 0, 10, 10, score=0.2)]}, min_score=0.25)
    assert region == Skip(NO_DETECTION)


@st.composite
def detection_maps(draw):
    n_frames = draw(st.integers(1, 6))
    result = {}
    for frame in range(n_frames):
        hits = draw(st.integers(0, 3))
        frame_dets = []
        for _ in range(hits):
            xa, xb = sorted((draw(coords(FRAME_W)), draw(coords(FRAME_W))))
            ya, yb = sorted((draw(coords(FRAME_H)), draw(coords(FRAME_H))))
            frame_dets.append(Detection(frame, Box(xa, ya, xb, yb),
                                        draw(st.floats(0.0, 1.0, allow_nan=False))))
        result[frame] = frame_dets
    return result


def census_oracle(detections, min_score):
    """Independent re-statement of the skip rules, built on per-frame counts."""
    counts = {}
    kept = []
    for frame, hits in detections.items():
        counts[frame] = 0
        for d in hits:
            if d.score >= min_score:
                counts[frame] += 1
                kept.append(d.box)
    if any(c >= 2 for c in counts.values()):
        return Skip(MULTI_PERSON)
    if all(c == 0 for c in counts.values()):
        return Skip(NO_DETECTION)
    return Box(*brute_force_union(kept))


@settings(max_examples=150, deadline=None)
@given(detection_maps(), st.floats(0.0, 1.0, allow_nan=False))
def test_selection_matches_census_oracle(detections, min_score):
    assert select_signer_region(detections, min_score) == census_oracle(detections, min_score)


@settings(max_examples=100, deadline=None)
@given(detection_maps())
def test_never_returns_box_for_multi_person_frame(detections):
    min_score = 0.25
    region = select_signer_region(detections, min_score)
    if isinstance(region, Box):
        for hits in detections.values():
            assert sum(1 for d in hits if d.score >= min_score) < 2


# --- aspect expansion --------------------------------------------------------

def test_expand_widens_then_shifts():
    got = expand_to_aspect(Box(0, 0, 10, 20), 1.0, 100, 100)
    assert (got.x0, got.y0, got.x1, got.y1) == (0, 0, 20, 20)


def test_expand_identity_at_target():
    box = Box(0, 0, 10, 10)
    assert expand_to_aspect(box, 1.0, 100, 100) == box


def test_expand_heightens_wide_box():
    got = expand_to_aspect(Box(0, 40, 40, 60), 1.0, 100, 100)
    assert (got.x0, got.x1) == (0, 40)
    assert got.height == pytest.approx(40)
    assert Box(0, 0, 100, 100).contains(got)


def test_expand_unsatisfiable():
    with pytest.raises(Unsatisfiable):
        expand_to_aspect(Box(0, 0, 90, 10), 0.5, 100, 100)


@settings(max_examples=100, deadline=None)
@given(frame_boxes(), st.floats(0.2, 5.0, allow_nan=False))
def test_expand_contains_input_and_frame_contains_output(box, aspect):
    try:
        grown = expand_to_aspect(box, aspect, FRAME_W, FRAME_H)
    except Unsatisfiable:
        return
    assert grown.contains(box, tolerance=1e-6)
    assert Box(0, 0, FRAME_W, FRAME_H).contains(grown)
    if grown.height > 1e-6 and box.width > 1e-9 and box.height > 1e-9:
        assert grown.width / grown.height == pytest.approx(aspect, rel=1e-3)


# --- crop plans ---------------------------------------------------------------

def test_crop_plan_rounds_outward():
    plan = make_crop_plan(Box(9.4, 9.4, 20.6, 20.6), None, 100, 100)
    assert (plan.crop.x0, plan.crop.y0, plan.crop.x1, plan.crop.y1) == (9, 9, 21, 21)
    assert (plan.output_width, plan.output_height) == (12, 12)


def test_crop_plan_resize_overrides_dims():
    plan = make_crop_plan(Box(9.4, 9.4, 20.6, 20.6), (224, 224), 100, 100)
    assert (plan.output_width, plan.output_height) == (224, 224)


def test_crop_plan_degenerate():
    with pytest.raises(DegenerateBox):
        make_crop_plan(Box(5, 5, 5, 5), None, 100, 100)


@settings(max_examples=100, deadline=None)
@given(frame_boxes())
def test_crop_plan_integer_aligned_and_contained(box):
    try:
        plan = make_crop_plan(box, None, FRAME_W, FRAME_H)
    except DegenerateBox:
        assert box.width < 1 or box.height < 1
        return
    crop = plan.crop
    for value in (crop.x0, crop.y0, crop.x1, crop.y1):
        assert value == int(value)
    assert Box(0, 0, FRAME_W, FRAME_H).contains(crop)
    assert crop.contains(clamp_box(box, FRAME_W, FRAME_H))
    assert isinstance(plan, CropPlan)


def test_random_unions_against_oracle_bulk():
    rng = random.Random(7)
    for _ in range(200):
        boxes = []
        for _ in range(rng.randint(1, 30)):
            xa, xb = sorted((rng.uniform(0, FRAME_W), rng.uniform(0, FRAME_W)))
            ya, yb = sorted((rng.uniform(0, FRAME_H), rng.uniform(0, FRAME_H)))
            boxes.append(Box(xa, ya, xb, yb))
        got = union_boxes(boxes)
        assert (got.x0, got.y0, got.x1, got.y1) == brute_force_union(boxes)
