"""Backend descriptors, toolkit sessions, and coordinate conversion.

Every backend emits frame-normalized coordinates (x and y in units of
frame width and height) no matter what its toolkit natively produces,
so the consumer never sees backend-specific conventions. What the
fourth (or third) channel means still differs per backend; each
descriptor documents its own mapping instead of pretending they agree.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Protocol, Sequence

from .config import BridgeConfig
from .errors import BridgeError, MediaUnreadable, ToolkitUnavailable
from .protocol import Frame

Rows = list[list[float]]


@dataclass(frozen=True, slots=True)
class BackendInfo:
    """Shape and semantics one backend reports for a whole session."""

    name: str
    toolkit: str
    num_keypoints: int
    channels: int
    channel_semantics: tuple[str, ...]
    confidence_note: str


# The holistic frame is four fixed blocks in this order. Body uses the
# first 22 of the tracker's 33 points (everything above the hips); the
# face mesh must be the plain 468-point variant, not the refined one.
HOLISTIC_BLOCKS = (("body", 22), ("face", 468), ("left_hand", 21), ("right_hand", 21))

BACKENDS = {
    "holistic": BackendInfo(
        name="holistic",
        toolkit="mediapipe",
        num_keypoints=sum(size for _, size in HOLISTIC_BLOCKS),
        channels=4,
        channel_semantics=("x", "y", "z", "visibility"),
        confidence_note=(
            "body points carry the tracker's per-point visibility; face and"
            " hand points have no native per-point score, so their fourth"
            " channel is 1.0 when the block was detected and 0.0 when absent"
        ),
    ),
    "topdown_pose": BackendInfo(
        name="topdown_pose",
        toolkit="mmpose",
        num_keypoints=17,
        channels=3,
        channel_semantics=("x", "y", "score"),
        confidence_note=(
            "the third channel is the head's per-keypoint confidence score,"
            " not a visibility flag; thresholds tuned against one backend do"
            " not transfer to the other"
        ),
    ),
}


class BackendSession(Protocol):
    """One loaded toolkit, answering frames until closed."""

    info: BackendInfo

    def infer(self, frame: Frame) -> Rows | None:
        """Landmark rows for one frame, or None when nothing was found."""

    def close(self) -> None: ...


def open_session(config: BridgeConfig) -> BackendSession:
    if config.backend == "holistic":
        return _HolisticSession(config)
    return _TopdownSession(config)


# --- pure conversion, shared by real sessions and their tests ---------------------


def assemble_holistic(
    body: Sequence[Sequence[float]] | None,
    face: Sequence[Sequence[float]] | None,
    left_hand: Sequence[Sequence[float]] | None,
    right_hand: Sequence[Sequence[float]] | None,
) -> Rows | None:
    """Combine per-block landmark lists into one fixed-layout frame.

    Each block is a sequence of (x, y, z, visibility) rows in
    frame-normalized coordinates, or None when the toolkit did not
    detect that block; missing blocks become all-zero rows. The body
    block may carry extra trailing points (the tracker emits 33) and is
    truncated to its slot. Returns None when every block is missing.

    Raises:
        BridgeError: when a present block has the wrong number of rows.
    """
    blocks = {"body": body, "face": face, "left_hand": left_hand, "right_hand": right_hand}
    if all(value is None for value in blocks.values()):
        return None
    rows: Rows = []
    for name, size in HOLISTIC_BLOCKS:
        block = blocks[name]
        if block is None:
            rows.extend([0.0, 0.0, 0.0, 0.0] for _ in range(size))
            continue
        if name == "body":
            block = block[:size]
        if len(block) != size:
            raise BridgeError(f"holistic {name} block has {len(block)} points, expected {size}")
        for point in block:
            x, y, z, visibility = (float(value) for value in point[:4])
            rows.append([x, y, z, visibility])
    return rows


def convert_topdown(
    keypoints: Sequence[Sequence[float]],
    scores: Sequence[float],
    width: int,
    height: int,
) -> Rows:
    """Map pixel-space (x, y) keypoints plus scores to normalized rows."""
    if len(keypoints) != len(scores):
        raise BridgeError(f"{len(keypoints)} keypoints but {len(scores)} scores")
    if width < 1 or height < 1:
        raise BridgeError(f"bad frame size {width}x{height}")
    return [
        [float(point[0]) / width, float(point[1]) / height, float(score)]
        for point, score in zip(keypoints, scores)
    ]


# --- toolkit sessions --------------------------------------------------------------


def _read_media_frame(path: str, frame_index: int):
    """Decode one RGB frame from media on disk, for file_ref transport."""
    try:
        import cv2
    except ImportError as exc:
        raise ToolkitUnavailable(f"file_ref frames need opencv to decode media: {exc}") from exc
    capture = cv2.VideoCapture(path)
    try:
        capture.set(cv2.CAP_PROP_POS_FRAMES, frame_index)
        ok, bgr = capture.read()
    finally:
        capture.release()
    if not ok:
        raise MediaUnreadable(f"could not decode frame {frame_index} of {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def _landmark_rows(block: Any, *, scored: bool) -> list[list[float]] | None:
    """Rows from one mediapipe landmark list, or None when absent.

    Blocks without native per-point scores get visibility 1.0; the
    tracker proto would otherwise report its unset default of 0.0 and
    make every detected point look invisible.
    """
    if block is None:
        return None
    return [
        [point.x, point.y, point.z, point.visibility if scored else 1.0]
        for point in block.landmark
    ]


class _HolisticSession:
    """Combined body, face, and hand landmarks via the holistic tracker."""

    def __init__(self, config: BridgeConfig) -> None:
        try:
            import mediapipe
            import numpy
        except ImportError as exc:
            raise ToolkitUnavailable(f"backend 'holistic' needs mediapipe and numpy: {exc}") from exc
        self.info = BACKENDS["holistic"]
        self._numpy = numpy
        params = dict(config.model_params)
        params.setdefault("static_image_mode", True)
        try:
            self._model = mediapipe.solutions.holistic.Holistic(**params)
        except Exception as exc:
            raise ToolkitUnavailable(f"holistic model failed to load: {exc}") from exc

    def infer(self, frame: Frame) -> Rows | None:
        result = self._model.process(self._image_for(frame))
        return assemble_holistic(
            body=_landmark_rows(result.pose_landmarks, scored=True),
            face=_landmark_rows(result.face_landmarks, scored=False),
            left_hand=_landmark_rows(result.left_hand_landmarks, scored=False),
            right_hand=_landmark_rows(result.right_hand_landmarks, scored=False),
        )

    def _image_for(self, frame: Frame):
        if frame.transport == "inline_rgb":
            flat = self._numpy.frombuffer(frame.data, dtype=self._numpy.uint8)
            return flat.reshape(frame.height, frame.width, 3)
        return _read_media_frame(frame.path, frame.frame_index)

    def close(self) -> None:
        self._model.close()


class _TopdownSession:
    """Single-person keypoints via a top-down pose estimation head."""

    def __init__(self, config: BridgeConfig) -> None:
        try:
            import numpy
            from mmpose.apis import MMPoseInferencer
        except ImportError as exc:
            raise ToolkitUnavailable(f"backend 'topdown_pose' needs mmpose and numpy: {exc}") from exc
        self.info = BACKENDS["topdown_pose"]
        self._numpy = numpy
        params = dict(config.model_params)
        model = params.pop("model", "human")
        try:
            self._inferencer = MMPoseInferencer(pose2d=model, device=config.device, **params)
        except Exception as exc:
            raise ToolkitUnavailable(f"topdown_pose model failed to load: {exc}") from exc

    def infer(self, frame: Frame) -> Rows | None:
        result = next(self._inferencer(self._image_for(frame), show=False))
        instances = (result.get("predictions") or [[]])[0]
        if not instances:
            return None
        best = max(
            instances,
            key=lambda inst: sum(float(score) for score in inst["keypoint_scores"]),
        )
        return convert_topdown(
            best["keypoints"], best["keypoint_scores"], frame.width, frame.height
        )

    def _image_for(self, frame: Frame):
        if frame.transport == "inline_rgb":
            flat = self._numpy.frombuffer(frame.data, dtype=self._numpy.uint8)
            return flat.reshape(frame.height, frame.width, 3)
        return _read_media_frame(frame.path, frame.frame_index)

    def close(self) -> None:
        pass
