"""Shared fixtures: a synthetic corpus builder and job config factory.

The corpus is a directory of scripted media descriptors plus a transcript
source, small enough that whole runs finish in well under a second each
but varied enough to exercise detection, rejection, and sharding paths.
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from signpipe.config import JobConfig
from signpipe.mediaio import write_synthetic_descriptor


def build_corpus(
    root: Path,
    *,
    segments: int = 12,
    videos: int = 4,
    duration_s: float = 12.0,
    fps: float = 25.0,
    width: int = 320,
    height: int = 240,
    span_length_s: float | None = None,
) -> Path:
    """Write scripted media plus a transcript source; returns the transcript path.

    Segments are dealt round-robin across videos with staggered spans of
    slightly varying length, or all of span_length_s when it is given.
    """
    root.mkdir(parents=True, exist_ok=True)
    for v in range(videos):
        write_synthetic_descriptor(
            root / f"vid-{v:03}.synth.json",
            duration_s=duration_s,
            fps=fps,
            width=width,
            height=height,
            scene=[
                {
                    "start_s": 0.0,
                    "end_s": duration_s,
                    "boxes": [[width * 0.2, height * 0.1, width * 0.8, height * 0.9]],
                }
            ],
        )
    entries = []
    for s in range(segments):
        v = s % videos
        start = 0.25 * (s // videos)
        length = span_length_s if span_length_s is not None else 1.0 + 0.125 * (s % 3)
        end = min(start + length, duration_s)
        entries.append(
            {
                "clip_id": f"vid-{v:03}-seg{s:03}",
                "video": f"vid-{v:03}",
                "start": round(start, 3),
                "end": round(end, 3),
                "transcript": f"synthetic caption {s}",
                "split": "train" if s % 5 else "val",
            }
        )
    source = root / "segments.json"
    source.write_text(json.dumps({"segments": entries}, indent=1), encoding="utf-8")
    return source


def base_job_mapping(source: Path, output_root: Path, **runtime) -> dict:
    """Job mapping against the synthetic corpus; kwargs override runtime keys."""
    runtime_section = {
        "workers": 1,
        "seed": 7,
        "resume": True,
        "output_root": str(output_root),
    }
    runtime_section.update(runtime)
    return {
        "job_name": "synthetic-smoke",
        "dataset": {
            "adapter_name": "transcript_json",
            "source_path": str(source),
            "params": {},
        },
        "processing": {
            "mode": "pose",
            "frame_rate_hz": 12.5,
            "detector": {"backend_name": "scripted", "sample_stride": 2},
            "extractor": {
                "backend_name": "synthetic",
                "expected_keypoints": 11,
                "channels": 4,
            },
        },
        "postprocess": {
            "enabled": True,
            "normalize": {"scope": "per_clip"},
            "flatten": False,
            "mask_invisible": False,
        },
        "filter": {"require_text": True, "require_timing": True},
        "output": {
            "format": "webdataset",
            "max_samples_per_shard": 5,
            "max_bytes_per_shard": 50_000_000,
        },
        "runtime": runtime_section,
    }


@pytest.fixture
def corpus(tmp_path: Path) -> Path:
    return build_corpus(tmp_path / "corpus")


@pytest.fixture
def job_config(corpus: Path, tmp_path: Path) -> JobConfig:
    mapping = base_job_mapping(corpus, tmp_path / "runs")
    return JobConfig.from_mapping(mapping)
