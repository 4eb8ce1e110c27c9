#!/usr/bin/env python3
"""Generate a scripted demo corpus: media descriptors plus a transcript.

The output directory can be pointed at directly by a job file using the
transcript_json adapter, e.g.:

    dataset:
      adapter_name: transcript_json
      source_path: corpus/segments.json
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

from signpipe.mediaio import write_synthetic_descriptor


def build(args: argparse.Namespace) -> Path:
    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)

    for v in range(args.videos):
        box_w = args.width * rng.uniform(0.3, 0.6)
        box_h = args.height * rng.uniform(0.5, 0.8)
        x0 = rng.uniform(0, args.width - box_w)
        y0 = rng.uniform(0, args.height - box_h)
        write_synthetic_descriptor(
            root / f"vid-{v:03}.synth.json",
            duration_s=args.duration,
            fps=args.fps,
            width=args.width,
            height=args.height,
            scene=[
                {
                    "start_s": 0.0,
                    "end_s": args.duration,
                    "boxes": [[x0, y0, x0 + box_w, y0 + box_h]],
                }
            ],
        )

    entries = []
    for s in range(args.segments):
        v = s % args.videos
        start = round(rng.uniform(0, args.duration * 0.5), 3)
        end = round(min(start + rng.uniform(0.8, 4.0), args.duration), 3)
        entries.append(
            {
                "clip_id": f"vid-{v:03}-seg{s:04}",
                "video": f"vid-{v:03}",
                "start": start,
                "end": end,
                "transcript": f"synthetic caption number {s}",
                "split": "train" if s % 10 else "val",
            }
        )
    source = root / "segments.json"
    source.write_text(json.dumps({"segments": entries}, indent=1), encoding="utf-8")
    return source


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="corpus directory to create")
    parser.add_argument("--segments", type=int, default=50)
    parser.add_argument("--videos", type=int, default=8)
    parser.add_argument("--duration", type=float, default=12.0, help="seconds per video")
    parser.add_argument("--fps", type=float, default=25.0)
    parser.add_argument("--width", type=int, default=320)
    parser.add_argument("--height", type=int, default=240)
    parser.add_argument("--seed", type=int, default=7)
    source = build(parser.parse_args())
    print(source)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
