#!/usr/bin/env python3
"""Wall-clock comparison of the process stage across worker counts.

Each configuration runs in its own output root with resume disabled so
every timing covers real work. Expect speedup only with real cores; on a
single-core machine the pool overhead makes W>1 slightly slower.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
from pathlib import Path

from signpipe.config import JobConfig
from signpipe.pipeline import execute_job


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", default="bench")
    parser.add_argument("--segments", type=int, default=400)
    parser.add_argument("--videos", type=int, default=50)
    parser.add_argument(
        "--workers", type=int, nargs="+", default=[1, 2, 4], help="worker counts to time"
    )
    parser.add_argument("--keypoints", type=int, default=11)
    args = parser.parse_args()

    workdir = Path(args.workdir)
    corpus = workdir / "corpus"
    subprocess.run(
        [
            sys.executable,
            str(Path(__file__).parent / "make_synthetic_dataset.py"),
            "--out",
            str(corpus),
            "--segments",
            str(args.segments),
            "--videos",
            str(args.videos),
        ],
        check=True,
        stdout=subprocess.DEVNULL,
    )

    print(f"{args.segments} segments, {args.keypoints} keypoints, {os.cpu_count()} cores")
    baseline = None
    for workers in args.workers:
        mapping = {
            "job_name": f"bench-w{workers}",
            "dataset": {
                "adapter_name": "transcript_json",
                "source_path": str(corpus / "segments.json"),
            },
            "processing": {
                "mode": "pose",
                "frame_rate_hz": 12.5,
                "detector": {"backend_name": "none"},
                "extractor": {
                    "backend_name": "synthetic",
                    "expected_keypoints": args.keypoints,
                    "channels": 4,
                },
            },
            "postprocess": {"enabled": True},
            "filter": {"require_text": True, "require_timing": True},
            "output": {"max_samples_per_shard": 1000, "max_bytes_per_shard": 1 << 30},
            "runtime": {
                "workers": workers,
                "seed": 7,
                "resume": False,
                "output_root": str(workdir / f"runs-w{workers}"),
            },
        }
        started = time.perf_counter()
        report = execute_job(JobConfig.from_mapping(mapping))
        elapsed = time.perf_counter() - started
        exported = json.loads((report.run_dir / "report.json").read_text())["totals"][
            "samples_exported"
        ]
        if baseline is None:
            baseline = elapsed
        print(
            f"  W={workers:<2} {elapsed:7.2f}s  ({exported} samples,"
            f" {elapsed / baseline:4.2f}x of W={args.workers[0]})"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
