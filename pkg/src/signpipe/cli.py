"""Command-line front end.

Exit codes are stable so wrappers can branch on them: 0 success, 2 for
anything wrong with inputs (bad config, unreadable file, bad arguments),
3 for a stage that failed at runtime, 4 for shard verification findings.
Every failure also prints a single ``signpipe: error: ...`` line on
stderr so log scrapers need no multi-line parsing.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import load_config, load_experiment
from .errors import MalformedShard, SignpipeError, StageFailure
from .export import read_shard_index, read_shards
from .manifest import read_manifest_csv
from .pipeline import execute_experiment, execute_job
from .registry import KINDS, default_registry

OUTPUT_ROOT_ENV = "SIGNPIPE_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_STAGE = 3
EXIT_VERIFY = 4


def _fail(message: str, code: int) -> int:
    print(f"signpipe: error: {message}", file=sys.stderr)
    return code


def _parse_set_pairs(pairs: list[str]) -> dict[str, object]:
    overrides: dict[str, object] = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise ValueError(f"--set expects dotted.path=value, got '{pair}'")
        overrides[key] = yaml.safe_load(raw) if raw != "" else ""
    return overrides


def _runtime_overrides(args: argparse.Namespace) -> dict[str, object]:
    overrides: dict[str, object] = {}
    output_root = args.output_root or os.environ.get(OUTPUT_ROOT_ENV)
    if output_root:
        overrides["runtime.output_root"] = output_root
    if args.workers is not None:
        overrides["runtime.workers"] = args.workers
    if args.no_resume:
        overrides["runtime.resume"] = False
    return overrides


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.job)
        overrides = _runtime_overrides(args)
        overrides.update(_parse_set_pairs(args.set or []))
        if overrides:
            config = config.with_overrides(overrides)
    except (SignpipeError, ValueError) as exc:
        return _fail(str(exc), EXIT_USAGE)
    try:
        report = execute_job(config)
    except StageFailure as exc:
        return _fail(str(exc), EXIT_STAGE)
    print(report.run_dir / "report.json")
    return EXIT_OK


def _cmd_experiment(args: argparse.Namespace) -> int:
    try:
        experiment = load_experiment(args.file)
        if args.continue_on_error:
            experiment = type(experiment)(
                experiment_name=experiment.experiment_name,
                jobs=experiment.jobs,
                continue_on_error=True,
            )
        output_root = args.output_root or os.environ.get(OUTPUT_ROOT_ENV)
        results = execute_experiment(
            experiment,
            base_dir=Path(args.file).parent,
            output_root=output_root or None,
        )
    except SignpipeError as exc:
        return _fail(str(exc), EXIT_USAGE)
    for result in results:
        if result.report is not None:
            print(result.report.run_dir / "report.json")
    failures = [r for r in results if not r.ok]
    if failures:
        return _fail(failures[0].error or "job failed", EXIT_STAGE)
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.job)
    except SignpipeError as exc:
        return _fail(str(exc), EXIT_USAGE)
    print(f"{config.job_name}: valid")
    return EXIT_OK


def _cmd_manifest_inspect(args: argparse.Namespace) -> int:
    try:
        manifest = read_manifest_csv(args.file)
    except (SignpipeError, OSError) as exc:
        return _fail(f"cannot read manifest {args.file}: {exc}", EXIT_USAGE)
    records = manifest.records
    summary: dict[str, object] = {"records": len(records)}
    if args.stats:
        splits: dict[str, int] = {}
        for record in records:
            label = record.split if record.split is not None else "(none)"
            splits[label] = splits.get(label, 0) + 1
        durations = [
            record.end_s - record.start_s
            for record in records
            if record.start_s is not None and record.end_s is not None
        ]
        quartiles = None
        if durations:
            q = np.percentile(np.asarray(durations, dtype=np.float64), [0, 25, 50, 75, 100])
            quartiles = {
                "min": round(float(q[0]), 6),
                "q25": round(float(q[1]), 6),
                "median": round(float(q[2]), 6),
                "q75": round(float(q[3]), 6),
                "max": round(float(q[4]), 6),
            }
        missing = {
            field: sum(1 for r in records if getattr(r, field) is None)
            for field in ("text", "split", "signer_id", "bbox", "start_s", "end_s")
        }
        summary.update(
            {
                "splits": dict(sorted(splits.items())),
                "duration_quartiles": quartiles,
                "missing": missing,
            }
        )
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_shards_verify(args: argparse.Namespace) -> int:
    shard_dir = Path(args.dir)
    index_path = shard_dir / "shards.json"
    try:
        index = read_shard_index(index_path)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(f"cannot read shard index {index_path}: {exc}", EXIT_USAGE)

    findings: list[str] = []
    seen_keys: dict[str, str] = {}
    listed = {entry.path for entry in index.shards}
    for entry in index.shards:
        path = shard_dir / entry.path
        if not path.is_file():
            findings.append(f"{entry.path}: listed in index but missing on disk")
            continue
        actual_bytes = path.stat().st_size
        if actual_bytes != entry.bytes:
            findings.append(
                f"{entry.path}: index records {entry.bytes} bytes, file has {actual_bytes}"
            )
        try:
            count = 0
            for record in read_shards([path]):
                count += 1
                prior = seen_keys.get(record.key)
                if prior is not None:
                    findings.append(
                        f"{entry.path}: key '{record.key}' already appeared in {prior}"
                    )
                else:
                    seen_keys[record.key] = entry.path
            if count != entry.count:
                findings.append(
                    f"{entry.path}: index records {entry.count} samples, read {count}"
                )
        except (MalformedShard, SignpipeError) as exc:
            findings.append(f"{entry.path}: {exc}")
    for stray in sorted(p.name for p in shard_dir.glob("*.tar")):
        if stray not in listed:
            findings.append(f"{stray}: on disk but absent from the index")

    if findings:
        for line in findings:
            print(line)
        return _fail(f"{len(findings)} shard discrepancies in {shard_dir}", EXIT_VERIFY)
    print(f"{len(index.shards)} shards, {index.total_samples} samples: consistent")
    return EXIT_OK


def _cmd_registry_list(_args: argparse.Namespace) -> int:
    registry = default_registry()
    listing = {kind: sorted(registry.list(kind)) for kind in KINDS}
    print(json.dumps(listing, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signpipe", description="Corpus preprocessing runs, verified and resumable."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one job file")
    run.add_argument("--job", required=True, help="path to the job YAML")
    run.add_argument("--workers", type=int, default=None, help="override runtime.workers")
    run.add_argument(
        "--no-resume", action="store_true", help="ignore checkpoints and re-execute everything"
    )
    run.add_argument(
        "--output-root",
        default=None,
        help=f"run directory root (falls back to ${OUTPUT_ROOT_ENV}, then the job file)",
    )
    run.add_argument(
        "--set",
        action="append",
        metavar="PATH=VALUE",
        help="dotted config override, highest precedence; repeatable",
    )
    run.set_defaults(func=_cmd_run)

    experiment = sub.add_parser("experiment", help="execute an ordered list of jobs")
    experiment.add_argument("--file", required=True, help="path to the experiment YAML")
    experiment.add_argument(
        "--continue-on-error",
        action="store_true",
        help="keep running remaining jobs after a failure",
    )
    experiment.add_argument("--output-root", default=None)
    experiment.set_defaults(func=_cmd_experiment)

    validate = sub.add_parser("validate", help="check a job file without running it")
    validate.add_argument("--job", required=True)
    validate.set_defaults(func=_cmd_validate)

    inspect = sub.add_parser("manifest-inspect", help="summarize a manifest CSV")
    inspect.add_argument("--file", required=True)
    inspect.add_argument(
        "--stats", action="store_true", help="add split, duration, and missing-field stats"
    )
    inspect.set_defaults(func=_cmd_manifest_inspect)

    verify = sub.add_parser("shards-verify", help="re-read shards and check them against the index")
    verify.add_argument("--dir", required=True, help="directory holding shards.json and *.tar")
    verify.set_defaults(func=_cmd_shards_verify)

    registry = sub.add_parser("registry-list", help="print registered component names")
    registry.set_defaults(func=_cmd_registry_list)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
