"""Run orchestration: the ordered stage sequence with checkpoint markers.

A run executes manifest, process, postprocess, and export in order inside
a deterministic run directory. Each stage writes to run_dir/tmp/{stage}
first, renames into place on success, and records a marker last, so a
crash can never leave partial outputs that look complete. On resume a
stage is skipped when its recomputed input hash matches the persisted
marker; sibling run directories under the same output root are also
consulted, which is what lets a config change re-execute only the stages
whose hash actually moved.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from . import adapters as adapters_mod
from .config import ExperimentConfig, JobConfig, config_hash, load_config
from .errors import InvalidValue, NoValidPoints, StageFailure, WriteFailure
from .export import (
    SampleRecord,
    ShardIndex,
    ShardSpec,
    encode_array,
    merge_indexes,
    read_shard_index,
    sanitize_key,
    write_shard_index,
    write_shards,
)
from .manifest import (
    Manifest,
    Reject,
    append_rejects_csv,
    filter_segments,
    manifest_hash,
    read_manifest_csv,
    write_manifest_csv,
)
from .posepost import LandmarkClip, load_preset, standard_chain
from .registry import Registry, default_registry
from .workers import process_partition, read_sidecar, write_sidecar

STAGES = ("manifest", "process", "postprocess", "export")

# Config subtree feeding each stage hash. Runtime feeds no hash at all,
# so worker count and similar knobs never invalidate checkpoints. The
# manifest stage's *recorded* marker uses the content hash of the retained
# manifest rather than its subtree hash; a manifest that comes out
# identical keeps every downstream checkpoint valid no matter which
# dataset or filter edits produced it.
STAGE_SECTIONS = {
    "manifest": ("dataset", "filter"),
    "process": ("processing",),
    "postprocess": ("postprocess",),
    "export": ("output",),
}

# Completed-output location per stage, relative to the run directory.
STAGE_OUTPUTS = {
    "manifest": "manifest.csv",
    "process": "process",
    "postprocess": "postprocess",
    "export": "shards",
}

DEFAULT_OUTPUT_ROOT = "runs"
PAUSE_ENV = "SIGNPIPE_STAGE_PAUSE_S"

_UNSAFE_RUN_CHARS = re.compile(r"[^A-Za-z0-9._-]")


@dataclass(frozen=True, slots=True)
class StageMarker:
    """Persisted completion record for one stage."""

    stage: str
    input_hash: str
    completed_at: str
    counts: dict[str, int]

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise InvalidValue(f"unknown stage '{self.stage}'")
        expected = {"in", "out", "rejected"}
        if set(self.counts) != expected:
            raise InvalidValue(f"marker counts must have exactly {sorted(expected)}")
        if self.counts["in"] != self.counts["out"] + self.counts["rejected"]:
            raise InvalidValue(
                f"stage {self.stage}: counts {self.counts} break in = out + rejected"
            )

    def to_mapping(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "input_hash": self.input_hash,
            "completed_at": self.completed_at,
            "counts": dict(self.counts),
        }

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "StageMarker":
        return cls(
            stage=str(data["stage"]),
            input_hash=str(data["input_hash"]),
            completed_at=str(data["completed_at"]),
            counts={k: int(v) for k, v in data["counts"].items()},
        )


@dataclass(slots=True)
class RunContext:
    """Everything a run accumulates while its stages execute."""

    config: JobConfig
    run_id: str
    run_dir: Path
    registry: Registry
    manifest: Manifest | None = None
    stage_records: list[StageMarker] = field(default_factory=list)
    rejects: list[tuple[str, str, str]] = field(default_factory=list)


@dataclass(frozen=True, slots=True)
class RunReport:
    run_id: str
    run_dir: Path
    job_name: str
    config_digest: str
    stages: tuple[StageMarker, ...]
    reject_reasons: dict[str, int]
    shards: ShardIndex

    def to_mapping(self) -> dict[str, Any]:
        """Report payload; deliberately free of timestamps and local paths."""
        total_rejected = sum(m.counts["rejected"] for m in self.stages)
        exported = self.stages[-1].counts["out"] if self.stages else 0
        segments = self.stages[0].counts["in"] if self.stages else 0
        return {
            "run_id": self.run_id,
            "job_name": self.job_name,
            "config_hash": self.config_digest,
            "stages": [
                {"stage": m.stage, "input_hash": m.input_hash, "counts": dict(m.counts)}
                for m in self.stages
            ],
            "rejects": dict(sorted(self.reject_reasons.items())),
            "shards": self.shards.to_mapping(),
            "totals": {
                "segments_in": segments,
                "samples_exported": exported,
                "rejected": total_rejected,
            },
        }


def run_id(config: JobConfig) -> str:
    """Deterministic run name: sanitized job name plus 12 config-hash chars."""
    safe = _UNSAFE_RUN_CHARS.sub("_", config.job_name)
    return f"{safe}-{config_hash(config).hex()[:12]}"


def stage_hash(stage: str, config: JobConfig, upstream_hash: bytes) -> bytes:
    """Chain digest: stage name, its config subtree hash, then upstream."""
    if stage not in STAGE_SECTIONS:
        raise InvalidValue(f"unknown stage '{stage}'")
    digest = hashlib.sha256()
    digest.update(stage.encode("utf-8"))
    for section in STAGE_SECTIONS[stage]:
        digest.update(config_hash(config, section))
    digest.update(upstream_hash)
    return digest.digest()


def partition_work(segments: list, workers: int) -> list[list]:
    """Deal segment i to worker i mod workers, preserving in-worker order."""
    if workers < 1:
        raise InvalidValue(f"workers must be >= 1, got {workers}")
    return [list(segments[w::workers]) for w in range(workers)]


def record_reject(run_dir: Path, sample_id: str, stage: str, reason: str) -> None:
    """Append one row to the run's accumulating rejects.csv."""
    try:
        append_rejects_csv(run_dir / "rejects.csv", stage, [Reject(sample_id, reason)])
    except OSError as exc:
        raise WriteFailure(f"cannot append to rejects.csv: {exc}") from exc


# --- marker and layout helpers -----------------------------------------------------


def _marker_path(run_dir: Path, stage: str) -> Path:
    return run_dir / "checkpoints" / f"stage.{stage}.json"


def _stage_rejects_path(run_dir: Path, stage: str) -> Path:
    return run_dir / "checkpoints" / f"rejects.{stage}.csv"


def _load_marker(run_dir: Path, stage: str) -> StageMarker | None:
    path = _marker_path(run_dir, stage)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return StageMarker.from_mapping(data)
    except (OSError, ValueError, KeyError, InvalidValue):
        return None


def _write_marker(run_dir: Path, marker: StageMarker) -> None:
    path = _marker_path(run_dir, marker.stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(
        json.dumps(marker.to_mapping(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    os.replace(tmp, path)


def _outputs_present(run_dir: Path, stage: str) -> bool:
    target = run_dir / STAGE_OUTPUTS[stage]
    if stage == "manifest":
        return target.is_file()
    if stage == "export":
        return target.is_dir() and (target / "shards.json").is_file()
    return target.is_dir()


def _clear_stage(run_dir: Path, stage: str) -> None:
    """Remove a stage's marker first, then any stale completed outputs."""
    _marker_path(run_dir, stage).unlink(missing_ok=True)
    _stage_rejects_path(run_dir, stage).unlink(missing_ok=True)
    target = run_dir / STAGE_OUTPUTS[stage]
    if target.is_dir():
        shutil.rmtree(target)
    else:
        target.unlink(missing_ok=True)


def _pause_hook() -> None:
    raw = os.environ.get(PAUSE_ENV)
    if raw:
        time.sleep(float(raw))


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def _promote(tmp_target: Path, final_target: Path) -> None:
    final_target.parent.mkdir(parents=True, exist_ok=True)
    os.replace(tmp_target, final_target)


# --- donor reuse across sibling runs --------------------------------------------------


def _find_donor(output_root: Path, own_dir: Path, stage: str, hash_hex: str) -> Path | None:
    """Sibling run dir whose completed stage has the same input hash.

    Newest marker wins so repeated experiments keep borrowing from the
    most recent compatible run; ties break on path for determinism.
    """
    candidates: list[tuple[str, str, Path]] = []
    try:
        siblings = sorted(p for p in output_root.iterdir() if p.is_dir())
    except OSError:
        return None
    for sibling in siblings:
        if sibling == own_dir:
            continue
        marker = _load_marker(sibling, stage)
        if marker is None or marker.input_hash != hash_hex:
            continue
        if not _outputs_present(sibling, stage):
            continue
        candidates.append((marker.completed_at, str(sibling), sibling))
    if not candidates:
        return None
    return max(candidates)[2]


def _adopt_donor(run_dir: Path, donor_dir: Path, stage: str) -> StageMarker:
    """Copy a sibling's completed stage: outputs, reject rows, marker last."""
    _clear_stage(run_dir, stage)
    source = donor_dir / STAGE_OUTPUTS[stage]
    target = run_dir / STAGE_OUTPUTS[stage]
    staging = run_dir / "tmp" / f"{stage}.donor"
    if staging.is_dir():
        shutil.rmtree(staging)
    elif staging.exists():
        staging.unlink()
    staging.parent.mkdir(parents=True, exist_ok=True)
    if source.is_dir():
        shutil.copytree(source, staging)
    else:
        shutil.copyfile(source, staging)
    _promote(staging, target)
    donor_rejects = _stage_rejects_path(donor_dir, stage)
    if donor_rejects.is_file():
        _stage_rejects_path(run_dir, stage).parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(donor_rejects, _stage_rejects_path(run_dir, stage))
    marker = _load_marker(donor_dir, stage)
    assert marker is not None
    _write_marker(run_dir, StageMarker.from_mapping(marker.to_mapping()))
    return marker


# --- stage executors -----------------------------------------------------------------


def _manifest_counts(rows_in: int, retained: int, rejected: int) -> dict[str, int]:
    return {"in": rows_in, "out": retained, "rejected": rejected}


def _build_manifest(config: JobConfig, registry: Registry) -> tuple[Manifest, list[Reject], int]:
    manifest, ingest_rejects = adapters_mod.ingest(
        config.dataset.adapter_name,
        config.dataset.source_path,
        config.dataset.params,
        registry=registry,
    )
    retained, filter_rejects = filter_segments(manifest, config.filter)
    rows_in = len(manifest.records) + len(ingest_rejects)
    return retained, ingest_rejects + filter_rejects, rows_in


def _surviving_keys(ctx: RunContext, stage_dir: Path) -> list[tuple[str, dict[str, Any]]]:
    """Sidecars present in a stage dir, ordered by the persisted manifest."""
    manifest = read_manifest_csv(ctx.run_dir / "manifest.csv")
    out = []
    for record in manifest.records:
        key = sanitize_key(record.sample_id)
        sidecar_path = stage_dir / f"{key}.meta.json"
        if sidecar_path.is_file():
            out.append((key, read_sidecar(sidecar_path)))
    return out


def _run_process_stage(ctx: RunContext, tmp_dir: Path) -> tuple[dict[str, int], list[Reject]]:
    manifest = read_manifest_csv(ctx.run_dir / "manifest.csv")
    records = list(manifest.records)
    workers = ctx.config.runtime.workers
    config_mapping = ctx.config.to_mapping()

    outcomes: list[tuple[int, str, str | None, str | None]] = []
    if workers == 1 or len(records) <= 1:
        outcomes = process_partition(
            config_mapping, records, list(range(len(records))), str(tmp_dir)
        )
    else:
        partitions = partition_work(list(enumerate(records)), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(
                    process_partition,
                    config_mapping,
                    [record for _, record in part],
                    [index for index, _ in part],
                    str(tmp_dir),
                )
                for part in partitions
                if part
            ]
            for future in futures:
                outcomes.extend(future.result())
    outcomes.sort(key=lambda item: item[0])

    rejects = [
        Reject(sample_id, reason) for _, sample_id, _, reason in outcomes if reason is not None
    ]
    ok = sum(1 for _, _, key, reason in outcomes if reason is None)
    counts = {"in": len(records), "out": ok, "rejected": len(rejects)}
    return counts, rejects


def _run_postprocess_stage(ctx: RunContext, tmp_dir: Path) -> tuple[dict[str, int], list[Reject]]:
    config = ctx.config
    survivors = _surviving_keys(ctx, ctx.run_dir / "process")
    rejects: list[Reject] = []
    out = 0
    post = config.postprocess
    transform = post.enabled and config.processing.mode == "pose"
    preset = load_preset(post.preset_name) if (transform and post.preset_name) else None

    for key, sidecar in survivors:
        source_dir = ctx.run_dir / "process"
        payload_file = sidecar["payload_file"]
        if not transform:
            shutil.copyfile(source_dir / payload_file, tmp_dir / payload_file)
            write_sidecar(tmp_dir / f"{key}.meta.json", sidecar)
            out += 1
            continue
        data = np.load(source_dir / payload_file)
        clip = LandmarkClip(
            data=data,
            channel_semantics=tuple(sidecar["channel_semantics"]),
            space=sidecar["space"],
            backend_name=sidecar["backend_name"],
            fps=float(sidecar["fps"]),
            sample_id=sidecar["sample_id"],
        )
        try:
            transformed, array, zeroed = standard_chain(
                clip,
                preset=preset,
                mask_low_visibility=post.mask_invisible,
                normalize_scope=post.normalize.scope,
                visibility_threshold=post.normalize.visibility_threshold,
                epsilon=post.normalize.epsilon,
                flatten_output=post.flatten,
            )
        except NoValidPoints:
            rejects.append(Reject(sidecar["sample_id"], "NoValidPoints"))
            continue
        (tmp_dir / payload_file).write_bytes(encode_array(array))
        updated = dict(sidecar)
        updated.update(
            {
                "space": transformed.space,
                "channel_semantics": list(transformed.channel_semantics),
                "flattened": post.flatten,
                "keypoints": int(transformed.data.shape[1]),
                "channels": int(transformed.data.shape[2]),
                "zeroed_frames": zeroed,
            }
        )
        write_sidecar(tmp_dir / f"{key}.meta.json", updated)
        out += 1
    counts = {"in": len(survivors), "out": out, "rejected": len(rejects)}
    return counts, rejects


def _run_export_stage(ctx: RunContext, tmp_dir: Path) -> tuple[dict[str, int], list[Reject]]:
    config = ctx.config
    source_dir = ctx.run_dir / "postprocess"
    survivors = _surviving_keys(ctx, source_dir)
    samples: list[SampleRecord] = []
    for key, sidecar in survivors:
        payload = (source_dir / sidecar["payload_file"]).read_bytes()
        samples.append(
            SampleRecord.build(
                sample_id=sidecar["sample_id"],
                video_id=sidecar["video_id"],
                start_s=float(sidecar["start_s"]),
                end_s=float(sidecar["end_s"]),
                processor=sidecar["processor"],
                payloads={sidecar["payload_ext"]: payload},
                caption=sidecar.get("text"),
                split=sidecar.get("split"),
            )
        )
    workers = ctx.config.runtime.workers
    indexes = []
    for worker_id, part in enumerate(partition_work(samples, workers)):
        spec = ShardSpec(
            max_samples=config.output.max_samples_per_shard,
            max_bytes=config.output.max_bytes_per_shard,
            worker_id=worker_id,
        )
        indexes.append(write_shards(part, spec, tmp_dir))
    merged = merge_indexes(indexes)
    write_shard_index(merged, tmp_dir / "shards.json")
    counts = {"in": len(samples), "out": merged.total_samples, "rejected": 0}
    return counts, []


# --- the run driver ------------------------------------------------------------------


def _complete_stage(
    ctx: RunContext,
    stage: str,
    hash_hex: str,
    executor: Callable[[Path], tuple[dict[str, int], list[Reject]]],
    *,
    resume: bool,
    output_root: Path,
) -> StageMarker:
    """Skip, adopt, or execute one stage; returns its marker either way."""
    run_dir = ctx.run_dir
    own = _load_marker(run_dir, stage)
    if resume and own is not None and own.input_hash == hash_hex and _outputs_present(run_dir, stage):
        _append_stage_rejects(ctx, stage)
        return own
    if resume:
        donor = _find_donor(output_root, run_dir, stage, hash_hex)
        if donor is not None:
            marker = _adopt_donor(run_dir, donor, stage)
            _append_stage_rejects(ctx, stage)
            return marker

    _pause_hook()
    _clear_stage(run_dir, stage)
    tmp_dir = run_dir / "tmp" / stage
    if tmp_dir.exists():
        shutil.rmtree(tmp_dir)
    tmp_dir.mkdir(parents=True)
    try:
        counts, rejects = executor(tmp_dir)
    except StageFailure:
        raise
    except Exception as exc:
        raise StageFailure(stage, exc) from exc

    for reject in rejects:
        record_reject(run_dir, reject.sample_id, stage, reject.reason)
        ctx.rejects.append((reject.sample_id, stage, reject.reason))
    if rejects:
        append_rejects_csv(_stage_rejects_path(run_dir, stage), stage, rejects)

    if stage == "manifest":
        _promote(tmp_dir / "manifest.csv", run_dir / STAGE_OUTPUTS[stage])
        shutil.rmtree(tmp_dir, ignore_errors=True)
    else:
        _promote(tmp_dir, run_dir / STAGE_OUTPUTS[stage])
    marker = StageMarker(
        stage=stage, input_hash=hash_hex, completed_at=_timestamp(), counts=counts
    )
    _write_marker(run_dir, marker)
    return marker


def _append_stage_rejects(ctx: RunContext, stage: str) -> None:
    """Replay a completed stage's persisted reject rows into this run's log."""
    path = _stage_rejects_path(ctx.run_dir, stage)
    if not path.is_file():
        return
    import csv

    with open(path, newline="", encoding="utf-8") as handle:
        for row in list(csv.DictReader(handle)):
            record_reject(ctx.run_dir, row["sample_id"], row["stage"], row["reason"])
            ctx.rejects.append((row["sample_id"], row["stage"], row["reason"]))


def execute_job(
    config: JobConfig,
    *,
    output_root: str | Path | None = None,
    registry: Registry | None = None,
) -> RunReport:
    """Run all four stages for one job and write its report.

    Raises:
        StageFailure: a stage failed; its partial outputs stay quarantined
            under run_dir/tmp and its marker is absent.
    """
    registry = registry or default_registry()
    root = Path(output_root or config.runtime.output_root or DEFAULT_OUTPUT_ROOT)
    rid = run_id(config)
    run_dir = root / rid
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "checkpoints").mkdir(exist_ok=True)
    ctx = RunContext(config=config, run_id=rid, run_dir=run_dir, registry=registry)
    resume = config.runtime.resume

    # The run's reject log restarts each attempt; completed stages replay
    # their persisted rows so the file always reflects live state.
    (run_dir / "rejects.csv").unlink(missing_ok=True)

    try:
        retained, manifest_rejects, rows_in = _build_manifest(config, registry)
    except Exception as exc:
        raise StageFailure("manifest", exc) from exc
    ctx.manifest = retained
    mhash = manifest_hash(retained)

    def manifest_executor(tmp_dir: Path) -> tuple[dict[str, int], list[Reject]]:
        write_manifest_csv(retained, tmp_dir / "manifest.csv")
        counts = _manifest_counts(rows_in, len(retained.records), len(manifest_rejects))
        return counts, manifest_rejects

    marker = _complete_stage(
        ctx, "manifest", mhash.hex(), manifest_executor, resume=resume, output_root=root
    )
    ctx.stage_records.append(marker)

    upstream = mhash
    executors = {
        "process": lambda tmp: _run_process_stage(ctx, tmp),
        "postprocess": lambda tmp: _run_postprocess_stage(ctx, tmp),
        "export": lambda tmp: _run_export_stage(ctx, tmp),
    }
    for stage in STAGES[1:]:
        digest = stage_hash(stage, config, upstream)
        marker = _complete_stage(
            ctx, stage, digest.hex(), executors[stage], resume=resume, output_root=root
        )
        ctx.stage_records.append(marker)
        upstream = digest

    for marker in ctx.stage_records:
        if marker.counts["in"] != marker.counts["out"] + marker.counts["rejected"]:
            raise StageFailure(marker.stage, InvalidValue("marker counts do not balance"))

    shards = read_shard_index(run_dir / "shards" / "shards.json")
    reasons: dict[str, int] = {}
    for _, _, reason in ctx.rejects:
        reasons[reason] = reasons.get(reason, 0) + 1
    report = RunReport(
        run_id=rid,
        run_dir=run_dir,
        job_name=config.job_name,
        config_digest=config_hash(config).hex(),
        stages=tuple(ctx.stage_records),
        reject_reasons=reasons,
        shards=shards,
    )
    report_path = run_dir / "report.json"
    tmp_report = run_dir / "tmp" / "report.json"
    tmp_report.parent.mkdir(exist_ok=True)
    tmp_report.write_text(
        json.dumps(report.to_mapping(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    os.replace(tmp_report, report_path)
    return report


@dataclass(frozen=True, slots=True)
class JobResult:
    job_name: str
    report: RunReport | None
    error: str | None

    @property
    def ok(self) -> bool:
        return self.error is None


def resolve_experiment_jobs(
    experiment: ExperimentConfig, base_dir: str | Path
) -> list[JobConfig]:
    """Materialize every job config, applying overrides; validates them all."""
    jobs = []
    for job in experiment.jobs:
        if isinstance(job.base, str):
            base_path = Path(base_dir) / job.base
            base = load_config(base_path)
        else:
            base = JobConfig.from_mapping(job.base)
        jobs.append(base.with_overrides(job.overrides) if job.overrides else base)
    return jobs


def execute_experiment(
    experiment: ExperimentConfig,
    *,
    base_dir: str | Path = ".",
    output_root: str | Path | None = None,
    registry: Registry | None = None,
) -> list[JobResult]:
    """Run an ordered job list; stop at the first failure unless told not to."""
    configs = resolve_experiment_jobs(experiment, base_dir)
    results: list[JobResult] = []
    for index, config in enumerate(configs):
        try:
            report = execute_job(config, output_root=output_root, registry=registry)
            results.append(JobResult(config.job_name, report, None))
        except StageFailure as exc:
            results.append(
                JobResult(config.job_name, None, f"job {index} ({config.job_name}): {exc}")
            )
            if not experiment.continue_on_error:
                break
    return results
