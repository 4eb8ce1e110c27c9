"""Config-driven preprocessing for sign-language corpora.

The package turns raw corpus releases (manifest plus media) into sharded
training archives through a fixed stage sequence: manifest ingestion,
processing (pose extraction or video cropping), landmark post-processing,
and export. Every stage is checkpointed and content-addressed so that
interrupted or re-configured jobs redo only the work whose inputs changed.
"""

from __future__ import annotations

from .config import (
    JobConfig,
    config_hash,
    load_config,
    load_experiment,
)
from .errors import SignpipeError, StageFailure
from .export import SampleRecord, ShardSpec, read_shards, write_shards
from .manifest import Manifest, ManifestRecord, filter_segments, manifest_hash
from .pipeline import (
    RunReport,
    StageMarker,
    execute_experiment,
    execute_job,
    run_id,
    stage_hash,
)
from .posepost import LandmarkClip, load_preset
from .registry import Registry, default_registry

__version__ = "0.1.0"

__all__ = [
    "JobConfig",
    "LandmarkClip",
    "Manifest",
    "ManifestRecord",
    "Registry",
    "RunReport",
    "SampleRecord",
    "ShardSpec",
    "SignpipeError",
    "StageFailure",
    "StageMarker",
    "config_hash",
    "default_registry",
    "execute_experiment",
    "execute_job",
    "filter_segments",
    "load_config",
    "load_experiment",
    "load_preset",
    "manifest_hash",
    "read_shards",
    "run_id",
    "stage_hash",
    "write_shards",
]
