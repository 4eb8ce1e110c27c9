"""Job and experiment configuration.

A job is declared in a YAML file, validated against a closed schema, and
filled with documented defaults. The validated tree has a canonical byte
rendering (sorted keys, compact JSON, shortest round-trip floats) which is
the basis for every checkpoint hash in the pipeline, so two configs that
mean the same thing always hash the same.

Schema rules:

* unknown keys are hard errors, never warnings;
* enums are closed;
* override maps deep-merge, lists and scalars replace wholesale;
* every load returns either a fully valid config or one typed error.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import InvalidValue, ParseError, UnknownField

GIB = 1024 ** 3
MAX_SEED = 2 ** 64 - 1

# Documented defaults. These are part of the schema contract: a config file
# that omits a field gets exactly these values, and the canonical bytes (and
# therefore every checkpoint hash) include them explicitly.
DEFAULT_FRAME_RATE_HZ = 25.0
DEFAULT_VISIBILITY_THRESHOLD = 0.5
DEFAULT_EPSILON = 1e-6
DEFAULT_PAD_FRACTION = 0.1
DEFAULT_MIN_DURATION_S = 0.5
DEFAULT_MAX_DURATION_S = 60.0
DEFAULT_MAX_SAMPLES_PER_SHARD = 1000
DEFAULT_MAX_BYTES_PER_SHARD = GIB
DEFAULT_WORKERS = 1
DEFAULT_RESUME = True

MODES = ("pose", "video")
NORMALIZE_SCOPES = ("per_clip", "per_frame")
OUTPUT_FORMATS = ("webdataset",)
CHANNEL_COUNTS = (2, 3, 4)


# --- coercion helpers -------------------------------------------------------

def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check_keys(data: Mapping[str, Any], allowed: tuple[str, ...], path: str) -> None:
    for key in data:
        if key not in allowed:
            raise UnknownField(f"unknown config key '{_join(path, str(key))}'")


def _as_mapping(value: Any, path: str) -> Mapping[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise InvalidValue(f"{path}: expected a mapping, got {type(value).__name__}")
    return value


def _required(data: Mapping[str, Any], key: str, path: str) -> Any:
    value = data.get(key)
    if value is None:
        raise InvalidValue(f"required field '{_join(path, key)}' is missing")
    return value


def _as_str(value: Any, path: str, *, allow_empty: bool = False) -> str:
    if not isinstance(value, str):
        raise InvalidValue(f"{path}: expected a string, got {type(value).__name__}")
    if not allow_empty and not value:
        raise InvalidValue(f"{path}: must be non-empty")
    return value


def _as_bool(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise InvalidValue(f"{path}: expected a boolean, got {type(value).__name__}")
    return value


def _as_int(
    value: Any,
    path: str,
    *,
    at_least: int | None = None,
    at_most: int | None = None,
    choices: tuple[int, ...] | None = None,
) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidValue(f"{path}: expected an integer, got {type(value).__name__}")
    if choices is not None and value not in choices:
        raise InvalidValue(f"{path}: must be one of {choices}, got {value}")
    if at_least is not None and value < at_least:
        raise InvalidValue(f"{path}: must be >= {at_least}, got {value}")
    if at_most is not None and value > at_most:
        raise InvalidValue(f"{path}: must be <= {at_most}, got {value}")
    return value


def _as_float(
    value: Any,
    path: str,
    *,
    at_least: float | None = None,
    above: float | None = None,
    at_most: float | None = None,
) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidValue(f"{path}: expected a number, got {type(value).__name__}")
    result = float(value)
    if not math.isfinite(result):
        raise InvalidValue(f"{path}: must be finite")
    if at_least is not None and result < at_least:
        raise InvalidValue(f"{path}: must be >= {at_least}, got {result}")
    if above is not None and result <= above:
        raise InvalidValue(f"{path}: must be > {above}, got {result}")
    if at_most is not None and result > at_most:
        raise InvalidValue(f"{path}: must be <= {at_most}, got {result}")
    return result


def _as_enum(value: Any, path: str, choices: tuple[str, ...]) -> str:
    text = _as_str(value, path)
    if text not in choices:
        raise InvalidValue(f"{path}: must be one of {choices}, got '{text}'")
    return text


def _check_param_value(value: Any, path: str) -> None:
    if value is None or isinstance(value, (str, bool, int)):
        return
    if isinstance(value, float):
        if not math.isfinite(value):
            raise InvalidValue(f"{path}: must be finite")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check_param_value(item, f"{path}[{i}]")
        return
    if isinstance(value, Mapping):
        for key, item in value.items():
            if not isinstance(key, str):
                raise InvalidValue(f"{path}: mapping keys must be strings")
            _check_param_value(item, _join(path, key))
        return
    raise InvalidValue(
        f"{path}: unsupported value type {type(value).__name__}"
    )


def _as_params(value: Any, path: str) -> dict[str, Any]:
    data = _as_mapping(value, path)
    _check_param_value(dict(data), path)
    return copy.deepcopy(dict(data))


# --- section dataclasses ----------------------------------------------------

@dataclass(frozen=True, slots=True)
class DatasetConfig:
    """Which adapter reads which source, plus adapter-specific parameters."""

    adapter_name: str
    source_path: str
    params: dict[str, Any] = field(default_factory=dict)

    _FIELDS = ("adapter_name", "source_path", "params")

    @classmethod
    def from_mapping(cls, data: Any, path: str = "dataset") -> "DatasetConfig":
        data = _as_mapping(data, path)
        _check_keys(data, cls._FIELDS, path)
        return cls(
            adapter_name=_as_str(_required(data, "adapter_name", path), _join(path, "adapter_name")),
            source_path=_as_str(_required(data, "source_path", path), _join(path, "source_path")),
            params=_as_params(data.get("params"), _join(path, "params")),
        )

    def to_mapping(self) -> dict[str, Any]:
        return {
            "adapter_name": self.adapter_name,
            "source_path": self.source_path,
            "params": copy.deepcopy(self.params),
        }


@dataclass(frozen=True, slots=True)
class DetectorConfig:
    """Signer-detection backend used for region selection and skip rules.

    The builtin backend "none" disables detection entirely: the full frame
    is used and no multi-person or no-detection skipping happens.
    """

    backend_name: str = "none"
    params: dict[str, Any] = field(default_factory=dict)
    sample_stride: int = 1

    _FIELDS = ("backend_name", "params", "sample_stride")

    @classmethod
    def from_mapping(cls, data: Any, path: str) -> "DetectorConfig":
        data = _as_mapping(data, path)
        _check_keys(data, cls._FIELDS, path)
        return cls(
            backend_name=_as_str(data.get("backend_name", "none"), _join(path, "backend_name")),
            params=_as_params(data.get("params"), _join(path, "params")),
            sample_stride=_as_int(data.get("sample_stride", 1), _join(path, "sample_stride"), at_least=1),
        )

    def to_mapping(self) -> dict[str, Any]:
        return {
            "backend_name": self.backend_name,
            "params": copy.deepcopy(self.params),
            "sample_stride": self.sample_stride,
        }


@dataclass(frozen=True, slots=True)
class ExtractorConfig:
    """Pose-landmark backend and the array shape it must produce."""

    backend_name: str
    expected_keypoints: int
    channels: int = 4
    params: dict[str, Any] = field(default_factory=dict)

    _FIELDS = ("backend_name", "params", "expected_keypoints", "channels")

    @classmethod
    def from_mapping(cls, data: Any, path: str) -> "ExtractorConfig":
        data = _as_mapping(data, path)
        _check_keys(data, cls._FIELDS, path)
        return cls(
            backend_name=_as_str(_required(data, "backend_name", path), _join(path, "backend_name")),
            expected_keypoints=_as_int(
                _required(data, "expected_keypoints", path),
                _join(path, "expected_keypoints"),
                at_least=1,
            ),
            channels=_as_int(data.get("channels", 4), _join(path, "channels"), choices=CHANNEL_COUNTS),
            params=_as_params(data.get("params"), _join(path, "params")),
        )

    def to_mapping(self) -> dict[str, Any]:
        return {
            "backend_name": self.backend_name,
            "params": copy.deepcopy(self.params),
            "expected_keypoints": self.expected_keypoints,
            "channels": self.channels,
        }


@dataclass(frozen=True, slots=True)
class ResizeConfig:
    width: int
    height: int

    _FIELDS = ("width", "height")

    @classmethod
    def from_mapping(cls, data: Any, path: str) -> "ResizeConfig":
        data = _as_mapping(data, path)
        _check_keys(data, cls._FIELDS, path)
        return cls(
            width=_as_int(_required(data, "width", path), _join(path, "width"), at_least=1),
            height=_as_int(_required(data, "height", path), _join(path, "height"), at_least=1),
        )

    def to_mapping(self) -> dict[str, Any]:
        return {"width": self.width, "height": self.height}


@dataclass(frozen=True, slots=True)
class CropConfig:
    """Padding, aspect, and resize policy for signer-region crops."""

    pad_fraction: float = DEFAULT_PAD_FRACTION
    target_aspect: float | None = None
    resize: ResizeConfig | None = None

    _FIELDS = ("pad_fraction", "target_aspect", "resize")

    @classmethod
    def from_mapping(cls, data: Any, path: str) -> "CropConfig":
        data = _as_mapping(data, path)
        _check_keys(data, cls._FIELDS, path)
        aspect = data.get("target_aspect")
        resize = data.get("resize")
        return cls(
            pad_fraction=_as_float(
                data.get("pad_fraction", DEFAULT_PAD_FRACTION),
                _join(path, "pad_fraction"),
                at_least=0.0,
            ),
            target_aspect=None if aspect is None else _as_float(aspect, _join(path, "target_aspect"), above=0.0),
            resize=None if resize is None else ResizeConfig.from_mapping(resize, _join(path, "resize")),
        )

    def to_mapping(self) -> dict[str, Any]:
        return {
            "pad_fraction": self.pad_fraction,
            "target_aspect": self.target_aspect,
            "resize": None if self.resize is None else self.resize.to_mapping(),
        }


@dataclass(frozen=True, slots=True)
class ProcessingConfig:
    """Mode selection plus the per-mode backend configuration."""

    mode: str
    frame_rate_hz: float = DEFAULT_FRAME_RATE_HZ
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    extractor: ExtractorConfig | None = None
    crop: CropConfig | None = None

    _FIELDS = ("mode", "frame_rate_hz", "detector", "extractor", "crop")

    @classmethod
    def from_mapping(cls, data: Any, path: str = "processing") -> "ProcessingConfig":
        data = _as_mapping(data, path)
        _check_keys(data, cls._FIELDS, path)
        mode = _as_enum(_required(data, "mode", path), _join(path, "mode"), MODES)
        extractor = data.get("extractor")
        crop = data.get("crop")
        config = cls(
            mode=mode,
            frame_rate_hz=_as_float(
                data.get("frame_rate_hz", DEFAULT_FRAME_RATE_HZ),
                _join(path, "frame_rate_hz"),
                above=0.0,
            ),
            detector=DetectorConfig.from_mapping(data.get("detector"), _join(path, "detector")),
            extractor=None if extractor is None else ExtractorConfig.from_mapping(extractor, _join(path, "extractor")),
            crop=None if crop is None else CropConfig.from_mapping(crop, _join(path, "crop")),
        )
        if config.mode == "pose" and config.extractor is None:
            raise InvalidValue(f"{path}: mode 'pose' requires an extractor section")
        if config.mode == "video" and config.crop is None:
            raise InvalidValue(f"{path}: mode 'video' requires a crop section")
        return config

    def to_mapping(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "frame_rate_hz": self.frame_rate_hz,
            "detector": self.detector.to_mapping(),
            "extractor": None if self.extractor is None else self.extractor.to_mapping(),
            "crop": None if self.crop is None else self.crop.to_mapping(),
        }


@dataclass(frozen=True, slots=True)
class NormalizeConfig:
    scope: str = "per_clip"
    visibility_threshold: float = DEFAULT_VISIBILITY_THRESHOLD
    epsilon: float = DEFAULT_EPSILON

    _FIELDS = ("scope", "visibility_threshold", "epsilon")

    @classmethod
    def from_mapping(cls, data: Any, path: str) -> "NormalizeConfig":
        data = _as_mapping(data, path)
        _check_keys(data, cls._FIELDS, path)
        return cls(
            scope=_as_enum(data.get("scope", "per_clip"), _join(path, "scope"), NORMALIZE_SCOPES),
            visibility_threshold=_as_float(
                data.get("visibility_threshold", DEFAULT_VISIBILITY_THRESHOLD),
                _join(path, "visibility_threshold"),
                at_least=0.0,
                at_most=1.0,
            ),
            epsilon=_as_float(data.get("epsilon", DEFAULT_EPSILON), _join(path, "epsilon"), above=0.0),
        )

    def to_mapping(self) -> dict[str, Any]:
        return {
            "scope": self.scope,
            "visibility_threshold": self.visibility_threshold,
            "epsilon": self.epsilon,
        }


@dataclass(frozen=True, slots=True)
class PostprocessConfig:
    """Landmark post-processing: preset reduction, masking, normalization.

    With ``enabled`` false the whole stage is a pass-through and processing
    outputs are carried forward unchanged.
    """

    enabled: bool = True
    preset_name: str | None = None
    normalize: NormalizeConfig = field(default_factory=NormalizeConfig)
    flatten: bool = False
    mask_invisible: bool = False

    _FIELDS = ("enabled", "preset_name", "normalize", "flatten", "mask_invisible")

    @classmethod
    def from_mapping(cls, data: Any, path: str = "postprocess") -> "PostprocessConfig":
        data = _as_mapping(data, path)
        _check_keys(data, cls._FIELDS, path)
        preset = data.get("preset_name")
        return cls(
            enabled=_as_bool(data.get("enabled", True), _join(path, "enabled")),
            preset_name=None if preset is None else _as_str(preset, _join(path, "preset_name")),
            normalize=NormalizeConfig.from_mapping(data.get("normalize"), _join(path, "normalize")),
            flatten=_as_bool(data.get("flatten", False), _join(path, "flatten")),
            mask_invisible=_as_bool(data.get("mask_invisible", False), _join(path, "mask_invisible")),
        )

    def to_mapping(self) -> dict[str, Any]:
        return {
            "enabled": self.enabled,
            "preset_name": self.preset_name,
            "normalize": self.normalize.to_mapping(),
            "flatten": self.flatten,
            "mask_invisible": self.mask_invisible,
        }


@dataclass(frozen=True, slots=True)
class FilterConfig:
    require_text: bool = True
    require_timing: bool = True
    min_duration_s: float = DEFAULT_MIN_DURATION_S
    max_duration_s: float = DEFAULT_MAX_DURATION_S

    _FIELDS = ("require_text", "require_timing", "min_duration_s", "max_duration_s")

    @classmethod
    def from_mapping(cls, data: Any, path: str = "filter") -> "FilterConfig":
        data = _as_mapping(data, path)
        _check_keys(data, cls._FIELDS, path)
        config = cls(
            require_text=_as_bool(data.get("require_text", True), _join(path, "require_text")),
            require_timing=_as_bool(data.get("require_timing", True), _join(path, "require_timing")),
            min_duration_s=_as_float(
                data.get("min_duration_s", DEFAULT_MIN_DURATION_S),
                _join(path, "min_duration_s"),
                at_least=0.0,
            ),
            max_duration_s=_as_float(
                data.get("max_duration_s", DEFAULT_MAX_DURATION_S),
                _join(path, "max_duration_s"),
                above=0.0,
            ),
        )
        if not config.min_duration_s < config.max_duration_s:
            raise InvalidValue(
                f"{path}: min_duration_s ({config.min_duration_s}) must be "
                f"< max_duration_s ({config.max_duration_s})"
            )
        return config

    def to_mapping(self) -> dict[str, Any]:
        return {
            "require_text": self.require_text,
            "require_timing": self.require_timing,
            "min_duration_s": self.min_duration_s,
            "max_duration_s": self.max_duration_s,
        }


@dataclass(frozen=True, slots=True)
class OutputConfig:
    format: str = "webdataset"
    max_samples_per_shard: int = DEFAULT_MAX_SAMPLES_PER_SHARD
    max_bytes_per_shard: int = DEFAULT_MAX_BYTES_PER_SHARD

    _FIELDS = ("format", "max_samples_per_shard", "max_bytes_per_shard")

    @classmethod
    def from_mapping(cls, data: Any, path: str = "output") -> "OutputConfig":
        data = _as_mapping(data, path)
        _check_keys(data, cls._FIELDS, path)
        return cls(
            format=_as_enum(data.get("format", "webdataset"), _join(path, "format"), OUTPUT_FORMATS),
            max_samples_per_shard=_as_int(
                data.get("max_samples_per_shard", DEFAULT_MAX_SAMPLES_PER_SHARD),
                _join(path, "max_samples_per_shard"),
                at_least=1,
            ),
            max_bytes_per_shard=_as_int(
                data.get("max_bytes_per_shard", DEFAULT_MAX_BYTES_PER_SHARD),
                _join(path, "max_bytes_per_shard"),
                at_least=1,
            ),
        )

    def to_mapping(self) -> dict[str, Any]:
        return {
            "format": self.format,
            "max_samples_per_shard": self.max_samples_per_shard,
            "max_bytes_per_shard": self.max_bytes_per_shard,
        }


@dataclass(frozen=True, slots=True)
class RuntimeConfig:
    workers: int = DEFAULT_WORKERS
    seed: int = 0
    resume: bool = DEFAULT_RESUME
    output_root: str | None = None

    _FIELDS = ("workers", "seed", "resume", "output_root")

    @classmethod
    def from_mapping(cls, data: Any, path: str = "runtime") -> "RuntimeConfig":
        data = _as_mapping(data, path)
        _check_keys(data, cls._FIELDS, path)
        root = data.get("output_root")
        return cls(
            workers=_as_int(data.get("workers", DEFAULT_WORKERS), _join(path, "workers"), at_least=1),
            seed=_as_int(data.get("seed", 0), _join(path, "seed"), at_least=0, at_most=MAX_SEED),
            resume=_as_bool(data.get("resume", DEFAULT_RESUME), _join(path, "resume")),
            output_root=None if root is None else _as_str(root, _join(path, "output_root")),
        )

    def to_mapping(self) -> dict[str, Any]:
        return {
            "workers": self.workers,
            "seed": self.seed,
            "resume": self.resume,
            "output_root": self.output_root,
        }


@dataclass(frozen=True, slots=True)
class JobConfig:
    """One validated, fully defaulted preprocessing job.

    Instances are immutable after construction and safe to share across
    worker processes. Build them with :func:`load_config` or
    :meth:`from_mapping`; the constructor itself performs no validation.
    """

    job_name: str
    dataset: DatasetConfig
    processing: ProcessingConfig
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)

    _FIELDS = ("job_name", "dataset", "processing", "postprocess", "filter", "output", "runtime")

    @classmethod
    def from_mapping(cls, data: Any) -> "JobConfig":
        data = _as_mapping(data, "")
        if not data:
            raise InvalidValue("config is empty")
        _check_keys(data, cls._FIELDS, "")
        return cls(
            job_name=_as_str(_required(data, "job_name", ""), "job_name"),
            dataset=DatasetConfig.from_mapping(_required(data, "dataset", "")),
            processing=ProcessingConfig.from_mapping(_required(data, "processing", "")),
            postprocess=PostprocessConfig.from_mapping(data.get("postprocess")),
            filter=FilterConfig.from_mapping(data.get("filter")),
            output=OutputConfig.from_mapping(data.get("output")),
            runtime=RuntimeConfig.from_mapping(data.get("runtime")),
        )

    def to_mapping(self) -> dict[str, Any]:
        """Plain nested dict with every schema key present (absent -> None)."""
        return {
            "job_name": self.job_name,
            "dataset": self.dataset.to_mapping(),
            "processing": self.processing.to_mapping(),
            "postprocess": self.postprocess.to_mapping(),
            "filter": self.filter.to_mapping(),
            "output": self.output.to_mapping(),
            "runtime": self.runtime.to_mapping(),
        }

    def validate(self) -> "JobConfig":
        """Re-run full schema validation; returns self if it passes."""
        JobConfig.from_mapping(self.to_mapping())
        return self

    def with_overrides(self, overrides: Mapping[str, Any]) -> "JobConfig":
        """Validated copy with dotted-path overrides applied."""
        return JobConfig.from_mapping(merge_overrides(self.to_mapping(), overrides))


# --- experiments ------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ExperimentJob:
    """One entry of an experiment: a base job plus its overrides.

    ``base`` is either a path to a job file (resolved relative to the
    experiment file) or an inline job mapping.
    """

    base: str | Mapping[str, Any]
    overrides: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    experiment_name: str
    jobs: tuple[ExperimentJob, ...]
    continue_on_error: bool = False

    _FIELDS = ("experiment_name", "jobs", "continue_on_error")

    @classmethod
    def from_mapping(cls, data: Any) -> "ExperimentConfig":
        data = _as_mapping(data, "")
        _check_keys(data, cls._FIELDS, "")
        raw_jobs = _required(data, "jobs", "")
        if not isinstance(raw_jobs, list) or not raw_jobs:
            raise InvalidValue("jobs: must be a non-empty list")
        jobs = []
        for i, entry in enumerate(raw_jobs):
            entry = _as_mapping(entry, f"jobs[{i}]")
            _check_keys(entry, ("base", "overrides"), f"jobs[{i}]")
            base = _required(entry, "base", f"jobs[{i}]")
            if not isinstance(base, (str, Mapping)):
                raise InvalidValue(f"jobs[{i}].base: expected a path or inline job mapping")
            overrides = _as_mapping(entry.get("overrides"), f"jobs[{i}].overrides")
            for key in overrides:
                if not isinstance(key, str) or not key:
                    raise InvalidValue(f"jobs[{i}].overrides: keys must be dotted paths")
            jobs.append(ExperimentJob(base=base, overrides=dict(overrides)))
        return cls(
            experiment_name=_as_str(_required(data, "experiment_name", ""), "experiment_name"),
            jobs=tuple(jobs),
            continue_on_error=_as_bool(data.get("continue_on_error", False), "continue_on_error"),
        )


# --- schema tree for override-path checks -----------------------------------

# "open" marks free-form parameter maps whose sub-keys are not schema-checked.
_OPEN = "open"
_SCHEMA_TREE: dict[str, Any] = {
    "job_name": None,
    "dataset": {
        "adapter_name": None,
        "source_path": None,
        "params": _OPEN,
    },
    "processing": {
        "mode": None,
        "frame_rate_hz": None,
        "detector": {"backend_name": None, "params": _OPEN, "sample_stride": None},
        "extractor": {
            "backend_name": None,
            "params": _OPEN,
            "expected_keypoints": None,
            "channels": None,
        },
        "crop": {
            "pad_fraction": None,
            "target_aspect": None,
            "resize": {"width": None, "height": None},
        },
    },
    "postprocess": {
        "enabled": None,
        "preset_name": None,
        "normalize": {"scope": None, "visibility_threshold": None, "epsilon": None},
        "flatten": None,
        "mask_invisible": None,
    },
    "filter": {
        "require_text": None,
        "require_timing": None,
        "min_duration_s": None,
        "max_duration_s": None,
    },
    "output": {
        "format": None,
        "max_samples_per_shard": None,
        "max_bytes_per_shard": None,
    },
    "runtime": {"workers": None, "seed": None, "resume": None, "output_root": None},
}


def _check_schema_path(dotted: str) -> None:
    node: Any = _SCHEMA_TREE
    for part in dotted.split("."):
        if node == _OPEN:
            return
        if not isinstance(node, dict) or part not in node:
            raise UnknownField(f"override path '{dotted}' is not a config field")
        node = node[part]


def _deep_merge(dst: dict[str, Any], src: Mapping[str, Any]) -> None:
    for key, value in src.items():
        if isinstance(value, Mapping) and isinstance(dst.get(key), dict):
            _deep_merge(dst[key], value)
        else:
            dst[key] = copy.deepcopy(value) if isinstance(value, (Mapping, list)) else value


# --- public operations ------------------------------------------------------

def load_config(path: str | Path) -> JobConfig:
    """Load, default, and validate one job file.

    Args:
        path: YAML job file.

    Returns:
        The validated config with all defaults applied.

    Raises:
        ParseError: unreadable file or malformed YAML.
        UnknownField: a key outside the schema; the message names it.
        InvalidValue: type, range, or cross-field invariant violation.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed YAML in {path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ParseError(f"{path}: top level must be a mapping")
    return JobConfig.from_mapping(data)


def load_experiment(path: str | Path) -> ExperimentConfig:
    """Load and validate an experiment file (ordered job list + overrides)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read experiment file {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed YAML in {path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ParseError(f"{path}: top level must be a mapping")
    return ExperimentConfig.from_mapping(data)


def merge_overrides(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Apply dotted-path overrides to a config tree.

    Mapping values deep-merge into the existing subtree; list and scalar
    values replace wholesale. The merged tree is re-validated before it is
    returned, so the result is always a loadable job config.

    Raises:
        UnknownField: an override path outside the schema.
        InvalidValue: the merged tree fails validation.
    """
    tree = copy.deepcopy(dict(base))
    for dotted, value in overrides.items():
        _check_schema_path(dotted)
        parts = dotted.split(".")
        node = tree
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        leaf = parts[-1]
        if isinstance(value, Mapping) and isinstance(node.get(leaf), dict):
            _deep_merge(node[leaf], value)
        else:
            node[leaf] = copy.deepcopy(value) if isinstance(value, (Mapping, list)) else value
    JobConfig.from_mapping(tree)
    return tree


def canonical_bytes(tree: Any) -> bytes:
    """Deterministic UTF-8 JSON: sorted keys, no whitespace, repr floats."""
    return json.dumps(
        tree,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    ).encode("utf-8")


def canonical_serialize(config: JobConfig) -> bytes:
    """Canonical byte rendering of a whole validated config."""
    return canonical_bytes(config.to_mapping())


def config_hash(config: JobConfig, section: str | None = None) -> bytes:
    """SHA-256 over the canonical bytes of the config or one subtree.

    Args:
        config: validated job config.
        section: optional dotted path naming the subtree to hash.

    Returns:
        32-byte digest.

    Raises:
        UnknownField: ``section`` does not address a config field.
    """
    tree: Any = config.to_mapping()
    if section is not None:
        for part in section.split("."):
            if not isinstance(tree, dict) or part not in tree:
                raise UnknownField(f"config section '{section}' does not exist")
            tree = tree[part]
    return hashlib.sha256(canonical_bytes(tree)).digest()
