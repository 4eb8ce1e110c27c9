"""Canonical segment manifests.

Every dataset source is reduced to one shared schema: a list of temporally
bounded, captioned segments of source videos. Source-specific column names
are normalized through per-adapter alias tables, dirty rows become recorded
rejects rather than silent drops, and the resulting manifest has a
canonical content hash that is invariant under record order.

Persisted forms (under the run directory):

* ``manifest.csv`` with fixed header
  ``sample_id,video_id,start_s,end_s,text,split,signer_id,bbox,extras_json``
* ``rejects.csv`` with header ``sample_id,stage,reason``
"""

from __future__ import annotations

import csv
import hashlib
import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .config import FilterConfig, canonical_bytes
from .errors import AmbiguousAlias, InvalidValue, SchemaError
from .geometry import Box

CANONICAL_FIELDS = (
    "sample_id",
    "video_id",
    "start_s",
    "end_s",
    "text",
    "split",
    "signer_id",
    "bbox",
)

MANIFEST_CSV_HEADER = CANONICAL_FIELDS + ("extras_json",)
REJECTS_CSV_HEADER = ("sample_id", "stage", "reason")

# Machine-readable reject reasons.
MISSING_TEXT = "MissingText"
MISSING_TIMING = "MissingTiming"
TOO_SHORT = "TooShort"
TOO_LONG = "TooLong"
BAD_TIMING = "BadTiming"
BAD_BBOX = "BadBBox"
MISSING_ID = "MissingId"
BAD_ROW = "BadRow"


@dataclass(frozen=True, slots=True)
class Reject:
    """One removed row or sample and why it was removed."""

    sample_id: str
    reason: str


@dataclass(frozen=True, slots=True)
class ManifestRecord:
    """One temporally bounded, captioned segment of one source video."""

    sample_id: str
    video_id: str
    start_s: float | None = None
    end_s: float | None = None
    text: str | None = None
    split: str | None = None
    signer_id: str | None = None
    bbox: Box | None = None
    extras: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.sample_id:
            raise InvalidValue("sample_id must be non-empty")
        if not self.video_id:
            raise InvalidValue("video_id must be non-empty")
        if self.start_s is not None and self.end_s is not None:
            if not (0.0 <= self.start_s < self.end_s):
                raise InvalidValue(
                    f"{self.sample_id}: need 0 <= start_s < end_s, "
                    f"got [{self.start_s}, {self.end_s}]"
                )

    @property
    def duration_s(self) -> float | None:
        if self.start_s is None or self.end_s is None:
            return None
        return self.end_s - self.start_s


@dataclass(frozen=True, slots=True)
class Manifest:
    """Immutable ordered record list from one source file."""

    records: tuple[ManifestRecord, ...]
    source_path: str
    adapter_name: str

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for record in self.records:
            if record.sample_id in seen:
                raise SchemaError(f"duplicate sample_id '{record.sample_id}'")
            seen.add(record.sample_id)


def normalize_text(s: str) -> str:
    """Unicode NFC, whitespace runs collapsed to one space, ends stripped."""
    return " ".join(unicodedata.normalize("NFC", s).split())


def normalize_columns(
    headers: Iterable[str], alias_table: Mapping[str, str]
) -> dict[str, str | None]:
    """Map source headers onto canonical fields.

    Alias matching is case-insensitive on the alias key. A header with no
    alias maps to None, meaning its values land in ``extras`` under the
    original header name, so no source column is ever dropped.

    Raises:
        AmbiguousAlias: two headers resolve to the same canonical field.
    """
    lowered = {key.lower(): value for key, value in alias_table.items()}
    mapping: dict[str, str | None] = {}
    claimed: dict[str, str] = {}
    for header in headers:
        target = lowered.get(header.strip().lower())
        if target is not None and target not in CANONICAL_FIELDS:
            raise InvalidValue(f"alias table maps '{header}' to unknown field '{target}'")
        if target is not None:
            if target in claimed:
                raise AmbiguousAlias(
                    f"columns '{claimed[target]}' and '{header}' both map to '{target}'"
                )
            claimed[target] = header
        mapping[header] = target
    return mapping


def filter_segments(
    manifest: Manifest, rules: FilterConfig
) -> tuple[Manifest, list[Reject]]:
    """Apply presence and duration rules; removed records become rejects.

    Each removed record appears exactly once, with the first violated rule
    in the order MissingText, MissingTiming, TooShort, TooLong.
    """
    retained: list[ManifestRecord] = []
    rejects: list[Reject] = []
    for record in manifest.records:
        reason = _first_violation(record, rules)
        if reason is None:
            retained.append(record)
        else:
            rejects.append(Reject(record.sample_id, reason))
    filtered = Manifest(
        records=tuple(retained),
        source_path=manifest.source_path,
        adapter_name=manifest.adapter_name,
    )
    return filtered, rejects


def _first_violation(record: ManifestRecord, rules: FilterConfig) -> str | None:
    if rules.require_text and not (record.text and normalize_text(record.text)):
        return MISSING_TEXT
    if rules.require_timing and record.duration_s is None:
        return MISSING_TIMING
    duration = record.duration_s
    if duration is not None:
        if duration < rules.min_duration_s:
            return TOO_SHORT
        if duration > rules.max_duration_s:
            return TOO_LONG
    return None


# --- canonical hash ----------------------------------------------------------

_UNIT_SEP = "\x1f"


def _render_float(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def _render_bbox(bbox: Box | None) -> str:
    if bbox is None:
        return ""
    return ",".join(repr(float(v)) for v in (bbox.x0, bbox.y0, bbox.x1, bbox.y1))


def _record_line(record: ManifestRecord) -> str:
    fields = (
        record.sample_id,
        record.video_id,
        _render_float(record.start_s),
        _render_float(record.end_s),
        record.text or "",
        record.split or "",
        record.signer_id or "",
        _render_bbox(record.bbox),
        canonical_bytes(record.extras).decode("utf-8"),
    )
    return _UNIT_SEP.join(fields)


def manifest_hash(manifest: Manifest) -> bytes:
    """SHA-256 over the canonical rendering.

    Records are sorted by sample_id, fields joined by the unit separator in
    the fixed canonical order, records joined by newlines, absent fields
    rendered as empty strings. The digest therefore ignores record order
    and reacts to any field edit.
    """
    ordered = sorted(manifest.records, key=lambda r: r.sample_id)
    body = "\n".join(_record_line(r) for r in ordered).encode("utf-8")
    return hashlib.sha256(body).digest()


# --- CSV persistence ---------------------------------------------------------

def write_manifest_csv(manifest: Manifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(MANIFEST_CSV_HEADER)
        for record in manifest.records:
            writer.writerow(
                (
                    record.sample_id,
                    record.video_id,
                    _render_float(record.start_s),
                    _render_float(record.end_s),
                    record.text or "",
                    record.split or "",
                    record.signer_id or "",
                    _render_bbox(record.bbox),
                    json.dumps(record.extras, sort_keys=True, separators=(",", ":"), ensure_ascii=False),
                )
            )


def read_manifest_csv(path: str | Path, *, source_path: str = "", adapter_name: str = "") -> Manifest:
    """Read back a manifest persisted by :func:`write_manifest_csv`."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = tuple(next(reader, ()))
        if header != MANIFEST_CSV_HEADER:
            raise SchemaError(f"{path}: unexpected manifest header {header}")
        records = []
        for row in reader:
            if len(row) != len(MANIFEST_CSV_HEADER):
                raise SchemaError(f"{path}: row with {len(row)} fields")
            sample_id, video_id, start, end, text, split, signer, bbox, extras_json = row
            records.append(
                ManifestRecord(
                    sample_id=sample_id,
                    video_id=video_id,
                    start_s=float(start) if start else None,
                    end_s=float(end) if end else None,
                    text=text or None,
                    split=split or None,
                    signer_id=signer or None,
                    bbox=_parse_bbox_text(bbox) if bbox else None,
                    extras=json.loads(extras_json) if extras_json else {},
                )
            )
    return Manifest(records=tuple(records), source_path=source_path, adapter_name=adapter_name)


def _parse_bbox_text(text: str) -> Box:
    parts = text.split(",")
    if len(parts) != 4:
        raise InvalidValue(f"bbox needs 4 comma-separated numbers, got '{text}'")
    x0, y0, x1, y1 = (float(p) for p in parts)
    return Box(x0, y0, x1, y1)


def append_rejects_csv(path: str | Path, stage: str, rejects: Iterable[Reject]) -> None:
    """Append reject rows, writing the header when the file is new."""
    path = Path(path)
    new_file = not path.exists() or path.stat().st_size == 0
    with open(path, "a", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        if new_file:
            writer.writerow(REJECTS_CSV_HEADER)
        for reject in rejects:
            writer.writerow((reject.sample_id, stage, reject.reason))
