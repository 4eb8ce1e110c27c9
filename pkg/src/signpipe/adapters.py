"""Builtin dataset adapters.

An adapter turns one source release into raw tabular rows plus the alias
table that maps its column names onto the canonical manifest schema. The
shared conversion core then normalizes columns, parses timing and bounding
boxes, and records every dirty row as a reject with a machine-readable
reason. Open-domain corpus releases are dirty by construction, so a bad
row never aborts ingestion; only a missing identifier column or a
duplicated sample_id does.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .errors import (
    InvalidValue,
    SchemaError,
    SourceUnreadable,
    UnknownAdapter,
    UnknownName,
)
from .geometry import Box
from .manifest import (
    BAD_BBOX,
    BAD_ROW,
    BAD_TIMING,
    MISSING_ID,
    Manifest,
    ManifestRecord,
    Reject,
    normalize_columns,
    normalize_text,
)

# A raw row is (1-based data row number, header->value mapping); None marks
# a row that could not even be split into fields.
RawRow = tuple[int, "dict[str, Any] | None"]
AdapterResult = tuple[list[str], list[RawRow], dict[str, str]]
Adapter = Callable[[str, Mapping[str, Any]], AdapterResult]

HOW2SIGN_ALIASES: dict[str, str] = {
    "sentence_name": "sample_id",
    "video_name": "video_id",
    "start": "start_s",
    "end": "end_s",
    "sentence": "text",
    "split": "split",
    "signer": "signer_id",
}

OPENASL_ALIASES: dict[str, str] = {
    "id": "sample_id",
    "vid": "video_id",
    "start": "start_s",
    "end": "end_s",
    "raw-text": "text",
    "split": "split",
    "signer": "signer_id",
    "bbox": "bbox",
}

TRANSCRIPT_ALIASES: dict[str, str] = {
    "clip_id": "sample_id",
    "video": "video_id",
    "start": "start_s",
    "end": "end_s",
    "transcript": "text",
    "split": "split",
    "signer": "signer_id",
    "bbox": "bbox",
}


def _read_text(source_path: str) -> str:
    try:
        return Path(source_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SourceUnreadable(f"cannot read {source_path}: {exc}") from exc


def _read_delimited(source_path: str, delimiter: str) -> tuple[list[str], list[RawRow]]:
    text = _read_text(source_path)
    reader = csv.reader(text.splitlines(), delimiter=delimiter)
    try:
        headers = next(reader)
    except StopIteration:
        raise SchemaError(f"{source_path}: empty source, no header row") from None
    rows: list[RawRow] = []
    for number, row in enumerate(reader, start=1):
        if not row:
            continue
        if len(row) != len(headers):
            rows.append((number, None))
        else:
            rows.append((number, dict(zip(headers, row))))
    return headers, rows


def how2sign_csv(source_path: str, params: Mapping[str, Any]) -> AdapterResult:
    """Comma-separated release with sentence-level segment rows."""
    delimiter = str(params.get("delimiter", ","))
    headers, rows = _read_delimited(source_path, delimiter)
    return headers, rows, _aliases_with_overrides(HOW2SIGN_ALIASES, params)


def openasl_tsv(source_path: str, params: Mapping[str, Any]) -> AdapterResult:
    """Tab-separated release with optional bounding-box metadata."""
    delimiter = str(params.get("delimiter", "\t"))
    headers, rows = _read_delimited(source_path, delimiter)
    return headers, rows, _aliases_with_overrides(OPENASL_ALIASES, params)


def transcript_json(source_path: str, params: Mapping[str, Any]) -> AdapterResult:
    """JSON transcript: a list of segment objects, or {"segments": [...]}."""
    text = _read_text(source_path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{source_path}: not valid JSON: {exc}") from exc
    if isinstance(data, Mapping):
        data = data.get("segments")
    if not isinstance(data, list):
        raise SchemaError(f"{source_path}: expected a list of segment objects")
    headers: list[str] = []
    rows: list[RawRow] = []
    for number, entry in enumerate(data, start=1):
        if not isinstance(entry, Mapping):
            rows.append((number, None))
            continue
        for key in entry:
            if key not in headers:
                headers.append(str(key))
        rows.append((number, dict(entry)))
    if not headers:
        raise SchemaError(f"{source_path}: no segment objects with fields")
    return headers, rows, _aliases_with_overrides(TRANSCRIPT_ALIASES, params)


def _aliases_with_overrides(base: Mapping[str, str], params: Mapping[str, Any]) -> dict[str, str]:
    table = dict(base)
    overrides = params.get("aliases", {})
    if not isinstance(overrides, Mapping):
        raise InvalidValue("dataset.params.aliases must be a mapping")
    for key, value in overrides.items():
        table[str(key).lower()] = str(value)
    return table


BUILTIN_ADAPTERS: dict[str, Adapter] = {
    "how2sign_csv": how2sign_csv,
    "openasl_tsv": openasl_tsv,
    "transcript_json": transcript_json,
}


# --- conversion core ---------------------------------------------------------

def parse_seconds(value: Any) -> float | None:
    """Accept float seconds or colon timestamps ("MM:SS", "H:MM:SS.mmm")."""
    if value is None:
        return None
    if isinstance(value, bool):
        raise ValueError("boolean is not a time")
    if isinstance(value, (int, float)):
        seconds = float(value)
    else:
        text = str(value).strip()
        if not text:
            return None
        if ":" in text:
            parts = text.split(":")
            if len(parts) not in (2, 3):
                raise ValueError(f"bad timestamp '{text}'")
            seconds = 0.0
            for part in parts:
                seconds = seconds * 60.0 + float(part)
        else:
            seconds = float(text)
    if not math.isfinite(seconds) or seconds < 0:
        raise ValueError(f"bad time value {value!r}")
    return seconds


def parse_bbox(value: Any) -> Box | None:
    """Accept "x0,y0,x1,y1" strings or 4-number sequences."""
    if value is None:
        return None
    if isinstance(value, str):
        text = value.strip()
        if not text:
            return None
        parts: Sequence[Any] = text.split(",")
    elif isinstance(value, (list, tuple)):
        parts = value
    else:
        raise ValueError(f"bad bbox {value!r}")
    if len(parts) != 4:
        raise ValueError(f"bbox needs 4 values, got {len(parts)}")
    x0, y0, x1, y1 = (float(p) for p in parts)
    return Box(x0, y0, x1, y1)


def _clean_str(value: Any) -> str | None:
    if value is None:
        return None
    text = str(value).strip()
    return text or None


def rows_to_records(
    rows: Sequence[RawRow],
    mapping: Mapping[str, str | None],
) -> tuple[list[ManifestRecord], list[Reject]]:
    """Convert raw rows into validated records plus per-row rejects.

    Raises:
        SchemaError: no column maps to sample_id or video_id, or two rows
            share a sample_id.
    """
    targets = set(mapping.values())
    for required in ("sample_id", "video_id"):
        if required not in targets:
            raise SchemaError(f"no source column maps to {required}")

    records: list[ManifestRecord] = []
    rejects: list[Reject] = []
    seen: set[str] = set()
    for number, row in rows:
        placeholder = f"row{number}"
        if row is None:
            rejects.append(Reject(placeholder, BAD_ROW))
            continue
        canonical: dict[str, Any] = {}
        extras: dict[str, str] = {}
        for header, value in row.items():
            target = mapping.get(header)
            if target is None:
                text = _clean_str(value)
                if text is not None:
                    extras[str(header)] = text
            else:
                canonical[target] = value

        sample_id = _clean_str(canonical.get("sample_id"))
        if sample_id is None:
            rejects.append(Reject(placeholder, MISSING_ID))
            continue
        if sample_id in seen:
            raise SchemaError(f"duplicate sample_id '{sample_id}'")
        video_id = _clean_str(canonical.get("video_id"))
        if video_id is None:
            rejects.append(Reject(sample_id, MISSING_ID))
            continue

        try:
            start_s = parse_seconds(canonical.get("start_s"))
            end_s = parse_seconds(canonical.get("end_s"))
        except ValueError:
            rejects.append(Reject(sample_id, BAD_TIMING))
            continue
        if start_s is not None and end_s is not None and not start_s < end_s:
            rejects.append(Reject(sample_id, BAD_TIMING))
            continue

        try:
            bbox = parse_bbox(canonical.get("bbox"))
        except (ValueError, InvalidValue):
            rejects.append(Reject(sample_id, BAD_BBOX))
            continue

        raw_text = canonical.get("text")
        text = normalize_text(str(raw_text)) if raw_text is not None else ""

        records.append(
            ManifestRecord(
                sample_id=sample_id,
                video_id=video_id,
                start_s=start_s,
                end_s=end_s,
                text=text or None,
                split=_clean_str(canonical.get("split")),
                signer_id=_clean_str(canonical.get("signer_id")),
                bbox=bbox,
                extras=extras,
            )
        )
        seen.add(sample_id)
    return records, rejects


def ingest(
    adapter_name: str,
    source_path: str,
    params: Mapping[str, Any] | None = None,
    registry=None,
) -> tuple[Manifest, list[Reject]]:
    """Run one adapter and return the manifest plus its ingestion rejects.

    Raises:
        UnknownAdapter: adapter_name not registered.
        SourceUnreadable: source file missing or unreadable.
        SchemaError: identifier column absent or sample_id duplicated.
    """
    from .registry import default_registry

    params = dict(params or {})
    if registry is None:
        registry = default_registry()
    try:
        adapter: Adapter = registry.resolve("dataset", adapter_name)
    except UnknownName as exc:
        raise UnknownAdapter(str(exc)) from None
    headers, rows, aliases = adapter(source_path, params)
    mapping = normalize_columns(headers, aliases)
    records, rejects = rows_to_records(rows, mapping)
    manifest = Manifest(
        records=tuple(records),
        source_path=str(source_path),
        adapter_name=adapter_name,
    )
    return manifest, rejects
