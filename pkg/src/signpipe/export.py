"""Sharded tar packaging of finished samples, and the read-back path.

Output follows the WebDataset layout: every sample is a run of adjacent
tar entries named key.extension, shards roll over on sample or byte
limits, and all tar metadata is pinned so identical inputs give
bit-identical archives.
"""

from __future__ import annotations

import io
import json
import math
import re
import tarfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import numpy as np

from .errors import DuplicateKey, InvalidValue, MalformedShard, WriteFailure

KEY_SAFE = re.compile(r"[A-Za-z0-9._-]+\Z")
UNSAFE_CHARS = re.compile(r"[^A-Za-z0-9._-]")

METADATA_REQUIRED = ("sample_id", "video_id", "start_s", "end_s", "processor")
METADATA_OPTIONAL = ("split",)

SHARD_PATTERN = "shard-{worker:02}-{seq:06}.tar"
SHARD_NAME_RE = re.compile(r"shard-(\d{2})-(\d{6})\.tar\Z")

_BLOCK = 512


def sanitize_key(sample_id: str) -> str:
    """Replace every character outside [A-Za-z0-9._-] with an underscore."""
    return UNSAFE_CHARS.sub("_", sample_id)


@dataclass(frozen=True, slots=True)
class SampleRecord:
    """One finished sample: payload bytes plus its metadata sidecars.

    The "json" and "txt" extensions are reserved: metadata always becomes
    the key.json entry, and the caption becomes key.txt when present (an
    absent caption writes nothing at all).
    """

    key: str
    payloads: dict[str, bytes]
    metadata: dict[str, Any]
    caption: str | None = None

    def __post_init__(self) -> None:
        if not self.key or not KEY_SAFE.match(self.key):
            raise InvalidValue(f"sample key {self.key!r} is empty or not sanitized")
        for ext, blob in self.payloads.items():
            if not ext or ext.startswith("."):
                raise InvalidValue(f"bad payload extension {ext!r} for key {self.key!r}")
            if ext in ("json", "txt"):
                raise InvalidValue(f"payload extension {ext!r} is reserved for metadata/caption")
            if not isinstance(blob, (bytes, bytearray)):
                raise InvalidValue(f"payload {self.key}.{ext} must be bytes")
        missing = [name for name in METADATA_REQUIRED if name not in self.metadata]
        if missing:
            raise InvalidValue(f"metadata for {self.key!r} is missing {missing}")
        allowed = set(METADATA_REQUIRED) | set(METADATA_OPTIONAL)
        extra = sorted(set(self.metadata) - allowed)
        if extra:
            raise InvalidValue(f"metadata for {self.key!r} has unexpected fields {extra}")
        for name in ("start_s", "end_s"):
            value = self.metadata[name]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidValue(f"metadata {name} must be a number")
            if not math.isfinite(value):
                raise InvalidValue(f"metadata {name} must be finite")

    @classmethod
    def build(
        cls,
        *,
        sample_id: str,
        video_id: str,
        start_s: float,
        end_s: float,
        processor: str,
        payloads: Mapping[str, bytes],
        caption: str | None = None,
        split: str | None = None,
    ) -> "SampleRecord":
        metadata: dict[str, Any] = {
            "sample_id": sample_id,
            "video_id": video_id,
            "start_s": start_s,
            "end_s": end_s,
            "processor": processor,
        }
        if split is not None:
            metadata["split"] = split
        return cls(
            key=sanitize_key(sample_id),
            payloads=dict(payloads),
            metadata=metadata,
            caption=caption,
        )

    def entries(self) -> list[tuple[str, bytes]]:
        """All tar entries for this sample, extension-sorted."""
        items: dict[str, bytes] = dict(self.payloads)
        items["json"] = json.dumps(
            self.metadata, sort_keys=True, separators=(",", ":"), ensure_ascii=False
        ).encode("utf-8")
        if self.caption is not None:
            items["txt"] = self.caption.encode("utf-8")
        return sorted(items.items())


@dataclass(frozen=True, slots=True)
class ShardSpec:
    max_samples: int
    max_bytes: int
    worker_id: int = 0

    def __post_init__(self) -> None:
        if self.max_samples <= 0 or self.max_bytes <= 0:
            raise InvalidValue("shard limits must be positive")
        if self.worker_id < 0:
            raise InvalidValue("worker_id must be >= 0")

    def shard_name(self, seq: int) -> str:
        return SHARD_PATTERN.format(worker=self.worker_id, seq=seq)


@dataclass(frozen=True, slots=True)
class ShardEntry:
    path: str
    count: int
    bytes: int


@dataclass(frozen=True, slots=True)
class ShardIndex:
    shards: tuple[ShardEntry, ...] = ()

    @property
    def total_samples(self) -> int:
        return sum(entry.count for entry in self.shards)

    def to_mapping(self) -> dict[str, Any]:
        return {
            "shards": [
                {"path": e.path, "count": e.count, "bytes": e.bytes} for e in self.shards
            ]
        }

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ShardIndex":
        return cls(
            shards=tuple(
                ShardEntry(path=str(e["path"]), count=int(e["count"]), bytes=int(e["bytes"]))
                for e in data["shards"]
            )
        )


def merge_indexes(indexes: Iterable[ShardIndex]) -> ShardIndex:
    """Combine per-worker indexes; names sort into (worker, seq) order."""
    entries = [entry for index in indexes for entry in index.shards]
    return ShardIndex(shards=tuple(sorted(entries, key=lambda e: e.path)))


def write_shard_index(index: ShardIndex, path: str | Path) -> None:
    data = json.dumps(index.to_mapping(), sort_keys=True, separators=(",", ":")) + "\n"
    Path(path).write_text(data, encoding="utf-8")


def read_shard_index(path: str | Path) -> ShardIndex:
    return ShardIndex.from_mapping(json.loads(Path(path).read_text(encoding="utf-8")))


# --- NPY v1.0 container ------------------------------------------------------------

_NPY_MAGIC = b"\x93NUMPY\x01\x00"


def encode_array(data: np.ndarray) -> bytes:
    """Serialize to an NPY v1.0 container with little-endian float32 data.

    Byte layout: the 8 magic/version bytes, a little-endian uint16
    header length, then the header dict padded with spaces to make the
    data offset a multiple of 64 and terminated by a newline; row-major
    element bytes follow immediately.
    """
    array = np.ascontiguousarray(np.asarray(data), dtype="<f4")
    header = "{'descr': '<f4', 'fortran_order': False, 'shape': %s, }" % _shape_repr(
        array.shape
    )
    prefix_len = len(_NPY_MAGIC) + 2
    unpadded = prefix_len + len(header) + 1
    padding = (-unpadded) % 64
    header_bytes = header.encode("latin1") + b" " * padding + b"\n"
    out = bytearray(_NPY_MAGIC)
    out += len(header_bytes).to_bytes(2, "little")
    out += header_bytes
    out += array.tobytes(order="C")
    return bytes(out)


def _shape_repr(shape: tuple[int, ...]) -> str:
    if len(shape) == 1:
        return f"({shape[0]},)"
    return "(" + ", ".join(str(dim) for dim in shape) + ")"


# --- shard writing -------------------------------------------------------------------


def _entry_cost(blob_len: int) -> int:
    """Tar footprint of one entry: a header block plus padded content."""
    return _BLOCK + ((blob_len + _BLOCK - 1) // _BLOCK) * _BLOCK


def _sample_cost(entries: list[tuple[str, bytes]]) -> int:
    return sum(_entry_cost(len(blob)) for _, blob in entries)


class _ShardWriter:
    """Owns exactly one sequence of shard files."""

    def __init__(self, spec: ShardSpec, out_dir: Path):
        self.spec = spec
        self.out_dir = out_dir
        self.finished: list[ShardEntry] = []
        self._tar: tarfile.TarFile | None = None
        self._name: str | None = None
        self._count = 0
        self._content_bytes = 0
        self._seq = 0

    def add(self, record: SampleRecord) -> None:
        entries = record.entries()
        cost = _sample_cost(entries)
        if self._tar is not None and (
            self._count + 1 > self.spec.max_samples
            or self._content_bytes + cost > self.spec.max_bytes
        ):
            self._close_current()
        if self._tar is None:
            self._open_next()
        for ext, blob in entries:
            info = tarfile.TarInfo(name=f"{record.key}.{ext}")
            info.size = len(blob)
            info.mtime = 0
            info.uid = 0
            info.gid = 0
            info.uname = ""
            info.gname = ""
            info.mode = 0o644
            try:
                self._tar.addfile(info, io.BytesIO(blob))
            except (OSError, ValueError) as exc:
                raise WriteFailure(f"cannot write {info.name}: {exc}") from exc
        self._count += 1
        self._content_bytes += cost

    def _open_next(self) -> None:
        self._name = self.spec.shard_name(self._seq)
        path = self.out_dir / self._name
        try:
            self._tar = tarfile.open(path, "w", format=tarfile.USTAR_FORMAT)
        except OSError as exc:
            raise WriteFailure(f"cannot open shard {path}: {exc}") from exc
        self._seq += 1
        self._count = 0
        self._content_bytes = 0

    def _close_current(self) -> None:
        if self._tar is None:
            return
        self._tar.close()
        size = (self.out_dir / self._name).stat().st_size
        self.finished.append(ShardEntry(path=self._name, count=self._count, bytes=size))
        self._tar = None
        self._name = None

    def close(self) -> list[ShardEntry]:
        self._close_current()
        return self.finished


def write_shards(
    samples: Iterable[SampleRecord], spec: ShardSpec, out_dir: str | Path
) -> ShardIndex:
    """Pack a finite sample stream into rolling tar shards.

    A shard closes when the next sample would push it past max_samples or
    past max_bytes of tar content (headers plus block-padded payloads; the
    archive terminator is not counted). One sample larger than max_bytes
    still gets a shard of its own.

    Raises:
        DuplicateKey: the same key appears twice in the stream.
        WriteFailure: the filesystem or tar layer rejects a write.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise WriteFailure(f"cannot create {out}: {exc}") from exc
    writer = _ShardWriter(spec, out)
    seen: set[str] = set()
    try:
        for record in samples:
            if record.key in seen:
                raise DuplicateKey(f"sample key {record.key!r} appears twice")
            seen.add(record.key)
            writer.add(record)
    finally:
        entries = writer.close()
    return ShardIndex(shards=tuple(entries))


# --- reading back ---------------------------------------------------------------------


def _split_entry_name(name: str) -> tuple[str, str]:
    base = name.rsplit("/", 1)[-1]
    key, dot, ext = base.partition(".")
    if not key or not dot or not ext:
        raise MalformedShard(f"entry name {name!r} is not key.extension")
    return key, ext


def read_shards(paths: Iterable[str | Path]) -> Iterator[SampleRecord]:
    """Stream records back out of shard files, preserving order.

    Adjacent entries sharing a key form one record. A key that stops and
    reappears later in the same shard, a truncated archive, or metadata
    that does not validate all raise MalformedShard.
    """
    for path in paths:
        yield from _read_one_shard(Path(path))


def _read_one_shard(path: Path) -> Iterator[SampleRecord]:
    try:
        tar = tarfile.open(path, "r:")
    except (OSError, tarfile.TarError) as exc:
        raise MalformedShard(f"cannot open {path}: {exc}") from exc
    with tar:
        finished: set[str] = set()
        current_key: str | None = None
        group: dict[str, bytes] = {}
        try:
            for member in tar:
                if not member.isfile():
                    raise MalformedShard(f"{path}: non-file entry {member.name!r}")
                key, ext = _split_entry_name(member.name)
                stream = tar.extractfile(member)
                blob = b"" if stream is None else stream.read()
                if key != current_key:
                    if current_key is not None:
                        yield _group_to_record(current_key, group, path)
                        finished.add(current_key)
                    if key in finished:
                        raise MalformedShard(f"{path}: key {key!r} reappears non-adjacently")
                    current_key = key
                    group = {}
                if ext in group:
                    raise MalformedShard(f"{path}: duplicate entry {member.name!r}")
                group[ext] = blob
        except (tarfile.TarError, EOFError, OSError) as exc:
            raise MalformedShard(f"{path} is truncated or corrupt: {exc}") from exc
        if current_key is not None:
            yield _group_to_record(current_key, group, path)


def _group_to_record(key: str, group: dict[str, bytes], path: Path) -> SampleRecord:
    if "json" not in group:
        raise MalformedShard(f"{path}: sample {key!r} has no metadata entry")
    try:
        metadata = json.loads(group["json"].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedShard(f"{path}: metadata for {key!r} is not JSON: {exc}") from exc
    caption: str | None = None
    if "txt" in group:
        try:
            caption = group["txt"].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedShard(f"{path}: caption for {key!r} is not UTF-8") from exc
    payloads = {ext: blob for ext, blob in group.items() if ext not in ("json", "txt")}
    try:
        return SampleRecord(key=key, payloads=payloads, metadata=metadata, caption=caption)
    except InvalidValue as exc:
        raise MalformedShard(f"{path}: sample {key!r} does not validate: {exc}") from exc
