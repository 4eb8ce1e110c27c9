"""Typed error taxonomy shared by all pipeline modules.

Every failure surfaced to callers is an instance of :class:`SignpipeError`;
the CLI maps subclasses onto its documented exit codes. Keeping the whole
taxonomy in one module makes the contract easy to audit.
"""

from __future__ import annotations


class SignpipeError(Exception):
    """Base class for all errors raised by this package."""


# --- configuration ---------------------------------------------------------

class ConfigError(SignpipeError):
    """Base class for configuration loading and validation failures."""


class ParseError(ConfigError):
    """The config file could not be parsed at all (malformed YAML/JSON)."""


class UnknownField(ConfigError):
    """A key or dotted path does not exist in the config schema.

    The message always names the offending key.
    """


class InvalidValue(ConfigError):
    """A config value has the wrong type or violates a range/invariant."""


# --- manifest ingestion ----------------------------------------------------

class UnknownAdapter(SignpipeError):
    """The named dataset adapter is not registered."""


class SourceUnreadable(SignpipeError):
    """The manifest source file cannot be opened or read."""


class SchemaError(SignpipeError):
    """The source violates the manifest schema (e.g. no identifier column,
    duplicated sample_id)."""


class AmbiguousAlias(SignpipeError):
    """Two source columns normalize to the same canonical manifest field."""


# --- registry --------------------------------------------------------------

class DuplicateName(SignpipeError):
    """A (kind, name) pair was registered twice."""


class UnknownName(SignpipeError):
    """Lookup of an unregistered name; message carries nearby suggestions."""


# --- geometry --------------------------------------------------------------

class EmptyInput(SignpipeError):
    """An operation requiring a non-empty input got an empty one."""


class Unsatisfiable(SignpipeError):
    """Aspect-ratio expansion cannot fit inside the frame."""


class DegenerateBox(SignpipeError):
    """A crop box has zero area after integer rounding."""


# --- landmark post-processing ----------------------------------------------

class BackendMismatch(SignpipeError):
    """A keypoint preset was applied to a clip from a different backend."""


class IndexOutOfRange(SignpipeError):
    """A preset index exceeds the clip's keypoint count."""


class NoValidPoints(SignpipeError):
    """A normalization scope unit contains zero valid points."""


class NoDepthChannel(SignpipeError):
    """drop_depth was called on a clip without a z channel."""


# --- extractor protocol ----------------------------------------------------

class SpawnFailure(SignpipeError):
    """An external extractor backend could not be started."""


class HandshakeMismatch(SignpipeError):
    """Backend-reported dimensions differ from the configured expectations."""


class ProtocolError(SignpipeError):
    """The backend violated the wire protocol (malformed line, wrong index
    set, premature end of stream)."""


class BackendCrash(SignpipeError):
    """The backend process exited nonzero mid-stream."""


# --- media IO --------------------------------------------------------------

class Unreadable(SignpipeError):
    """A media file is missing or cannot be opened."""


class BadMetadata(SignpipeError):
    """Probed media metadata violates its invariants (e.g. fps <= 0)."""


class InvalidRange(SignpipeError):
    """A time range with start >= end or a non-positive rate."""


class DecodeFailure(SignpipeError):
    """Frame decoding failed or was requested beyond the media duration."""


class CommandFailure(SignpipeError):
    """An external media command exited nonzero; captured output attached."""

    def __init__(self, message: str, output: str = ""):
        super().__init__(message)
        self.output = output


# --- export ----------------------------------------------------------------

class DuplicateKey(SignpipeError):
    """Two samples in one export stream share a sanitized key."""


class WriteFailure(SignpipeError):
    """A shard or index file could not be written."""


class MalformedShard(SignpipeError):
    """A shard violates the layout contract (non-adjacent key reuse,
    truncated tar)."""


# --- pipeline --------------------------------------------------------------

class StageFailure(SignpipeError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
