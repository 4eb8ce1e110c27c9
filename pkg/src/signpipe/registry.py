"""Name-based registration of pluggable pipeline components.

Components are selected by (kind, name) at runtime from the validated
config. The registry is assembled once at startup from the builtin set
plus any config-declared external-command backends, then treated as
read-only; there is no dynamic code loading or filesystem discovery.
"""

from __future__ import annotations

from bisect import bisect_left
from typing import Any, Callable

from .errors import DuplicateName, UnknownName

KINDS = ("dataset", "processor", "postprocessor", "exporter", "extractor", "mediaio")

Factory = Callable[..., Any]


class Registry:
    """Case-sensitive (kind, name) -> factory table."""

    def __init__(self) -> None:
        self._entries: dict[tuple[str, str], Factory] = {}

    def _check_kind(self, kind: str) -> None:
        if kind not in KINDS:
            raise ValueError(f"unknown registry kind '{kind}'; expected one of {KINDS}")

    def register(self, kind: str, name: str, factory: Factory) -> None:
        """Add one entry; a second registration of the same pair fails.

        Raises:
            DuplicateName: the (kind, name) pair is already present.
        """
        self._check_kind(kind)
        if not name:
            raise ValueError("registry names must be non-empty")
        key = (kind, name)
        if key in self._entries:
            raise DuplicateName(f"{kind} '{name}' is already registered")
        self._entries[key] = factory

    def resolve(self, kind: str, name: str) -> Factory:
        """Exact-match lookup.

        Raises:
            UnknownName: no such entry; the message lists the three
                lexicographically closest registered names of that kind.
        """
        self._check_kind(kind)
        try:
            return self._entries[(kind, name)]
        except KeyError:
            suggestions = self._closest(kind, name)
            hint = f" (closest: {', '.join(suggestions)})" if suggestions else ""
            raise UnknownName(f"no {kind} named '{name}'{hint}") from None

    def list(self, kind: str) -> list[str]:
        """Sorted names registered under one kind; never errors."""
        self._check_kind(kind)
        return sorted(n for k, n in self._entries if k == kind)

    def _closest(self, kind: str, name: str) -> list[str]:
        names = self.list(kind)
        if not names:
            return []
        lo = bisect_left(names, name)
        start = max(0, min(lo - 1, len(names) - 3))
        return names[start:start + 3]


def default_registry() -> Registry:
    """Fresh registry holding every builtin component.

    Imports lazily so that module import order never cycles.
    """
    from . import adapters, export, extractor, mediaio, posepost, workers

    registry = Registry()
    for name, factory in adapters.BUILTIN_ADAPTERS.items():
        registry.register("dataset", name, factory)
    registry.register("processor", "pose", workers.pose_processor)
    registry.register("processor", "video", workers.video_processor)
    registry.register("postprocessor", "standard", posepost.standard_chain)
    registry.register("exporter", "webdataset", export.write_shards)
    registry.register("extractor", "synthetic", extractor.SyntheticSession)
    registry.register("extractor", "external_command", extractor.CommandSession)
    registry.register("mediaio", "synthetic", mediaio.SyntheticMedia)
    registry.register("mediaio", "external_command", mediaio.CommandMedia)
    return registry
