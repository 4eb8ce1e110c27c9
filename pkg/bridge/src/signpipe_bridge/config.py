"""Bridge configuration: which toolkit to run and how to set it up."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigError

BACKEND_NAMES = ("holistic", "topdown_pose")


@dataclass(frozen=True, slots=True)
class BridgeConfig:
    """Which backend to serve and the knobs its toolkit needs.

    model_params are handed to the toolkit constructor verbatim; device
    is a hint ("cpu", "cuda:0") that each backend maps onto its own
    notion, or ignores when the toolkit has no such concept.
    """

    backend: str
    model_params: dict[str, Any] = field(default_factory=dict)
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.backend not in BACKEND_NAMES:
            raise ConfigError(
                f"unknown backend {self.backend!r}; expected one of {', '.join(BACKEND_NAMES)}"
            )
        if not isinstance(self.device, str) or not self.device:
            raise ConfigError("device must be a non-empty string")
