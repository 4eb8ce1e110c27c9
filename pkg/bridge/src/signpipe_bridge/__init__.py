"""Child-process pose backend speaking the landmark-extractor wire protocol.

One process serves one session: an init handshake, a stream of frame
requests answered with landmarks or no_detection, and a done line on
end. Real toolkits load lazily per backend; --mock answers zeros so
protocol conformance is testable without any model weights installed.
"""

from .backends import BACKENDS, BackendInfo, assemble_holistic, convert_topdown
from .config import BridgeConfig
from .errors import (
    BridgeError,
    ConfigError,
    MediaUnreadable,
    ProtocolViolation,
    ToolkitUnavailable,
)
from .serve import serve

__all__ = [
    "BACKENDS",
    "BackendInfo",
    "BridgeConfig",
    "BridgeError",
    "ConfigError",
    "MediaUnreadable",
    "ProtocolViolation",
    "ToolkitUnavailable",
    "assemble_holistic",
    "convert_topdown",
    "serve",
]

__version__ = "0.1.0"
