"""Error taxonomy for the bridge process."""


class BridgeError(Exception):
    """Base for everything this package raises on purpose."""


class ConfigError(BridgeError):
    """Bad bridge configuration or command line."""


class ToolkitUnavailable(BridgeError):
    """The backend's toolkit is missing, failed to load, or misbehaved."""


class MediaUnreadable(BridgeError):
    """A file_ref frame pointed at media the bridge could not decode."""


class ProtocolViolation(BridgeError):
    """The request stream broke the wire protocol."""
