"""Exception hierarchy shared by all netvendor modules."""


class NetvendorError(Exception):
    """Base class for all errors raised by this package."""


class EncodeError(NetvendorError):
    """A header field is out of range or a packet cannot be serialized."""


class DecodeError(NetvendorError):
    """Wire bytes could not be parsed. `layer` names the offending layer."""

    def __init__(self, layer: str, message: str):
        self.layer = layer
        super().__init__(f"{layer}: {message}")


class ConfigError(NetvendorError):
    """Invalid configuration (catalog entries, profiles, CLI inputs)."""


class DataError(NetvendorError):
    """A data file is malformed. `line` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += path
        if line is not None:
            where += f" line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class SchemaError(NetvendorError):
    """Feature vectors, vocabulary, or model do not agree on a schema."""


class ScanError(NetvendorError):
    """Scan aborted by a transport failure; carries the records finished so far."""

    def __init__(self, message: str, partial=None):
        self.partial = partial if partial is not None else []
        super().__init__(message)
