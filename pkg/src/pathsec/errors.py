"""Exception types raised across the package."""


class PathsecError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(PathsecError, ValueError):
    pass


class InvalidKindError(PathsecError, ValueError):
    pass


class ParseError(PathsecError, ValueError):
    """Malformed window file. ``row``/``column`` locate the offending cell when known."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(PathsecError, ValueError):
    pass


class InsufficientSamplesError(PathsecError, ValueError):
    pass


class ThresholdUndefinedError(PathsecError, ValueError):
    """No positive residual eigenvalue is available to build a Q threshold."""


class EntropyUndefinedError(PathsecError, ValueError):
    pass


class UnknownSignatureError(PathsecError, KeyError):
    pass


class GraphError(PathsecError, ValueError):
    pass


class ConfigError(PathsecError, ValueError):
    pass


class MissingArtifactError(PathsecError, FileNotFoundError):
    pass
