"""Exception hierarchy shared by all pipeline stages."""


class GsrError(Exception):
    """Base class for every error raised by gsrecon."""


class DomainError(GsrError, ValueError):
    """An argument is outside the domain of an operation."""


class ProjectionError(GsrError):
    """A point cannot be projected (zero depth)."""


class NoIntersectionError(GsrError):
    """A viewing ray does not hit the ground plane in front of the camera."""


class DegeneracyError(GsrError):
    """A geometric configuration is degenerate (e.g. camera in the ground plane)."""


class InsufficientDataError(GsrError):
    """Not enough samples to estimate a quantity."""


class UnresolvedError(GsrError):
    """A vote could not be decided because nothing was collected."""


class ConfigError(GsrError):
    """Invalid configuration value or unknown key."""


class SchemaError(GsrError):
    """A record in an input file does not match its schema."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
