"""Exception types shared across the runtime."""


class ReflectoolError(Exception):
    """Base class for all runtime errors."""


class ParseError(ReflectoolError):
    """A backend emission could not be parsed (malformed action line, etc.)."""


class MatchError(ReflectoolError):
    """An answer matcher could not interpret one of its inputs."""


class BackendError(ReflectoolError):
    """A generation backend failed: network error, non-2xx, exhausted script."""


class FormatError(ReflectoolError):
    """A file on disk does not conform to its expected schema or version."""
