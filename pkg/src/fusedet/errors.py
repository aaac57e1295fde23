"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class FusedetError(Exception):
    """Base class for all engine errors."""


class ParseError(FusedetError):
    """A file or wire payload violates its documented schema."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc = path if line is None else f"{path}:{line}"
            message = f"{loc}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class ProtocolError(FusedetError):
    """The backend answered with a malformed or inconsistent message."""


class BackendError(FusedetError):
    """The backend reported a failure for a request."""


class MatrixBuildError(FusedetError):
    """Text-matrix construction aborted before all classes completed."""

    def __init__(self, message: str, *, completed: int, total: int):
        super().__init__(f"{message} (completed {completed}/{total} classes)")
        self.completed = completed
        self.total = total
