"""Exception hierarchy shared by all ranger modules."""

from __future__ import annotations


class RangerError(Exception):
    """Base class for domain errors (CLI exit code 1)."""

    code = "RangerError"

    def __str__(self) -> str:
        # KeyError would otherwise repr() the message
        return str(self.args[0]) if self.args else ""


class EmptyVersion(RangerError, ValueError):
    code = "EmptyVersion"


class MalformedRange(RangerError, ValueError):
    code = "MalformedRange"


class EmptySelection(RangerError, ValueError):
    code = "EmptySelection"


class SchemaError(RangerError, ValueError):
    code = "SchemaError"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnorderedEvents(SchemaError):
    code = "UnorderedEvents"


class XmlError(RangerError, ValueError):
    code = "XmlError"


class MissingCoordinates(RangerError, ValueError):
    code = "MissingCoordinates"


class VersionMismatch(RangerError):
    """Snapshot container has an unknown magic or format version."""

    code = "VersionMismatch"


class SnapshotCorrupt(RangerError, OSError):
    """Snapshot is truncated or fails its checksum."""

    code = "IoError"


class NoSuchEdge(RangerError, KeyError):
    code = "NoSuchEdge"


class NoSuchRelease(RangerError, KeyError):
    code = "NoSuchRelease"


class NoReleaseBefore(RangerError, LookupError):
    code = "NoReleaseBefore"


class EmptySeries(RangerError, ValueError):
    code = "EmptySeries"


class MissingReleaseDates(RangerError, ValueError):
    code = "MissingReleaseDates"


class MissingSurface(RangerError, LookupError):
    code = "MissingSurface"


class SpawnError(RangerError, OSError):
    code = "SpawnError"


class UnknownVulnerability(RangerError, KeyError):
    code = "UnknownVulnerability"
