"""Exception hierarchy.

Three families map onto the CLI exit codes: validation problems (bad user
input, exit 3), network problems (exit 4), and data problems (broken or
unexpected content, exit 5).
"""

from __future__ import annotations


class SpainMobilityError(Exception):
    """Base class for all library errors."""


# ---------------------------------------------------------------------------
# Validation errors (exit code 3)
# ---------------------------------------------------------------------------


class ValidationError(SpainMobilityError):
    """The request itself is invalid, before any I/O happens."""


class UnknownAlias(ValidationError):
    def __init__(self, alias: str, accepted: list[str]):
        self.alias = alias
        self.accepted = accepted
        super().__init__(
            f"unknown zone level alias {alias!r}; accepted: {', '.join(accepted)}"
        )


class MalformedDate(ValidationError):
    def __init__(self, text: str):
        self.text = text
        super().__init__(f"not an ISO-8601 calendar date: {text!r}")


class DateOutOfAvailability(ValidationError):
    def __init__(self, day, window):
        self.day = day
        self.window = window
        super().__init__(f"date {day} outside availability window {window}")


class VersionZoneConflict(ValidationError):
    def __init__(self, version, level):
        self.version = version
        self.level = level
        super().__init__(
            f"zone level {level} is not available in dataset version {version}"
        )


class LevelNotFiner(ValidationError):
    def __init__(self, source, target):
        super().__init__(f"cannot aggregate from {source} to {target}: source level is not finer")


class UnknownZone(ValidationError):
    def __init__(self, zone_id: str):
        self.zone_id = zone_id
        super().__init__(f"zone id {zone_id!r} not present in the table")


class UnknownDimension(ValidationError):
    def __init__(self, dimension: str, accepted: list[str]):
        super().__init__(
            f"unknown demographic dimension {dimension!r}; accepted: {', '.join(accepted)}"
        )


class EmptyCollection(ValidationError):
    pass


class EmptyTable(ValidationError):
    pass


# ---------------------------------------------------------------------------
# Network errors (exit code 4)
# ---------------------------------------------------------------------------


class NetworkError(SpainMobilityError):
    pass


class HttpError(NetworkError):
    def __init__(self, status: int | None, url: str, detail: str = ""):
        self.status = status
        self.url = url
        msg = f"HTTP error {status} for {url}" if status else f"transport error for {url}"
        super().__init__(msg + (f": {detail}" if detail else ""))


class OfflineMiss(NetworkError):
    def __init__(self, url: str):
        self.url = url
        super().__init__(f"offline mode and not cached: {url}")


class NotYetPublished(NetworkError):
    def __init__(self, day, earliest_allowed):
        self.day = day
        self.earliest_allowed = earliest_allowed
        super().__init__(
            f"data for {day} not yet published (publication delay; latest available day is {earliest_allowed})"
        )


class PartialFailure(NetworkError):
    """Some transfers of a batch failed; carries per-descriptor causes."""

    def __init__(self, succeeded, failed):
        self.succeeded = succeeded  # list[CacheEntry]
        self.failed = failed  # list[(ResourceDescriptor, Exception)]
        days = ", ".join(str(d.day) for d, _ in failed)
        super().__init__(
            f"{len(failed)} of {len(succeeded) + len(failed)} transfers failed (days: {days})"
        )


# ---------------------------------------------------------------------------
# Data errors (exit code 5)
# ---------------------------------------------------------------------------


class DataError(SpainMobilityError):
    pass


class ConfigParseError(DataError):
    def __init__(self, path, message: str):
        self.path = path
        super().__init__(f"bad catalog config {path}: {message}")


class MissingTemplate(DataError):
    def __init__(self, version, kind, level):
        self.combination = (version, kind, level)
        super().__init__(f"catalog has no URL template for ({version}, {kind}, {level})")


class SchemaMismatch(DataError):
    pass


class GzipCorrupt(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class IntegrityError(DataError):
    def __init__(self, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"integrity check failed: expected {expected}, got {actual}")


class ManifestCorrupt(DataError):
    def __init__(self, path, detail: str):
        super().__init__(f"cache manifest corrupt at {path}: {detail}")


class GeometryParseError(DataError):
    def __init__(self, feature_index: int, detail: str):
        self.feature_index = feature_index
        super().__init__(f"feature {feature_index}: {detail}")


class DegenerateGeometry(DataError):
    pass


class RelationIntegrityError(DataError):
    def __init__(self, district_id: str, parents):
        self.district_id = district_id
        self.parents = parents
        super().__init__(
            f"district {district_id!r} listed under multiple parents: {sorted(parents)}"
        )


class UnmappedZone(DataError):
    def __init__(self, zone_id: str):
        self.zone_id = zone_id
        super().__init__(f"zone id {zone_id!r} has no image in the relation table")


class EmptyResult(DataError):
    def __init__(self, detail: str = "every requested day parsed to zero rows"):
        super().__init__(detail)
