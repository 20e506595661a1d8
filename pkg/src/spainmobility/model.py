"""Domain vocabulary and request validation.

Everything here is an immutable value object: zone levels, dataset
versions with their availability windows, dataset kinds, demographic
taxonomies, and the validated request that drives acquisition. No network
or parsing work happens in this module.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

from .errors import (
    DateOutOfAvailability,
    MalformedDate,
    UnknownAlias,
    VersionZoneConflict,
)


class ZoneLevel(enum.Enum):
    DISTRICTS = "districts"
    MUNICIPALITIES = "municipalities"
    GREATER_URBAN_AREAS = "gau"


#: Accepted aliases per level, matched after case-folding.
ZONE_ALIASES: dict[ZoneLevel, frozenset[str]] = {
    ZoneLevel.DISTRICTS: frozenset({"districts", "distritos", "dist"}),
    ZoneLevel.MUNICIPALITIES: frozenset({"municipalities", "municipios", "muni"}),
    ZoneLevel.GREATER_URBAN_AREAS: frozenset(
        {"gau", "greater_urban_areas", "grandes_areas_urbanas"}
    ),
}


def parse_zone_level(alias: str) -> ZoneLevel:
    """Resolve a user-supplied zone level alias, case-insensitively."""
    folded = alias.strip().casefold()
    for level, aliases in ZONE_ALIASES.items():
        if folded in aliases:
            return level
    accepted = sorted(a for aliases in ZONE_ALIASES.values() for a in aliases)
    raise UnknownAlias(alias, accepted)


class DatasetVersion(enum.Enum):
    V1 = 1
    V2 = 2


#: Default availability windows (start, end); an open end is None.
#: The exact V1 end day is not published anywhere authoritative, so it can
#: be overridden through the catalog config.
DEFAULT_AVAILABILITY: dict[DatasetVersion, tuple[date, date | None]] = {
    DatasetVersion.V1: (date(2020, 2, 14), date(2021, 5, 9)),
    DatasetVersion.V2: (date(2022, 1, 1), None),
}


def parse_version(value: int | str | DatasetVersion) -> DatasetVersion:
    if isinstance(value, DatasetVersion):
        return value
    try:
        return DatasetVersion(int(value))
    except (ValueError, TypeError):
        raise ValueError(f"unknown dataset version {value!r}; expected 1 or 2") from None


class DatasetKind(enum.Enum):
    ORIGIN_DESTINATION = "od"
    TRIPS_PER_PERSON = "trips"
    OVERNIGHT_STAYS = "overnight"


class AgeBand(enum.Enum):
    A0_24 = "0-24"
    A25_44 = "25-44"
    A45_64 = "45-64"
    A65_PLUS = "65+"
    NOT_DISAGGREGATED = "ND"


class Gender(enum.Enum):
    MALE = "male"
    FEMALE = "female"
    NOT_DISAGGREGATED = "ND"


class IncomeBand(enum.Enum):
    LT_10K = "<10k"
    B10_15K = "10-15k"
    GT_15K = ">15k"
    NOT_DISAGGREGATED = "ND"


class ActivityKind(enum.Enum):
    HOME = "home"
    WORK_STUDY = "work_study"
    FREQUENT_VISIT = "frequent_visit"
    OTHER = "other"
    NOT_DISAGGREGATED = "ND"


class TripsBand(enum.Enum):
    T0 = "0"
    T1 = "1"
    T2 = "2"
    T2_PLUS = "2+"


@dataclass(frozen=True)
class DateRange:
    start: date
    end: date

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"start {self.start} after end {self.end}")

    def __str__(self) -> str:
        return f"{self.start.isoformat()}..{self.end.isoformat()}"


@dataclass(frozen=True)
class DatasetRequest:
    """A fully validated acquisition request.

    Construct through :func:`validate_request`; direct construction skips
    the version/level and availability checks.
    """

    version: DatasetVersion
    kind: DatasetKind
    level: ZoneLevel
    range: DateRange
    output_directory: Path


def _parse_date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise MalformedDate(text) from None


def check_version_level(version: DatasetVersion, level: ZoneLevel) -> None:
    if version is DatasetVersion.V1 and level is ZoneLevel.GREATER_URBAN_AREAS:
        raise VersionZoneConflict(version.value, level.value)


def availability_window(
    version: DatasetVersion,
    overrides: dict[DatasetVersion, tuple[date, date | None]] | None = None,
) -> tuple[date, date | None]:
    if overrides and version in overrides:
        return overrides[version]
    return DEFAULT_AVAILABILITY[version]


def validate_request(
    version: int | DatasetVersion,
    kind: DatasetKind,
    zones_alias: str,
    start: str,
    end: str | None = None,
    output_directory: str | Path = "data",
    availability: dict[DatasetVersion, tuple[date, date | None]] | None = None,
) -> DatasetRequest:
    """Validate and assemble a :class:`DatasetRequest`.

    The end date defaults to the start date. Dates outside the version's
    availability window are rejected, never clamped.
    """
    ver = parse_version(version)
    level = parse_zone_level(zones_alias)
    check_version_level(ver, level)

    start_day = _parse_date(start)
    end_day = _parse_date(end) if end is not None else start_day
    if start_day > end_day:
        raise DateOutOfAvailability(end_day, f"end before start {start_day}")

    window = availability_window(ver, availability)
    lo, hi = window
    window_text = f"{lo.isoformat()}..{hi.isoformat() if hi else 'open'}"
    for day in (start_day, end_day):
        if day < lo or (hi is not None and day > hi):
            raise DateOutOfAvailability(day, window_text)

    return DatasetRequest(
        version=ver,
        kind=kind,
        level=level,
        range=DateRange(start_day, end_day),
        output_directory=Path(output_directory),
    )


def enumerate_days(range_: DateRange) -> list[date]:
    """All calendar days of the range, inclusive, ascending."""
    n = (range_.end - range_.start).days + 1
    return [range_.start + timedelta(days=i) for i in range(n)]
