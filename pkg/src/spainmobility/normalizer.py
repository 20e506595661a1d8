"""Streaming normalization of raw gzipped delimited drops.

Raw daily files are gzip-compressed, header-bearing delimited text. A
:class:`SchemaMap` (shipped in the catalog config, one per dataset kind and
version) binds raw column names to normalized fields and raw tokens to the
demographic/activity taxonomies. Unknown tokens are parse errors, never
silent defaults; raw null markers map to the not-disaggregated variants.
"""

from __future__ import annotations

import csv
import enum
import gzip
import os
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Iterator

import pandas as pd
import pyarrow as pa
import pyarrow.dataset as pads

from .catalog import CatalogConfig, load_catalog, resolve_resources
from .errors import (
    EmptyResult,
    GzipCorrupt,
    MalformedRow,
    SchemaMismatch,
)
from .fetcher import ENV_CACHE_ROOT, CacheEntry, FetchPolicy, fetch_all
from .model import (
    ActivityKind,
    AgeBand,
    DatasetKind,
    DatasetRequest,
    Gender,
    IncomeBand,
    TripsBand,
)

_MAX_REPORTED_ERRORS = 100
_ZONE_ID = re.compile(r"^[A-Za-z0-9_.\-]+$")


class ParseMode(enum.Enum):
    STRICT = "strict"
    LENIENT = "lenient"


@dataclass(frozen=True)
class SchemaMap:
    schema_id: str
    delimiter: str
    has_header: bool
    columns: dict[str, str]  # normalized field -> raw column name
    value_maps: dict[str, dict[str, str]]
    null_tokens: frozenset[str]
    decimal_separator: str = "."
    date_format: str = "%Y%m%d"

    @classmethod
    def from_config(cls, schema_id: str, raw: dict) -> "SchemaMap":
        return cls(
            schema_id=schema_id,
            delimiter=raw.get("delimiter", "|"),
            has_header=raw.get("has_header", True),
            columns=dict(raw["columns"]),
            value_maps={k: dict(v) for k, v in raw.get("value_maps", {}).items()},
            null_tokens=frozenset(raw.get("null_tokens", ["NA", "", "-"])),
            decimal_separator=raw.get("decimal_separator", "."),
            date_format=raw.get("date_format", "%Y%m%d"),
        )


@dataclass
class ParseReport:
    rows_read: int = 0
    rows_emitted: int = 0
    rows_skipped: int = 0
    first_errors: list[tuple[int, str]] = field(default_factory=list)

    def record_error(self, line_number: int, message: str) -> None:
        self.rows_skipped += 1
        if len(self.first_errors) < _MAX_REPORTED_ERRORS:
            self.first_errors.append((line_number, message))


@dataclass(frozen=True)
class ODRecord:
    day: date
    hour: int
    origin: str
    destination: str
    activity_origin: ActivityKind
    activity_destination: ActivityKind
    age: AgeBand
    gender: Gender
    income: IncomeBand
    distance_band: str
    trips: float
    trips_km: float


@dataclass(frozen=True)
class TripsPerPersonRecord:
    day: date
    zone: str
    age: AgeBand
    gender: Gender
    trips_band: TripsBand
    persons: float


@dataclass(frozen=True)
class OvernightStayRecord:
    day: date
    residence_zone: str
    overnight_zone: str
    persons: float


# ---------------------------------------------------------------------------
# Field parsers
# ---------------------------------------------------------------------------


class _RowContext:
    """Access raw row values by normalized field name, with token mapping."""

    def __init__(self, schema: SchemaMap, header_index: dict[str, int], row: list[str]):
        self.schema = schema
        self.index = header_index
        self.row = row

    def raw(self, fieldname: str) -> str | None:
        raw_column = self.schema.columns.get(fieldname)
        if raw_column is None:
            return None
        position = self.index[raw_column]
        if position >= len(self.row):
            raise ValueError(f"row too short for column {raw_column!r}")
        return self.row[position].strip()

    def text(self, fieldname: str) -> str:
        value = self.raw(fieldname)
        if value is None or value == "":
            raise ValueError(f"missing value for {fieldname}")
        return value

    def zone_id(self, fieldname: str) -> str:
        value = self.text(fieldname)
        if not _ZONE_ID.match(value):
            raise ValueError(f"bad zone id {value!r} for {fieldname}")
        return value

    def day(self, fieldname: str = "day") -> date:
        value = self.text(fieldname)
        try:
            return datetime.strptime(value, self.schema.date_format).date()
        except ValueError:
            raise ValueError(f"bad date {value!r}") from None

    def hour(self, fieldname: str = "hour") -> int:
        value = self.text(fieldname)
        try:
            hour = int(value)
        except ValueError:
            raise ValueError(f"bad hour {value!r}") from None
        if not 0 <= hour <= 23:
            raise ValueError(f"hour {hour} outside 0..23")
        return hour

    def number(self, fieldname: str) -> float:
        value = self.text(fieldname)
        if self.schema.decimal_separator != ".":
            value = value.replace(self.schema.decimal_separator, ".")
        try:
            number = float(value)
        except ValueError:
            raise ValueError(f"bad number {value!r} for {fieldname}") from None
        if number < 0 or number != number:
            raise ValueError(f"negative or NaN {fieldname}: {value!r}")
        return number

    def mapped(self, fieldname: str, enum_type):
        """Map a raw token to a taxonomy variant via the schema value map.

        An absent column and raw null markers both yield the
        not-disaggregated variant; any other unmapped token is an error.
        """
        value = self.raw(fieldname)
        if value is None or value in self.schema.null_tokens:
            return enum_type("ND") if "ND" in {m.value for m in enum_type} else None
        mapping = self.schema.value_maps.get(fieldname, {})
        if value in mapping:
            return enum_type(mapping[value])
        raise ValueError(f"unmapped {fieldname} token {value!r}")

    def trips_band(self) -> TripsBand:
        value = self.text("trips_band")
        mapping = self.schema.value_maps.get("trips_band", {})
        if value in mapping:
            return TripsBand(mapping[value])
        raise ValueError(f"unmapped trips band token {value!r}")


def _build_od(ctx: _RowContext) -> ODRecord:
    return ODRecord(
        day=ctx.day(),
        hour=ctx.hour(),
        origin=ctx.zone_id("origin"),
        destination=ctx.zone_id("destination"),
        activity_origin=ctx.mapped("activity_origin", ActivityKind),
        activity_destination=ctx.mapped("activity_destination", ActivityKind),
        age=ctx.mapped("age", AgeBand),
        gender=ctx.mapped("gender", Gender),
        income=ctx.mapped("income", IncomeBand),
        distance_band=ctx.text("distance_band"),
        trips=ctx.number("trips"),
        trips_km=ctx.number("trips_km"),
    )


def _build_trips(ctx: _RowContext) -> TripsPerPersonRecord:
    return TripsPerPersonRecord(
        day=ctx.day(),
        zone=ctx.zone_id("zone"),
        age=ctx.mapped("age", AgeBand),
        gender=ctx.mapped("gender", Gender),
        trips_band=ctx.trips_band(),
        persons=ctx.number("persons"),
    )


def _build_overnight(ctx: _RowContext) -> OvernightStayRecord:
    return OvernightStayRecord(
        day=ctx.day(),
        residence_zone=ctx.zone_id("residence_zone"),
        overnight_zone=ctx.zone_id("overnight_zone"),
        persons=ctx.number("persons"),
    )


# ---------------------------------------------------------------------------
# File parsing
# ---------------------------------------------------------------------------


def _entry_path(entry: CacheEntry | Path | str) -> Path:
    if isinstance(entry, CacheEntry):
        return entry.local_path
    return Path(entry)


def _parse_file(entry, schema: SchemaMap, mode: ParseMode, builder, report: ParseReport) -> Iterator:
    path = _entry_path(entry)
    try:
        with gzip.open(path, "rt", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh, delimiter=schema.delimiter)
            try:
                header = next(reader, None)
            except (OSError, EOFError, gzip.BadGzipFile) as exc:
                raise GzipCorrupt(f"{path}: {exc}") from exc
            if not schema.has_header:
                raise SchemaMismatch(f"{schema.schema_id}: headerless schemas need explicit indexes")
            if header is None:
                return
            header = [h.strip() for h in header]
            missing = [c for c in schema.columns.values() if c not in header]
            if missing:
                raise SchemaMismatch(
                    f"{path}: header missing bound columns {missing}; got {header}"
                )
            header_index = {name: i for i, name in enumerate(header)}
            line_number = 1
            try:
                for row in reader:
                    line_number += 1
                    if not row:
                        continue
                    report.rows_read += 1
                    try:
                        record = builder(_RowContext(schema, header_index, row))
                    except ValueError as exc:
                        if mode is ParseMode.STRICT:
                            raise MalformedRow(line_number, str(exc)) from exc
                        report.record_error(line_number, str(exc))
                        continue
                    report.rows_emitted += 1
                    yield record
            except (OSError, EOFError, gzip.BadGzipFile) as exc:
                raise GzipCorrupt(f"{path}: {exc}") from exc
    except gzip.BadGzipFile as exc:
        raise GzipCorrupt(f"{path}: {exc}") from exc


def parse_od_file(entry, schema: SchemaMap, mode: ParseMode = ParseMode.STRICT):
    """Parse one raw OD drop. Returns (record iterator, report).

    The report's counters are final only after the iterator is exhausted.
    """
    report = ParseReport()
    return _parse_file(entry, schema, mode, _build_od, report), report


def parse_trips_file(entry, schema: SchemaMap, mode: ParseMode = ParseMode.STRICT):
    report = ParseReport()
    return _parse_file(entry, schema, mode, _build_trips, report), report


def parse_overnight_file(entry, schema: SchemaMap, mode: ParseMode = ParseMode.STRICT):
    report = ParseReport()
    return _parse_file(entry, schema, mode, _build_overnight, report), report


# ---------------------------------------------------------------------------
# Normalized tables and export
# ---------------------------------------------------------------------------

OD_DIMENSIONS = [
    "day",
    "hour",
    "origin",
    "destination",
    "activity_origin",
    "activity_destination",
    "age",
    "gender",
    "income",
    "distance_band",
]
OD_MEASURES = ["trips", "trips_km"]

TRIPS_COLUMNS = ["day", "zone", "age", "gender", "trips_band", "persons"]
OVERNIGHT_COLUMNS = ["day", "residence_zone", "overnight_zone", "persons"]


def _enum_label(value) -> str:
    return value.value if isinstance(value, enum.Enum) else value


def od_records_to_frame(records: list[ODRecord]) -> pd.DataFrame:
    rows = [
        {
            "day": r.day.isoformat(),
            "hour": r.hour,
            "origin": r.origin,
            "destination": r.destination,
            "activity_origin": _enum_label(r.activity_origin),
            "activity_destination": _enum_label(r.activity_destination),
            "age": _enum_label(r.age),
            "gender": _enum_label(r.gender),
            "income": _enum_label(r.income),
            "distance_band": r.distance_band,
            "trips": r.trips,
            "trips_km": r.trips_km,
        }
        for r in records
    ]
    return pd.DataFrame(rows, columns=OD_DIMENSIONS + OD_MEASURES)


def trips_records_to_frame(records: list[TripsPerPersonRecord]) -> pd.DataFrame:
    rows = [
        {
            "day": r.day.isoformat(),
            "zone": r.zone,
            "age": _enum_label(r.age),
            "gender": _enum_label(r.gender),
            "trips_band": _enum_label(r.trips_band),
            "persons": r.persons,
        }
        for r in records
    ]
    return pd.DataFrame(rows, columns=TRIPS_COLUMNS)


def overnight_records_to_frame(records: list[OvernightStayRecord]) -> pd.DataFrame:
    rows = [
        {
            "day": r.day.isoformat(),
            "residence_zone": r.residence_zone,
            "overnight_zone": r.overnight_zone,
            "persons": r.persons,
        }
        for r in records
    ]
    return pd.DataFrame(rows, columns=OVERNIGHT_COLUMNS)


def collapse_activity(table: pd.DataFrame) -> pd.DataFrame:
    """Drop both activity columns, summing the measures over collapsed groups."""
    dims = [c for c in OD_DIMENSIONS if c not in ("activity_origin", "activity_destination")]
    collapsed = (
        table.drop(columns=["activity_origin", "activity_destination"])
        .groupby(dims, as_index=False, sort=False, dropna=False)[OD_MEASURES]
        .sum()
    )
    return collapsed


def sort_canonical(table: pd.DataFrame, columns: list[str]) -> pd.DataFrame:
    keys = [c for c in columns if c in table.columns and c not in OD_MEASURES and c != "persons"]
    return table.sort_values(keys, kind="mergesort", ignore_index=True)


@dataclass(frozen=True)
class TableHandle:
    """Handle to an exported Parquet dataset, partitioned by day."""

    path: Path
    columns: tuple[str, ...]

    def read(self) -> pd.DataFrame:
        dataset = pads.dataset(
            str(self.path),
            format="parquet",
            partitioning=pads.partitioning(pa.schema([("day", pa.string())]), flavor="hive"),
        )
        frame = dataset.to_table().to_pandas()
        frame["day"] = frame["day"].astype(str)
        frame = frame[list(self.columns)]
        return sort_canonical(frame, list(self.columns))

    def to_csv(self, path: str | Path) -> Path:
        # RFC 4180 quoting, UTF-8, LF line endings.
        path = Path(path)
        self.read().to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
        return path


def write_table(table: pd.DataFrame, out_dir: str | Path, columns: list[str]) -> TableHandle:
    """Write a normalized table as a day-partitioned Parquet dataset.

    Output is deterministic: fixed row order, fixed file naming, one file
    per day partition.
    """
    out_dir = Path(out_dir)
    table = sort_canonical(table[columns], columns)
    arrow = pa.Table.from_pandas(table, preserve_index=False)
    pads.write_dataset(
        arrow,
        str(out_dir),
        format="parquet",
        partitioning=pads.partitioning(pa.schema([("day", pa.string())]), flavor="hive"),
        basename_template="part-{i}.parquet",
        existing_data_behavior="delete_matching",
    )
    return TableHandle(path=out_dir, columns=tuple(columns))


# ---------------------------------------------------------------------------
# End-to-end retrieval
# ---------------------------------------------------------------------------


def default_cache_root() -> Path:
    configured = os.environ.get(ENV_CACHE_ROOT)
    if configured:
        return Path(configured)
    return Path.home() / ".cache" / "spainmobility"


_PARSERS = {
    DatasetKind.ORIGIN_DESTINATION: (parse_od_file, od_records_to_frame),
    DatasetKind.TRIPS_PER_PERSON: (parse_trips_file, trips_records_to_frame),
    DatasetKind.OVERNIGHT_STAYS: (parse_overnight_file, overnight_records_to_frame),
}


def _retrieve(
    request: DatasetRequest,
    catalog: CatalogConfig | None,
    policy: FetchPolicy | None,
    cache_root: str | Path | None,
    mode: ParseMode,
    session=None,
    report_sink: list[ParseReport] | None = None,
) -> tuple[pd.DataFrame, list[ParseReport]]:
    catalog = catalog or load_catalog()
    policy = policy or FetchPolicy(checksum_mode=catalog.checksum_mode)
    cache_root = Path(cache_root) if cache_root else default_cache_root()
    descriptors = resolve_resources(request, catalog)
    entries = fetch_all(descriptors, policy, cache_root, session=session)
    parse, to_frame = _PARSERS[request.kind]
    frames = []
    reports = []
    for entry in entries:
        schema_raw = catalog.schemas.get(entry.descriptor.schema_id)
        if schema_raw is None:
            raise SchemaMismatch(f"catalog has no schema {entry.descriptor.schema_id!r}")
        schema = SchemaMap.from_config(entry.descriptor.schema_id, schema_raw)
        stream, report = parse(entry, schema, mode)
        frames.append(to_frame(list(stream)))
        reports.append(report)
        if report_sink is not None:
            report_sink.append(report)
    combined = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    if combined.empty:
        raise EmptyResult()
    return combined, reports


def _output_dir(request: DatasetRequest, suffix: str = "") -> Path:
    name = (
        f"{request.kind.value}{suffix}_{request.level.value}_v{request.version.value}_"
        f"{request.range.start.isoformat()}_{request.range.end.isoformat()}"
    )
    return request.output_directory / name


def get_od_data(
    request: DatasetRequest,
    keep_activity: bool = True,
    catalog: CatalogConfig | None = None,
    policy: FetchPolicy | None = None,
    cache_root: str | Path | None = None,
    mode: ParseMode = ParseMode.STRICT,
    session=None,
    report_sink: list[ParseReport] | None = None,
) -> TableHandle:
    """Fetch, normalize, and export origin-destination flows.

    With ``keep_activity=False`` the two activity columns are dropped and
    person-trips / person-kilometers are summed over the collapsed groups.
    """
    if request.kind is not DatasetKind.ORIGIN_DESTINATION:
        raise ValueError(f"request kind is {request.kind}, expected origin-destination")
    table, _ = _retrieve(request, catalog, policy, cache_root, mode, session, report_sink)
    if not keep_activity:
        table = collapse_activity(table)
        columns = [c for c in OD_DIMENSIONS if c not in ("activity_origin", "activity_destination")]
        columns += OD_MEASURES
    else:
        columns = OD_DIMENSIONS + OD_MEASURES
    return write_table(table, _output_dir(request), columns)


def get_number_of_trips_data(
    request: DatasetRequest,
    catalog: CatalogConfig | None = None,
    policy: FetchPolicy | None = None,
    cache_root: str | Path | None = None,
    mode: ParseMode = ParseMode.STRICT,
    session=None,
    report_sink: list[ParseReport] | None = None,
) -> TableHandle:
    """Fetch, normalize, and export trips-per-person counts."""
    if request.kind is not DatasetKind.TRIPS_PER_PERSON:
        raise ValueError(f"request kind is {request.kind}, expected trips-per-person")
    table, _ = _retrieve(request, catalog, policy, cache_root, mode, session, report_sink)
    return write_table(table, _output_dir(request), TRIPS_COLUMNS)


def get_overnight_stays_data(
    request: DatasetRequest,
    catalog: CatalogConfig | None = None,
    policy: FetchPolicy | None = None,
    cache_root: str | Path | None = None,
    mode: ParseMode = ParseMode.STRICT,
    session=None,
    report_sink: list[ParseReport] | None = None,
) -> TableHandle:
    """Fetch, normalize, and export overnight-stay counts."""
    if request.kind is not DatasetKind.OVERNIGHT_STAYS:
        raise ValueError(f"request kind is {request.kind}, expected overnight-stays")
    table, _ = _retrieve(request, catalog, policy, cache_root, mode, session, report_sink)
    return write_table(table, _output_dir(request), OVERNIGHT_COLUMNS)
