"""Standardized access to the Spanish Ministry of Transport's open
mobility datasets: download, cache, normalize, export, and analyze."""

from __future__ import annotations

from pathlib import Path

__version__ = "0.1.0"

from .catalog import CatalogConfig, ResourceDescriptor, load_catalog  # noqa: E402
from .fetcher import CacheEntry, FetchPolicy  # noqa: E402
from .model import (  # noqa: E402
    ActivityKind,
    AgeBand,
    DatasetKind,
    DatasetRequest,
    DatasetVersion,
    DateRange,
    Gender,
    IncomeBand,
    TripsBand,
    ZoneLevel,
    enumerate_days,
    parse_zone_level,
    validate_request,
)
from .normalizer import (  # noqa: E402
    ODRecord,
    OvernightStayRecord,
    ParseMode,
    ParseReport,
    SchemaMap,
    TableHandle,
    TripsPerPersonRecord,
    get_number_of_trips_data,
    get_od_data,
    get_overnight_stays_data,
)
from .zones import (  # noqa: E402
    ZoneGeometry,
    ZoneRelation,
    ZoneRelations,
    aggregate_to_level,
    compute_area_km2,
    get_zone_geodataframe,
    get_zone_relations,
    mean_area_by_level,
)


class Mobility:
    """Convenience wrapper binding version, zone level, date range, and
    output directory once, with one retrieval method per dataset kind."""

    def __init__(
        self,
        version: int = 2,
        zones: str = "municipalities",
        start_date: str | None = None,
        end_date: str | None = None,
        output_directory: str | Path = "data",
        catalog: CatalogConfig | None = None,
        policy: FetchPolicy | None = None,
        cache_root: str | Path | None = None,
    ):
        if start_date is None:
            raise ValueError("start_date is mandatory")
        self._catalog = catalog or load_catalog()
        self._policy = policy
        self._cache_root = cache_root
        self._args = dict(
            version=version,
            zones_alias=zones,
            start=start_date,
            end=end_date,
            output_directory=output_directory,
            availability=self._catalog.availability_overrides,
        )
        # Validate eagerly so bad parameters fail at construction.
        validate_request(kind=DatasetKind.ORIGIN_DESTINATION, **self._args)

    def _request(self, kind: DatasetKind) -> DatasetRequest:
        return validate_request(kind=kind, **self._args)

    def get_od_data(self, keep_activity: bool = False) -> TableHandle:
        return get_od_data(
            self._request(DatasetKind.ORIGIN_DESTINATION),
            keep_activity=keep_activity,
            catalog=self._catalog,
            policy=self._policy,
            cache_root=self._cache_root,
        )

    def get_number_of_trips_data(self) -> TableHandle:
        return get_number_of_trips_data(
            self._request(DatasetKind.TRIPS_PER_PERSON),
            catalog=self._catalog,
            policy=self._policy,
            cache_root=self._cache_root,
        )

    def get_overnight_stays_data(self) -> TableHandle:
        return get_overnight_stays_data(
            self._request(DatasetKind.OVERNIGHT_STAYS),
            catalog=self._catalog,
            policy=self._policy,
            cache_root=self._cache_root,
        )


class Zones:
    """Convenience wrapper for study-area geometries and the relation table."""

    def __init__(
        self,
        zones: str = "municipalities",
        version: int = 2,
        output_directory: str | Path = "data",
        catalog: CatalogConfig | None = None,
        policy: FetchPolicy | None = None,
        cache_root: str | Path | None = None,
    ):
        from .model import check_version_level, parse_version

        self.level = parse_zone_level(zones)
        self.version = parse_version(version)
        check_version_level(self.version, self.level)
        self.output_directory = Path(output_directory)
        self._catalog = catalog or load_catalog()
        self._policy = policy
        self._cache_root = cache_root

    def get_zone_geodataframe(self) -> list[ZoneGeometry]:
        return get_zone_geodataframe(
            self.level,
            self.version,
            catalog=self._catalog,
            policy=self._policy,
            cache_root=self._cache_root,
            output_directory=self.output_directory,
        )

    def get_zone_relations(self) -> ZoneRelations:
        return get_zone_relations(
            catalog=self._catalog,
            policy=self._policy,
            cache_root=self._cache_root,
        )
