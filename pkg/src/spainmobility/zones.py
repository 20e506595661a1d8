"""Study-area tessellations, the cross-level relation table, and
level-to-level aggregation of mobility tables.

Areas are computed on the WGS84 ellipsoid (the zones span 27 degrees of
longitude including the Canaries, so planar approximations are out).
Polygon edges are treated as linear in lon/lat, which matches how the
boundary files are digitized.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from shapely.geometry import mapping, shape
from shapely.validation import make_valid

from .catalog import CatalogConfig, load_catalog, resolve_geometry, resolve_relations
from .errors import (
    DegenerateGeometry,
    EmptyCollection,
    GeometryParseError,
    LevelNotFiner,
    RelationIntegrityError,
    SchemaMismatch,
    UnmappedZone,
)
from .fetcher import FetchPolicy, fetch
from .model import DatasetVersion, ZoneLevel

# WGS84 ellipsoid
_A = 6378137.0  # semi-major axis, meters
_F = 1.0 / 298.257223563
_E2 = _F * (2.0 - _F)
_E = math.sqrt(_E2)

#: Bucket id for zones outside every greater urban area; keeps aggregation
#: conservative instead of silently dropping their trips.
NON_GAU_BUCKET = "NON_GAU"

#: Bucket id used in lenient aggregation for zones missing from the crosswalk.
UNMAPPED_BUCKET = "UNMAPPED"

_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _authalic_q(phi: float) -> float:
    """Integral of the ellipsoidal area element over latitude (the q function)."""
    s = math.sin(phi)
    return (1.0 - _E2) * (
        s / (1.0 - _E2 * s * s) - (1.0 / (2.0 * _E)) * math.log((1.0 - _E * s) / (1.0 + _E * s))
    )


def _ring_area_m2(coordinates) -> float:
    """Unsigned ellipsoidal area of one ring, edges linear in lon/lat.

    Green's theorem: the area integrand has an antiderivative in latitude
    (a^2/2 * q), so the surface integral reduces to a line integral over the
    boundary, evaluated per edge with Gauss-Legendre quadrature.
    """
    points = [(math.radians(lon), math.radians(lat)) for lon, lat in (c[:2] for c in coordinates)]
    if len(points) >= 2 and points[0] != points[-1]:
        points.append(points[0])
    total = 0.0
    for (lon1, lat1), (lon2, lat2) in zip(points, points[1:]):
        dlon = lon2 - lon1
        if dlon == 0.0:
            continue
        # t in [0, 1] along the edge; subdivide long edges for accuracy.
        steps = max(1, int(abs(lat2 - lat1) / math.radians(1.0)) + 1)
        for step in range(steps):
            t0 = step / steps
            t1 = (step + 1) / steps
            mid = (t0 + t1) / 2.0
            half = (t1 - t0) / 2.0
            acc = 0.0
            for node, weight in zip(_GAUSS_NODES, _GAUSS_WEIGHTS):
                t = mid + half * node
                phi = lat1 + (lat2 - lat1) * t
                acc += weight * _authalic_q(phi)
            total += dlon * half * acc
    return abs(total) * _A * _A / 2.0


def _shoelace(coordinates) -> float:
    """Planar signed ring area in square degrees; zero iff the ring is flat."""
    points = [c[:2] for c in coordinates]
    if len(points) >= 2 and points[0] != points[-1]:
        points.append(points[0])
    return 0.5 * sum(
        x1 * y2 - x2 * y1 for (x1, y1), (x2, y2) in zip(points, points[1:])
    )


def _geometry_mapping(geometry) -> dict:
    if isinstance(geometry, dict):
        return geometry
    return mapping(geometry)


def compute_area_km2(geometry) -> float:
    """Geodesic area in km^2 on the WGS84 ellipsoid.

    Accepts a shapely geometry or a GeoJSON-style mapping; holes are
    subtracted and multipolygon parts summed.
    """
    geo = _geometry_mapping(geometry)
    gtype = geo.get("type")
    if gtype == "Polygon":
        polygons = [geo["coordinates"]]
    elif gtype == "MultiPolygon":
        polygons = list(geo["coordinates"])
    else:
        raise DegenerateGeometry(f"not a polygonal geometry: {gtype}")
    total = 0.0
    planar = 0.0
    for rings in polygons:
        if not rings:
            continue
        total += _ring_area_m2(rings[0])
        planar += abs(_shoelace(rings[0]))
        for hole in rings[1:]:
            total -= _ring_area_m2(hole)
    km2 = total / 1e6
    if planar == 0.0 or km2 <= 0.0:
        raise DegenerateGeometry(f"zero or negative area ({km2} km^2)")
    return km2


@dataclass(frozen=True)
class ZoneGeometry:
    zone_id: str
    name: str
    level: ZoneLevel
    geometry: object  # shapely Polygon or MultiPolygon, WGS84 lon/lat
    area_km2: float


_ACCEPTED_CRS = {
    None,
    "urn:ogc:def:crs:OGC:1.3:CRS84",
    "urn:ogc:def:crs:OGC::CRS84",
    "urn:ogc:def:crs:EPSG::4326",
    "EPSG:4326",
    "CRS84",
}


def _check_crs(document: dict) -> None:
    crs = document.get("crs")
    if crs is None:
        return
    name = crs.get("properties", {}).get("name") if isinstance(crs, dict) else crs
    if name not in _ACCEPTED_CRS:
        raise GeometryParseError(-1, f"unsupported CRS {name!r}; expected WGS84 lon/lat")


def parse_zone_geometries(
    path: str | Path, level: ZoneLevel, schema: dict | None = None
) -> list[ZoneGeometry]:
    """Load a GeoJSON feature collection into ZoneGeometry values.

    Geometries are repaired where possible (ring closure, validity fix);
    anything that stays invalid or degenerate is an error, never silently
    mangled.
    """
    schema = schema or {}
    id_property = schema.get("id_property", "ID")
    name_property = schema.get("name_property", "name")
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GeometryParseError(-1, f"not valid JSON: {exc}") from exc
    if document.get("type") != "FeatureCollection":
        raise GeometryParseError(-1, f"expected FeatureCollection, got {document.get('type')!r}")
    _check_crs(document)

    zones = []
    seen: set[str] = set()
    for index, feature in enumerate(document.get("features", [])):
        properties = feature.get("properties") or {}
        zone_id = properties.get(id_property)
        if zone_id is None:
            raise GeometryParseError(index, f"missing id property {id_property!r}")
        zone_id = str(zone_id)
        if zone_id in seen:
            raise GeometryParseError(index, f"duplicate zone id {zone_id!r}")
        seen.add(zone_id)
        raw_geometry = feature.get("geometry")
        if raw_geometry is None:
            raise GeometryParseError(index, "null geometry")
        try:
            geom = shape(raw_geometry)
        except Exception as exc:
            raise GeometryParseError(index, f"unreadable geometry: {exc}") from exc
        if not geom.is_valid:
            geom = make_valid(geom)
        if geom.is_empty or geom.geom_type not in ("Polygon", "MultiPolygon"):
            raise GeometryParseError(index, f"not polygonal after repair: {geom.geom_type}")
        try:
            area = compute_area_km2(geom)
        except DegenerateGeometry as exc:
            raise GeometryParseError(index, str(exc)) from exc
        zones.append(
            ZoneGeometry(
                zone_id=zone_id,
                name=str(properties.get(name_property, zone_id)),
                level=level,
                geometry=geom,
                area_km2=area,
            )
        )
    zones.sort(key=lambda z: z.zone_id)
    return zones


def write_geojson(zones: list[ZoneGeometry], path: str | Path) -> Path:
    """Write zones back out as RFC 7946 GeoJSON (WGS84 lon/lat)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    features = [
        {
            "type": "Feature",
            "properties": {"ID": z.zone_id, "name": z.name, "area_km2": z.area_km2},
            "geometry": _geometry_mapping(z.geometry),
        }
        for z in zones
    ]
    document = {"type": "FeatureCollection", "features": features}
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


def get_zone_geodataframe(
    level: ZoneLevel,
    version: DatasetVersion,
    catalog: CatalogConfig | None = None,
    policy: FetchPolicy | None = None,
    cache_root: str | Path | None = None,
    output_directory: str | Path | None = None,
    session=None,
) -> list[ZoneGeometry]:
    """Fetch and load the national tessellation at one level.

    Returns zones sorted by id. When ``output_directory`` is given, a
    GeoJSON copy is written there as ``zones_<level>_v<version>.geojson``.
    """
    from .normalizer import default_cache_root

    catalog = catalog or load_catalog()
    policy = policy or FetchPolicy(checksum_mode=catalog.checksum_mode)
    cache_root = Path(cache_root) if cache_root else default_cache_root()
    descriptor = resolve_geometry(level, version, catalog)
    entry = fetch(descriptor, policy, cache_root, session=session)
    zones = parse_zone_geometries(entry.local_path, level, catalog.schemas.get("geometry"))
    if output_directory is not None:
        out = Path(output_directory) / f"zones_{level.value}_v{version.value}.geojson"
        write_geojson(zones, out)
    return zones


def mean_area_by_level(zones: list[ZoneGeometry]) -> float:
    """Arithmetic mean of zone areas, km^2."""
    if not zones:
        raise EmptyCollection("no zones to average")
    return sum(z.area_km2 for z in zones) / len(zones)


# ---------------------------------------------------------------------------
# Relation table (crosswalk)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZoneRelation:
    district_id: str
    municipality_id: str
    gau_id: str | None
    census_refs: tuple[str, ...]


class ZoneRelations:
    """Validated crosswalk between zone levels, with lookup helpers."""

    def __init__(self, rows: list[ZoneRelation]):
        by_district: dict[str, ZoneRelation] = {}
        for row in rows:
            existing = by_district.get(row.district_id)
            if existing is not None and (
                existing.municipality_id != row.municipality_id or existing.gau_id != row.gau_id
            ):
                raise RelationIntegrityError(
                    row.district_id,
                    {existing.municipality_id, row.municipality_id},
                )
            by_district[row.district_id] = row
        self.rows = sorted(by_district.values(), key=lambda r: r.district_id)
        self._by_district = by_district
        self._districts_by_municipality: dict[str, list[str]] = {}
        for row in self.rows:
            self._districts_by_municipality.setdefault(row.municipality_id, []).append(
                row.district_id
            )

    def __len__(self) -> int:
        return len(self.rows)

    def district_to_municipality(self, district_id: str) -> str | None:
        row = self._by_district.get(district_id)
        return row.municipality_id if row else None

    def district_to_gau(self, district_id: str) -> str | None:
        row = self._by_district.get(district_id)
        return row.gau_id if row else None

    def municipality_to_districts(self, municipality_id: str) -> list[str]:
        return list(self._districts_by_municipality.get(municipality_id, []))

    def municipality_to_gau(self, municipality_id: str) -> str | None:
        """GAU image of a municipality, derived from its districts.

        Districts of one municipality disagreeing on the GAU is a crosswalk
        integrity violation.
        """
        districts = self._districts_by_municipality.get(municipality_id)
        if not districts:
            return None
        gaus = {self._by_district[d].gau_id for d in districts}
        if len(gaus) > 1:
            raise RelationIntegrityError(municipality_id, gaus)
        return next(iter(gaus))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "district_id": r.district_id,
                    "municipality_id": r.municipality_id,
                    "gau_id": r.gau_id,
                    "census_refs": ";".join(r.census_refs),
                }
                for r in self.rows
            ],
            columns=["district_id", "municipality_id", "gau_id", "census_refs"],
        )


def parse_zone_relations(path: str | Path, schema: dict | None = None) -> ZoneRelations:
    schema = schema or {}
    delimiter = schema.get("delimiter", ",")
    columns = schema.get(
        "columns",
        {"district_id": "distrito", "municipality_id": "municipio", "gau_id": "gau", "census_refs": "secciones"},
    )
    separator = schema.get("census_refs_separator", ";")
    frame = pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False)
    missing = [raw for raw in columns.values() if raw not in frame.columns and raw != columns.get("census_refs")]
    if missing:
        raise SchemaMismatch(f"relation table missing columns {missing}; got {list(frame.columns)}")
    rows = []
    refs_column = columns.get("census_refs")
    for record in frame.to_dict("records"):
        gau = record.get(columns["gau_id"], "").strip()
        refs_raw = record.get(refs_column, "") if refs_column else ""
        refs = tuple(r for r in refs_raw.split(separator) if r) if refs_raw else ()
        rows.append(
            ZoneRelation(
                district_id=record[columns["district_id"]].strip(),
                municipality_id=record[columns["municipality_id"]].strip(),
                gau_id=gau or None,
                census_refs=refs,
            )
        )
    return ZoneRelations(rows)


def get_zone_relations(
    catalog: CatalogConfig | None = None,
    policy: FetchPolicy | None = None,
    cache_root: str | Path | None = None,
    session=None,
) -> ZoneRelations:
    """Fetch and validate the official cross-level relation table."""
    from .normalizer import default_cache_root

    catalog = catalog or load_catalog()
    policy = policy or FetchPolicy(checksum_mode=catalog.checksum_mode)
    cache_root = Path(cache_root) if cache_root else default_cache_root()
    descriptor = resolve_relations(catalog)
    entry = fetch(descriptor, policy, cache_root, session=session)
    return parse_zone_relations(entry.local_path, catalog.schemas.get("relations"))


# ---------------------------------------------------------------------------
# Aggregation across levels
# ---------------------------------------------------------------------------

_ORDER = {ZoneLevel.DISTRICTS: 0, ZoneLevel.MUNICIPALITIES: 1, ZoneLevel.GREATER_URBAN_AREAS: 2}


def _mapper(relations: ZoneRelations, source: ZoneLevel, target: ZoneLevel):
    if target is ZoneLevel.MUNICIPALITIES:
        return relations.district_to_municipality, False
    if source is ZoneLevel.DISTRICTS:
        return relations.district_to_gau, True
    return relations.municipality_to_gau, True


def aggregate_to_level(
    table: pd.DataFrame,
    relations: ZoneRelations,
    source_level: ZoneLevel,
    target_level: ZoneLevel,
    strict: bool = True,
) -> pd.DataFrame:
    """Re-key a mobility table to a coarser zone level via the crosswalk.

    Measures (trips, trips_km, persons) are summed per re-keyed group.
    Zones outside every greater urban area land in the NON_GAU bucket so
    totals are conserved. In strict mode a zone without a crosswalk image
    is an error; lenient mode routes it to the UNMAPPED bucket.
    """
    if _ORDER[source_level] >= _ORDER[target_level]:
        raise LevelNotFiner(source_level.value, target_level.value)
    lookup, is_gau = _mapper(relations, source_level, target_level)

    def remap(zone_id: str) -> str:
        image = lookup(zone_id)
        if image is None:
            # Distinguish "known but outside any GAU" from "absent entirely".
            known = relations.district_to_municipality(zone_id) is not None or bool(
                relations.municipality_to_districts(zone_id)
            )
            if is_gau and known:
                return NON_GAU_BUCKET
            if strict:
                raise UnmappedZone(zone_id)
            return UNMAPPED_BUCKET
        return image

    zone_columns = [
        c for c in ("origin", "destination", "zone", "residence_zone", "overnight_zone")
        if c in table.columns
    ]
    if not zone_columns:
        raise ValueError("table has no recognized zone columns")
    measures = [c for c in ("trips", "trips_km", "persons") if c in table.columns]
    out = table.copy()
    for column in zone_columns:
        out[column] = out[column].map(remap)
    dims = [c for c in out.columns if c not in measures]
    out = out.groupby(dims, as_index=False, sort=False, dropna=False)[measures].sum()
    return out.sort_values(dims, kind="mergesort", ignore_index=True)
