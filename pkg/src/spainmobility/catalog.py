"""Source catalog: maps a validated request to concrete remote resources.

All URL patterns, schema identifiers, and availability overrides live in a
declarative JSON config so that portal layout changes never require code
changes. The bundled default config reflects the portal layout as observed
at packaging time and is best-effort; point ``--catalog`` (or the
``SPAINMOBILITY_CATALOG`` environment variable) at your own copy to adapt.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from pathlib import Path

from .errors import ConfigParseError, MissingTemplate, VersionZoneConflict
from .model import (
    DatasetKind,
    DatasetRequest,
    DatasetVersion,
    ZoneLevel,
    check_version_level,
    enumerate_days,
)

ENV_CATALOG = "SPAINMOBILITY_CATALOG"

#: Date placeholder grammar: the only tokens a template may use.
_DATE_TOKENS = {
    "YYYY": "%Y",
    "MM": "%m",
    "DD": "%d",
    "YYYYMMDD": "%Y%m%d",
}
_PLACEHOLDER = re.compile(r"\{date:([A-Z]+)\}")


def expand_template(template: str, day: date) -> str:
    """Expand ``{date:TOKEN}`` placeholders with zero-padded components."""

    def repl(match: re.Match) -> str:
        token = match.group(1)
        if token not in _DATE_TOKENS:
            raise ValueError(f"unknown date token {token!r} in template {template!r}")
        return day.strftime(_DATE_TOKENS[token])

    return _PLACEHOLDER.sub(repl, template)


@dataclass(frozen=True)
class ResourceDescriptor:
    """One remote file: a daily data drop, a geometry file, or the relation table."""

    url: str
    kind: DatasetKind | None
    version: DatasetVersion
    level: ZoneLevel | None
    day: date | None
    relative_cache_path: str
    schema_id: str


_VALID_COMBINATIONS: list[tuple[DatasetVersion, DatasetKind, ZoneLevel]] = [
    (version, kind, level)
    for version in DatasetVersion
    for kind in DatasetKind
    for level in ZoneLevel
    if not (version is DatasetVersion.V1 and level is ZoneLevel.GREATER_URBAN_AREAS)
]


@dataclass(frozen=True)
class CatalogConfig:
    url_templates: dict[tuple[DatasetVersion, DatasetKind, ZoneLevel], str]
    geometry_urls: dict[tuple[DatasetVersion, ZoneLevel], str]
    relations_url: str
    checksum_mode: str = "size_only"
    availability_overrides: dict[DatasetVersion, tuple[date, date | None]] = field(
        default_factory=dict
    )
    schemas: dict[str, dict] = field(default_factory=dict)


def default_catalog_path() -> Path:
    return Path(str(resources.files("spainmobility").joinpath("data/catalog.json")))


def _parse_interval(raw: dict) -> tuple[date, date | None]:
    start = date.fromisoformat(raw["start"])
    end = date.fromisoformat(raw["end"]) if raw.get("end") else None
    return start, end


def load_catalog(config_path: str | Path | None = None) -> CatalogConfig:
    """Load and fully validate a catalog config.

    Every (version, kind, level) combination that is valid under the domain
    rules must have a URL template; a gap is a load-time error.
    """
    path = Path(config_path) if config_path else default_catalog_path()
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigParseError(path, str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigParseError(path, f"line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigParseError(path, "top-level value must be an object")

    try:
        templates: dict[tuple[DatasetVersion, DatasetKind, ZoneLevel], str] = {}
        for ver_key, kinds in raw.get("url_templates", {}).items():
            version = DatasetVersion(int(ver_key))
            for kind_key, levels in kinds.items():
                kind = DatasetKind(kind_key)
                for level_key, template in levels.items():
                    level = ZoneLevel(level_key)
                    templates[(version, kind, level)] = template

        geometry_urls: dict[tuple[DatasetVersion, ZoneLevel], str] = {}
        for ver_key, levels in raw.get("geometry_urls", {}).items():
            version = DatasetVersion(int(ver_key))
            for level_key, url in levels.items():
                geometry_urls[(version, ZoneLevel(level_key))] = url

        relations_url = raw["relations_url"]
        checksum_mode = raw.get("checksum_mode", "size_only")
        overrides = {
            DatasetVersion(int(k)): _parse_interval(v)
            for k, v in raw.get("availability", {}).items()
        }
        schemas = raw.get("schemas", {})
    except (KeyError, ValueError, TypeError, AttributeError) as exc:
        raise ConfigParseError(path, f"bad structure: {exc}") from exc

    if checksum_mode not in ("none", "size_only", "digest"):
        raise ConfigParseError(path, f"unknown checksum_mode {checksum_mode!r}")

    for combination in _VALID_COMBINATIONS:
        if combination not in templates:
            version, kind, level = combination
            raise MissingTemplate(version.value, kind.value, level.value)
        url = templates[combination]
        if not url.startswith(("http://", "https://")):
            raise ConfigParseError(path, f"template for {combination} is not http(s): {url!r}")

    return CatalogConfig(
        url_templates=templates,
        geometry_urls=geometry_urls,
        relations_url=relations_url,
        checksum_mode=checksum_mode,
        availability_overrides=overrides,
        schemas=schemas,
    )


def _cache_suffix(url: str) -> str:
    name = url.rsplit("/", 1)[-1]
    for ext in (".csv.gz", ".txt.gz", ".tsv.gz", ".gz", ".geojson", ".json", ".csv"):
        if name.endswith(ext):
            return ext
    return ""


def resolve_resources(
    request: DatasetRequest, catalog: CatalogConfig
) -> list[ResourceDescriptor]:
    """One descriptor per day of the request, in ascending date order.

    The relative cache path is a pure function of (version, kind, level,
    day), so identical requests always land on the same cache slots.
    """
    key = (request.version, request.kind, request.level)
    if key not in catalog.url_templates:
        raise MissingTemplate(request.version.value, request.kind.value, request.level.value)
    template = catalog.url_templates[key]
    suffix = _cache_suffix(template) or ".csv.gz"
    schema_id = f"{request.kind.value}_v{request.version.value}"
    descriptors = []
    for day in enumerate_days(request.range):
        url = expand_template(template, day)
        rel = (
            f"v{request.version.value}/{request.kind.value}/{request.level.value}/"
            f"{day.strftime('%Y%m%d')}{suffix}"
        )
        descriptors.append(
            ResourceDescriptor(
                url=url,
                kind=request.kind,
                version=request.version,
                level=request.level,
                day=day,
                relative_cache_path=rel,
                schema_id=schema_id,
            )
        )
    return descriptors


def resolve_geometry(
    level: ZoneLevel, version: DatasetVersion, catalog: CatalogConfig
) -> ResourceDescriptor:
    check_version_level(version, level)
    key = (version, level)
    if key not in catalog.geometry_urls:
        raise VersionZoneConflict(version.value, level.value)
    url = catalog.geometry_urls[key]
    return ResourceDescriptor(
        url=url,
        kind=None,
        version=version,
        level=level,
        day=None,
        relative_cache_path=f"v{version.value}/geometry/{level.value}{_cache_suffix(url) or '.geojson'}",
        schema_id="geometry",
    )


def resolve_relations(catalog: CatalogConfig, version: DatasetVersion = DatasetVersion.V2) -> ResourceDescriptor:
    url = catalog.relations_url
    return ResourceDescriptor(
        url=url,
        kind=None,
        version=version,
        level=None,
        day=None,
        relative_cache_path=f"relations/relations{_cache_suffix(url) or '.csv'}",
        schema_id="relations",
    )
