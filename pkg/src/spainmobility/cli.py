"""Command-line surface.

Contract: data file paths go to stdout (one per line), progress and errors
to stderr, so the tool composes in pipelines. Exit codes: 0 success,
2 usage error, 3 validation error, 4 network error, 5 parse/integrity
error.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from datetime import timedelta
from pathlib import Path

import pandas as pd
import pyarrow.dataset as pads

from . import __version__
from .analytics import (
    Reducer,
    Statistic,
    demographic_breakdown,
    flow_summaries_to_frame,
    hourly_profile,
    hourly_profiles_to_frame,
    overnight_quantile_map,
    top_percentile_flows,
    weekday_weekend_summary,
)
from .catalog import ENV_CATALOG, load_catalog, resolve_resources
from .errors import (
    DataError,
    NetworkError,
    SpainMobilityError,
    ValidationError,
)
from .fetcher import FetchPolicy, fetch_all, purge
from .model import DatasetKind, DatasetVersion, parse_version, parse_zone_level, validate_request
from .normalizer import (
    ParseMode,
    default_cache_root,
    get_number_of_trips_data,
    get_od_data,
    get_overnight_stays_data,
)
from .zones import get_zone_geodataframe, get_zone_relations

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NETWORK = 4
EXIT_DATA = 5


class Once(argparse.Action):
    """Reject repeated scalar flags instead of silently taking the last."""

    def __call__(self, parser, namespace, values, option_string=None):
        if getattr(namespace, f"_seen_{self.dest}", False):
            parser.error(f"option {option_string} given more than once")
        setattr(namespace, f"_seen_{self.dest}", True)
        setattr(namespace, self.dest, values)


def _emit(path: Path) -> None:
    print(str(path))


def _progress(message: str, verbose: bool = True) -> None:
    if verbose:
        print(message, file=sys.stderr)


def _catalog_path(args) -> str | None:
    return args.catalog or os.environ.get(ENV_CATALOG) or None


def _cache_root(args) -> Path:
    if args.cache_root:
        return Path(args.cache_root)
    return default_cache_root()


def _policy(args, catalog) -> FetchPolicy:
    return FetchPolicy(offline_mode=args.offline, checksum_mode=catalog.checksum_mode)


def _build_request(args, kind: DatasetKind, catalog):
    return validate_request(
        version=args.version,
        kind=kind,
        zones_alias=args.zones,
        start=args.start,
        end=args.end,
        output_directory=args.out,
        availability=catalog.availability_overrides,
    )


def _print_reports(reports, verbose: bool) -> None:
    skipped = sum(r.rows_skipped for r in reports)
    read = sum(r.rows_read for r in reports)
    if skipped:
        print(f"warning: skipped {skipped} of {read} rows; first errors:", file=sys.stderr)
        shown = 0
        for report in reports:
            for line, message in report.first_errors:
                print(f"  line {line}: {message}", file=sys.stderr)
                shown += 1
                if shown >= 10:
                    return
    elif verbose:
        print(f"parsed {read} rows, none skipped", file=sys.stderr)


def _export(handle, args) -> None:
    if args.format == "csv":
        csv_path = Path(str(handle.path) + ".csv")
        handle.to_csv(csv_path)
        _emit(csv_path)
    else:
        _emit(handle.path)


def _read_table(path: str) -> pd.DataFrame:
    p = Path(path)
    if p.is_dir():
        frame = pads.dataset(str(p), format="parquet", partitioning="hive").to_table().to_pandas()
        if "day" in frame.columns:
            frame["day"] = frame["day"].astype(str)
        return frame
    if p.suffix == ".csv":
        return pd.read_csv(p, dtype={"origin": str, "destination": str})
    return pd.read_parquet(p)


_DURATION = re.compile(r"^(\d+)([dhm])$")


def _parse_duration(text: str) -> timedelta:
    if text == "0":
        return timedelta(0)
    match = _DURATION.match(text)
    if not match:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}; use e.g. 30d, 12h, 45m, or 0")
    value, unit = int(match.group(1)), match.group(2)
    return timedelta(**{{"d": "days", "h": "hours", "m": "minutes"}[unit]: value})


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def cmd_fetch(args) -> int:
    catalog = load_catalog(_catalog_path(args))
    kind = DatasetKind(args.kind)
    request = _build_request(args, kind, catalog)
    descriptors = resolve_resources(request, catalog)
    entries = fetch_all(descriptors, _policy(args, catalog), _cache_root(args))
    for entry in entries:
        _emit(entry.local_path)
    return EXIT_OK


def _cmd_dataset(args, kind: DatasetKind) -> int:
    catalog = load_catalog(_catalog_path(args))
    request = _build_request(args, kind, catalog)
    reports: list = []
    mode = ParseMode.STRICT if args.strict else ParseMode.LENIENT
    kwargs = dict(
        catalog=catalog,
        policy=_policy(args, catalog),
        cache_root=_cache_root(args),
        mode=mode,
        report_sink=reports,
    )
    if kind is DatasetKind.ORIGIN_DESTINATION:
        handle = get_od_data(request, keep_activity=args.keep_activity, **kwargs)
    elif kind is DatasetKind.TRIPS_PER_PERSON:
        handle = get_number_of_trips_data(request, **kwargs)
    else:
        handle = get_overnight_stays_data(request, **kwargs)
    _print_reports(reports, args.verbose)
    _export(handle, args)
    return EXIT_OK


def cmd_zones_get(args) -> int:
    catalog = load_catalog(_catalog_path(args))
    level = parse_zone_level(args.zones)
    version = parse_version(args.version)
    out_dir = Path(args.out)
    zones = get_zone_geodataframe(
        level,
        version,
        catalog=catalog,
        policy=_policy(args, catalog),
        cache_root=_cache_root(args),
        output_directory=out_dir,
    )
    _progress(f"loaded {len(zones)} zones", args.verbose)
    _emit(out_dir / f"zones_{level.value}_v{version.value}.geojson")
    return EXIT_OK


def cmd_relations(args) -> int:
    catalog = load_catalog(_catalog_path(args))
    relations = get_zone_relations(
        catalog=catalog, policy=_policy(args, catalog), cache_root=_cache_root(args)
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = relations.to_frame()
    if args.format == "parquet":
        path = out_dir / "zone_relations.parquet"
        frame.to_parquet(path, index=False)
    else:
        path = out_dir / "zone_relations.csv"
        frame.to_csv(path, index=False, lineterminator="\n")
    _emit(path)
    return EXIT_OK


def cmd_analyze_weekday_weekend(args) -> int:
    table = _read_table(args.input)
    if args.group_by:
        frame = demographic_breakdown(table, args.origin, [args.group_by])
    else:
        frame = flow_summaries_to_frame(weekday_weekend_summary(table, args.origin))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "weekday_weekend.csv"
    frame.to_csv(path, index=False, lineterminator="\n")
    _emit(path)
    return EXIT_OK


def cmd_analyze_hourly(args) -> int:
    table = _read_table(args.input)
    if args.exclude_internal and args.destination is not None:
        table = table[table["origin"].astype(str) != args.destination]
    profiles = hourly_profile(
        table,
        destination=args.destination,
        group_by=args.group_by,
        reducer=Reducer.MEAN_PER_DAY if args.reducer == "mean" else Reducer.SUM_OVER_RANGE,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "hourly_profile.csv"
    hourly_profiles_to_frame(profiles).to_csv(path, index=False, lineterminator="\n")
    _emit(path)
    return EXIT_OK


def cmd_analyze_top_flows(args) -> int:
    table = _read_table(args.input)
    flows = top_percentile_flows(
        table, args.origin, args.percentile, by_trip_mass=args.by_trip_mass
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "top_flows.csv"
    pd.DataFrame(flows, columns=["destination", "total_trips"]).to_csv(
        path, index=False, lineterminator="\n"
    )
    _emit(path)
    return EXIT_OK


def cmd_analyze_overnight_map(args) -> int:
    from .zones import parse_zone_geometries

    table = _read_table(args.input)
    level = parse_zone_level(args.zones) if args.zones else None
    zones = parse_zone_geometries(args.zones_geojson, level) if args.zones_geojson else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    geojson_path = out / "overnight_map.geojson"
    result = overnight_quantile_map(
        table,
        zones,
        n_classes=args.classes,
        statistic=Statistic.MEAN_PER_DAY if args.statistic == "mean" else Statistic.TOTAL,
        geojson_path=geojson_path if zones else None,
    )
    csv_path = out / "overnight_classes.csv"
    pd.DataFrame(
        sorted(
            ({"zone": z, "value": result.values[z], "class": c} for z, c in result.assignments.items()),
            key=lambda r: r["zone"],
        )
    ).to_csv(csv_path, index=False, lineterminator="\n")
    _emit(csv_path)
    if zones:
        _emit(geojson_path)
    return EXIT_OK


def cmd_cache_purge(args) -> int:
    version = parse_version(args.version) if args.version else None
    removed = purge(
        _cache_root(args),
        older_than=args.older_than,
        version=version,
    )
    _progress(f"removed {removed} cache entries", True)
    return EXIT_OK


def cmd_completions(args) -> int:
    print(
        'complete -W "fetch od trips overnight zones relations analyze cache completions" spainmobility'
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", action=Once, default="data", help="output directory (default ./data)")
    parser.add_argument("--catalog", action=Once, default=None, help="catalog config path")
    parser.add_argument("--cache-root", action=Once, default=None, help="cache directory")
    parser.add_argument("--offline", action="store_true", help="never open a network connection")
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("--json-errors", action="store_true", help="structured errors on stderr")
    parser.add_argument("--format", action=Once, choices=["parquet", "csv"], default="parquet")


def _add_request_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--version", action=Once, required=True, help="dataset version (1 or 2)")
    parser.add_argument("--zones", action=Once, required=True, help="zone level or alias")
    parser.add_argument("--start", action=Once, required=True, help="start date (ISO-8601)")
    parser.add_argument("--end", action=Once, default=None, help="end date; defaults to start")
    parser.add_argument("--strict", action="store_true", help="abort on first malformed row")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spainmobility",
        description="Download, normalize, and analyze Spanish open mobility datasets.",
    )
    parser.add_argument("--version", action="version", version=f"spainmobility {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download daily files into the cache")
    _add_common(p)
    _add_request_flags(p)
    p.add_argument("--kind", action=Once, required=True, choices=["od", "trips", "overnight"])
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("od", help="export normalized origin-destination flows")
    _add_common(p)
    _add_request_flags(p)
    p.add_argument("--keep-activity", action="store_true", help="keep the two activity columns")
    p.set_defaults(func=lambda a: _cmd_dataset(a, DatasetKind.ORIGIN_DESTINATION))

    p = sub.add_parser("trips", help="export normalized trips-per-person counts")
    _add_common(p)
    _add_request_flags(p)
    p.set_defaults(func=lambda a: _cmd_dataset(a, DatasetKind.TRIPS_PER_PERSON))

    p = sub.add_parser("overnight", help="export normalized overnight stays")
    _add_common(p)
    _add_request_flags(p)
    p.set_defaults(func=lambda a: _cmd_dataset(a, DatasetKind.OVERNIGHT_STAYS))

    p = sub.add_parser("zones", help="study-area geometries and relations")
    zones_sub = p.add_subparsers(dest="zones_command", required=True)
    pz = zones_sub.add_parser("get", help="download zone geometries as GeoJSON")
    _add_common(pz)
    pz.add_argument("--zones", action=Once, required=True)
    pz.add_argument("--version", action=Once, required=True)
    pz.set_defaults(func=cmd_zones_get)
    pr = zones_sub.add_parser("relations", help="download the cross-level relation table")
    _add_common(pr)
    pr.set_defaults(func=cmd_relations)

    p = sub.add_parser("relations", help="download the cross-level relation table")
    _add_common(p)
    p.set_defaults(func=cmd_relations)

    p = sub.add_parser("analyze", help="deterministic analytics over exported tables")
    analyze_sub = p.add_subparsers(dest="analysis", required=True)

    pa = analyze_sub.add_parser("weekday-weekend", help="weekday vs weekend flow summary")
    _add_common(pa)
    pa.add_argument("--input", action=Once, required=True, help="exported OD table (parquet dir or csv)")
    pa.add_argument("--origin", action=Once, required=True)
    pa.add_argument("--group-by", action=Once, choices=["age", "gender", "income"], default=None)
    pa.set_defaults(func=cmd_analyze_weekday_weekend)

    pa = analyze_sub.add_parser("hourly", help="24-hour arrival profiles")
    _add_common(pa)
    pa.add_argument("--input", action=Once, required=True)
    pa.add_argument("--destination", action=Once, default=None)
    pa.add_argument("--group-by", action=Once, choices=["age", "gender", "income"], default=None)
    pa.add_argument("--reducer", action=Once, choices=["sum", "mean"], default="sum")
    pa.add_argument("--exclude-internal", action="store_true",
                    help="drop flows whose origin equals the destination zone")
    pa.set_defaults(func=cmd_analyze_hourly)

    pa = analyze_sub.add_parser("top-flows", help="top-percentile destinations from one origin")
    _add_common(pa)
    pa.add_argument("--input", action=Once, required=True)
    pa.add_argument("--origin", action=Once, required=True)
    pa.add_argument("--percentile", action=Once, type=float, default=3.0)
    pa.add_argument("--by-trip-mass", action="store_true",
                    help="slice by cumulative trip mass instead of destination count")
    pa.set_defaults(func=cmd_analyze_top_flows)

    pa = analyze_sub.add_parser("overnight-map", help="quantile choropleth data for overnight stays")
    _add_common(pa)
    pa.add_argument("--input", action=Once, required=True, help="exported overnight table")
    pa.add_argument("--classes", action=Once, type=int, default=10)
    pa.add_argument("--statistic", action=Once, choices=["total", "mean"], default="total")
    pa.add_argument("--zones-geojson", action=Once, default=None, help="geometry file for the map output")
    pa.add_argument("--zones", action=Once, default=None, help="zone level of the geometry file")
    pa.set_defaults(func=cmd_analyze_overnight_map)

    p = sub.add_parser("cache", help="cache maintenance")
    cache_sub = p.add_subparsers(dest="cache_command", required=True)
    pc = cache_sub.add_parser("purge", help="remove cached files")
    _add_common(pc)
    pc.add_argument("--older-than", action=Once, type=_parse_duration, default=None,
                    help="e.g. 30d, 12h, 0")
    pc.add_argument("--version", action=Once, default=None, help="limit to one dataset version")
    pc.set_defaults(func=cmd_cache_purge)

    p = sub.add_parser("completions", help="print a shell completion script")
    p.set_defaults(func=cmd_completions, json_errors=False)

    return parser


def _error_exit_code(exc: SpainMobilityError) -> int:
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, NetworkError):
        return EXIT_NETWORK
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_DATA


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SpainMobilityError as exc:
        code = _error_exit_code(exc)
        if getattr(args, "json_errors", False):
            print(
                json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}),
                file=sys.stderr,
            )
        else:
            print(f"error: {exc}", file=sys.stderr)
        return code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
