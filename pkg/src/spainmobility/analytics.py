"""Deterministic aggregate computations over normalized mobility tables.

All operations are pure functions of their input DataFrames: weekday vs
weekend summaries, hourly arrival profiles, demographic breakdowns,
top-percentile flow extraction, and overnight-stay quantile choropleth
data. Weekday means Monday-Friday and weekend Saturday-Sunday on the
civil calendar; public holidays are not special-cased.
"""

from __future__ import annotations

import bisect
import enum
import json
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import pandas as pd

from .errors import EmptyTable, UnknownDimension, UnknownZone
from .zones import ZoneGeometry, _geometry_mapping

DEMOGRAPHIC_DIMENSIONS = ("age", "gender", "income")

#: Class index reserved for zones present in the geometry but absent from
#: the data table.
NO_DATA_CLASS = -1


class Segment(enum.Enum):
    WEEKDAY = "weekday"
    WEEKEND = "weekend"


class Reducer(enum.Enum):
    SUM_OVER_RANGE = "sum"
    MEAN_PER_DAY = "mean"


class Statistic(enum.Enum):
    MEAN_PER_DAY = "mean"
    TOTAL = "total"


@dataclass(frozen=True)
class FlowSummary:
    segment: Segment
    group: str | None
    avg_daily_trips: float
    distinct_destinations: int


@dataclass(frozen=True)
class HourlyProfile:
    group_key: str
    values: tuple[float, ...]  # 24 entries, hour 0..23


@dataclass(frozen=True)
class QuantileMap:
    n_classes: int
    breaks: tuple[float, ...]
    assignments: dict[str, int]
    values: dict[str, float]


def _segment_of(day: str | date) -> Segment:
    d = date.fromisoformat(day) if isinstance(day, str) else day
    return Segment.WEEKEND if d.weekday() >= 5 else Segment.WEEKDAY


def _check_dimension(dimension: str) -> None:
    if dimension not in DEMOGRAPHIC_DIMENSIONS:
        raise UnknownDimension(dimension, list(DEMOGRAPHIC_DIMENSIONS))


def _segment_day_counts(table: pd.DataFrame) -> dict[Segment, int]:
    days = sorted(set(table["day"].astype(str)))
    counts = {Segment.WEEKDAY: 0, Segment.WEEKEND: 0}
    for day in days:
        counts[_segment_of(day)] += 1
    return counts


def weekday_weekend_summary(
    od_table: pd.DataFrame, origin: str, group_by: str | None = None
) -> list[FlowSummary]:
    """Average daily trips and distinct destinations, weekday vs weekend.

    The average divides total trips by the number of days of that segment
    present in the table's date span; an empty segment yields a zero-valued
    summary rather than an error.
    """
    if group_by is not None:
        _check_dimension(group_by)
    if origin not in set(od_table["origin"].astype(str)):
        raise UnknownZone(origin)

    day_counts = _segment_day_counts(od_table)
    flows = od_table[od_table["origin"].astype(str) == origin].copy()
    flows["segment"] = flows["day"].map(_segment_of)

    groups = sorted(set(flows[group_by].astype(str))) if group_by else [None]
    summaries = []
    for segment in (Segment.WEEKDAY, Segment.WEEKEND):
        n_days = day_counts[segment]
        in_segment = flows[flows["segment"] == segment]
        for group in groups:
            subset = in_segment if group is None else in_segment[in_segment[group_by].astype(str) == group]
            if n_days == 0 or subset.empty:
                summaries.append(FlowSummary(segment, group, 0.0, 0))
                continue
            per_destination = subset.groupby("destination")["trips"].sum()
            summaries.append(
                FlowSummary(
                    segment=segment,
                    group=group,
                    avg_daily_trips=float(subset["trips"].sum()) / n_days,
                    distinct_destinations=int((per_destination > 0).sum()),
                )
            )
    return summaries


def hourly_profile(
    od_table: pd.DataFrame,
    destination: str | None = None,
    group_by: str | None = None,
    reducer: Reducer = Reducer.SUM_OVER_RANGE,
) -> list[HourlyProfile]:
    """24-entry trips-per-hour-of-day vectors, optionally per demographic group."""
    if group_by is not None:
        _check_dimension(group_by)
    flows = od_table
    if destination is not None:
        if destination not in set(od_table["destination"].astype(str)):
            raise UnknownZone(destination)
        flows = od_table[od_table["destination"].astype(str) == destination]

    n_days = max(1, len(set(flows["day"].astype(str))))
    groups = sorted(set(flows[group_by].astype(str))) if group_by else ["all"]
    profiles = []
    for group in groups:
        subset = flows if group_by is None else flows[flows[group_by].astype(str) == group]
        sums = subset.groupby("hour")["trips"].sum()
        vector = [float(sums.get(h, 0.0)) for h in range(24)]
        if reducer is Reducer.MEAN_PER_DAY:
            vector = [v / n_days for v in vector]
        profiles.append(HourlyProfile(group_key=group, values=tuple(vector)))
    return profiles


def top_percentile_flows(
    od_table: pd.DataFrame,
    origin: str,
    percentile_rank: float,
    by_trip_mass: bool = False,
) -> list[tuple[str, float]]:
    """Destinations in the top slice of flows out of one origin.

    The slice covers ``ceil(percentile_rank% of destinations)`` positions in
    the descending ranking; values tied with the cutoff are all included.
    With ``by_trip_mass=True`` the slice instead covers destinations until
    the cumulative trips reach that share of the total trip mass (ties at
    the boundary still expand). Only destinations with positive totals rank.
    """
    if not 0 < percentile_rank <= 100:
        raise ValueError(f"percentile_rank must be in (0, 100], got {percentile_rank}")
    if origin not in set(od_table["origin"].astype(str)):
        raise UnknownZone(origin)
    flows = od_table[od_table["origin"].astype(str) == origin]
    totals = flows.groupby("destination")["trips"].sum()
    totals = totals[totals > 0]
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    if not ranked:
        return []

    if by_trip_mass:
        target = sum(v for _, v in ranked) * percentile_rank / 100.0
        cumulative = 0.0
        cut = 0
        for _, value in ranked:
            if cumulative >= target:
                break
            cumulative += value
            cut += 1
    else:
        cut = math.ceil(len(ranked) * percentile_rank / 100.0)
    cut = max(1, min(cut, len(ranked)))
    cutoff_value = ranked[cut - 1][1]
    return [(dest, float(value)) for dest, value in ranked if value >= cutoff_value]


def _type1_breaks(values: list[float], n_classes: int) -> list[float]:
    """Inverse-ECDF (type 1) quantile breaks at k/n_classes, deduplicated."""
    ordered = sorted(values)
    m = len(ordered)
    breaks: list[float] = []
    for k in range(1, n_classes):
        index = math.ceil(k * m / n_classes) - 1
        candidate = ordered[max(0, min(index, m - 1))]
        if not breaks or candidate > breaks[-1]:
            breaks.append(candidate)
    return breaks


def overnight_quantile_map(
    overnight_table: pd.DataFrame,
    zones: list[ZoneGeometry],
    n_classes: int,
    statistic: Statistic = Statistic.TOTAL,
    geojson_path: str | Path | None = None,
) -> QuantileMap:
    """Classify zones by quantiles of their overnight-stay statistic.

    Zones present in the geometry but absent from the table get the
    reserved no-data class. When ``geojson_path`` is given, a choropleth-
    ready GeoJSON is written with zone id, value, and class per feature.
    """
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2, got {n_classes}")
    if overnight_table.empty:
        raise EmptyTable("overnight table is empty")

    totals = overnight_table.groupby("overnight_zone")["persons"].sum()
    if statistic is Statistic.MEAN_PER_DAY:
        n_days = max(1, len(set(overnight_table["day"].astype(str))))
        totals = totals / n_days
    values = {str(zone): float(v) for zone, v in totals.items()}

    breaks = _type1_breaks(list(values.values()), n_classes)
    assignments = {zone: bisect.bisect_left(breaks, value) for zone, value in values.items()}

    result = QuantileMap(
        n_classes=n_classes,
        breaks=tuple(breaks),
        assignments=assignments,
        values=values,
    )
    if geojson_path is not None:
        features = []
        for zone in zones:
            features.append(
                {
                    "type": "Feature",
                    "properties": {
                        "ID": zone.zone_id,
                        "value": values.get(zone.zone_id),
                        "class": assignments.get(zone.zone_id, NO_DATA_CLASS),
                    },
                    "geometry": _geometry_mapping(zone.geometry),
                }
            )
        path = Path(geojson_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps({"type": "FeatureCollection", "features": features}), encoding="utf-8"
        )
    return result


def demographic_breakdown(
    od_table: pd.DataFrame, origin: str, dimensions: list[str]
) -> pd.DataFrame:
    """Total trips and distinct destinations per demographic group and segment."""
    if not dimensions:
        raise UnknownDimension("(none)", list(DEMOGRAPHIC_DIMENSIONS))
    for dimension in dimensions:
        _check_dimension(dimension)
    if origin not in set(od_table["origin"].astype(str)):
        raise UnknownZone(origin)

    flows = od_table[od_table["origin"].astype(str) == origin].copy()
    flows["segment"] = flows["day"].map(lambda d: _segment_of(d).value)
    grouped = flows.groupby(["segment", *dimensions], dropna=False)
    rows = []
    for keys, subset in grouped:
        per_destination = subset.groupby("destination")["trips"].sum()
        row = {"segment": keys[0]}
        row.update({dim: keys[i + 1] for i, dim in enumerate(dimensions)})
        row["trips"] = float(subset["trips"].sum())
        row["distinct_destinations"] = int((per_destination > 0).sum())
        rows.append(row)
    out = pd.DataFrame(rows, columns=["segment", *dimensions, "trips", "distinct_destinations"])
    return out.sort_values(["segment", *dimensions], kind="mergesort", ignore_index=True)


def flow_summaries_to_frame(summaries: list[FlowSummary]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "segment": s.segment.value,
                "group": s.group if s.group is not None else "all",
                "avg_daily_trips": s.avg_daily_trips,
                "distinct_destinations": s.distinct_destinations,
            }
            for s in summaries
        ],
        columns=["segment", "group", "avg_daily_trips", "distinct_destinations"],
    )


def hourly_profiles_to_frame(profiles: list[HourlyProfile]) -> pd.DataFrame:
    rows = []
    for profile in profiles:
        for hour, value in enumerate(profile.values):
            rows.append({"group": profile.group_key, "hour": hour, "trips": value})
    return pd.DataFrame(rows, columns=["group", "hour", "trips"])
