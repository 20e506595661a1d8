from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import pytest

from spainmobility.cli import (
    EXIT_DATA,
    EXIT_NETWORK,
    EXIT_OK,
    EXIT_USAGE,
    EXIT_VALIDATION,
    run,
)

from .conftest import OVERNIGHT_HEADER, gz_table, serve_od_days


def invoke(capsys, *argv):
    code = run(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def od_args(catalog_path, tmp_path, *extra):
    return [
        "od",
        "--version", "2", "--zones", "municipalities",
        "--start", "2022-03-20", "--end", "2022-03-21",
        "--catalog", str(catalog_path),
        "--cache-root", str(tmp_path / "cache"),
        "--out", str(tmp_path / "out"),
        *extra,
    ]


class TestDatasetCommands:
    def test_od_end_to_end(self, portal, portal_catalog, tmp_path, capsys):
        catalog, catalog_path = portal_catalog
        serve_od_days(portal, ["20220320", "20220321"])
        code, out, _ = invoke(capsys, *od_args(catalog_path, tmp_path))
        assert code == EXIT_OK
        [printed] = out.strip().splitlines()
        assert Path(printed).exists()
        frame = pd.read_parquet(printed)
        assert len(frame) == 4  # 2 rows x 2 days

    def test_od_csv_format(self, portal, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        serve_od_days(portal, ["20220320", "20220321"])
        code, out, _ = invoke(capsys, *od_args(catalog_path, tmp_path), "--format", "csv")
        assert code == EXIT_OK
        [printed] = out.strip().splitlines()
        assert printed.endswith(".csv")
        frame = pd.read_csv(printed)
        assert len(frame) == 4

    def test_overnight_end_to_end(self, portal, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        rows = [["20220320", "28079", "46250", "10"], ["20220320", "28079", "28079", "5"]]
        portal.add_file("/v2/overnight/municipalities/20220320.csv.gz",
                        gz_table(OVERNIGHT_HEADER, rows))
        code, out, _ = invoke(
            capsys, "overnight",
            "--version", "2", "--zones", "municipalities", "--start", "2022-03-20",
            "--catalog", str(catalog_path),
            "--cache-root", str(tmp_path / "cache"), "--out", str(tmp_path / "out"),
        )
        assert code == EXIT_OK
        assert Path(out.strip()).exists()

    def test_fetch_prints_cache_paths(self, portal, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        serve_od_days(portal, ["20220320", "20220321"])
        code, out, _ = invoke(
            capsys, "fetch", "--kind", "od",
            "--version", "2", "--zones", "muni",
            "--start", "2022-03-20", "--end", "2022-03-21",
            "--catalog", str(catalog_path), "--cache-root", str(tmp_path / "cache"),
            "--out", str(tmp_path / "out"),
        )
        assert code == EXIT_OK
        paths = out.strip().splitlines()
        assert len(paths) == 2
        assert all(Path(p).exists() for p in paths)


class TestErrorPaths:
    def test_v1_gau_is_validation_error(self, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        code, _, err = invoke(
            capsys, "od", "--version", "1", "--zones", "gau", "--start", "2020-03-01",
            "--catalog", str(catalog_path), "--out", str(tmp_path / "out"),
        )
        assert code == EXIT_VALIDATION
        assert "gau" in err.lower() or "urban" in err.lower()

    def test_missing_required_flag_is_usage_error(self, capsys):
        code, _, err = invoke(capsys, "od", "--zones", "muni", "--start", "2022-03-20")
        assert code == EXIT_USAGE
        assert "--version" in err

    def test_repeated_scalar_flag_is_usage_error(self, capsys):
        code, _, err = invoke(
            capsys, "od", "--version", "2", "--version", "2",
            "--zones", "muni", "--start", "2022-03-20",
        )
        assert code == EXIT_USAGE
        assert "more than once" in err

    def test_unknown_subcommand(self, capsys):
        code, _, _ = invoke(capsys, "frobnicate")
        assert code == EXIT_USAGE

    def test_offline_cold_cache_is_network_error(self, portal, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        code, _, err = invoke(
            capsys, *od_args(catalog_path, tmp_path), "--offline",
        )
        assert code == EXIT_NETWORK
        assert portal.total_requests() == 0

    def test_offline_warm_cache_succeeds(self, portal, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        serve_od_days(portal, ["20220320", "20220321"])
        code, _, _ = invoke(capsys, *od_args(catalog_path, tmp_path))
        assert code == EXIT_OK
        portal.reset_counters()
        code, out, _ = invoke(
            capsys, *od_args(catalog_path, tmp_path), "--offline",
        )
        assert code == EXIT_OK
        assert portal.total_requests() == 0
        assert Path(out.strip()).exists()

    def test_missing_day_is_network_error(self, portal, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        serve_od_days(portal, ["20220320"])  # 2022-03-21 not served -> 404
        code, _, _ = invoke(capsys, *od_args(catalog_path, tmp_path))
        assert code == EXIT_NETWORK

    def test_corrupt_gzip_strict_is_data_error(self, portal, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        portal.add_file("/v2/od/municipalities/20220320.csv.gz", b"not gzip")
        code, _, _ = invoke(
            capsys, "od", "--version", "2", "--zones", "muni", "--start", "2022-03-20",
            "--strict", "--catalog", str(catalog_path),
            "--cache-root", str(tmp_path / "cache"), "--out", str(tmp_path / "out"),
        )
        assert code == EXIT_DATA

    def test_json_errors_structure(self, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        code, _, err = invoke(
            capsys, "od", "--version", "1", "--zones", "gau", "--start", "2020-03-01",
            "--json-errors", "--catalog", str(catalog_path), "--out", str(tmp_path / "out"),
        )
        payload = json.loads(err.strip().splitlines()[-1])
        assert payload["exit_code"] == code == EXIT_VALIDATION
        assert payload["error"]
        assert payload["message"]


class TestZonesCommands:
    GEOJSON = json.dumps({
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "properties": {"ID": "28079", "name": "Zone"},
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[-3.8, 40.3], [-3.5, 40.3], [-3.5, 40.6],
                                     [-3.8, 40.6], [-3.8, 40.3]]],
                },
            }
        ],
    }).encode()

    def test_zones_get(self, portal, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        portal.add_file("/geometry/v2/municipalities.geojson", self.GEOJSON)
        code, out, _ = invoke(
            capsys, "zones", "get", "--zones", "municipalities", "--version", "2",
            "--catalog", str(catalog_path),
            "--cache-root", str(tmp_path / "cache"), "--out", str(tmp_path / "out"),
        )
        assert code == EXIT_OK
        document = json.loads(Path(out.strip()).read_text())
        assert document["features"][0]["properties"]["ID"] == "28079"
        assert document["features"][0]["properties"]["area_km2"] > 0

    def test_relations(self, portal, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        portal.add_file(
            "/relations.csv",
            b"distrito,municipio,gau,secciones\n2807901,28079,GAU_MAD,x\n",
        )
        code, out, _ = invoke(
            capsys, "relations", "--format", "csv",
            "--catalog", str(catalog_path),
            "--cache-root", str(tmp_path / "cache"), "--out", str(tmp_path / "out"),
        )
        assert code == EXIT_OK
        frame = pd.read_csv(out.strip())
        assert list(frame["district_id"].astype(str)) == ["2807901"]


class TestAnalyzeCommands:
    @pytest.fixture
    def exported_od(self, portal, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        serve_od_days(portal, ["20220318", "20220319"])  # Fri + Sat
        code, out, _ = invoke(
            capsys, "od", "--version", "2", "--zones", "muni",
            "--start", "2022-03-18", "--end", "2022-03-19",
            "--catalog", str(catalog_path),
            "--cache-root", str(tmp_path / "cache"), "--out", str(tmp_path / "out"),
        )
        assert code == EXIT_OK
        return out.strip()

    def test_weekday_weekend(self, exported_od, tmp_path, capsys):
        code, out, _ = invoke(
            capsys, "analyze", "weekday-weekend",
            "--input", exported_od, "--origin", "28079",
            "--out", str(tmp_path / "analysis"),
        )
        assert code == EXIT_OK
        frame = pd.read_csv(out.strip())
        weekday = frame[frame["segment"] == "weekday"]
        # Each served day carries 14.25 trips out of 28079.
        assert weekday["avg_daily_trips"].item() == pytest.approx(14.25)

    def test_hourly(self, exported_od, tmp_path, capsys):
        code, out, _ = invoke(
            capsys, "analyze", "hourly",
            "--input", exported_od, "--destination", "08019", "--reducer", "mean",
            "--out", str(tmp_path / "analysis"),
        )
        assert code == EXIT_OK
        frame = pd.read_csv(out.strip())
        assert len(frame) == 24
        assert frame.loc[frame["hour"] == 8, "trips"].item() == pytest.approx(10.0)

    def test_top_flows(self, exported_od, tmp_path, capsys):
        code, out, _ = invoke(
            capsys, "analyze", "top-flows",
            "--input", exported_od, "--origin", "28079", "--percentile", "100",
            "--out", str(tmp_path / "analysis"),
        )
        assert code == EXIT_OK
        frame = pd.read_csv(out.strip(), dtype={"destination": str})
        assert sorted(frame["destination"]) == ["08019", "46250"]

    def test_top_flows_unknown_origin_is_validation_error(self, exported_od, tmp_path, capsys):
        code, _, _ = invoke(
            capsys, "analyze", "top-flows",
            "--input", exported_od, "--origin", "00000",
            "--out", str(tmp_path / "analysis"),
        )
        assert code == EXIT_VALIDATION

    def test_overnight_map(self, portal, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        rows = [["20220320", "28079", "46250", "10"], ["20220320", "28079", "08019", "2"]]
        portal.add_file("/v2/overnight/municipalities/20220320.csv.gz",
                        gz_table(OVERNIGHT_HEADER, rows))
        code, out, _ = invoke(
            capsys, "overnight", "--version", "2", "--zones", "muni",
            "--start", "2022-03-20", "--catalog", str(catalog_path),
            "--cache-root", str(tmp_path / "cache"), "--out", str(tmp_path / "out"),
        )
        assert code == EXIT_OK
        table_path = out.strip()
        code, out, _ = invoke(
            capsys, "analyze", "overnight-map",
            "--input", table_path, "--classes", "2",
            "--out", str(tmp_path / "analysis"),
        )
        assert code == EXIT_OK
        frame = pd.read_csv(out.strip(), dtype={"zone": str})
        classes = dict(zip(frame["zone"], frame["class"]))
        assert classes == {"08019": 0, "46250": 1}


class TestCacheCommands:
    def test_purge_all(self, portal, portal_catalog, tmp_path, capsys):
        _, catalog_path = portal_catalog
        serve_od_days(portal, ["20220320"])
        cache = tmp_path / "cache"
        invoke(capsys, "od", "--version", "2", "--zones", "muni", "--start", "2022-03-20",
               "--catalog", str(catalog_path), "--cache-root", str(cache),
               "--out", str(tmp_path / "out"))
        code, _, err = invoke(
            capsys, "cache", "purge", "--older-than", "0", "--cache-root", str(cache),
        )
        assert code == EXIT_OK
        assert "removed 1" in err

    def test_purge_bad_duration(self, tmp_path, capsys):
        code, _, _ = invoke(
            capsys, "cache", "purge", "--older-than", "fortnight",
            "--cache-root", str(tmp_path / "cache"),
        )
        assert code == EXIT_USAGE

    def test_purge_empty_cache(self, tmp_path, capsys):
        code, _, err = invoke(
            capsys, "cache", "purge", "--cache-root", str(tmp_path / "cache"),
        )
        assert code == EXIT_OK
        assert "removed 0" in err


class TestMisc:
    def test_version_flag(self, capsys):
        code, out, err = invoke(capsys, "--version")
        assert code == EXIT_OK
        assert "spainmobility" in out + err

    def test_completions(self, capsys):
        code, out, _ = invoke(capsys, "completions")
        assert code == EXIT_OK
        assert "spainmobility" in out
