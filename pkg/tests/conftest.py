from __future__ import annotations

import gzip
import json
import threading
import time
from datetime import date
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from spainmobility.catalog import default_catalog_path, load_catalog
from spainmobility.fetcher import FetchPolicy

FIXED_TODAY = date(2022, 4, 30)


def fixed_clock() -> date:
    return FIXED_TODAY


def make_policy(**overrides) -> FetchPolicy:
    defaults = dict(backoff_base_ms=1, clock=fixed_clock)
    defaults.update(overrides)
    return FetchPolicy(**defaults)


class MockPortal:
    """In-process HTTP server serving authored fixture files.

    Tracks request counts per path and the maximum number of simultaneous
    connections; can be configured to fail the first N requests for a path
    or to drop the connection after sending a prefix of the body.
    """

    def __init__(self):
        self.files: dict[str, bytes] = {}
        self.fail_plan: dict[str, dict] = {}
        self.drop_after: dict[str, int] = {}
        self.latency: float = 0.0
        self.request_counts: dict[str, int] = {}
        self.active = 0
        self.max_active = 0
        self.lock = threading.Lock()
        self._server = None
        self._thread = None

    def add_file(self, path: str, body: bytes) -> None:
        self.files[path] = body

    def fail_first(self, path: str, count: int, status: int = 500) -> None:
        self.fail_plan[path] = {"remaining": count, "status": status}

    def total_requests(self) -> int:
        return sum(self.request_counts.values())

    def reset_counters(self) -> None:
        with self.lock:
            self.request_counts.clear()
            self.max_active = 0

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://127.0.0.1:{port}"

    def start(self):
        portal = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                with portal.lock:
                    portal.request_counts[self.path] = portal.request_counts.get(self.path, 0) + 1
                    portal.active += 1
                    portal.max_active = max(portal.max_active, portal.active)
                try:
                    if portal.latency:
                        time.sleep(portal.latency)
                    plan = portal.fail_plan.get(self.path)
                    if plan and plan["remaining"] > 0:
                        plan["remaining"] -= 1
                        self.send_response(plan["status"])
                        self.send_header("Content-Length", "0")
                        self.end_headers()
                        return
                    body = portal.files.get(self.path)
                    if body is None:
                        self.send_response(404)
                        self.send_header("Content-Length", "0")
                        self.end_headers()
                        return
                    self.send_response(200)
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    drop = portal.drop_after.get(self.path)
                    if drop is not None:
                        self.wfile.write(body[:drop])
                        self.wfile.flush()
                        self.connection.close()
                        return
                    self.wfile.write(body)
                except (BrokenPipeError, ConnectionResetError):
                    pass
                finally:
                    with portal.lock:
                        portal.active -= 1

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def portal():
    portal = MockPortal().start()
    yield portal
    portal.stop()


# ---------------------------------------------------------------------------
# Raw file authoring helpers
# ---------------------------------------------------------------------------

OD_HEADER = [
    "fecha", "periodo", "origen", "destino", "distancia",
    "actividad_origen", "actividad_destino", "edad", "sexo", "renta",
    "viajes", "viajes_km",
]
TRIPS_HEADER = ["fecha", "zona_pernoctacion", "edad", "sexo", "numero_viajes", "personas"]
OVERNIGHT_HEADER = ["fecha", "zona_residencia", "zona_pernoctacion", "personas"]


def gz_table(header: list[str], rows: list[list], delimiter: str = "|") -> bytes:
    lines = [delimiter.join(header)]
    lines += [delimiter.join(str(v) for v in row) for row in rows]
    return gzip.compress(("\n".join(lines) + "\n").encode("utf-8"))


def od_row(day="20220320", hour=8, origin="28079", destination="08019",
           distance="2-10", act_o="casa", act_d="trabajo_estudio",
           age="25-44", gender="hombre", income="10-15", trips=10.0, trips_km=55.5):
    return [day, hour, origin, destination, distance, act_o, act_d, age, gender, income, trips, trips_km]


def make_portal_catalog(portal: MockPortal, tmp_path: Path) -> tuple:
    """Catalog config whose every URL points at the mock portal."""
    base = json.loads(default_catalog_path().read_text(encoding="utf-8"))
    for version, kinds in base["url_templates"].items():
        for kind, levels in kinds.items():
            for level in levels:
                levels[level] = (
                    f"{portal.base_url}/v{version}/{kind}/{level}/{{date:YYYYMMDD}}.csv.gz"
                )
    for version, levels in base["geometry_urls"].items():
        for level in levels:
            levels[level] = f"{portal.base_url}/geometry/v{version}/{level}.geojson"
    base["relations_url"] = f"{portal.base_url}/relations.csv"
    path = tmp_path / "catalog.json"
    path.write_text(json.dumps(base), encoding="utf-8")
    return load_catalog(path), path


@pytest.fixture
def portal_catalog(portal, tmp_path):
    return make_portal_catalog(portal, tmp_path)


def serve_od_days(portal: MockPortal, days: list[str], rows_per_day=None,
                  version: int = 2, level: str = "municipalities") -> None:
    """Publish one OD drop per day on the portal (default: two rows per day)."""
    for day in days:
        rows = rows_per_day(day) if rows_per_day else [
            od_row(day=day, hour=8, trips=10.0, trips_km=55.5),
            od_row(day=day, hour=9, origin="28079", destination="46250",
                   act_d="frecuente", age="45-64", gender="mujer", income=">15",
                   trips=4.25, trips_km=30.0),
        ]
        portal.add_file(f"/v{version}/od/{level}/{day}.csv.gz", gz_table(OD_HEADER, rows))
