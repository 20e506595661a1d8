"""HTTP fetching into a content-addressed local cache.

Downloads go to a temporary ``.part`` name and are renamed into place only
when complete, so a partial file is never visible under its final path.
The cache is described by a single append-friendly JSON-lines manifest at
``<cache_root>/manifest.jsonl``; a file belongs to the cache iff it has a
manifest entry.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Callable
from zoneinfo import ZoneInfo

import requests

from .catalog import ResourceDescriptor
from .errors import (
    HttpError,
    IntegrityError,
    ManifestCorrupt,
    NotYetPublished,
    OfflineMiss,
    PartialFailure,
)
from .model import DatasetVersion

_MADRID = ZoneInfo("Europe/Madrid")
_BACKOFF_CAP_S = 60.0

ENV_CACHE_ROOT = "SPAINMOBILITY_CACHE"


def _today_madrid() -> date:
    return datetime.now(_MADRID).date()


@dataclass(frozen=True)
class FetchPolicy:
    max_concurrent: int = 4
    max_retries: int = 3
    backoff_base_ms: int = 250
    publication_delay_days: int = 4
    offline_mode: bool = False
    checksum_mode: str = "size_only"  # none | size_only | digest
    clock: Callable[[], date] = field(default=_today_madrid, compare=False)


@dataclass(frozen=True)
class CacheEntry:
    descriptor: ResourceDescriptor
    local_path: Path
    size_bytes: int
    digest: str | None
    fetched_at: str  # UTC ISO-8601
    validator: str | None = None


class Manifest:
    """JSON-lines cache manifest with serialized appends.

    Later lines win, which keeps appends crash-friendly: a re-download of
    the same path simply supersedes the previous record.
    """

    def __init__(self, cache_root: Path):
        self.cache_root = Path(cache_root)
        self.path = self.cache_root / "manifest.jsonl"
        self._lock = threading.Lock()

    def load(self) -> dict[str, dict]:
        entries: dict[str, dict] = {}
        if not self.path.exists():
            return entries
        try:
            with self.path.open("r", encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    record = json.loads(line)
                    if record.get("deleted"):
                        entries.pop(record["path"], None)
                    else:
                        entries[record["path"]] = record
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ManifestCorrupt(self.path, str(exc)) from exc
        return entries

    def lookup(self, relative_path: str) -> dict | None:
        return self.load().get(relative_path)

    def append(self, record: dict) -> None:
        with self._lock:
            self.cache_root.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    def rewrite(self, entries: dict[str, dict]) -> None:
        """Atomically replace the manifest (used by purge)."""
        with self._lock:
            tmp = self.path.with_suffix(".jsonl.tmp")
            with tmp.open("w", encoding="utf-8") as fh:
                for record in entries.values():
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.path)


def _record_to_entry(record: dict, descriptor: ResourceDescriptor, cache_root: Path) -> CacheEntry:
    return CacheEntry(
        descriptor=descriptor,
        local_path=Path(cache_root) / record["path"],
        size_bytes=record["size_bytes"],
        digest=record.get("digest"),
        fetched_at=record["fetched_at"],
        validator=record.get("validator"),
    )


def _check_publication_delay(descriptor: ResourceDescriptor, policy: FetchPolicy) -> None:
    if descriptor.day is None:
        return
    latest = policy.clock() - timedelta(days=policy.publication_delay_days)
    if descriptor.day > latest:
        raise NotYetPublished(descriptor.day, latest)


def _sleep_backoff(attempt: int, policy: FetchPolicy) -> None:
    # Exponential with full jitter, capped.
    ceiling = min((policy.backoff_base_ms / 1000.0) * (2**attempt), _BACKOFF_CAP_S)
    time.sleep(random.uniform(0.0, ceiling))


def _download_once(
    session: requests.Session,
    url: str,
    temp_path: Path,
    resume_from: int,
) -> tuple[int | None, str | None]:
    """One transfer attempt. Returns (expected_total_size, validator)."""
    headers = {}
    mode = "wb"
    if resume_from > 0:
        headers["Range"] = f"bytes={resume_from}-"
        mode = "ab"
    with session.get(url, stream=True, headers=headers, timeout=60) as response:
        if resume_from > 0 and response.status_code == 200:
            # Server ignored the range request; start over.
            mode = "wb"
            resume_from = 0
        elif resume_from > 0 and response.status_code == 206:
            pass
        elif response.status_code != 200:
            raise HttpError(response.status_code, url)
        validator = response.headers.get("ETag") or response.headers.get("Last-Modified")
        content_length = response.headers.get("Content-Length")
        expected = None
        if content_length is not None:
            expected = int(content_length) + (resume_from if response.status_code == 206 else 0)
        with temp_path.open(mode) as fh:
            for chunk in response.iter_content(chunk_size=65536):
                fh.write(chunk)
            fh.flush()
            os.fsync(fh.fileno())
        return expected, validator


def fetch(
    descriptor: ResourceDescriptor,
    policy: FetchPolicy,
    cache_root: str | Path,
    session: requests.Session | None = None,
) -> CacheEntry:
    """Fetch one resource into the cache, or return the existing entry.

    A cache hit (manifest entry present, on-disk size matches) performs no
    network traffic. Retries apply to transport errors and 5xx responses;
    4xx responses fail immediately.
    """
    cache_root = Path(cache_root)
    _check_publication_delay(descriptor, policy)
    manifest = Manifest(cache_root)
    local_path = cache_root / descriptor.relative_cache_path

    record = manifest.lookup(descriptor.relative_cache_path)
    if record is not None and local_path.exists() and local_path.stat().st_size == record["size_bytes"]:
        return _record_to_entry(record, descriptor, cache_root)

    if policy.offline_mode:
        raise OfflineMiss(descriptor.url)

    local_path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = local_path.with_name(local_path.name + ".part")
    if temp_path.exists():
        temp_path.unlink()

    own_session = session is None
    if own_session:
        session = requests.Session()
    try:
        attempts = policy.max_retries + 1
        last_error: Exception | None = None
        expected = validator = None
        for attempt in range(attempts):
            if attempt > 0:
                _sleep_backoff(attempt - 1, policy)
            resume_from = temp_path.stat().st_size if temp_path.exists() else 0
            try:
                expected, validator = _download_once(session, descriptor.url, temp_path, resume_from)
                last_error = None
                break
            except HttpError as exc:
                last_error = exc
                if exc.status is not None and 400 <= exc.status < 500:
                    raise
            except requests.RequestException as exc:
                last_error = HttpError(None, descriptor.url, str(exc))
        if last_error is not None:
            raise last_error

        actual = temp_path.stat().st_size
        if policy.checksum_mode != "none" and expected is not None and actual != expected:
            temp_path.unlink()
            raise IntegrityError(f"{expected} bytes", f"{actual} bytes")
        digest = None
        if policy.checksum_mode == "digest":
            digest = hashlib.sha256(temp_path.read_bytes()).hexdigest()

        os.replace(temp_path, local_path)
        record = {
            "path": descriptor.relative_cache_path,
            "url": descriptor.url,
            "size_bytes": actual,
            "digest": digest,
            "fetched_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "validator": validator,
            "version": descriptor.version.value,
        }
        manifest.append(record)
        return _record_to_entry(record, descriptor, cache_root)
    finally:
        if own_session:
            session.close()


def fetch_all(
    descriptors: list[ResourceDescriptor],
    policy: FetchPolicy,
    cache_root: str | Path,
    session: requests.Session | None = None,
) -> list[CacheEntry]:
    """Fetch a batch concurrently; results keep the input order.

    Raises :class:`PartialFailure` carrying both the successful entries and
    the per-descriptor causes when any transfer fails.
    """
    results: list[CacheEntry | None] = [None] * len(descriptors)
    failures: list[tuple[int, ResourceDescriptor, Exception]] = []
    lock = threading.Lock()

    def work(index: int, descriptor: ResourceDescriptor) -> None:
        try:
            entry = fetch(descriptor, policy, cache_root, session=session)
            results[index] = entry
        except Exception as exc:  # noqa: BLE001 - reported per descriptor
            with lock:
                failures.append((index, descriptor, exc))

    with ThreadPoolExecutor(max_workers=policy.max_concurrent) as pool:
        futures = [pool.submit(work, i, d) for i, d in enumerate(descriptors)]
        for future in futures:
            future.result()

    if failures:
        succeeded = [entry for entry in results if entry is not None]
        failures.sort(key=lambda item: item[0])
        raise PartialFailure(succeeded, [(d, e) for _, d, e in failures])
    return [entry for entry in results if entry is not None]


def purge(
    cache_root: str | Path,
    older_than: timedelta | None = None,
    version: DatasetVersion | None = None,
) -> int:
    """Remove matching cache entries (files + manifest records). Returns count."""
    cache_root = Path(cache_root)
    manifest = Manifest(cache_root)
    entries = manifest.load()
    if not entries:
        return 0

    now = datetime.now(timezone.utc)
    keep: dict[str, dict] = {}
    removed = 0
    for path, record in entries.items():
        matches = True
        if older_than is not None:
            fetched = datetime.fromisoformat(record["fetched_at"])
            if fetched.tzinfo is None:
                fetched = fetched.replace(tzinfo=timezone.utc)
            matches = (now - fetched) >= older_than
        if matches and version is not None:
            matches = record.get("version") == version.value
        if matches:
            target = cache_root / path
            if target.exists():
                target.unlink()
            removed += 1
        else:
            keep[path] = record
    manifest.rewrite(keep)
    return removed


def verify_cache(cache_root: str | Path) -> list[str]:
    """Return relative paths whose on-disk state disagrees with the manifest."""
    cache_root = Path(cache_root)
    bad = []
    for path, record in Manifest(cache_root).load().items():
        target = cache_root / path
        if not target.exists() or target.stat().st_size != record["size_bytes"]:
            bad.append(path)
            continue
        if record.get("digest"):
            actual = hashlib.sha256(target.read_bytes()).hexdigest()
            if actual != record["digest"]:
                bad.append(path)
    return bad
