"""File-backed data sources consulted by policy conditions.

Every provider is a deterministic function of its loaded fixture. Fixture
formats (paths come from server configuration):

* ``registrations.json`` — array of ``{domain, registeredAt, expiresAt?}``
* ``rankings/<date>.csv`` — ``rank,domain`` per line, one file per list date
* ``threat_indicators.txt`` — one indicator per line, ``#`` comments allowed
* ``dns.json`` — ``{domain: ip}``
* ``geo.json`` — ``{ip: {countryCode, latitude, longitude}}``
* ``sri.json`` — array of ``{pageUrl, resourceUrl, digest}``
* ``core_manifest.json`` — array of ``{path, expectedDigest, side}``
* ``tls_status.json`` — ``{host: status}`` where ``"ok"`` means healthy
* ``content.json`` — ``{url: body}`` or ``{url: {profiles: {name: body}}}``
* ``dependencies.json`` — ``{resourceUrl: [contacted urls]}``
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import threading
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Mapping

from .errors import GeoUnknown, ProviderUnavailable, ResolutionFailure, UnknownListDate

EARTH_RADIUS_KM = 6371.0

SRI_ALGORITHMS = ("sha256", "sha384", "sha512")


@dataclass(frozen=True)
class RegistrationRecord:
    domain: str
    registered_at: date
    expires_at: date | None = None

    def __post_init__(self) -> None:
        if self.expires_at is not None and self.registered_at > self.expires_at:
            raise ValueError("registeredAt must not be after expiresAt")


@dataclass(frozen=True)
class RankEntry:
    domain: str
    rank: int

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be >= 1")


@dataclass(frozen=True)
class GeoRecord:
    ip: str
    country_code: str
    latitude: float
    longitude: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError("latitude out of range")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError("longitude out of range")


@dataclass(frozen=True)
class DependencySnapshot:
    resource_url: str
    contacted_urls: frozenset[str]
    captured_at: datetime


@dataclass(frozen=True)
class SriEntry:
    page_url: str
    resource_url: str
    digest: str  # "<algorithm>-<base64 hash>"

    def __post_init__(self) -> None:
        if self.algorithm not in SRI_ALGORITHMS:
            raise ValueError(f"unsupported digest algorithm in {self.digest!r}")

    @property
    def algorithm(self) -> str:
        return self.digest.split("-", 1)[0]

    @property
    def expected_hash(self) -> str:
        return self.digest.split("-", 1)[1]


@dataclass(frozen=True)
class CoreFileManifestEntry:
    path: str
    expected_digest: str  # hex sha256 of the expected content
    side: str  # "client" | "server"

    def __post_init__(self) -> None:
        if not self.expected_digest:
            raise ValueError("expectedDigest must be non-empty")
        if self.side not in ("client", "server"):
            raise ValueError(f"bad side {self.side!r}")


def great_circle_km(a: GeoRecord, b: GeoRecord) -> float:
    """Haversine distance on a sphere of radius 6371 km."""
    lat1, lon1, lat2, lon2 = map(
        math.radians, (a.latitude, a.longitude, b.latitude, b.longitude)
    )
    h = (
        math.sin((lat2 - lat1) / 2) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    )
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, h)))


class _LazyFixture:
    """Loads a fixture on first use; a failed load raises on every call."""

    def __init__(self, source: str | Path | None):
        self._source = Path(source) if source is not None else None
        self._loaded = False
        self._error: Exception | None = None
        self._lock = threading.Lock()

    def _load(self) -> None:  # pragma: no cover - overridden
        raise NotImplementedError

    def _ensure(self) -> None:
        with self._lock:
            if not self._loaded:
                try:
                    self._load()
                except Exception as exc:  # noqa: BLE001 - recorded verbatim
                    self._error = exc
                self._loaded = True
            if self._error is not None:
                raise ProviderUnavailable(
                    f"{type(self).__name__} failed to load {self._source}: {self._error}"
                )


def _parse_date(text: str) -> date:
    return date.fromisoformat(text)


class RegistrationProvider(_LazyFixture):
    """Domain registration/expiry dates keyed by eTLD+1."""

    def __init__(self, source: str | Path | Iterable[RegistrationRecord]):
        if isinstance(source, (str, Path)):
            super().__init__(source)
            self._records: dict[str, RegistrationRecord] = {}
        else:
            super().__init__(None)
            self._records = {r.domain: r for r in source}
            self._loaded = True

    def _load(self) -> None:
        raw = json.loads(self._source.read_text(encoding="utf-8"))
        for row in raw:
            record = RegistrationRecord(
                domain=row["domain"],
                registered_at=_parse_date(row["registeredAt"]),
                expires_at=_parse_date(row["expiresAt"]) if row.get("expiresAt") else None,
            )
            self._records[record.domain] = record

    def lookup(self, domain: str) -> RegistrationRecord | None:
        self._ensure()
        return self._records.get(domain.lower())


class RankingProvider(_LazyFixture):
    """Tranco-shaped ranking lists, one per list date, loaded from a directory."""

    def __init__(self, source: str | Path | Mapping[date, Mapping[str, int]]):
        if isinstance(source, (str, Path)):
            super().__init__(source)
            self._lists: dict[date, dict[str, int]] = {}
        else:
            super().__init__(None)
            self._lists = {d: dict(entries) for d, entries in source.items()}
            self._loaded = True

    def _load(self) -> None:
        directory = self._source
        if not directory.is_dir():
            raise FileNotFoundError(f"{directory} is not a directory")
        for csv_path in sorted(directory.glob("*.csv")):
            list_date = _parse_date(csv_path.stem)
            entries: dict[str, int] = {}
            with csv_path.open(newline="", encoding="utf-8") as fh:
                for row in csv.reader(fh):
                    if not row:
                        continue
                    entries[row[1].strip().lower()] = int(row[0])
            self._lists[list_date] = entries

    @property
    def list_dates(self) -> list[date]:
        self._ensure()
        return sorted(self._lists)

    def latest_date(self) -> date:
        dates = self.list_dates
        if not dates:
            raise UnknownListDate("no ranking lists loaded")
        return dates[-1]

    def lookup(self, domain: str, list_date: date | None = None) -> int | None:
        """Rank on the given list, or None when unranked."""
        self._ensure()
        if list_date is None:
            list_date = self.latest_date()
        if list_date not in self._lists:
            raise UnknownListDate(f"no ranking list for {list_date.isoformat()}")
        return self._lists[list_date].get(domain.lower())

    def nearest_date_at_or_before(self, day: date) -> date | None:
        """Latest loaded list date that is <= the given day."""
        candidates = [d for d in self.list_dates if d <= day]
        return max(candidates) if candidates else None


class ThreatIntelProvider(_LazyFixture):
    """Indicator blocklist with a content-hash result cache.

    ``scan_count`` counts actual list scans; repeat queries for the same
    indicator hash are served from the cache without rescanning.
    """

    def __init__(self, source: str | Path | Iterable[str]):
        if isinstance(source, (str, Path)):
            super().__init__(source)
            self._indicators: frozenset[str] = frozenset()
        else:
            super().__init__(None)
            self._indicators = frozenset(s.lower() for s in source)
            self._loaded = True
        self._cache: dict[str, bool] = {}
        self._cache_lock = threading.Lock()
        self.scan_count = 0

    def _load(self) -> None:
        indicators = set()
        for line in self._source.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                indicators.add(line.lower())
        self._indicators = frozenset(indicators)

    def is_flagged(self, indicator: str) -> bool:
        self._ensure()
        key = hashlib.sha256(indicator.lower().encode("utf-8")).hexdigest()
        with self._cache_lock:
            if key in self._cache:
                return self._cache[key]
            self.scan_count += 1
            result = indicator.lower() in self._indicators
            self._cache[key] = result
            return result


class GeoLocator(_LazyFixture):
    """Resolves a domain via the DNS fixture and geolocates the IP."""

    def __init__(
        self,
        dns_source: str | Path | Mapping[str, str],
        geo_source: str | Path | Mapping[str, GeoRecord] | None = None,
    ):
        if isinstance(dns_source, (str, Path)):
            super().__init__(dns_source)
            self._geo_path = Path(geo_source) if geo_source is not None else None
            self._dns: dict[str, str] = {}
            self._geo: dict[str, GeoRecord] = {}
        else:
            super().__init__(None)
            self._dns = {d.lower(): ip for d, ip in dns_source.items()}
            self._geo = dict(geo_source or {})
            self._loaded = True

    def _load(self) -> None:
        self._dns = {
            d.lower(): ip
            for d, ip in json.loads(self._source.read_text(encoding="utf-8")).items()
        }
        if self._geo_path is not None:
            raw = json.loads(self._geo_path.read_text(encoding="utf-8"))
            self._geo = {
                ip: GeoRecord(
                    ip=ip,
                    country_code=row["countryCode"],
                    latitude=float(row["latitude"]),
                    longitude=float(row["longitude"]),
                )
                for ip, row in raw.items()
            }

    def resolve(self, domain: str) -> str:
        self._ensure()
        ip = self._dns.get(domain.lower())
        if ip is None:
            raise ResolutionFailure(f"{domain} not resolvable")
        return ip

    def locate(self, domain: str) -> GeoRecord:
        ip = self.resolve(domain)
        record = self._geo.get(ip)
        if record is None:
            raise GeoUnknown(f"no geolocation row for {ip}")
        return record


class DependencyProvider(_LazyFixture):
    """Current dependency observations plus a latest-wins baseline store."""

    def __init__(self, source: str | Path | Mapping[str, Iterable[str]] | None = None):
        if source is None or isinstance(source, (str, Path)):
            super().__init__(source)
            self._current: dict[str, frozenset[str]] = {}
            if source is None:
                self._loaded = True
        else:
            super().__init__(None)
            self._current = {u: frozenset(vs) for u, vs in source.items()}
            self._loaded = True
        self._baselines: dict[str, DependencySnapshot] = {}
        self._write_lock = threading.Lock()

    def _load(self) -> None:
        raw = json.loads(self._source.read_text(encoding="utf-8"))
        self._current = {u: frozenset(vs) for u, vs in raw.items()}

    def current_observation(self, resource_url: str) -> frozenset[str] | None:
        self._ensure()
        return self._current.get(resource_url)

    def set_current_observation(self, resource_url: str, contacted: Iterable[str]) -> None:
        self._ensure()
        self._current[resource_url] = frozenset(contacted)

    def dependency_snapshot(self, resource_url: str) -> DependencySnapshot | None:
        self._ensure()
        return self._baselines.get(resource_url)

    def store_snapshot(self, snapshot: DependencySnapshot) -> None:
        self._ensure()
        with self._write_lock:
            existing = self._baselines.get(snapshot.resource_url)
            if existing is None or snapshot.captured_at >= existing.captured_at:
                self._baselines[snapshot.resource_url] = snapshot


class SriProvider(_LazyFixture):
    """Expected subresource digests keyed by (page, resource)."""

    def __init__(self, source: str | Path | Iterable[SriEntry] | None = None):
        if source is None or isinstance(source, (str, Path)):
            super().__init__(source)
            self._entries: dict[tuple[str, str], SriEntry] = {}
            if source is None:
                self._loaded = True
        else:
            super().__init__(None)
            self._entries = {(e.page_url, e.resource_url): e for e in source}
            self._loaded = True

    def _load(self) -> None:
        raw = json.loads(self._source.read_text(encoding="utf-8"))
        for row in raw:
            entry = SriEntry(
                page_url=row["pageUrl"],
                resource_url=row["resourceUrl"],
                digest=row["digest"],
            )
            self._entries[(entry.page_url, entry.resource_url)] = entry

    def entry_for(self, page_url: str, resource_url: str) -> SriEntry | None:
        self._ensure()
        return self._entries.get((page_url, resource_url))


class CoreFileProvider(_LazyFixture):
    """Expected digests for core application files, client- and server-side."""

    def __init__(
        self,
        source: str | Path | Iterable[CoreFileManifestEntry] | None = None,
        app_root: str | Path | None = None,
    ):
        if source is None or isinstance(source, (str, Path)):
            super().__init__(source)
            self._entries: list[CoreFileManifestEntry] = []
            if source is None:
                self._loaded = True
        else:
            super().__init__(None)
            self._entries = list(source)
            self._loaded = True
        self.app_root = Path(app_root) if app_root is not None else None

    def _load(self) -> None:
        raw = json.loads(self._source.read_text(encoding="utf-8"))
        self._entries = [
            CoreFileManifestEntry(
                path=row["path"].lstrip("/"),
                expected_digest=row["expectedDigest"],
                side=row["side"],
            )
            for row in raw
        ]

    def entry_for_path(self, path: str, scope: str) -> CoreFileManifestEntry | None:
        """Manifest entry matching a site-relative path within a scope."""
        self._ensure()
        path = path.lstrip("/")
        for entry in self._entries:
            if entry.path == path and (scope == "both" or entry.side == scope):
                return entry
        return None

    def server_file_bytes(self, entry: CoreFileManifestEntry) -> bytes | None:
        if self.app_root is None:
            return None
        target = self.app_root / entry.path
        if not target.is_file():
            return None
        return target.read_bytes()


class TlsStatusProvider(_LazyFixture):
    """Connection-health markers per host; absence means unknown, not error."""

    def __init__(self, source: str | Path | Mapping[str, str] | None = None):
        if source is None or isinstance(source, (str, Path)):
            super().__init__(source)
            self._status: dict[str, str] = {}
            if source is None:
                self._loaded = True
        else:
            super().__init__(None)
            self._status = {h.lower(): s for h, s in source.items()}
            self._loaded = True

    def _load(self) -> None:
        raw = json.loads(self._source.read_text(encoding="utf-8"))
        self._status = {h.lower(): s for h, s in raw.items()}

    def status(self, host: str) -> str | None:
        self._ensure()
        return self._status.get(host.lower())


class ContentProvider(_LazyFixture):
    """Resource bodies as observed under different client profiles."""

    DEFAULT_PROFILE = "desktop"

    def __init__(self, source: str | Path | Mapping[str, object] | None = None):
        if source is None or isinstance(source, (str, Path)):
            super().__init__(source)
            self._bodies: dict[str, dict[str, str]] = {}
            if source is None:
                self._loaded = True
        else:
            super().__init__(None)
            self._bodies = {u: self._normalize_entry(v) for u, v in source.items()}
            self._loaded = True

    @staticmethod
    def _normalize_entry(value: object) -> dict[str, str]:
        if isinstance(value, str):
            return {ContentProvider.DEFAULT_PROFILE: value}
        if isinstance(value, dict) and "profiles" in value:
            return dict(value["profiles"])
        raise ValueError(f"bad content fixture entry: {value!r}")

    def _load(self) -> None:
        raw = json.loads(self._source.read_text(encoding="utf-8"))
        self._bodies = {u: self._normalize_entry(v) for u, v in raw.items()}

    def fetch(self, url: str, profile: str = DEFAULT_PROFILE) -> str | None:
        self._ensure()
        entry = self._bodies.get(url)
        if entry is None:
            return None
        return entry.get(profile, entry.get(self.DEFAULT_PROFILE))

    def profiles_for(self, url: str) -> list[str]:
        self._ensure()
        return sorted(self._bodies.get(url, {}))


@dataclass
class ProviderBundle:
    """Everything the condition engine may consult, in one place."""

    registrations: RegistrationProvider = field(
        default_factory=lambda: RegistrationProvider(())
    )
    rankings: RankingProvider = field(default_factory=lambda: RankingProvider({}))
    threat_intel: ThreatIntelProvider = field(
        default_factory=lambda: ThreatIntelProvider(())
    )
    geo: GeoLocator = field(default_factory=lambda: GeoLocator({}))
    dependencies: DependencyProvider = field(default_factory=DependencyProvider)
    sri: SriProvider = field(default_factory=SriProvider)
    core_files: CoreFileProvider = field(default_factory=CoreFileProvider)
    tls_status: TlsStatusProvider = field(default_factory=TlsStatusProvider)
    content: ContentProvider = field(default_factory=ContentProvider)
