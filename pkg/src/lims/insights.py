"""Longitudinal dependency analytics over archived link snapshots.

Input is a per-site series of weekly link sets ("YYYY-WW" labels, dated by
that ISO week's Monday). From these the analyzer derives the registration
age of the youngest linked domain over time, the worst linked ranking over
time, a stability classification, and threshold suggestions that would
never have flagged the observed history.
"""

from __future__ import annotations

import csv
import enum
import json
import statistics
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import IO, Any, Iterable, Mapping, Sequence

from .errors import InsufficientData
from .providers import RankingProvider, RegistrationProvider
from .urls import host_of, normalize_url, registrable_domain

UNRANKED_IMPUTED_RANK = 10_000_000


@dataclass(frozen=True, order=True)
class SnapshotIndex:
    """A "YYYY-WW" archive label and the Monday that approximates it."""

    approx_date: date
    label: str

    @classmethod
    def parse(cls, label: str) -> "SnapshotIndex":
        try:
            year_text, week_text = label.split("-")
            approx = date.fromisocalendar(int(year_text), int(week_text), 1)
        except ValueError as exc:
            raise ValueError(f"bad snapshot index {label!r}: {exc}") from exc
        return cls(approx_date=approx, label=label)


def index_to_date(label: str) -> date:
    """Monday of ISO week WW in year YYYY."""
    return SnapshotIndex.parse(label).approx_date


@dataclass(frozen=True)
class SnapshotSeries:
    site: str
    points: tuple[tuple[SnapshotIndex, frozenset[str]], ...]

    def __post_init__(self) -> None:
        dates = [index.approx_date for index, _ in self.points]
        if any(a >= b for a, b in zip(dates, dates[1:])):
            raise ValueError("snapshot indexes must be strictly increasing")


def load_snapshots(path: str | Path) -> dict[str, SnapshotSeries]:
    """Read JSON-lines rows {site, index, links: [urls]} into per-site series.

    Links aggregate to their registrable domains; rows for the same site
    are ordered by index.
    """
    staged: dict[str, dict[SnapshotIndex, set[str]]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            index = SnapshotIndex.parse(row["index"])
            domains = staged.setdefault(row["site"], {}).setdefault(index, set())
            for url in row["links"]:
                host = host_of(normalize_url(url)) if "://" in url else url
                domains.add(registrable_domain(host))
    return {
        site: SnapshotSeries(
            site,
            tuple((index, frozenset(domains)) for index, domains in sorted(points.items())),
        )
        for site, points in staged.items()
    }


def registration_age_series(
    series: SnapshotSeries, registrations: RegistrationProvider
) -> list[tuple[SnapshotIndex, int]]:
    """Days since the youngest linked domain's registration, per index.

    Domains without registration data are skipped; indexes where nothing
    is known yield no point.
    """
    out: list[tuple[SnapshotIndex, int]] = []
    for index, domains in series.points:
        ages = []
        for domain in domains:
            record = registrations.lookup(domain)
            if record is not None:
                ages.append((index.approx_date - record.registered_at).days)
        if ages:
            out.append((index, min(ages)))
    return out


def lowest_rank_series(
    series: SnapshotSeries,
    rankings: RankingProvider,
    impute_unranked: bool,
) -> list[tuple[SnapshotIndex, int]]:
    """Worst (highest) rank among linked domains, per index.

    The ranking list for an index is the nearest loaded list at or before
    the index date. Unranked domains count as 10,000,000 when imputing,
    otherwise they are excluded; an index with no rankable domain yields
    no point.
    """
    out: list[tuple[SnapshotIndex, int]] = []
    for index, domains in series.points:
        list_date = rankings.nearest_date_at_or_before(index.approx_date)
        if list_date is None:
            continue
        ranks = []
        for domain in domains:
            rank = rankings.lookup(domain, list_date)
            if rank is not None:
                ranks.append(rank)
            elif impute_unranked:
                ranks.append(UNRANKED_IMPUTED_RANK)
        if ranks:
            out.append((index, max(ranks)))
    return out


class Stability(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"


def classify_stability(age_series: Sequence[tuple[SnapshotIndex, int]]) -> Stability:
    """Stable iff the age series never drops between consecutive points.

    A drop means a domain younger than everything seen before was linked.
    """
    if len(age_series) < 2:
        raise InsufficientData("need at least two points to classify stability")
    values = [value for _, value in age_series]
    if all(a <= b for a, b in zip(values, values[1:])):
        return Stability.STABLE
    return Stability.UNSTABLE


@dataclass(frozen=True)
class SuggestedThresholds:
    min_age_days: int
    max_rank: int | None

    def to_json(self) -> dict[str, Any]:
        return {"minAgeDays": self.min_age_days, "maxRank": self.max_rank}


def suggest_thresholds(
    age_series: Sequence[tuple[SnapshotIndex, int]],
    rank_series: Sequence[tuple[SnapshotIndex, int]],
    age_margin_days: int = 0,
    rank_margin: int = 0,
) -> SuggestedThresholds:
    """Tightest thresholds that the observed history would have satisfied.

    Imputed rank points are ignored: only finite (real) ranks inform the
    rank ceiling.
    """
    if not age_series:
        raise InsufficientData("empty age series")
    min_age = max(0, min(v for _, v in age_series) - age_margin_days)
    finite_ranks = [v for _, v in rank_series if v < UNRANKED_IMPUTED_RANK]
    max_rank = max(finite_ranks) + rank_margin if finite_ranks else None
    return SuggestedThresholds(min_age_days=min_age, max_rank=max_rank)


def replay_thresholds(
    age_series: Sequence[tuple[SnapshotIndex, int]],
    rank_series: Sequence[tuple[SnapshotIndex, int]],
    thresholds: SuggestedThresholds,
) -> list[tuple[str, str]]:
    """Re-check history against suggested thresholds; returns violations.

    By construction of suggest_thresholds this comes back empty.
    """
    violations: list[tuple[str, str]] = []
    for index, age in age_series:
        if age < thresholds.min_age_days:
            violations.append((index.label, f"age {age} < {thresholds.min_age_days}"))
    if thresholds.max_rank is not None:
        for index, rank in rank_series:
            if rank < UNRANKED_IMPUTED_RANK and rank > thresholds.max_rank:
                violations.append((index.label, f"rank {rank} > {thresholds.max_rank}"))
    return violations


@dataclass(frozen=True)
class InclusionSummary:
    median_external_urls: float | None
    median_external_origins: float | None
    median_urls_per_origin: float | None
    top_origins: tuple[tuple[str, int], ...]

    def to_json(self) -> dict[str, Any]:
        return {
            "medianExternalUrls": self.median_external_urls,
            "medianExternalOrigins": self.median_external_origins,
            "medianUrlsPerOrigin": self.median_urls_per_origin,
            "topOrigins": [
                {"origin": origin, "sites": count} for origin, count in self.top_origins
            ],
        }


def inclusion_summary(
    request_log: Mapping[str, Iterable[str]], top_n: int = 10
) -> InclusionSummary:
    """Per-site external-inclusion medians from a {site: [resource urls]} log.

    A resource is external when its registrable domain differs from the
    site's. Per site we count distinct external URLs and distinct external
    origins (hosts); URLs-per-origin is their ratio. ``top_origins`` ranks
    origins by how many sites requested them.
    """
    url_counts: list[int] = []
    origin_counts: list[int] = []
    ratios: list[float] = []
    sites_per_origin: dict[str, set[str]] = {}
    for site, urls in request_log.items():
        site_domain = registrable_domain(site)
        externals: set[str] = set()
        origins: set[str] = set()
        for raw in urls:
            normalized = normalize_url(raw) if "://" in raw else raw
            host = host_of(normalized)
            if registrable_domain(host) == site_domain:
                continue
            externals.add(normalized)
            origins.add(host)
            sites_per_origin.setdefault(host, set()).add(site)
        if externals:
            url_counts.append(len(externals))
            origin_counts.append(len(origins))
            ratios.append(len(externals) / len(origins))
    if not url_counts:
        return InclusionSummary(None, None, None, ())
    top = sorted(
        ((origin, len(sites)) for origin, sites in sites_per_origin.items()),
        key=lambda pair: (-pair[1], pair[0]),
    )[:top_n]
    return InclusionSummary(
        median_external_urls=statistics.median(url_counts),
        median_external_origins=statistics.median(origin_counts),
        median_urls_per_origin=statistics.median(ratios),
        top_origins=tuple(top),
    )


def write_series_csv(
    fp: IO[str],
    site: str,
    age_series: Sequence[tuple[SnapshotIndex, int]],
    rank_series: Sequence[tuple[SnapshotIndex, int]],
) -> None:
    ages = {index.label: value for index, value in age_series}
    ranks = {index.label: value for index, value in rank_series}
    writer = csv.writer(fp)
    writer.writerow(["site", "index", "min_age_days", "worst_rank"])
    for label in sorted(set(ages) | set(ranks)):
        writer.writerow([site, label, ages.get(label, ""), ranks.get(label, "")])
