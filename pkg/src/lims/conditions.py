"""Executable policy conditions and the engine that dispatches them.

A condition binding attaches a name (referenced from rule text via
``if <name>``) to one of the built-in checks plus its parameters and a
decision TTL. Every check shares one signature and returns a Verdict;
``violation=True`` means the verification FAILS and the governed requests
are denied.

All checks take "now" explicitly and are pure functions of (binding, link,
providers, now); the single exception is the dependency check, which
records a baseline snapshot on first sight.
"""

from __future__ import annotations

import base64
import enum
import hashlib
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Any, Callable, Mapping, Protocol

from .errors import (
    BindingValidationError,
    GeoUnknown,
    ProviderUnavailable,
    ResolutionFailure,
    UnknownCondition,
    UnknownListDate,
    VerificationError,
)
from .providers import (
    DependencySnapshot,
    GeoRecord,
    ProviderBundle,
    great_circle_km,
)
from .urls import host_of, path_of, registrable_domain


class ConditionKind(enum.Enum):
    DOMAIN_LIFECYCLE_REGISTRATION = "domain_lifecycle_registration"
    DOMAIN_LIFECYCLE_EXPIRY = "domain_lifecycle_expiry"
    DOMAIN_RANKING = "domain_ranking"
    THREAT_INTEL = "threat_intel"
    DEPENDENCIES = "dependencies"
    SRI_VIOLATION = "sri_violation"
    INFRASTRUCTURE_LOCATION = "infrastructure_location"
    CORE_FILE = "core_file"
    TLS_STATUS = "tls_status"
    CUSTOM = "custom"


class LinkLike(Protocol):
    """The slice of a stored link that conditions need."""

    page_url: str
    resource_url: str
    etld1: str
    query: str | None


@dataclass(frozen=True)
class Verdict:
    violation: bool
    detail: str
    evidence: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.violation and not self.detail:
            raise ValueError("violations must carry a non-empty detail")


@dataclass(frozen=True)
class ConditionBinding:
    name: str
    kind: ConditionKind
    params: Mapping[str, Any] = field(default_factory=dict)
    ttl_seconds: int = 3600

    def __post_init__(self) -> None:
        if self.ttl_seconds <= 0:
            raise BindingValidationError("ttlSeconds must be positive")
        _validate_params(self.kind, self.params)

    @classmethod
    def from_json(cls, row: Mapping[str, Any]) -> "ConditionBinding":
        try:
            kind = ConditionKind(row["kind"])
        except (KeyError, ValueError) as exc:
            raise BindingValidationError(f"bad binding kind in {row!r}") from exc
        return cls(
            name=row["name"],
            kind=kind,
            params=dict(row.get("params", {})),
            ttl_seconds=int(row.get("ttlSeconds", 3600)),
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "params": dict(self.params),
            "ttlSeconds": self.ttl_seconds,
        }


def load_bindings(rows: list[Mapping[str, Any]]) -> dict[str, ConditionBinding]:
    bindings: dict[str, ConditionBinding] = {}
    for row in rows:
        binding = ConditionBinding.from_json(row)
        if binding.name in bindings:
            raise BindingValidationError(f"duplicate binding name {binding.name!r}")
        bindings[binding.name] = binding
    return bindings


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise BindingValidationError(message)


def _validate_params(kind: ConditionKind, params: Mapping[str, Any]) -> None:
    def positive_int(key: str) -> None:
        _require(
            isinstance(params.get(key), int)
            and not isinstance(params.get(key), bool)
            and params[key] > 0,
            f"{key} must be a positive integer",
        )

    def optional_domain_list(key: str) -> None:
        value = params.get(key, [])
        _require(
            isinstance(value, list) and all(isinstance(d, str) for d in value),
            f"{key} must be a list of domains",
        )

    if kind is ConditionKind.DOMAIN_LIFECYCLE_REGISTRATION:
        positive_int("thresholdDays")
        optional_domain_list("allowlist")
    elif kind is ConditionKind.DOMAIN_LIFECYCLE_EXPIRY:
        positive_int("horizonDays")
        optional_domain_list("allowlist")
    elif kind is ConditionKind.DOMAIN_RANKING:
        positive_int("maxRank")
        optional_domain_list("allowlist")
        if "listDate" in params:
            _require(isinstance(params["listDate"], str), "listDate must be ISO text")
            date.fromisoformat(params["listDate"])
    elif kind is ConditionKind.THREAT_INTEL:
        _require(
            isinstance(params.get("enableCamouflageCheck", False), bool),
            "enableCamouflageCheck must be a boolean",
        )
    elif kind is ConditionKind.DEPENDENCIES:
        _require(
            params.get("granularity") in ("full_url", "full_host", "etld1"),
            "granularity must be one of full_url, full_host, etld1",
        )
    elif kind is ConditionKind.INFRASTRUCTURE_LOCATION:
        optional_domain_list("allowedCountries")
        ref = params.get("referencePoint")
        _require(
            isinstance(ref, Mapping) and "latitude" in ref and "longitude" in ref,
            "referencePoint must carry latitude and longitude",
        )
        _require(
            isinstance(params.get("maxDistanceKm"), (int, float))
            and params["maxDistanceKm"] > 0,
            "maxDistanceKm must be a positive number",
        )
    elif kind is ConditionKind.CORE_FILE:
        _require(
            params.get("manifestScope") in ("client", "server", "both"),
            "manifestScope must be one of client, server, both",
        )
    elif kind in (ConditionKind.SRI_VIOLATION, ConditionKind.TLS_STATUS, ConditionKind.CUSTOM):
        pass


def _allowlisted(domain: str, params: Mapping[str, Any]) -> bool:
    return domain in set(params.get("allowlist", []))


def eval_domain_lifecycle_registration(
    binding: ConditionBinding, link: LinkLike, providers: ProviderBundle, now: datetime
) -> Verdict:
    """Deny resources on domains younger than the configured threshold."""
    domain = link.etld1
    threshold = binding.params["thresholdDays"]
    if _allowlisted(domain, binding.params):
        return Verdict(False, "domain allowlisted", {"domain": domain})
    record = providers.registrations.lookup(domain)
    if record is None:
        return Verdict(False, "unknown registration", {"domain": domain})
    age_days = (now.date() - record.registered_at).days
    evidence = {
        "domain": domain,
        "registeredAt": record.registered_at.isoformat(),
        "ageDays": age_days,
        "thresholdDays": threshold,
    }
    if age_days < threshold:
        return Verdict(
            True, f"{domain} registered {age_days} days ago (< {threshold})", evidence
        )
    return Verdict(False, "registration age acceptable", evidence)


def eval_domain_lifecycle_expiry(
    binding: ConditionBinding, link: LinkLike, providers: ProviderBundle, now: datetime
) -> Verdict:
    """Deny resources on domains due to expire within the horizon."""
    domain = link.etld1
    horizon = binding.params["horizonDays"]
    if _allowlisted(domain, binding.params):
        return Verdict(False, "domain allowlisted", {"domain": domain})
    record = providers.registrations.lookup(domain)
    if record is None or record.expires_at is None:
        return Verdict(False, "no expiry on file", {"domain": domain})
    remaining = (record.expires_at - now.date()).days
    evidence = {
        "domain": domain,
        "expiresAt": record.expires_at.isoformat(),
        "remainingDays": remaining,
        "horizonDays": horizon,
    }
    if remaining < horizon:
        return Verdict(
            True, f"{domain} expires in {remaining} days (< {horizon})", evidence
        )
    return Verdict(False, "expiry beyond horizon", evidence)


def eval_domain_ranking(
    binding: ConditionBinding, link: LinkLike, providers: ProviderBundle, now: datetime
) -> Verdict:
    """Deny resources on domains unranked or ranked worse than the threshold."""
    domain = link.etld1
    max_rank = binding.params["maxRank"]
    if _allowlisted(domain, binding.params):
        return Verdict(False, "domain allowlisted", {"domain": domain})
    list_date = (
        date.fromisoformat(binding.params["listDate"])
        if "listDate" in binding.params
        else None
    )
    rank = providers.rankings.lookup(domain, list_date)
    evidence = {"domain": domain, "rank": rank, "maxRank": max_rank}
    if rank is None:
        return Verdict(True, f"{domain} is unranked", evidence)
    if rank > max_rank:
        return Verdict(True, f"{domain} ranked {rank} (> {max_rank})", evidence)
    return Verdict(False, "rank within threshold", evidence)


def _camouflage_detected(resource_url: str, providers: ProviderBundle) -> tuple[bool, dict]:
    profiles = providers.content.profiles_for(resource_url)
    if len(profiles) < 2:
        return False, {"profilesCompared": profiles}
    bodies = {p: providers.content.fetch(resource_url, p) for p in profiles}
    distinct = {b for b in bodies.values() if b is not None}
    return len(distinct) > 1, {"profilesCompared": profiles}


def eval_threat_intel(
    binding: ConditionBinding, link: LinkLike, providers: ProviderBundle, now: datetime
) -> Verdict:
    """Deny resources flagged by indicator feeds or serving per-profile bodies."""
    host = host_of(link.resource_url)
    checked = [host]
    flagged = providers.threat_intel.is_flagged(host)
    if not flagged and link.etld1 != host:
        checked.append(link.etld1)
        flagged = providers.threat_intel.is_flagged(link.etld1)
    if not flagged:
        try:
            ip = providers.geo.resolve(host)
        except ResolutionFailure:
            ip = None
        if ip is not None:
            checked.append(ip)
            flagged = providers.threat_intel.is_flagged(ip)
    evidence: dict[str, Any] = {"indicatorsChecked": checked}
    if flagged:
        return Verdict(True, "indicator flagged by threat intelligence", evidence)
    if binding.params.get("enableCamouflageCheck", False):
        camouflaged, cam_evidence = _camouflage_detected(link.resource_url, providers)
        evidence.update(cam_evidence)
        if camouflaged:
            return Verdict(True, "response body varies across client profiles", evidence)
    return Verdict(False, "no threat indicators", evidence)


def _project(urls: frozenset[str], granularity: str) -> frozenset[str]:
    if granularity == "full_url":
        return urls
    if granularity == "full_host":
        return frozenset(host_of(u) for u in urls)
    return frozenset(registrable_domain(host_of(u)) for u in urls)


def eval_dependencies(
    binding: ConditionBinding, link: LinkLike, providers: ProviderBundle, now: datetime
) -> Verdict:
    """Deny resources whose contacted-URL set changed since the baseline."""
    granularity = binding.params["granularity"]
    current = providers.dependencies.current_observation(link.resource_url)
    if current is None:
        raise VerificationError(f"no current dependency observation for {link.resource_url}")
    previous = providers.dependencies.dependency_snapshot(link.resource_url)
    if previous is None:
        providers.dependencies.store_snapshot(
            DependencySnapshot(link.resource_url, current, now)
        )
        return Verdict(
            False, "baseline recorded", {"baseline": sorted(current), "granularity": granularity}
        )
    before = _project(previous.contacted_urls, granularity)
    after = _project(current, granularity)
    evidence = {
        "granularity": granularity,
        "baseline": sorted(before),
        "current": sorted(after),
        "added": sorted(after - before),
        "removed": sorted(before - after),
    }
    if before != after:
        return Verdict(True, "dependency set changed", evidence)
    return Verdict(False, "dependency set unchanged", evidence)


def eval_sri_violation(
    binding: ConditionBinding, link: LinkLike, providers: ProviderBundle, now: datetime
) -> Verdict:
    """Deny resources whose content no longer matches the expected digest.

    Resources without a configured digest pass: the check reports breakage
    of declared expectations, it does not require declarations.
    """
    entry = providers.sri.entry_for(link.page_url, link.resource_url)
    if entry is None:
        return Verdict(False, "no expected digest configured", {})
    body = providers.content.fetch(link.resource_url)
    if body is None:
        raise VerificationError(f"content unfetchable for {link.resource_url}")
    digest = hashlib.new(entry.algorithm, body.encode("utf-8")).digest()
    actual = base64.b64encode(digest).decode("ascii")
    evidence = {
        "algorithm": entry.algorithm,
        "expected": entry.expected_hash,
        "actual": actual,
    }
    if actual != entry.expected_hash:
        return Verdict(True, "content digest mismatch", evidence)
    return Verdict(False, "digest matches", evidence)


def eval_tls_status(
    binding: ConditionBinding, link: LinkLike, providers: ProviderBundle, now: datetime
) -> Verdict:
    """Deny resources whose host has a recorded TLS connection error."""
    host = host_of(link.resource_url)
    status = providers.tls_status.status(host)
    evidence = {"host": host, "status": status}
    if status is None or status == "ok":
        return Verdict(False, "no TLS errors on record", evidence)
    return Verdict(True, f"TLS error for {host}: {status}", evidence)


def eval_infrastructure_location(
    binding: ConditionBinding, link: LinkLike, providers: ProviderBundle, now: datetime
) -> Verdict:
    """Deny resources served from far-away servers in unexpected countries."""
    host = host_of(link.resource_url)
    record = providers.geo.locate(host)
    allowed = set(binding.params.get("allowedCountries", []))
    evidence: dict[str, Any] = {
        "host": host,
        "ip": record.ip,
        "country": record.country_code,
        "allowedCountries": sorted(allowed),
    }
    if record.country_code in allowed:
        return Verdict(False, "country allowed", evidence)
    ref = binding.params["referencePoint"]
    reference = GeoRecord(
        ip="reference",
        country_code="",
        latitude=float(ref["latitude"]),
        longitude=float(ref["longitude"]),
    )
    distance = great_circle_km(reference, record)
    max_distance = float(binding.params["maxDistanceKm"])
    evidence["distanceKm"] = round(distance, 3)
    evidence["maxDistanceKm"] = max_distance
    if distance >= max_distance:
        return Verdict(
            True,
            f"server in {record.country_code} at {distance:.0f} km (>= {max_distance:.0f})",
            evidence,
        )
    return Verdict(False, "server within distance threshold", evidence)


def eval_core_file(
    binding: ConditionBinding, link: LinkLike, providers: ProviderBundle, now: datetime
) -> Verdict:
    """Deny requests for core application files whose content was modified."""
    scope = binding.params["manifestScope"]
    path = path_of(link.resource_url)
    entry = providers.core_files.entry_for_path(path, scope)
    if entry is None:
        return Verdict(False, "not a manifest-tracked file", {"path": path})
    if entry.side == "server":
        content = providers.core_files.server_file_bytes(entry)
    else:
        body = providers.content.fetch(link.resource_url)
        if body is None:
            body = providers.content.fetch(entry.path)
        content = body.encode("utf-8") if body is not None else None
    evidence: dict[str, Any] = {
        "path": entry.path,
        "side": entry.side,
        "expectedDigest": entry.expected_digest,
    }
    if content is None:
        return Verdict(True, "missing core file", evidence)
    actual = hashlib.sha256(content).hexdigest()
    evidence["actualDigest"] = actual
    if actual != entry.expected_digest:
        return Verdict(True, "core file modified", evidence)
    return Verdict(False, "core file intact", evidence)


ConditionFn = Callable[[ConditionBinding, LinkLike, ProviderBundle, datetime], Verdict]

_BUILTIN: dict[ConditionKind, ConditionFn] = {
    ConditionKind.DOMAIN_LIFECYCLE_REGISTRATION: eval_domain_lifecycle_registration,
    ConditionKind.DOMAIN_LIFECYCLE_EXPIRY: eval_domain_lifecycle_expiry,
    ConditionKind.DOMAIN_RANKING: eval_domain_ranking,
    ConditionKind.THREAT_INTEL: eval_threat_intel,
    ConditionKind.DEPENDENCIES: eval_dependencies,
    ConditionKind.SRI_VIOLATION: eval_sri_violation,
    ConditionKind.TLS_STATUS: eval_tls_status,
    ConditionKind.INFRASTRUCTURE_LOCATION: eval_infrastructure_location,
    ConditionKind.CORE_FILE: eval_core_file,
}


class ConditionEngine:
    """Dispatches a binding to its check and normalizes error channels."""

    def __init__(self) -> None:
        self._custom: dict[str, ConditionFn] = {}

    def register_custom(self, name: str, fn: ConditionFn) -> None:
        self._custom[name] = fn

    def evaluate(
        self,
        binding: ConditionBinding,
        link: LinkLike,
        providers: ProviderBundle,
        now: datetime,
    ) -> Verdict:
        if binding.kind is ConditionKind.CUSTOM:
            fn = self._custom.get(binding.name)
            if fn is None:
                raise UnknownCondition(f"no custom condition registered as {binding.name!r}")
        else:
            fn = _BUILTIN.get(binding.kind)
            if fn is None:  # pragma: no cover - enum is exhaustive
                raise UnknownCondition(f"no implementation for {binding.kind}")
        try:
            return fn(binding, link, providers, now)
        except (ProviderUnavailable, UnknownListDate, ResolutionFailure, GeoUnknown) as exc:
            raise VerificationError(str(exc)) from exc
