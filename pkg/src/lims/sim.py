"""Deterministic page-load simulation across activation stages.

Reproduces the structure of the staged overhead methodology: each trace is
visited twice per stage on a virtual clock, with per-resource transfer
times computed from declared sizes and the network profile. Stage costs
are additive —

* ``no_sw``    baseline, nothing added
* ``noop_sw``  fixed interception cost per request
* ``noop_api`` interception plus one query round-trip per cache miss,
  answered by a stub that always allows
* ``full``     the same, answered by the real in-process API (store reads
  included), plus a server-processing cost per query

Absolute milliseconds are parameterized, not measured: only the ordering
and the cache-warm structure carry meaning.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import random
import statistics
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import IO, Any, Callable, Iterable, Sequence

from .client import Client, ClientConfig, InterceptAction
from .conditions import ConditionBinding, ConditionKind
from .errors import ConfigurationError, TransportFailure
from .policy import PolicyDocument, derive_requirements, parse_policy
from .providers import (
    ContentProvider,
    DependencyProvider,
    DependencySnapshot,
    GeoLocator,
    ProviderBundle,
    RankingProvider,
    RegistrationProvider,
    RegistrationRecord,
    SriProvider,
    ThreatIntelProvider,
    TlsStatusProvider,
)
from .server import (
    ApiService,
    HeartbeatResponse,
    Mode,
    ResponseReason,
    ServerConfig,
    StatusQuery,
    StatusResponse,
)
from .store import InMemoryLinkStore
from .urls import split_url
from .verifier import Verifier

SIM_EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)
SECOND_VISIT_DELAY_SECONDS = 60.0


class Stage(enum.Enum):
    NO_SW = "no_sw"
    NOOP_SW = "noop_sw"
    NOOP_API = "noop_api"
    FULL = "full"


class Visit(enum.Enum):
    FIRST = "first"
    SECOND = "second"


@dataclass(frozen=True)
class TraceResource:
    url: str
    size_bytes: int = 20_000


@dataclass(frozen=True)
class PageTrace:
    page_url: str
    resources: tuple[TraceResource, ...]

    @classmethod
    def from_json(cls, row: dict[str, Any]) -> "PageTrace":
        return cls(
            page_url=row["pageUrl"],
            resources=tuple(
                TraceResource(r["url"], int(r.get("sizeBytes", 20_000)))
                for r in row["resources"]
            ),
        )


@dataclass(frozen=True)
class NetworkProfile:
    name: str
    download_mbps: float
    upload_mbps: float
    rtt_ms: float
    intercept_cost_ms: float = 0.25
    server_cost_ms: float = 2.0
    query_payload_bytes: int = 300

    def __post_init__(self) -> None:
        if self.download_mbps <= 0 or self.upload_mbps <= 0:
            raise ConfigurationError("profile rates must be positive")

    @classmethod
    def from_json(cls, row: dict[str, Any]) -> "NetworkProfile":
        return cls(
            name=row["name"],
            download_mbps=float(row["downloadMbps"]),
            upload_mbps=float(row["uploadMbps"]),
            rtt_ms=float(row["rttMs"]),
            intercept_cost_ms=float(row.get("interceptCostMs", 0.25)),
            server_cost_ms=float(row.get("serverCostMs", 2.0)),
        )

    def transfer_ms(self, size_bytes: int) -> float:
        return size_bytes * 8 / (self.download_mbps * 1e6) * 1000.0

    def query_round_trip_ms(self) -> float:
        upload_ms = self.query_payload_bytes * 8 / (self.upload_mbps * 1e6) * 1000.0
        return self.rtt_ms + upload_ms


# Profile speeds follow common published figures for each access type; the
# unthrottled figures mirror typical datacenter medians.
DEFAULT_PROFILES: dict[str, NetworkProfile] = {
    "unthrottled": NetworkProfile("unthrottled", 82.0, 44.0, 6.0),
    "wifi": NetworkProfile("wifi", 30.0, 15.0, 20.0),
    "5g": NetworkProfile("5g", 50.0, 10.0, 40.0),
}


@dataclass(frozen=True)
class StageRun:
    stage: Stage
    visit: Visit
    simulated_load_ms: float
    query_count: int = 0

    def to_json(self) -> dict[str, Any]:
        return {
            "stage": self.stage.value,
            "visit": self.visit.value,
            "simulatedLoadMs": round(self.simulated_load_ms, 4),
            "queryCount": self.query_count,
        }


class _CountingTransport:
    """Wraps a responder; counts queries and accrues their virtual cost."""

    def __init__(
        self,
        respond: Callable[[StatusQuery, datetime], StatusResponse],
        profile: NetworkProfile,
        extra_cost_ms: float,
    ):
        self._respond = respond
        self._profile = profile
        self._extra_cost_ms = extra_cost_ms
        self.queries = 0
        self.cost_ms = 0.0
        self.now = SIM_EPOCH

    def query_status(self, query: StatusQuery) -> StatusResponse:
        self.queries += 1
        self.cost_ms += self._profile.query_round_trip_ms() + self._extra_cost_ms
        return self._respond(query, self.now)

    def heartbeat(self, client_id: str, epoch: int) -> HeartbeatResponse:
        raise TransportFailure("simulation transport has no heartbeat channel")


def _noise_factors(seed: int, trace: PageTrace, visit: Visit, count: int) -> list[float]:
    # Noise is a function of (seed, trace, visit) only — never the stage —
    # so stage deltas are pure stage costs under identical network weather.
    key = f"{seed}|{trace.page_url}|{visit.value}".encode("utf-8")
    rng = random.Random(int.from_bytes(hashlib.sha256(key).digest()[:8], "big"))
    return [rng.uniform(0.9, 1.1) for _ in range(count)]


class Simulation:
    """Runs staged visits; the ``full`` stage drives a real ApiService."""

    def __init__(
        self,
        policy_doc: PolicyDocument | None = None,
        bindings: dict[str, ConditionBinding] | None = None,
        providers: ProviderBundle | None = None,
        mode: Mode = Mode.ENFORCE,
        client_cache_ttl_seconds: int = 600,
    ):
        self._environment_ready = policy_doc is not None
        self.policy_doc = policy_doc or PolicyDocument()
        self.bindings = bindings or {}
        self.providers = providers or ProviderBundle()
        self.store = InMemoryLinkStore()
        # Virtual clock: fixtures are anchored to SIM_EPOCH, so every code
        # path that would read a wall clock reads this instead.
        self.clock_now = SIM_EPOCH
        self.verifier = Verifier(
            self.store, self.bindings, self.providers, workers=0,
            clock=lambda: self.clock_now,
        )
        self.service = ApiService(
            self.store,
            self.policy_doc,
            self.bindings,
            self.verifier,
            ServerConfig(
                mode=mode,
                client_cache_ttl_seconds=client_cache_ttl_seconds,
                on_demand_timeout_ms=1000,
            ),
            clock=lambda: self.clock_now,
        )

    def bootstrap_verifications(self, traces: Iterable[PageTrace], now: datetime) -> int:
        """Warm the decision cache for every (link, condition) pair.

        Mirrors a steady-state deployment where periodic refresh keeps the
        cache populated ahead of client queries. The harness also stands in
        for the dependency crawler: trace resources without a current
        dependency observation get an empty one, so the dependency check is
        conclusive for them.
        """
        verified = 0
        for trace in traces:
            page, _ = split_url(trace.page_url)
            for resource in trace.resources:
                normalized, query = split_url(resource.url)
                link = self.store.upsert_link(page, normalized, query, now)
                if self.providers.dependencies.current_observation(normalized) is None:
                    self.providers.dependencies.set_current_observation(normalized, ())
                requirements = derive_requirements(self.policy_doc, page, normalized)
                if requirements.conditions:
                    self.verifier.verify_link(link, requirements.conditions, now)
                    verified += len(requirements.conditions)
        return verified

    def run_stage(
        self, trace: PageTrace, profile: NetworkProfile, stage: Stage, seed: int
    ) -> tuple[StageRun, StageRun]:
        """Simulate a first and second visit; returns both runs."""
        if stage is Stage.FULL and not self._environment_ready:
            raise ConfigurationError(
                "full stage needs policies and fixtures; construct the "
                "Simulation with a policy document or use default_policy_fixture()"
            )
        client = Client(ClientConfig(client_id=f"sim-{seed}"))
        first = self._visit(trace, profile, stage, seed, Visit.FIRST, client, SIM_EPOCH)
        second_at = SIM_EPOCH + timedelta(seconds=SECOND_VISIT_DELAY_SECONDS)
        second = self._visit(trace, profile, stage, seed, Visit.SECOND, client, second_at)
        return first, second

    def _visit(
        self,
        trace: PageTrace,
        profile: NetworkProfile,
        stage: Stage,
        seed: int,
        visit: Visit,
        client: Client,
        now: datetime,
    ) -> StageRun:
        noise = _noise_factors(seed, trace, visit, len(trace.resources))
        transport = self._transport_for(stage, profile)
        if transport is not None:
            transport.now = now
        total_ms = 0.0
        for i, resource in enumerate(trace.resources):
            fetched = True
            if stage is not Stage.NO_SW:
                total_ms += profile.intercept_cost_ms
            if transport is not None:
                action = client.intercept(trace.page_url, resource.url, now, transport)
                fetched = action is InterceptAction.PASS_THROUGH
            if fetched:
                total_ms += profile.rtt_ms * noise[i] + profile.transfer_ms(
                    resource.size_bytes
                )
        if transport is not None:
            total_ms += transport.cost_ms
        return StageRun(
            stage=stage,
            visit=visit,
            simulated_load_ms=total_ms,
            query_count=transport.queries if transport is not None else 0,
        )

    def _transport_for(
        self, stage: Stage, profile: NetworkProfile
    ) -> _CountingTransport | None:
        if stage in (Stage.NO_SW, Stage.NOOP_SW):
            return None
        if stage is Stage.NOOP_API:
            ttl = self.service.config.client_cache_ttl_seconds

            def always_allow(query: StatusQuery, now: datetime) -> StatusResponse:
                return StatusResponse(True, ttl, ResponseReason.MODE_OVERRIDE)

            return _CountingTransport(always_allow, profile, extra_cost_ms=0.0)

        def real_api(query: StatusQuery, now: datetime) -> StatusResponse:
            return self.service.handle_query_status(query, now)

        return _CountingTransport(real_api, profile, extra_cost_ms=profile.server_cost_ms)


@dataclass(frozen=True)
class ReportCell:
    profile: str
    stage: Stage
    visit: Visit
    median_ms: float
    p90_ms: float
    p99_ms: float

    def to_json(self) -> dict[str, Any]:
        return {
            "profile": self.profile,
            "stage": self.stage.value,
            "visit": self.visit.value,
            "medianMs": round(self.median_ms, 4),
            "p90Ms": round(self.p90_ms, 4),
            "p99Ms": round(self.p99_ms, 4),
        }


@dataclass
class SimReport:
    cells: list[ReportCell] = field(default_factory=list)

    def cell(self, profile: str, stage: Stage, visit: Visit) -> ReportCell:
        for c in self.cells:
            if c.profile == profile and c.stage is stage and c.visit is visit:
                return c
        raise KeyError((profile, stage, visit))

    def to_json(self) -> dict[str, Any]:
        return {"cells": [c.to_json() for c in self.cells]}

    def write_csv(self, fp: IO[str]) -> None:
        writer = csv.writer(fp)
        writer.writerow(["profile", "stage", "visit", "median_ms", "p90_ms", "p99_ms"])
        for c in self.cells:
            writer.writerow(
                [
                    c.profile,
                    c.stage.value,
                    c.visit.value,
                    f"{c.median_ms:.4f}",
                    f"{c.p90_ms:.4f}",
                    f"{c.p99_ms:.4f}",
                ]
            )


def _percentile(values: Sequence[float], q: float) -> float:
    ordered = sorted(values)
    if not ordered:
        raise ValueError("no values")
    if len(ordered) == 1:
        return ordered[0]
    pos = q * (len(ordered) - 1)
    lower = int(pos)
    frac = pos - lower
    if lower + 1 >= len(ordered):
        return ordered[-1]
    return ordered[lower] * (1 - frac) + ordered[lower + 1] * frac


def run_matrix(
    simulation: Simulation,
    traces: Sequence[PageTrace],
    profiles: Sequence[NetworkProfile],
    trials_per_cell: int = 1,
    seed: int = 0,
    stages: Sequence[Stage] = tuple(Stage),
) -> SimReport:
    """Medians-of-trials per trace, then distribution stats across traces."""
    if trials_per_cell < 1:
        raise ConfigurationError("trialsPerCell must be >= 1")
    report = SimReport()
    for profile in profiles:
        for stage in stages:
            per_visit: dict[Visit, list[float]] = {Visit.FIRST: [], Visit.SECOND: []}
            for trace in traces:
                trials: dict[Visit, list[float]] = {Visit.FIRST: [], Visit.SECOND: []}
                for trial in range(trials_per_cell):
                    trial_seed = seed * 1_000_003 + trial
                    first, second = simulation.run_stage(trace, profile, stage, trial_seed)
                    trials[Visit.FIRST].append(first.simulated_load_ms)
                    trials[Visit.SECOND].append(second.simulated_load_ms)
                for visit in (Visit.FIRST, Visit.SECOND):
                    per_visit[visit].append(statistics.median(trials[visit]))
            for visit in (Visit.FIRST, Visit.SECOND):
                values = per_visit[visit]
                report.cells.append(
                    ReportCell(
                        profile=profile.name,
                        stage=stage,
                        visit=visit,
                        median_ms=statistics.median(values),
                        p90_ms=_percentile(values, 0.90),
                        p99_ms=_percentile(values, 0.99),
                    )
                )
    return report


def generate_traces(
    count: int,
    seed: int = 0,
    host_pool: int = 12,
    resources_per_page: tuple[int, int] = (5, 40),
) -> list[PageTrace]:
    """Synthetic, policy-clean page traces for ordering experiments."""
    rng = random.Random(seed)
    traces = []
    for i in range(count):
        page = f"https://site{i}.example/page"
        n = rng.randint(*resources_per_page)
        resources = tuple(
            TraceResource(
                url=(
                    f"https://cdn{rng.randrange(host_pool)}.established.example/"
                    f"asset-{i}-{j}.js"
                ),
                size_bytes=rng.randrange(2_000, 120_000),
            )
            for j in range(n)
        )
        traces.append(PageTrace(page, resources))
    return traces


# --- Default policy catalogue -------------------------------------------

DEFAULT_POLICY_TEXT = """\
deny ".*" ".*" if recent_registration;
deny ".*" ".*" if imminent_expiry;
deny ".*" ".*" if low_ranking;
deny ".*" ".*" if changed_dependencies;
deny ".*" ".*" if tls_errors;
"""


def default_policy_fixture(
    now: datetime | None = None,
) -> tuple[PolicyDocument, dict[str, ConditionBinding], ProviderBundle]:
    """The stock five-policy deployment plus fixtures that exercise both
    outcomes of every condition.

    Fixture cast (relative to ``now``):

    * ``fresh.example``      registered 3 days ago        -> registration fail
    * ``established.example`` registered years ago        -> registration pass
    * ``dropping.example``   expires in 3 days            -> expiry fail
    * ``unranked.example``   missing from the ranking     -> ranking fail
    * ``widget.example``     dependency set grew          -> dependency fail
    * ``badtls.example``     expired certificate          -> TLS fail
    """
    now = now or SIM_EPOCH
    today = now.date()
    years_ago = today - timedelta(days=2000)
    far_expiry = today + timedelta(days=400)

    registrations = RegistrationProvider(
        [
            RegistrationRecord("established.example", years_ago, far_expiry),
            RegistrationRecord("fresh.example", today - timedelta(days=3), far_expiry),
            RegistrationRecord(
                "dropping.example", years_ago, today + timedelta(days=3)
            ),
            RegistrationRecord("unranked.example", years_ago, far_expiry),
            RegistrationRecord("widget.example", years_ago, far_expiry),
            RegistrationRecord("badtls.example", years_ago, far_expiry),
        ]
    )
    ranking_rows = {
        "established.example": 1_200,
        "fresh.example": 50_000,
        "dropping.example": 80_000,
        "widget.example": 995_000,
        "badtls.example": 300_000,
    }
    rankings = RankingProvider({today: ranking_rows})
    dependencies = DependencyProvider(
        {
            "widget.example/loader.js": [
                "api.widget.example/v1",
                "assets.widget.example/style.css",
            ]
        }
    )
    # Baseline seeded before the grown current set: the change fires.
    dependencies.store_snapshot(
        DependencySnapshot(
            "widget.example/loader.js",
            frozenset(["api.widget.example/v1"]),
            now - timedelta(days=7),
        )
    )
    tls_status = TlsStatusProvider(
        {"badtls.example": "cert_expired", "established.example": "ok"}
    )
    providers = ProviderBundle(
        registrations=registrations,
        rankings=rankings,
        threat_intel=ThreatIntelProvider(()),
        geo=GeoLocator({}),
        dependencies=dependencies,
        sri=SriProvider(),
        tls_status=tls_status,
        content=ContentProvider(),
    )

    bindings = {
        "recent_registration": ConditionBinding(
            "recent_registration",
            ConditionKind.DOMAIN_LIFECYCLE_REGISTRATION,
            {"thresholdDays": 7, "allowlist": []},
            ttl_seconds=3600,
        ),
        "imminent_expiry": ConditionBinding(
            "imminent_expiry",
            ConditionKind.DOMAIN_LIFECYCLE_EXPIRY,
            {"horizonDays": 7, "allowlist": []},
            ttl_seconds=3600,
        ),
        "low_ranking": ConditionBinding(
            "low_ranking",
            ConditionKind.DOMAIN_RANKING,
            {"maxRank": 1_000_000, "allowlist": []},
            ttl_seconds=3600,
        ),
        "changed_dependencies": ConditionBinding(
            "changed_dependencies",
            ConditionKind.DEPENDENCIES,
            {"granularity": "full_url"},
            ttl_seconds=3600,
        ),
        "tls_errors": ConditionBinding(
            "tls_errors", ConditionKind.TLS_STATUS, {}, ttl_seconds=3600
        ),
    }
    document = parse_policy(DEFAULT_POLICY_TEXT.replace(".*", "*"))
    return document, bindings, providers


def violating_trace() -> PageTrace:
    """A page pulling one resource per failure mode plus clean ones."""
    return PageTrace(
        page_url="https://shop.example/checkout",
        resources=(
            TraceResource("https://established.example/lib.js", 30_000),
            TraceResource("https://fresh.example/pixel.js", 4_000),
            TraceResource("https://dropping.example/tag.js", 6_000),
            TraceResource("https://unranked.example/beacon.gif", 1_000),
            TraceResource("https://widget.example/loader.js", 18_000),
            TraceResource("https://badtls.example/styles.css", 9_000),
        ),
    )
