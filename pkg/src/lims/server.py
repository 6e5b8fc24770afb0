"""Request-status service: the server half of the client/server protocol.

Answers per-request status queries from clients, records every observed
link, applies the deployment mode, and coordinates on-demand verification
through the store. Transport-agnostic; the HTTP surface lives in
:mod:`lims.http_api`.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Any, Callable, Mapping, Sequence

from .conditions import ConditionBinding, load_bindings
from .errors import ConfigurationError
from .policy import PolicyDocument, derive_requirements, parse_policy
from .store import BaseLinkStore, LinkStatus, ViolationReport
from .urls import split_url
from .verifier import TaskOrigin, VerificationTask, Verifier


class Mode(enum.Enum):
    DISCOVERY = "discovery"
    REPORT_ONLY = "report_only"
    ENFORCE = "enforce"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        try:
            return cls(text.strip().lower().replace("-", "_"))
        except ValueError as exc:
            raise ConfigurationError(f"unknown mode {text!r}") from exc


class ResponseReason(enum.Enum):
    POLICY = "policy"
    DEFAULT = "default"
    MODE_OVERRIDE = "mode_override"


@dataclass(frozen=True)
class ServerConfig:
    mode: Mode = Mode.ENFORCE
    default_decision: str = "allow"  # "allow" | "deny"
    on_demand_timeout_ms: int = 500
    client_poll_interval_seconds: int = 60
    client_failure_threshold: int = 3
    client_cache_ttl_seconds: int = 300

    def __post_init__(self) -> None:
        if self.on_demand_timeout_ms < 0:
            raise ConfigurationError("onDemandTimeoutMs must be >= 0")
        if self.client_poll_interval_seconds <= 0:
            raise ConfigurationError("clientPollIntervalSeconds must be positive")
        if self.client_failure_threshold <= 0:
            raise ConfigurationError("clientFailureThreshold must be positive")
        if self.client_cache_ttl_seconds <= 0:
            raise ConfigurationError("clientCacheTtlSeconds must be positive")
        if self.default_decision not in ("allow", "deny"):
            raise ConfigurationError("defaultDecision must be allow or deny")


@dataclass(frozen=True)
class StatusQuery:
    page_url: str
    resource_url: str
    client_id: str = ""
    protocol_version: int = 1


@dataclass(frozen=True)
class StatusResponse:
    allowed: bool
    ttl_seconds: int
    reason: ResponseReason

    def to_json(self) -> dict[str, Any]:
        return {
            "allowed": self.allowed,
            "ttlSeconds": self.ttl_seconds,
            "reason": self.reason.value,
        }


@dataclass(frozen=True)
class HeartbeatResponse:
    mode: Mode
    poll_interval_seconds: int
    invalidations: tuple[str, ...]
    config_epoch: int

    def to_json(self) -> dict[str, Any]:
        return {
            "mode": self.mode.value,
            "pollIntervalSeconds": self.poll_interval_seconds,
            "invalidations": list(self.invalidations),
            "configEpoch": self.config_epoch,
        }


@dataclass(frozen=True)
class _PolicyState:
    document: PolicyDocument
    bindings: Mapping[str, ConditionBinding]


class ApiService:
    """Coordinates the store, the policy state, and the verifier."""

    def __init__(
        self,
        store: BaseLinkStore,
        policy_doc: PolicyDocument,
        bindings: Mapping[str, ConditionBinding],
        verifier: Verifier | None,
        config: ServerConfig | None = None,
        *,
        clock: Callable[[], datetime] | None = None,
    ):
        self.store = store
        self._state = _PolicyState(policy_doc, dict(bindings))
        self.verifier = verifier
        self.config = config or ServerConfig()
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        self._config_epoch = 1
        self._invalidation_log: list[tuple[int, tuple[str, ...]]] = []
        self._admin_lock = threading.Lock()

    @property
    def config_epoch(self) -> int:
        return self._config_epoch

    @property
    def policy_state(self) -> _PolicyState:
        return self._state

    def handle_query_status(
        self, query: StatusQuery, now: datetime | None = None
    ) -> StatusResponse:
        now = now or self._clock()
        page_url, _ = split_url(query.page_url)
        resource_url, resource_query = split_url(query.resource_url)
        link = self.store.upsert_link(page_url, resource_url, resource_query, now)

        # One consistent policy/config view per query; admin swaps replace
        # whole objects, so readers see old or new state, never a mix.
        state = self._state
        config = self.config
        requirements = derive_requirements(state.document, page_url, resource_url)

        if config.mode is Mode.DISCOVERY:
            return self._respond(config, True, ResponseReason.MODE_OVERRIDE)

        if requirements.static_deny:
            return self._deny_outcome(
                config, link.link_id, "static_deny", "matched an unconditional deny rule", now
            )

        status = self.store.get_link_status(link.link_id, requirements.conditions, now)
        if status is LinkStatus.UNVERIFIED and self.verifier is not None:
            status = self._verify_on_demand(config, link.link_id, requirements.conditions, now)
        if status is LinkStatus.BLOCKED:
            return self._blocked_response(config, link.link_id, now)
        if status is LinkStatus.ALLOWED:
            return self._respond(config, True, ResponseReason.POLICY)
        # Still unverified: fall back to the default decision.
        if config.default_decision == "deny" and config.mode is Mode.ENFORCE:
            return self._respond(config, False, ResponseReason.DEFAULT)
        return self._respond(config, True, ResponseReason.DEFAULT)

    def _verify_on_demand(
        self, config: ServerConfig, lid: str, conditions: Sequence[str], now: datetime
    ) -> LinkStatus:
        live = {d.condition_name for d in self.store.get_live_decisions(lid, now)}
        missing = tuple(name for name in conditions if name not in live)
        if not missing:
            return self.store.get_link_status(lid, conditions, now)
        task = VerificationTask(lid, missing, TaskOrigin.ON_DEMAND, now)
        signal = self.verifier.enqueue_on_demand(task)
        completed = signal.wait(config.on_demand_timeout_ms / 1000.0)
        if not completed:
            return LinkStatus.UNVERIFIED
        return self.store.get_link_status(lid, conditions, now)

    def _blocked_response(
        self, config: ServerConfig, lid: str, now: datetime
    ) -> StatusResponse:
        if config.mode is Mode.REPORT_ONLY:
            for decision in self.store.get_live_decisions(lid, now):
                if not decision.success:
                    self.store.add_violation(
                        ViolationReport(
                            link_id=lid,
                            condition_name=decision.condition_name,
                            detail=decision.verdict_detail,
                            evidence={"reportedBy": "query_status"},
                            reported_at=now,
                        )
                    )
            return self._respond(config, True, ResponseReason.POLICY)
        return self._respond(config, False, ResponseReason.POLICY)

    def _deny_outcome(
        self, config: ServerConfig, lid: str, condition_name: str, detail: str, now: datetime
    ) -> StatusResponse:
        if config.mode is Mode.REPORT_ONLY:
            self.store.add_violation(
                ViolationReport(
                    link_id=lid,
                    condition_name=condition_name,
                    detail=detail,
                    evidence={"reportedBy": "query_status"},
                    reported_at=now,
                )
            )
            return self._respond(config, True, ResponseReason.POLICY)
        return self._respond(config, False, ResponseReason.POLICY)

    @staticmethod
    def _respond(
        config: ServerConfig, allowed: bool, reason: ResponseReason
    ) -> StatusResponse:
        return StatusResponse(allowed, config.client_cache_ttl_seconds, reason)

    def handle_heartbeat(self, client_id: str, last_epoch: int) -> HeartbeatResponse:
        invalidations: tuple[str, ...] = ()
        if last_epoch > 0:
            seen: dict[str, None] = {}
            for epoch, link_ids in self._invalidation_log:
                if epoch > last_epoch:
                    for lid in link_ids:
                        seen.setdefault(lid, None)
            invalidations = tuple(seen)
        return HeartbeatResponse(
            mode=self.config.mode,
            poll_interval_seconds=self.config.client_poll_interval_seconds,
            invalidations=invalidations,
            config_epoch=self._config_epoch,
        )

    def set_mode(self, mode: Mode) -> None:
        with self._admin_lock:
            self.config = replace(self.config, mode=mode)
            self._config_epoch += 1

    def update_policy(
        self, policy_text: str, binding_rows: list[Mapping[str, Any]]
    ) -> dict[str, Any]:
        """Atomically replace policy and bindings.

        Parse or validation failures leave the active policy untouched.
        Changed or removed bindings invalidate their cached decisions, and
        the affected links are queued for client-cache invalidation on the
        next heartbeat.
        """
        document = parse_policy(policy_text)  # raises before any state change
        new_bindings = load_bindings(binding_rows)
        with self._admin_lock:
            old_bindings = self._state.bindings
            changed = [
                name
                for name, binding in old_bindings.items()
                if name not in new_bindings or new_bindings[name] != binding
            ]
            affected: dict[str, None] = {}
            for name in changed:
                for lid in self.store.invalidate_condition(name):
                    affected.setdefault(lid, None)
            self._config_epoch += 1
            if affected:
                self._invalidation_log.append((self._config_epoch, tuple(affected)))
            self._state = _PolicyState(document, new_bindings)
            if self.verifier is not None:
                self.verifier.set_bindings(new_bindings)
        return {
            "rules": len(document),
            "bindings": len(new_bindings),
            "invalidatedConditions": changed,
            "affectedLinks": len(affected),
            "configEpoch": self._config_epoch,
        }
