"""Portable client decision logic: cache, heartbeat, fail-open state machine.

This is the transport-agnostic core that both the simulation harness and
the browser service worker implement. Every intercepted request resolves
to pass-through or a synthesized 404; transport trouble never surfaces to
the page. After ``failure_threshold`` consecutive backend failures the
client disables itself (no queries, everything passes through) until a
later heartbeat succeeds.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Protocol

from .errors import MalformedUrl, TransportFailure
from .policy import UrlPattern
from .server import HeartbeatResponse, StatusQuery, StatusResponse
from .store import link_id
from .urls import normalize_url

_LINK_ID_HEX = frozenset("0123456789abcdef")


class InterceptAction(enum.Enum):
    PASS_THROUGH = "pass_through"
    BLOCKED_404 = "blocked_404"


class ClientMode(enum.Enum):
    ACTIVE = "active"
    NO_OP = "no_op"


class Transport(Protocol):
    def query_status(self, query: StatusQuery) -> StatusResponse:
        """Raises TransportFailure when the backend is unreachable."""

    def heartbeat(self, client_id: str, epoch: int) -> HeartbeatResponse:
        """Raises TransportFailure when the backend is unreachable."""


@dataclass
class ClientCacheEntry:
    page_url: str
    resource_url: str
    allowed: bool
    expires_at: datetime


@dataclass
class ClientConfig:
    client_id: str = "client"
    version: str = "1"
    failure_threshold: int = 3
    poll_interval_seconds: int = 60


@dataclass
class ClientState:
    mode: ClientMode = ClientMode.ACTIVE
    consecutive_failures: int = 0
    config_epoch: int = 0
    poll_interval_seconds: int = 60
    server_mode: str | None = None


class Client:
    """One instance per browsing context; single-threaded by contract."""

    def __init__(self, config: ClientConfig | None = None):
        self.config = config or ClientConfig()
        self.state = ClientState(poll_interval_seconds=self.config.poll_interval_seconds)
        self.cache: dict[str, ClientCacheEntry] = {}
        self.query_count = 0
        self.ignored_messages = 0
        self._installed_version: str | None = None
        self._refresh_consumed = False

    # -- request interception -------------------------------------------

    def intercept(
        self, page_url: str, resource_url: str, now: datetime, transport: Transport
    ) -> InterceptAction:
        if self.state.mode is ClientMode.NO_OP:
            return InterceptAction.PASS_THROUGH
        try:
            page = normalize_url(page_url)
            resource = normalize_url(resource_url)
        except MalformedUrl:
            return InterceptAction.PASS_THROUGH
        key = link_id(page, resource)
        entry = self.cache.get(key)
        if entry is not None and now < entry.expires_at:
            return (
                InterceptAction.PASS_THROUGH
                if entry.allowed
                else InterceptAction.BLOCKED_404
            )
        try:
            self.query_count += 1
            response = transport.query_status(
                StatusQuery(page_url, resource_url, self.config.client_id)
            )
        except TransportFailure:
            self._record_failure()
            return InterceptAction.PASS_THROUGH  # fail open for this request
        self._record_success()
        self.cache[key] = ClientCacheEntry(
            page_url=page,
            resource_url=resource,
            allowed=response.allowed,
            expires_at=now + timedelta(seconds=response.ttl_seconds),
        )
        return (
            InterceptAction.PASS_THROUGH
            if response.allowed
            else InterceptAction.BLOCKED_404
        )

    # -- heartbeat -------------------------------------------------------

    def heartbeat_tick(self, now: datetime, transport: Transport) -> bool:
        """Poll configuration; apply invalidations; returns True when applied."""
        try:
            response = transport.heartbeat(self.config.client_id, self.state.config_epoch)
        except TransportFailure:
            self._record_failure()
            return False
        self._record_success()
        for target in response.invalidations:
            self._purge(target)
        self.state.config_epoch = response.config_epoch
        self.state.poll_interval_seconds = response.poll_interval_seconds
        self.state.server_mode = getattr(response.mode, "value", response.mode)
        return True

    def _purge(self, target: str) -> None:
        # Targets are link ids or resource URL patterns.
        if len(target) == 32 and set(target) <= _LINK_ID_HEX:
            self.cache.pop(target, None)
            return
        try:
            pattern = UrlPattern(target)
        except ValueError:
            return
        for key in [k for k, e in self.cache.items() if pattern.matches(e.resource_url)]:
            self.cache.pop(key, None)

    # -- lifecycle ---------------------------------------------------------

    def post_install_refresh_needed(self, version: str) -> bool:
        """True exactly once per fresh installation or version change."""
        if self._installed_version == version:
            return False
        self._installed_version = version
        self._refresh_consumed = False
        return True

    def handle_registration_message(self) -> bool:
        """First message after install triggers the forced refresh; the rest
        are ignored and counted."""
        if not self._refresh_consumed:
            self._refresh_consumed = True
            return True
        self.ignored_messages += 1
        return False

    # -- failure accounting ----------------------------------------------

    def _record_failure(self) -> None:
        self.state.consecutive_failures += 1
        if self.state.consecutive_failures >= self.config.failure_threshold:
            self.state.mode = ClientMode.NO_OP

    def _record_success(self) -> None:
        self.state.consecutive_failures = 0
        self.state.mode = ClientMode.ACTIVE
