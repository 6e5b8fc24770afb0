"""Persistence for discovered links, TTL'd verification decisions, reports.

The store is the only channel between the request-facing API and the
asynchronous verifier: the verifier writes decisions, the API reads them.
Decision history is retained (capped by a retention window) to support
contradiction scans and longitudinal review; the live decision for a
(link, condition) pair is always the latest write.
"""

from __future__ import annotations

import enum
import hashlib
import json
import sqlite3
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, IO, Iterable, Sequence

from .errors import StoreError, UnknownLink
from .urls import host_of, registrable_domain


def link_id(page_url: str, resource_url: str) -> str:
    """128-bit stable digest of the normalized (page, resource) pair."""
    digest = hashlib.sha256(f"{page_url}\n{resource_url}".encode("utf-8")).digest()
    return digest[:16].hex()


class LinkStatus(enum.Enum):
    ALLOWED = "allowed"
    BLOCKED = "blocked"
    UNVERIFIED = "unverified"


@dataclass
class LinkRecord:
    link_id: str
    page_url: str
    resource_url: str
    query: str | None
    etld1: str
    first_seen: datetime
    last_seen: datetime
    hit_count: int

    def to_json(self) -> dict[str, Any]:
        return {
            "linkId": self.link_id,
            "pageUrl": self.page_url,
            "resourceUrl": self.resource_url,
            "query": self.query,
            "etld1": self.etld1,
            "firstSeen": self.first_seen.isoformat(),
            "lastSeen": self.last_seen.isoformat(),
            "hitCount": self.hit_count,
        }


@dataclass(frozen=True)
class VerificationDecision:
    link_id: str
    condition_name: str
    success: bool
    verdict_detail: str
    verified_at: datetime
    ttl_seconds: int
    invalidated: bool = False

    def expires_at(self) -> datetime:
        return self.verified_at + timedelta(seconds=self.ttl_seconds)

    def is_live(self, now: datetime) -> bool:
        return not self.invalidated and now <= self.expires_at()

    def to_json(self) -> dict[str, Any]:
        return {
            "linkId": self.link_id,
            "conditionName": self.condition_name,
            "success": self.success,
            "verdictDetail": self.verdict_detail,
            "verifiedAt": self.verified_at.isoformat(),
            "ttlSeconds": self.ttl_seconds,
            "invalidated": self.invalidated,
        }


@dataclass(frozen=True)
class ViolationReport:
    link_id: str
    condition_name: str
    detail: str
    evidence: dict[str, Any]
    reported_at: datetime

    def to_json(self) -> dict[str, Any]:
        return {
            "linkId": self.link_id,
            "conditionName": self.condition_name,
            "detail": self.detail,
            "evidence": self.evidence,
            "reportedAt": self.reported_at.isoformat(),
        }


@dataclass(frozen=True)
class ContradictionFinding:
    """A link where one condition always passed while another always failed."""

    link_id: str
    always_pass: tuple[str, ...]
    always_fail: tuple[str, ...]


class BaseLinkStore:
    """Narrow storage interface; see InMemoryLinkStore for the contract."""

    def upsert_link(
        self, page_url: str, resource_url: str, query: str | None, now: datetime
    ) -> LinkRecord:
        raise NotImplementedError

    def get_link(self, lid: str) -> LinkRecord:
        raise NotImplementedError

    def links(self) -> list[LinkRecord]:
        raise NotImplementedError

    def put_decision(self, decision: VerificationDecision) -> None:
        raise NotImplementedError

    def get_live_decisions(self, lid: str, now: datetime) -> list[VerificationDecision]:
        raise NotImplementedError

    def all_decisions(self) -> list[VerificationDecision]:
        raise NotImplementedError

    def invalidate_condition(self, condition_name: str) -> list[str]:
        raise NotImplementedError

    def get_link_status(
        self, lid: str, conditions: Sequence[str], now: datetime
    ) -> LinkStatus:
        """Aggregate live decisions into a request verdict.

        Blocked as soon as any live decision failed; allowed when every
        applicable condition holds a live success (vacuously allowed for an
        empty condition set); unverified otherwise.
        """
        live = self.get_live_decisions(lid, now)
        if any(not d.success for d in live):
            return LinkStatus.BLOCKED
        successes = {d.condition_name for d in live if d.success}
        if all(name in successes for name in conditions):
            return LinkStatus.ALLOWED
        return LinkStatus.UNVERIFIED

    def add_violation(self, report: ViolationReport) -> None:
        raise NotImplementedError

    def violations(self) -> list[ViolationReport]:
        raise NotImplementedError

    def decision_history(self, lid: str) -> list[VerificationDecision]:
        raise NotImplementedError

    def detect_contradictions(
        self, window: timedelta, now: datetime, min_rounds: int = 2
    ) -> list[ContradictionFinding]:
        """Scan decision history for always-pass vs always-fail condition pairs.

        A condition participates once it has at least ``min_rounds``
        decisions inside the window and all of them agree; links holding
        both an all-pass and an all-fail condition are reported.
        """
        findings: list[ContradictionFinding] = []
        cutoff = now - window
        for record in self.links():
            by_condition: dict[str, list[bool]] = {}
            for decision in self.decision_history(record.link_id):
                if decision.verified_at >= cutoff:
                    by_condition.setdefault(decision.condition_name, []).append(
                        decision.success
                    )
            always_pass = tuple(
                sorted(
                    name
                    for name, outcomes in by_condition.items()
                    if len(outcomes) >= min_rounds and all(outcomes)
                )
            )
            always_fail = tuple(
                sorted(
                    name
                    for name, outcomes in by_condition.items()
                    if len(outcomes) >= min_rounds and not any(outcomes)
                )
            )
            if always_pass and always_fail:
                findings.append(
                    ContradictionFinding(record.link_id, always_pass, always_fail)
                )
        return findings

    def export_jsonl(self, fp: IO[str]) -> int:
        """Write links, decisions, and violations as JSON lines; returns count."""
        count = 0
        for record in self.links():
            fp.write(json.dumps({"type": "link", **record.to_json()}) + "\n")
            count += 1
        for decision in self.all_decisions():
            fp.write(json.dumps({"type": "decision", **decision.to_json()}) + "\n")
            count += 1
        for report in self.violations():
            fp.write(json.dumps({"type": "violation", **report.to_json()}) + "\n")
            count += 1
        return count


class InMemoryLinkStore(BaseLinkStore):
    """Dictionary-backed store; the reference implementation for tests."""

    def __init__(self, history_retention: timedelta = timedelta(days=30)):
        self._links: dict[str, LinkRecord] = {}
        self._live: dict[tuple[str, str], VerificationDecision] = {}
        self._history: dict[str, list[VerificationDecision]] = {}
        self._violations: list[ViolationReport] = []
        self._retention = history_retention
        self._lock = threading.RLock()

    def upsert_link(
        self, page_url: str, resource_url: str, query: str | None, now: datetime
    ) -> LinkRecord:
        lid = link_id(page_url, resource_url)
        with self._lock:
            record = self._links.get(lid)
            if record is None:
                record = LinkRecord(
                    link_id=lid,
                    page_url=page_url,
                    resource_url=resource_url,
                    query=query,
                    etld1=registrable_domain(host_of(resource_url)),
                    first_seen=now,
                    last_seen=now,
                    hit_count=1,
                )
                self._links[lid] = record
            else:
                record.last_seen = now
                record.hit_count += 1
                if query is not None:
                    record.query = query
            return record

    def get_link(self, lid: str) -> LinkRecord:
        with self._lock:
            record = self._links.get(lid)
        if record is None:
            raise UnknownLink(lid)
        return record

    def links(self) -> list[LinkRecord]:
        with self._lock:
            return list(self._links.values())

    def put_decision(self, decision: VerificationDecision) -> None:
        key = (decision.link_id, decision.condition_name)
        with self._lock:
            self._live[key] = decision
            history = self._history.setdefault(decision.link_id, [])
            history.append(decision)
            cutoff = decision.verified_at - self._retention
            if history and history[0].verified_at < cutoff:
                self._history[decision.link_id] = [
                    d for d in history if d.verified_at >= cutoff
                ]

    def get_live_decisions(self, lid: str, now: datetime) -> list[VerificationDecision]:
        with self._lock:
            return [
                d
                for (link, _), d in self._live.items()
                if link == lid and d.is_live(now)
            ]

    def all_decisions(self) -> list[VerificationDecision]:
        with self._lock:
            return list(self._live.values())

    def invalidate_condition(self, condition_name: str) -> list[str]:
        affected: list[str] = []
        with self._lock:
            for key, decision in list(self._live.items()):
                if key[1] == condition_name and not decision.invalidated:
                    self._live[key] = replace(decision, invalidated=True)
                    affected.append(key[0])
        return affected

    def add_violation(self, report: ViolationReport) -> None:
        with self._lock:
            self._violations.append(report)

    def violations(self) -> list[ViolationReport]:
        with self._lock:
            return list(self._violations)

    def decision_history(self, lid: str) -> list[VerificationDecision]:
        with self._lock:
            return list(self._history.get(lid, []))


def _dt(text: str) -> datetime:
    value = datetime.fromisoformat(text)
    return value if value.tzinfo else value.replace(tzinfo=timezone.utc)


class SqliteLinkStore(BaseLinkStore):
    """Embedded single-file store for real deployments.

    The connection is shared across threads behind a lock; all statements
    are short, so contention stays negligible at the intended scale.
    """

    _SCHEMA = """
    CREATE TABLE IF NOT EXISTS links (
        link_id TEXT PRIMARY KEY,
        page_url TEXT NOT NULL,
        resource_url TEXT NOT NULL,
        query TEXT,
        etld1 TEXT NOT NULL,
        first_seen TEXT NOT NULL,
        last_seen TEXT NOT NULL,
        hit_count INTEGER NOT NULL
    );
    CREATE TABLE IF NOT EXISTS decisions (
        link_id TEXT NOT NULL,
        condition_name TEXT NOT NULL,
        success INTEGER NOT NULL,
        verdict_detail TEXT NOT NULL,
        verified_at TEXT NOT NULL,
        ttl_seconds INTEGER NOT NULL,
        invalidated INTEGER NOT NULL DEFAULT 0,
        PRIMARY KEY (link_id, condition_name)
    );
    CREATE TABLE IF NOT EXISTS decision_history (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        link_id TEXT NOT NULL,
        condition_name TEXT NOT NULL,
        success INTEGER NOT NULL,
        verdict_detail TEXT NOT NULL,
        verified_at TEXT NOT NULL,
        ttl_seconds INTEGER NOT NULL
    );
    CREATE INDEX IF NOT EXISTS idx_history_link ON decision_history (link_id);
    CREATE TABLE IF NOT EXISTS violations (
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        link_id TEXT NOT NULL,
        condition_name TEXT NOT NULL,
        detail TEXT NOT NULL,
        evidence TEXT NOT NULL,
        reported_at TEXT NOT NULL
    );
    """

    def __init__(
        self,
        path: str | Path = ":memory:",
        history_retention: timedelta = timedelta(days=30),
    ):
        try:
            self._conn = sqlite3.connect(str(path), check_same_thread=False)
            self._conn.executescript(self._SCHEMA)
            self._conn.commit()
        except sqlite3.Error as exc:
            raise StoreError(f"cannot open store at {path}: {exc}") from exc
        self._retention = history_retention
        self._lock = threading.RLock()

    def close(self) -> None:
        self._conn.close()

    def _row_to_link(self, row: tuple) -> LinkRecord:
        return LinkRecord(
            link_id=row[0],
            page_url=row[1],
            resource_url=row[2],
            query=row[3],
            etld1=row[4],
            first_seen=_dt(row[5]),
            last_seen=_dt(row[6]),
            hit_count=row[7],
        )

    def _row_to_decision(self, row: tuple) -> VerificationDecision:
        return VerificationDecision(
            link_id=row[0],
            condition_name=row[1],
            success=bool(row[2]),
            verdict_detail=row[3],
            verified_at=_dt(row[4]),
            ttl_seconds=row[5],
            invalidated=bool(row[6]),
        )

    def upsert_link(
        self, page_url: str, resource_url: str, query: str | None, now: datetime
    ) -> LinkRecord:
        lid = link_id(page_url, resource_url)
        with self._lock:
            try:
                cur = self._conn.execute("SELECT * FROM links WHERE link_id=?", (lid,))
                row = cur.fetchone()
                if row is None:
                    record = LinkRecord(
                        link_id=lid,
                        page_url=page_url,
                        resource_url=resource_url,
                        query=query,
                        etld1=registrable_domain(host_of(resource_url)),
                        first_seen=now,
                        last_seen=now,
                        hit_count=1,
                    )
                    self._conn.execute(
                        "INSERT INTO links VALUES (?,?,?,?,?,?,?,?)",
                        (
                            lid,
                            page_url,
                            resource_url,
                            query,
                            record.etld1,
                            now.isoformat(),
                            now.isoformat(),
                            1,
                        ),
                    )
                    self._conn.commit()
                    return record
                record = self._row_to_link(row)
                record.last_seen = now
                record.hit_count += 1
                if query is not None:
                    record.query = query
                self._conn.execute(
                    "UPDATE links SET last_seen=?, hit_count=?, query=? WHERE link_id=?",
                    (now.isoformat(), record.hit_count, record.query, lid),
                )
                self._conn.commit()
                return record
            except sqlite3.Error as exc:
                raise StoreError(str(exc)) from exc

    def get_link(self, lid: str) -> LinkRecord:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM links WHERE link_id=?", (lid,)
            ).fetchone()
        if row is None:
            raise UnknownLink(lid)
        return self._row_to_link(row)

    def links(self) -> list[LinkRecord]:
        with self._lock:
            rows = self._conn.execute("SELECT * FROM links").fetchall()
        return [self._row_to_link(r) for r in rows]

    def put_decision(self, decision: VerificationDecision) -> None:
        with self._lock:
            try:
                self._conn.execute(
                    "INSERT OR REPLACE INTO decisions VALUES (?,?,?,?,?,?,?)",
                    (
                        decision.link_id,
                        decision.condition_name,
                        int(decision.success),
                        decision.verdict_detail,
                        decision.verified_at.isoformat(),
                        decision.ttl_seconds,
                        int(decision.invalidated),
                    ),
                )
                self._conn.execute(
                    "INSERT INTO decision_history "
                    "(link_id, condition_name, success, verdict_detail, verified_at, ttl_seconds) "
                    "VALUES (?,?,?,?,?,?)",
                    (
                        decision.link_id,
                        decision.condition_name,
                        int(decision.success),
                        decision.verdict_detail,
                        decision.verified_at.isoformat(),
                        decision.ttl_seconds,
                    ),
                )
                cutoff = (decision.verified_at - self._retention).isoformat()
                self._conn.execute(
                    "DELETE FROM decision_history WHERE verified_at < ?", (cutoff,)
                )
                self._conn.commit()
            except sqlite3.Error as exc:
                raise StoreError(str(exc)) from exc

    def get_live_decisions(self, lid: str, now: datetime) -> list[VerificationDecision]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT * FROM decisions WHERE link_id=?", (lid,)
            ).fetchall()
        return [d for d in map(self._row_to_decision, rows) if d.is_live(now)]

    def all_decisions(self) -> list[VerificationDecision]:
        with self._lock:
            rows = self._conn.execute("SELECT * FROM decisions").fetchall()
        return [self._row_to_decision(r) for r in rows]

    def invalidate_condition(self, condition_name: str) -> list[str]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT link_id FROM decisions WHERE condition_name=? AND invalidated=0",
                (condition_name,),
            ).fetchall()
            self._conn.execute(
                "UPDATE decisions SET invalidated=1 WHERE condition_name=?",
                (condition_name,),
            )
            self._conn.commit()
        return [r[0] for r in rows]

    def add_violation(self, report: ViolationReport) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT INTO violations (link_id, condition_name, detail, evidence, reported_at) "
                "VALUES (?,?,?,?,?)",
                (
                    report.link_id,
                    report.condition_name,
                    report.detail,
                    json.dumps(report.evidence),
                    report.reported_at.isoformat(),
                ),
            )
            self._conn.commit()

    def violations(self) -> list[ViolationReport]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT link_id, condition_name, detail, evidence, reported_at FROM violations"
            ).fetchall()
        return [
            ViolationReport(r[0], r[1], r[2], json.loads(r[3]), _dt(r[4])) for r in rows
        ]

    def decision_history(self, lid: str) -> list[VerificationDecision]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT link_id, condition_name, success, verdict_detail, verified_at, ttl_seconds "
                "FROM decision_history WHERE link_id=? ORDER BY id",
                (lid,),
            ).fetchall()
        return [
            VerificationDecision(r[0], r[1], bool(r[2]), r[3], _dt(r[4]), r[5])
            for r in rows
        ]
