"""Background verification workers.

Workers pull (link, conditions) tasks from a bounded queue, evaluate each
condition, and write decisions back to the store — the store is the only
channel back to the request path. Duplicate enqueues of a pair already in
flight attach to the existing execution instead of scheduling another.
"""

from __future__ import annotations

import enum
import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Callable, Mapping, Sequence

from .conditions import ConditionBinding, ConditionEngine
from .errors import VerificationError
from .providers import ProviderBundle
from .store import BaseLinkStore, LinkRecord, VerificationDecision, ViolationReport

logger = logging.getLogger(__name__)

DEFAULT_REFRESH_LEAD_SECONDS = 30.0


class TaskOrigin(enum.Enum):
    ON_DEMAND = "on_demand"
    PERIODIC = "periodic"
    ADMIN = "admin"


@dataclass(frozen=True)
class VerificationTask:
    link_id: str
    condition_names: tuple[str, ...]
    origin: TaskOrigin = TaskOrigin.ON_DEMAND
    enqueued_at: datetime | None = None

    def __post_init__(self) -> None:
        if not self.condition_names:
            raise ValueError("a task must name at least one condition")


class SignalStatus(enum.Enum):
    PENDING = "pending"
    COMPLETED = "completed"
    DEFERRED = "deferred"


@dataclass
class CompletionSignal:
    """Fires when every pair of its task has been executed (or shed)."""

    status: SignalStatus = SignalStatus.PENDING
    _events: list[threading.Event] = field(default_factory=list)

    def wait(self, timeout_seconds: float | None = None) -> bool:
        if self.status is SignalStatus.DEFERRED:
            return True
        end = None if timeout_seconds is None else time.monotonic() + timeout_seconds
        for event in self._events:
            remaining = None if end is None else max(0.0, end - time.monotonic())
            if not event.wait(remaining):
                return False
        self.status = SignalStatus.COMPLETED
        return True


@dataclass(frozen=True)
class _WorkItem:
    link_id: str
    condition_names: tuple[str, ...]


class Verifier:
    """Executes condition checks and maintains the decision cache.

    ``workers=0`` runs tasks inline in the enqueuing thread, which keeps
    simulations and tests fully deterministic.
    """

    def __init__(
        self,
        store: BaseLinkStore,
        bindings: Mapping[str, ConditionBinding],
        providers: ProviderBundle,
        engine: ConditionEngine | None = None,
        *,
        workers: int = 2,
        queue_capacity: int = 64,
        refresh_lead_seconds: float = DEFAULT_REFRESH_LEAD_SECONDS,
        clock: Callable[[], datetime] | None = None,
    ):
        self.store = store
        self._bindings = dict(bindings)
        self.providers = providers
        self.engine = engine or ConditionEngine()
        self.refresh_lead_seconds = refresh_lead_seconds  # floor for the lead
        self._max_eval_seconds = 0.0
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        self._queue: queue.Queue[_WorkItem | None] = queue.Queue(maxsize=queue_capacity)
        self._inline = workers == 0
        self._threads = [
            threading.Thread(target=self._worker_loop, daemon=True, name=f"verifier-{i}")
            for i in range(workers)
        ]
        self._started = False
        self._in_flight: dict[tuple[str, str], threading.Event] = {}
        self._in_flight_lock = threading.Lock()
        self.execution_count = 0  # condition evaluations performed
        self._count_lock = threading.Lock()

    def set_bindings(self, bindings: Mapping[str, ConditionBinding]) -> None:
        self._bindings = dict(bindings)

    def start(self) -> None:
        if self._inline or self._started:
            return
        self._started = True
        for thread in self._threads:
            thread.start()

    def stop(self) -> None:
        if not self._started:
            return
        for _ in self._threads:
            self._queue.put(None)
        for thread in self._threads:
            thread.join(timeout=5)
        self._started = False

    def verify_link(
        self, link: LinkRecord, condition_names: Sequence[str], now: datetime
    ) -> list[VerificationDecision]:
        """Evaluate each condition for the link and cache the outcomes.

        An inconclusive condition (VerificationError) writes no decision and
        does not disturb the others.
        """
        decisions: list[VerificationDecision] = []
        for name in condition_names:
            binding = self._bindings.get(name)
            if binding is None:
                logger.warning("no binding for condition %r; skipping", name)
                continue
            with self._count_lock:
                self.execution_count += 1
            started = time.perf_counter()
            try:
                verdict = self.engine.evaluate(binding, link, self.providers, now)
            except VerificationError as exc:
                logger.warning(
                    "inconclusive verification of %s for link %s: %s",
                    name,
                    link.link_id,
                    exc,
                )
                continue
            finally:
                elapsed = time.perf_counter() - started
                with self._count_lock:
                    self._max_eval_seconds = max(self._max_eval_seconds, elapsed)
            decision = VerificationDecision(
                link_id=link.link_id,
                condition_name=name,
                success=not verdict.violation,
                verdict_detail=verdict.detail,
                verified_at=now,
                ttl_seconds=binding.ttl_seconds,
            )
            self.store.put_decision(decision)
            decisions.append(decision)
            if verdict.violation:
                self.store.add_violation(
                    ViolationReport(
                        link_id=link.link_id,
                        condition_name=name,
                        detail=verdict.detail,
                        evidence=dict(verdict.evidence),
                        reported_at=now,
                    )
                )
        return decisions

    def enqueue_on_demand(self, task: VerificationTask) -> CompletionSignal:
        """Schedule missing pairs, reusing in-flight executions.

        When the queue is full the new pairs are shed and the signal fires
        immediately with DEFERRED status so callers fall back to their
        default decision.
        """
        signal = CompletionSignal()
        new_pairs: list[str] = []
        with self._in_flight_lock:
            for name in task.condition_names:
                key = (task.link_id, name)
                event = self._in_flight.get(key)
                if event is None:
                    event = threading.Event()
                    self._in_flight[key] = event
                    new_pairs.append(name)
                signal._events.append(event)
        if new_pairs:
            item = _WorkItem(task.link_id, tuple(new_pairs))
            if self._inline:
                self._execute(item)
            else:
                try:
                    self._queue.put_nowait(item)
                except queue.Full:
                    with self._in_flight_lock:
                        for name in new_pairs:
                            self._in_flight.pop((task.link_id, name), None)
                    signal.status = SignalStatus.DEFERRED
                    return signal
        return signal

    def _worker_loop(self) -> None:
        while True:
            item = self._queue.get()
            if item is None:
                return
            try:
                self._execute(item)
            except Exception:  # noqa: BLE001 - workers must survive bad tasks
                logger.exception("verification task failed for %s", item.link_id)
                self._release(item)

    def _execute(self, item: _WorkItem) -> None:
        now = self._clock()  # evaluation clock captured at dequeue
        try:
            link = self.store.get_link(item.link_id)
            self.verify_link(link, item.condition_names, now)
        finally:
            self._release(item)

    def _release(self, item: _WorkItem) -> None:
        with self._in_flight_lock:
            for name in item.condition_names:
                event = self._in_flight.pop((item.link_id, name), None)
                if event is not None:
                    event.set()

    def effective_refresh_lead_seconds(self) -> float:
        """Lead window: twice the slowest observed evaluation, floored by
        the configured value, so refreshes land before expiry even when
        condition checks are slow."""
        with self._count_lock:
            return max(self.refresh_lead_seconds, 2.0 * self._max_eval_seconds)

    def run_periodic_refresh(self, now: datetime) -> int:
        """Re-verify every decision expiring within the lead window.

        The window extends into the past, so stale decisions that were never
        refreshed are caught up as well. Returns the number of refreshed
        (link, condition) pairs.
        """
        horizon = now + timedelta(seconds=self.effective_refresh_lead_seconds())
        due: dict[str, list[str]] = {}
        for decision in self.store.all_decisions():
            if decision.condition_name not in self._bindings:
                continue
            if decision.invalidated or decision.expires_at() <= horizon:
                due.setdefault(decision.link_id, []).append(decision.condition_name)
        refreshed = 0
        for lid, names in due.items():
            link = self.store.get_link(lid)
            self.verify_link(link, names, now)
            refreshed += len(names)
        return refreshed
