"""Hurry-up thread mapper and the static random baseline.

The mapper is a pure policy engine. It tracks in-flight requests from the
stats stream and, once per sampling window, proposes moving the
longest-running little-core threads onto big cores, swapping out whatever
thread occupied each big core. Applying a plan is the caller's job.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .domain import CoreType, MapperConfig, Policy, Topology
from .statsproto import StatsEvent

log = logging.getLogger(__name__)


class DuplicateActiveThread(ValueError):
    """A begin event named a thread that is still serving another request."""

    def __init__(self, event: StatsEvent, active_request: str):
        self.event = event
        self.active_request = active_request
        super().__init__(
            f"thread {event.thread_id} began {event.request_id!r} while "
            f"{active_request!r} is still active"
        )


class PoolExceedsCores(ValueError):
    pass


@dataclass(frozen=True)
class RequestRecord:
    thread_id: int
    start_timestamp_ms: float


class RequestTable:
    """In-flight requests keyed by request id, one active request per thread."""

    def __init__(self):
        self._records: dict[str, RequestRecord] = {}
        self._by_thread: dict[int, str] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, request_id: str) -> bool:
        return request_id in self._records

    def __getitem__(self, request_id: str) -> RequestRecord:
        return self._records[request_id]

    def items(self):
        return self._records.items()

    def as_dict(self) -> dict[str, RequestRecord]:
        return dict(self._records)

    def active_request_of(self, thread_id: int) -> Optional[str]:
        return self._by_thread.get(thread_id)

    def ingest(self, e: StatsEvent) -> Optional[RequestRecord]:
        """Apply one stats event; returns the removed record on an end event."""
        rec = self._records.pop(e.request_id, None)
        if rec is not None:
            del self._by_thread[rec.thread_id]
            return rec
        other = self._by_thread.get(e.thread_id)
        if other is not None:
            raise DuplicateActiveThread(e, other)
        self._records[e.request_id] = RequestRecord(e.thread_id, e.timestamp_ms)
        self._by_thread[e.thread_id] = e.request_id
        return None


def ingest_event(table: RequestTable, e: StatsEvent) -> RequestTable:
    table.ingest(e)
    return table


class CoreOccupancy:
    """Bijection between occupied cores and the threads mapped onto them."""

    def __init__(self, topology: Topology, mapping: Optional[dict[int, int]] = None):
        self.topology = topology
        self.thread_on: dict[int, Optional[int]] = {c: None for c in topology.core_ids}
        self.core_of: dict[int, int] = {}
        for thread_id, core_id in (mapping or {}).items():
            self.place(thread_id, core_id)

    def place(self, thread_id: int, core_id: int) -> None:
        if self.thread_on[core_id] is not None:
            raise ValueError(f"core {core_id} already runs thread {self.thread_on[core_id]}")
        if thread_id in self.core_of:
            raise ValueError(f"thread {thread_id} already placed on core {self.core_of[thread_id]}")
        self.thread_on[core_id] = thread_id
        self.core_of[thread_id] = core_id

    def first_free_core(self) -> Optional[int]:
        for core_id, tid in self.thread_on.items():
            if tid is None:
                return core_id
        return None

    def is_on_little(self, thread_id: int) -> bool:
        core = self.core_of.get(thread_id)
        return core is not None and self.topology.core_type(core) is CoreType.LITTLE

    def apply(self, plan: "MigrationPlan") -> None:
        for mv in plan.moves:
            vacated = self.core_of[mv.thread_id]
            self.thread_on[vacated] = None
            if mv.displaced_thread_id is not None:
                self.thread_on[mv.displaced_to_core_id] = mv.displaced_thread_id
                self.core_of[mv.displaced_thread_id] = mv.displaced_to_core_id
            self.thread_on[mv.to_core_id] = mv.thread_id
            self.core_of[mv.thread_id] = mv.to_core_id

    def snapshot(self) -> dict[int, int]:
        return dict(self.core_of)


@dataclass(frozen=True)
class Move:
    thread_id: int
    to_core_id: int
    displaced_thread_id: Optional[int] = None
    displaced_to_core_id: Optional[int] = None


@dataclass(frozen=True)
class MigrationPlan:
    moves: tuple[Move, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.moves)

    def __len__(self) -> int:
        return len(self.moves)


def select_migrations(
    table: RequestTable,
    occupancy: CoreOccupancy,
    topology: Topology,
    now_ms: float,
    cfg: MapperConfig,
) -> MigrationPlan:
    threshold = cfg.migration_threshold_ms
    on_little = []
    for rec in table._records.values():
        elapsed = now_ms - rec.start_timestamp_ms
        # strictly greater: a thread exactly at the threshold stays put
        if elapsed > threshold and occupancy.is_on_little(rec.thread_id):
            on_little.append((-elapsed, rec.thread_id))
    if not on_little:
        return MigrationPlan()
    on_little.sort()

    moves = []
    for big_core, (_, tid) in zip(topology.big_core_ids, on_little):
        little_core = occupancy.core_of[tid]
        on_big = occupancy.thread_on[big_core]
        if on_big is None:
            moves.append(Move(tid, big_core))
        else:
            moves.append(Move(tid, big_core, on_big, little_core))
    return MigrationPlan(tuple(moves))


@dataclass
class MapperState:
    topology: Topology
    config: MapperConfig
    occupancy: CoreOccupancy
    table: RequestTable = field(default_factory=RequestTable)
    start_sampling_ms: float = 0.0
    rejected: list[DuplicateActiveThread] = field(default_factory=list)


def mapper_step(
    state: MapperState, events: Iterable[StatsEvent], now_ms: float
) -> tuple[MapperState, Optional[MigrationPlan]]:
    """Ingest ``events`` and, if the sampling window has elapsed, plan migrations.

    Rejected events are appended to ``state.rejected``; they never abort the
    step.
    """
    for e in events:
        try:
            state.table.ingest(e)
        except DuplicateActiveThread as exc:
            log.warning("%s", exc)
            state.rejected.append(exc)
    if now_ms - state.start_sampling_ms < state.config.sampling_time_ms:
        return state, None
    plan = select_migrations(state.table, state.occupancy, state.topology, now_ms, state.config)
    state.start_sampling_ms = now_ms
    return state, plan


def initial_mapping(
    pool_size: int,
    topology: Topology,
    policy: Policy,
    rng: Optional[np.random.Generator] = None,
) -> CoreOccupancy:
    n = topology.core_count
    if pool_size > n:
        raise PoolExceedsCores(f"thread pool of {pool_size} exceeds {n} cores")
    occ = CoreOccupancy(topology)
    if policy is Policy.HURRYUP:
        for tid in range(pool_size):
            occ.place(tid, tid % n)
    else:
        if rng is None:
            raise ValueError("static random mapping needs an rng")
        remaining = list(topology.core_ids)
        for tid in range(pool_size):
            occ.place(tid, remaining.pop(int(rng.integers(len(remaining)))))
    return occ
