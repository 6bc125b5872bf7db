"""Drive the mapper from a real instrumented server's stats pipe.

One reader thread turns the byte stream into event batches; the mapper loop
consumes them in order and wakes at every sampling boundary even when the
application is quiet.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from typing import Callable, Optional

from .domain import MapperConfig, Topology
from .mapper import CoreOccupancy, DuplicateActiveThread, MapperState, MigrationPlan, mapper_step
from .metrics import Report, latency_report
from .statsproto import ChannelClosed, StatsChannel, StatsEvent

log = logging.getLogger(__name__)


def wall_clock_ms() -> float:
    return time.time() * 1000.0


class AffinityBackend:
    """Where migration plans go. Subclasses decide whether anything is pinned."""

    def apply(self, plan: MigrationPlan, now_ms: float) -> None:
        raise NotImplementedError


class LoggingBackend(AffinityBackend):
    """Records and logs intended migrations without touching the OS."""

    def __init__(self):
        self.history: list[tuple[float, MigrationPlan]] = []

    def apply(self, plan: MigrationPlan, now_ms: float) -> None:
        self.history.append((now_ms, plan))
        for mv in plan.moves:
            if mv.displaced_thread_id is None:
                log.info("t=%.0f move thread %d -> core %d", now_ms, mv.thread_id, mv.to_core_id)
            else:
                log.info("t=%.0f move thread %d -> core %d, thread %d -> core %d", now_ms,
                         mv.thread_id, mv.to_core_id, mv.displaced_thread_id, mv.displaced_to_core_id)


class SchedAffinityBackend(LoggingBackend):
    """Pins threads with sched_setaffinity (Linux); thread ids are OS TIDs."""

    def apply(self, plan: MigrationPlan, now_ms: float) -> None:
        super().apply(plan, now_ms)
        for mv in plan.moves:
            self._pin(mv.thread_id, mv.to_core_id)
            if mv.displaced_thread_id is not None:
                self._pin(mv.displaced_thread_id, mv.displaced_to_core_id)

    @staticmethod
    def _pin(tid: int, core: int) -> None:
        try:
            os.sched_setaffinity(tid, {core})
        except OSError as exc:
            log.warning("could not pin thread %d to core %d: %s", tid, core, exc)


class LiveSession:
    """Mapper state plus latency bookkeeping for one monitored application."""

    def __init__(self, topology: Topology, config: MapperConfig,
                 backend: Optional[AffinityBackend] = None, start_ms: float = 0.0):
        self.topology = topology
        self.backend = backend or LoggingBackend()
        self.state = MapperState(topology, config, CoreOccupancy(topology), start_sampling_ms=start_ms)
        self.latencies: list[float] = []
        self.windows = 0
        self._unplaced: set[int] = set()

    def _place(self, tid: int) -> None:
        occ = self.state.occupancy
        if tid in occ.core_of or tid in self._unplaced:
            return
        core = occ.first_free_core()
        if core is None:
            log.warning("no free core for thread %d; it will not be migrated", tid)
            self._unplaced.add(tid)
        else:
            occ.place(tid, core)

    def ingest(self, events: list[StatsEvent]) -> None:
        table = self.state.table
        for e in events:
            try:
                done = table.ingest(e)
            except DuplicateActiveThread as exc:
                log.warning("%s", exc)
                self.state.rejected.append(exc)
                continue
            if done is None:
                self._place(e.thread_id)
            else:
                self.latencies.append(e.timestamp_ms - done.start_timestamp_ms)

    def tick(self, now_ms: float) -> Optional[MigrationPlan]:
        _, plan = mapper_step(self.state, [], now_ms)
        if plan is not None:
            self.windows += 1
            self.backend.apply(plan, now_ms)
            self.state.occupancy.apply(plan)
        return plan

    def report(self) -> Report:
        return latency_report(self.latencies, in_flight=len(self.state.table))


_CLOSED = object()


def _reader(channel: StatsChannel, out: "queue.Queue") -> None:
    try:
        while True:
            out.put(channel.read_available(errors="skip"))
    except ChannelClosed:
        pass
    except Exception:  # noqa: BLE001 - surfaced through the queue
        log.exception("stats reader failed")
    finally:
        out.put(_CLOSED)


def run_live(channel: StatsChannel, topology: Topology, config: MapperConfig,
             backend: Optional[AffinityBackend] = None,
             clock: Callable[[], float] = wall_clock_ms) -> LiveSession:
    """Consume ``channel`` until the producer closes it; returns the finished session."""
    session = LiveSession(topology, config, backend, start_ms=clock())
    batches: "queue.Queue" = queue.Queue()
    reader = threading.Thread(target=_reader, args=(channel, batches), daemon=True)
    reader.start()
    period = config.sampling_time_ms
    while True:
        wait_s = max(0.0, (session.state.start_sampling_ms + period - clock()) / 1000.0)
        try:
            item = batches.get(timeout=wait_s)
        except queue.Empty:
            item = None
        if item is _CLOSED:
            break
        if item:
            session.ingest(item)
        session.tick(clock())
    reader.join()
    return session
