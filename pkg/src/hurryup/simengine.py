"""Discrete-event model of a search back-end on a big/little server.

A fixed pool of search threads, each pinned to one core, pulls requests from
a single FIFO queue. Request work is measured in keyword units; a core type
processes a given request at a rate fixed by the service model, so when the
mapper moves a busy thread the remaining work is simply re-timed on the new
core. Core activity is integrated into per-cluster energy as it changes.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .domain import (
    ConfigInvalid,
    CoreType,
    Policy,
    PowerModel,
    ServiceModel,
    SimConfig,
    Topology,
    validate_config,
)
from .mapper import MapperState, MigrationPlan, initial_mapping, mapper_step
from .statsproto import StatsEvent
from .workload import Arrival, generate

# same-timestamp ordering: freed threads are visible to arrivals, and the
# mapper sees both
COMPLETION, ARRIVAL, MAPPER_TICK = 0, 1, 2


def noise_factor(cv: float, rng: np.random.Generator) -> float:
    """Multiplicative log-normal noise with mean 1 and coefficient of variation ``cv``."""
    if cv == 0:
        return 1.0
    sigma2 = math.log1p(cv * cv)
    return float(rng.lognormal(-sigma2 / 2.0, math.sqrt(sigma2)))


def base_service_time(keywords: int, core_type: CoreType, model: ServiceModel) -> float:
    return model.fixed_overhead_ms + keywords * model.ms_per_keyword(core_type)


def service_time(keywords: int, core_type: CoreType, model: ServiceModel,
                 rng: Optional[np.random.Generator] = None) -> float:
    if keywords < 1:
        raise ValueError("keywords must be ≥ 1")
    base = base_service_time(keywords, core_type, model)
    if model.noise_cv == 0:
        return base
    if rng is None:
        raise ValueError("noisy service model needs an rng")
    return base * noise_factor(model.noise_cv, rng)


@dataclass
class Dwell:
    core_id: int
    enter_ms: float
    leave_ms: Optional[float] = None
    work: float = 0.0


@dataclass
class Request:
    request_id: int
    keywords: int
    arrival_ms: float
    work_units: float
    # work units per ms, indexed by CoreType
    rates: dict
    start_service_ms: Optional[float] = None
    completion_ms: Optional[float] = None
    migrations: int = 0
    dwells: list[Dwell] = field(default_factory=list)
    final_core_type: Optional[CoreType] = None

    @property
    def latency_ms(self) -> float:
        return self.completion_ms - self.arrival_ms

    @property
    def work_processed(self) -> float:
        return sum(d.work for d in self.dwells)


@dataclass
class ThreadState:
    thread_id: int
    current_core: int
    active_request: Optional[Request] = None
    work_remaining: float = 0.0
    rate: float = 0.0
    # progress accrues from resume_ms on; later than "now" while a migration is in flight
    resume_ms: float = 0.0
    completion_ms: float = math.inf
    version: int = 0


def _progress(thread: ThreadState, now_ms: float) -> float:
    done = max(0.0, now_ms - thread.resume_ms) * thread.rate
    return min(done, thread.work_remaining)


def apply_migration(thread: ThreadState, to_core: int, to_core_type: CoreType,
                    now_ms: float, overhead_ms: float) -> float:
    """Move a busy thread to ``to_core`` and return its new completion time.

    Work done so far is charged at the old core's rate; the remainder is
    re-timed at the new core's rate after ``overhead_ms`` of no progress.
    """
    req = thread.active_request
    if req is None:
        raise ValueError(f"thread {thread.thread_id} has no active request")
    if to_core == thread.current_core:
        return thread.completion_ms
    done = _progress(thread, now_ms)
    thread.work_remaining -= done
    dwell = req.dwells[-1]
    dwell.work += done
    dwell.leave_ms = now_ms
    req.dwells.append(Dwell(to_core, now_ms))
    req.migrations += 1

    thread.current_core = to_core
    thread.rate = req.rates[to_core_type]
    thread.resume_ms = now_ms + overhead_ms
    thread.completion_ms = thread.resume_ms + thread.work_remaining / thread.rate
    thread.version += 1
    return thread.completion_ms


@dataclass(frozen=True)
class PowerSample:
    t_ms: float
    big_cluster_w: float
    little_cluster_w: float
    rest_w: float


@dataclass(frozen=True)
class MigrationRecord:
    t_ms: float
    thread_id: int
    from_core: int
    to_core: int
    request_id: Optional[int]


@dataclass
class Trace:
    config: SimConfig
    requests: list[Request]
    power: list[PowerSample]
    migrations: list[MigrationRecord]
    end_ms: float
    energy_big_j: float
    energy_little_j: float
    energy_rest_j: float
    arrived: int
    max_queue_len: int = 0

    @property
    def energy_total_j(self) -> float:
        return self.energy_big_j + self.energy_little_j + self.energy_rest_j

    @property
    def completed(self) -> list[Request]:
        return [r for r in self.requests if r.completion_ms is not None]

    def reintegrate_energy(self) -> tuple[float, float, float]:
        """Integrate the recorded power signal from scratch (big, little, rest) in J."""
        big = little = rest = 0.0
        for cur, nxt in zip(self.power, self.power[1:] + [None]):
            t_end = self.end_ms if nxt is None else nxt.t_ms
            dt = (t_end - cur.t_ms) / 1000.0
            big += cur.big_cluster_w * dt
            little += cur.little_cluster_w * dt
            rest += cur.rest_w * dt
        return big, little, rest

    def requests_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["request_id", "keywords", "arrival_ms", "start_ms", "completion_ms",
                    "latency_ms", "migrations", "final_core_type"])
        for r in self.requests:
            done = r.completion_ms is not None
            w.writerow([
                r.request_id, r.keywords, repr(r.arrival_ms),
                "" if r.start_service_ms is None else repr(r.start_service_ms),
                repr(r.completion_ms) if done else "",
                repr(r.latency_ms) if done else "",
                r.migrations,
                r.final_core_type.value if r.final_core_type else "",
            ])
        return buf.getvalue()

    def power_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_ms", "big_cluster_w", "little_cluster_w", "rest_w"])
        for p in self.power:
            w.writerow([repr(p.t_ms), repr(p.big_cluster_w), repr(p.little_cluster_w), repr(p.rest_w)])
        return buf.getvalue()

    def write_csv(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        req_path, pow_path = out / "requests.csv", out / "power.csv"
        req_path.write_text(self.requests_csv())
        pow_path.write_text(self.power_csv())
        return req_path, pow_path

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.requests_csv().encode())
        h.update(self.power_csv().encode())
        for m in self.migrations:
            h.update(repr((m.t_ms, m.thread_id, m.from_core, m.to_core, m.request_id)).encode())
        return h.hexdigest()


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named streams so that the workload and per-request noise
    are identical across policies for a given seed."""
    names = ("workload", "noise", "placement", "dispatch")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, children)}


class Simulator:
    """One simulation run; ``step`` processes a single event."""

    def __init__(self, cfg: SimConfig, arrivals: Optional[Sequence[Arrival]] = None):
        problems = validate_config(cfg)
        if problems:
            raise ConfigInvalid(problems)
        self.cfg = cfg
        self.topology: Topology = cfg.topology
        self.streams = rng_streams(cfg.rng_seed)
        if arrivals is None:
            arrivals = generate(cfg.qps, cfg.duration_s, cfg.keyword_dist, self.streams["workload"])
        self.arrivals = list(arrivals)
        self._next_arrival = 0
        self.now = 0.0
        self.duration_ms = cfg.duration_s * 1000.0

        self.occupancy = initial_mapping(cfg.thread_pool_size, self.topology, cfg.policy,
                                         self.streams["placement"])
        self.threads = [ThreadState(t, self.occupancy.core_of[t]) for t in range(cfg.thread_pool_size)]
        self._core_type = [self.topology.core_type(c) for c in self.topology.core_ids]
        self.idle: list[int] = list(range(cfg.thread_pool_size))
        self.queue: list[Request] = []
        self._queue_head = 0
        self.requests: list[Request] = []
        self.migrations: list[MigrationRecord] = []
        self.max_queue_len = 0

        self.mapper: Optional[MapperState] = None
        self.pending_stats: list[StatsEvent] = []
        if cfg.policy is Policy.HURRYUP:
            self.mapper = MapperState(self.topology, cfg.mapper, self.occupancy, start_sampling_ms=0.0)

        pm: PowerModel = cfg.power_model
        self._pm = pm
        self._active = {CoreType.BIG: 0, CoreType.LITTLE: 0}
        self.power: list[PowerSample] = []
        self._energy = [0.0, 0.0, 0.0]
        self._last_power_t = 0.0
        self._record_power()

        self._heap: list = []
        self._seq = 0
        if self.arrivals:
            self._push(self.arrivals[0].arrival_ms, ARRIVAL, None)
        if self.mapper is not None:
            self._push(cfg.mapper.sampling_time_ms, MAPPER_TICK, None)

    # -- bookkeeping -------------------------------------------------------

    def _push(self, t: float, kind: int, payload) -> None:
        heapq.heappush(self._heap, (t, kind, self._seq, payload))
        self._seq += 1

    def _cluster_power(self) -> tuple[float, float, float]:
        pm, topo = self._pm, self.topology
        nb, nl = self._active[CoreType.BIG], self._active[CoreType.LITTLE]
        big = nb * pm.big_active_w + (topo.big_cores - nb) * pm.big_idle_w
        little = nl * pm.little_active_w + (topo.little_cores - nl) * pm.little_idle_w
        return big, little, pm.rest_of_system_w

    def _record_power(self) -> None:
        big, little, rest = self._cluster_power()
        if self.power:
            last = self.power[-1]
            if (last.big_cluster_w, last.little_cluster_w, last.rest_w) == (big, little, rest):
                return
            self._integrate_to(self.now)
        self.power.append(PowerSample(self.now, big, little, rest))

    def _integrate_to(self, t: float) -> None:
        last = self.power[-1]
        dt = (t - last.t_ms) / 1000.0
        self._energy[0] += last.big_cluster_w * dt
        self._energy[1] += last.little_cluster_w * dt
        self._energy[2] += last.rest_w * dt

    def _set_active(self, core_id: int, delta: int) -> None:
        self._active[self._core_type[core_id]] += delta

    # -- request lifecycle -------------------------------------------------

    def _make_request(self, a: Arrival) -> Request:
        model = self.cfg.service_model
        noise = noise_factor(model.noise_cv, self.streams["noise"])
        work = a.keywords * noise
        rates = {ct: work / (base_service_time(a.keywords, ct, model) * noise) for ct in CoreType}
        return Request(a.request_id, a.keywords, a.arrival_ms, work, rates)

    def _start(self, thread: ThreadState, req: Request) -> None:
        now = self.now
        core = thread.current_core
        req.start_service_ms = now
        req.dwells.append(Dwell(core, now))
        thread.active_request = req
        thread.work_remaining = req.work_units
        thread.rate = req.rates[self._core_type[core]]
        thread.resume_ms = now
        thread.completion_ms = now + req.work_units / thread.rate
        thread.version += 1
        self._push(thread.completion_ms, COMPLETION, (thread.thread_id, thread.version))
        self._set_active(core, +1)
        if self.mapper is not None:
            self.pending_stats.append(StatsEvent(thread.thread_id, str(req.request_id), now))

    def _on_arrival(self) -> None:
        a = self.arrivals[self._next_arrival]
        self._next_arrival += 1
        if self._next_arrival < len(self.arrivals):
            self._push(self.arrivals[self._next_arrival].arrival_ms, ARRIVAL, None)
        req = self._make_request(a)
        self.requests.append(req)
        if self.idle:
            # a request lands on whichever idle thread, and hence core type, at random
            k = int(self.streams["dispatch"].integers(len(self.idle))) if len(self.idle) > 1 else 0
            tid = self.idle.pop(k)
            self._start(self.threads[tid], req)
        else:
            self.queue.append(req)
            self.max_queue_len = max(self.max_queue_len, len(self.queue) - self._queue_head)

    def _on_completion(self, payload) -> None:
        tid, version = payload
        thread = self.threads[tid]
        if version != thread.version:
            return
        req = thread.active_request
        dwell = req.dwells[-1]
        dwell.work += thread.work_remaining
        dwell.leave_ms = self.now
        thread.work_remaining = 0.0
        thread.active_request = None
        thread.completion_ms = math.inf
        req.completion_ms = self.now
        req.final_core_type = self._core_type[thread.current_core]
        self._set_active(thread.current_core, -1)
        if self.mapper is not None:
            self.pending_stats.append(StatsEvent(tid, str(req.request_id), self.now))
        if self._queue_head < len(self.queue):
            nxt = self.queue[self._queue_head]
            self._queue_head += 1
            self._start(thread, nxt)
        else:
            self.idle.append(tid)

    def _on_tick(self) -> None:
        events, self.pending_stats = self.pending_stats, []
        _, plan = mapper_step(self.mapper, events, self.now)
        if plan:
            self.apply_plan(plan)
        if self._busy():
            self._push(self.now + self.cfg.mapper.sampling_time_ms, MAPPER_TICK, None)

    def apply_plan(self, plan: MigrationPlan) -> None:
        relocations = []
        for mv in plan.moves:
            relocations.append((mv.thread_id, mv.to_core_id))
            if mv.displaced_thread_id is not None:
                relocations.append((mv.displaced_thread_id, mv.displaced_to_core_id))
        for tid, to_core in relocations:
            thread = self.threads[tid]
            from_core = thread.current_core
            req = thread.active_request
            self.migrations.append(MigrationRecord(
                self.now, tid, from_core, to_core, None if req is None else req.request_id))
            if req is None:
                thread.current_core = to_core
                continue
            self._set_active(from_core, -1)
            self._set_active(to_core, +1)
            apply_migration(thread, to_core, self._core_type[to_core], self.now,
                            self.cfg.migration_overhead_ms)
            self._push(thread.completion_ms, COMPLETION, (tid, thread.version))
        self.occupancy.apply(plan)

    def _busy(self) -> bool:
        return (self._next_arrival < len(self.arrivals)
                or len(self.idle) < len(self.threads)
                or self._queue_head < len(self.queue))

    # -- driving -----------------------------------------------------------

    @property
    def queue_length(self) -> int:
        return len(self.queue) - self._queue_head

    def step(self) -> bool:
        """Process one event; returns False once the event queue is empty."""
        if not self._heap:
            return False
        t, kind, _, payload = heapq.heappop(self._heap)
        self.now = t
        if kind == COMPLETION:
            self._on_completion(payload)
        elif kind == ARRIVAL:
            self._on_arrival()
        else:
            self._on_tick()
        self._record_power()
        return True

    def run(self) -> Trace:
        while self.step():
            pass
        return self.trace()

    def trace(self) -> Trace:
        last_done = max((r.completion_ms for r in self.requests if r.completion_ms is not None),
                        default=0.0)
        end_ms = max(self.duration_ms, last_done)
        # energy up to end_ms without disturbing the live accumulators
        big, little, rest = self._energy
        last = self.power[-1]
        dt = (end_ms - last.t_ms) / 1000.0
        return Trace(
            config=self.cfg,
            requests=self.requests,
            power=list(self.power),
            migrations=list(self.migrations),
            end_ms=end_ms,
            energy_big_j=big + last.big_cluster_w * dt,
            energy_little_j=little + last.little_cluster_w * dt,
            energy_rest_j=rest + last.rest_w * dt,
            arrived=len(self.requests),
            max_queue_len=self.max_queue_len,
        )


def run(cfg: SimConfig, arrivals: Optional[Sequence[Arrival]] = None) -> Trace:
    """Simulate ``cfg`` to completion (arrivals stop at duration, then drain)."""
    return Simulator(cfg, arrivals).run()


def integrate_power(interval_ms: float, power_model: PowerModel, topology: Topology,
                    active_cores: set[int]) -> dict[str, float]:
    """Energy in J per cluster for an interval of constant core activity."""
    dt = interval_ms / 1000.0
    big = little = 0.0
    for c in topology.core_ids:
        ct = topology.core_type(c)
        w = power_model.core_w(ct, c in active_cores)
        if ct is CoreType.BIG:
            big += w * dt
        else:
            little += w * dt
    rest = power_model.rest_of_system_w * dt
    return {"big": big, "little": little, "rest": rest, "total": big + little + rest}


# --- power model calibration ----------------------------------------------

# Socket power of 1-L, 2-L, 1-B, 2-B relative to 1-L.
MEASURED_SOCKET_POWER = {(0, 1): 1.0, (0, 2): 1.5, (1, 0): 7.8, (2, 0): 12.9}
BIG_FULL_UTILISATION_W = 0.76
REST_OF_SYSTEM_W = 0.76
LITTLE_EFFICIENCY_ADVANTAGE = 2.3


def socket_power(n_cores: int, active_w: float, idle_w: float, busy_cores: float) -> float:
    """Socket power of ``n_cores`` identical cores sharing ``busy_cores`` worth of work."""
    return busy_cores * active_w + (n_cores - busy_cores) * idle_w


def fit_power_model(
    speedup: float = ServiceModel().speedup,
    little_utilisation: float = 0.5,
    normalized: dict = MEASURED_SOCKET_POWER,
    big_active_w: float = BIG_FULL_UTILISATION_W,
    rest_w: float = REST_OF_SYSTEM_W,
    efficiency: float = LITTLE_EFFICIENCY_ADVANTAGE,
) -> PowerModel:
    """Least-squares fit of per-core active/idle watts to the published anchors.

    The normalized socket powers are modelled at a fixed offered load that
    keeps one little core ``little_utilisation`` busy; the same load keeps a
    big core ``little_utilisation / speedup`` busy. Residuals are relative
    errors against: the three socket-power ratios, the big-core and
    rest-of-system wattages, and the little core's performance-per-watt
    advantage over a big core. The anchors are mutually inconsistent, so the
    fit is approximate by construction.
    """
    from scipy.optimize import least_squares

    u_little = little_utilisation
    u_big = little_utilisation / speedup

    def cluster_w(x, n_big, n_little):
        a_l, i_l, a_b, i_b, _ = x
        if n_big:
            return socket_power(n_big, a_b, i_b, u_big)
        return socket_power(n_little, a_l, i_l, u_little)

    def residuals(x):
        a_l, _, a_b, _, rest = x
        ref = cluster_w(x, 0, 1)
        res = [cluster_w(x, nb, nl) / ref / target - 1.0
               for (nb, nl), target in normalized.items() if (nb, nl) != (0, 1)]
        res.append(a_b / big_active_w - 1.0)
        res.append(rest / rest_w - 1.0)
        res.append(a_b / (speedup * a_l) / efficiency - 1.0)
        return res

    x0 = [0.1, 0.05, big_active_w, 0.4, rest_w]
    fit = least_squares(residuals, x0, bounds=([0.0] * 5, [10.0] * 5))
    a_l, i_l, a_b, i_b, rest = (float(v) for v in fit.x)
    return PowerModel(
        big_active_w=a_b,
        big_idle_w=min(i_b, a_b),
        little_active_w=a_l,
        little_idle_w=min(i_l, a_l),
        rest_of_system_w=rest,
    )
