import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hurryup.domain import MapperConfig, Policy, Topology
from hurryup.mapper import (
    CoreOccupancy,
    DuplicateActiveThread,
    MapperState,
    MigrationPlan,
    Move,
    PoolExceedsCores,
    RequestRecord,
    RequestTable,
    ingest_event,
    initial_mapping,
    mapper_step,
    select_migrations,
)
from hurryup.statsproto import StatsEvent
from oracles import greedy_loop_plan, enumerated_plan


def table_of(entries):
    t = RequestTable()
    for rid, (tid, ts) in entries.items():
        t.ingest(StatsEvent(tid, rid, ts))
    return t


def as_tuples(plan: MigrationPlan):
    return [(m.thread_id, m.to_core_id, m.displaced_thread_id, m.displaced_to_core_id) for m in plan.moves]


# --- ingest ---------------------------------------------------------------

def test_ingest_begin():
    t = ingest_event(RequestTable(), StatsEvent(75, "ixI.", 1000))
    assert t.as_dict() == {"ixI.": RequestRecord(75, 1000)}


def test_ingest_end_removes():
    t = table_of({"1J.D": (77, 1000)})
    ingest_event(t, StatsEvent(77, "1J.D", 1070))
    assert len(t) == 0


def test_ingest_duplicate_thread_rejected():
    t = table_of({"x": (5, 100)})
    with pytest.raises(DuplicateActiveThread):
        ingest_event(t, StatsEvent(5, "y", 200))
    assert t.as_dict() == {"x": RequestRecord(5, 100)}


# --- select_migrations ----------------------------------------------------

def test_swap_with_occupied_big_core():
    topo = Topology(1, 2)
    # T1=1 on little core 1 (120 ms), T2=2 on little core 2 (80 ms), T3=3 on big core 0
    occ = CoreOccupancy(topo, {3: 0, 1: 1, 2: 2})
    table = table_of({"a": (1, 0), "b": (2, 40)})
    plan = select_migrations(table, occ, topo, 120, MapperConfig(25, 50))
    assert as_tuples(plan) == [(1, 0, 3, 1)]


def test_nothing_past_threshold():
    topo = Topology(2, 4)
    occ = CoreOccupancy(topo, {i: i for i in range(6)})
    table = table_of({"a": (2, 100), "b": (3, 120)})
    assert not select_migrations(table, occ, topo, 140, MapperConfig(25, 50))


def test_two_idle_big_cores():
    topo = Topology(2, 2)
    occ = CoreOccupancy(topo, {10: 2, 11: 3})
    table = table_of({"a": (10, 700), "b": (11, 600)})
    plan = select_migrations(table, occ, topo, 900, MapperConfig(25, 50))
    expected = [(11, 0, None, None), (10, 1, None, None)]
    assert as_tuples(plan) == expected
    args = ({"a": (10, 700), "b": (11, 600)}, {10: 2, 11: 3}, [0, 1], {2, 3}, 900, 50)
    assert enumerated_plan(*args) == expected == greedy_loop_plan(*args)


def test_elapsed_equal_to_threshold_not_selected():
    topo = Topology(1, 1)
    occ = CoreOccupancy(topo, {7: 1})
    table = table_of({"a": (7, 50)})
    assert not select_migrations(table, occ, topo, 100, MapperConfig(25, 50))
    assert select_migrations(table, occ, topo, 100.001, MapperConfig(25, 50))


def test_ties_prefer_lower_thread_id():
    topo = Topology(1, 3)
    occ = CoreOccupancy(topo, {9: 1, 4: 2, 6: 3})
    table = table_of({"a": (9, 0), "b": (4, 0), "c": (6, 0)})
    assert as_tuples(select_migrations(table, occ, topo, 500, MapperConfig(25, 50))) == [(4, 0, None, None)]


def test_threads_on_big_are_not_candidates():
    topo = Topology(1, 1)
    occ = CoreOccupancy(topo, {1: 0, 2: 1})
    table = table_of({"a": (1, 0)})
    assert not select_migrations(table, occ, topo, 1000, MapperConfig(25, 50))


def random_instance(rng):
    big = int(rng.integers(0, 5))
    little = int(rng.integers(1, 9))
    topo = Topology(big, little)
    n_threads = int(rng.integers(1, min(8, topo.core_count) + 1))
    cores = rng.permutation(topo.core_count)[:n_threads]
    tids = rng.choice(1000, size=n_threads, replace=False)
    mapping = {int(t): int(c) for t, c in zip(tids, cores)}
    now = int(rng.integers(200, 2000))
    entries = {}
    for i, t in enumerate(tids):
        if rng.random() < 0.8:
            # coarse start times make elapsed ties and threshold equality common
            entries[f"r{i}"] = (int(t), int(rng.integers(0, now // 10 + 1)) * 10)
    threshold = int(rng.integers(1, 30)) * 10
    return topo, mapping, entries, now, threshold


def check_instance(topo, mapping, entries, now, threshold):
    occ = CoreOccupancy(topo, mapping)
    got = as_tuples(select_migrations(table_of(entries), occ, topo, now, MapperConfig(25, threshold)))
    args = (entries, mapping, topo.big_core_ids, set(topo.little_core_ids), now, threshold)
    return got, greedy_loop_plan(*args)


def test_oracle_equivalence_seeded():
    rng = np.random.default_rng(2024)
    for _ in range(300):
        got, want = check_instance(*random_instance(rng))
        assert got == want


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_plan_soundness(seed):
    rng = np.random.default_rng(seed)
    topo, mapping, entries, now, threshold = random_instance(rng)
    occ = CoreOccupancy(topo, mapping)
    plan = select_migrations(table_of(entries), occ, topo, now, MapperConfig(25, threshold))
    start_of = {tid: ts for tid, ts in entries.values()}
    dests = [m.to_core_id for m in plan.moves]
    movers = [m.thread_id for m in plan.moves]
    assert len(set(dests)) == len(dests) and len(set(movers)) == len(movers)
    for m in plan.moves:
        assert m.to_core_id in topo.big_core_ids
        assert m.thread_id in start_of and now - start_of[m.thread_id] > threshold
        assert mapping[m.thread_id] in topo.little_core_ids
        if m.displaced_thread_id is None:
            assert occ.thread_on[m.to_core_id] is None
        else:
            assert occ.thread_on[m.to_core_id] == m.displaced_thread_id
            assert m.displaced_to_core_id == mapping[m.thread_id]
    # enumeration reaches the same plan by another route
    args = (entries, mapping, topo.big_core_ids, set(topo.little_core_ids), now, threshold)
    assert as_tuples(plan) == enumerated_plan(*args)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 200))
def test_raising_threshold_never_adds_candidates(seed, bump):
    rng = np.random.default_rng(seed)
    _, mapping, entries, now, threshold = random_instance(rng)
    # with 8 big cores every candidate (at most 8 threads) gets a move,
    # so the plan's movers are exactly the candidate set
    topo = Topology(8, 16)
    occ = CoreOccupancy(topo, {t: c + 8 for t, c in mapping.items()})

    def movers(thr):
        plan = select_migrations(table_of(entries), occ, topo, now, MapperConfig(25, thr))
        return {m.thread_id for m in plan.moves}

    assert movers(threshold + bump) <= movers(threshold)


def test_plan_applies_as_swap():
    topo = Topology(1, 2)
    occ = CoreOccupancy(topo, {3: 0, 1: 1, 2: 2})
    occ.apply(MigrationPlan((Move(1, 0, 3, 1),)))
    assert occ.core_of == {3: 1, 1: 0, 2: 2}
    assert occ.thread_on == {0: 1, 1: 3, 2: 2}


# --- mapper_step ----------------------------------------------------------

def fresh_state(topo=Topology(2, 4), mapping=None, sampling=50, threshold=50, start=0):
    occ = CoreOccupancy(topo, mapping if mapping is not None else {})
    return MapperState(topo, MapperConfig(sampling, threshold), occ, start_sampling_ms=start)


def test_step_before_window():
    state = fresh_state(mapping={1: 2})
    state, plan = mapper_step(state, [StatsEvent(1, "a", 10)], 40)
    assert plan is None and len(state.table) == 1 and state.start_sampling_ms == 0


def test_step_window_elapsed_empty():
    state, plan = mapper_step(fresh_state(), [], 60)
    assert plan is not None and not plan
    assert state.start_sampling_ms == 60


def test_step_on_snapshot(snapshot_events):
    now = 1498060928100
    # 77 finished; the rest sit on little cores 2..5, big cores idle
    mapping = {75: 2, 78: 3, 79: 4, 80: 5}
    state = fresh_state(mapping=mapping, sampling=25, threshold=50, start=now - 100)
    state, plan = mapper_step(state, snapshot_events, now)
    assert sorted(state.table.as_dict()) == sorted(["ixI.", "579[", "Xrt@", "qc8o"])
    elapsed = {rec.thread_id: now - rec.start_timestamp_ms for rec in state.table.as_dict().values()}
    assert elapsed == {75: 561, 78: 146, 79: 97, 80: 86}
    assert as_tuples(plan) == [(75, 0, None, None), (78, 1, None, None)]
    entries = {rid: (r.thread_id, r.start_timestamp_ms) for rid, r in state.table.as_dict().items()}
    assert greedy_loop_plan(entries, mapping, [0, 1], {2, 3, 4, 5}, now, 50) == as_tuples(plan)


def test_step_reports_duplicates_without_halting():
    state = fresh_state(mapping={5: 2})
    evs = [StatsEvent(5, "x", 0), StatsEvent(5, "y", 1), StatsEvent(5, "x", 2)]
    state, _ = mapper_step(state, evs, 10)
    assert len(state.rejected) == 1 and len(state.table) == 0


# --- initial mapping ------------------------------------------------------

def test_round_robin_initial_mapping():
    occ = initial_mapping(6, Topology(2, 4), Policy.HURRYUP)
    assert occ.core_of == {i: i for i in range(6)}


@pytest.mark.parametrize("policy", list(Policy))
def test_single_core(policy):
    occ = initial_mapping(1, Topology(0, 1), policy, np.random.default_rng(0))
    assert occ.core_of == {0: 0}


def test_pool_exceeds_cores():
    with pytest.raises(PoolExceedsCores):
        initial_mapping(7, Topology(2, 4), Policy.HURRYUP)


def test_static_mapping_is_a_random_injection():
    seen = set()
    for seed in range(30):
        occ = initial_mapping(6, Topology(2, 4), Policy.STATIC_RANDOM, np.random.default_rng(seed))
        assert sorted(occ.core_of.values()) == list(range(6))
        seen.add(tuple(sorted(occ.core_of.items())))
    assert len(seen) > 10
