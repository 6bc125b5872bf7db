from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hurryup.domain import (
    ConfigError,
    CoreType,
    Fixed,
    MapperConfig,
    Policy,
    PowerModel,
    ServiceModel,
    SimConfig,
    Topology,
    Uniform,
    Zipf,
    dump_config,
    load_config,
    parse_config_text,
    validate_config,
)
from hurryup.simengine import Simulator


def test_default_config_is_valid():
    cfg = SimConfig()
    assert cfg.topology == Topology(2, 4)
    assert cfg.thread_pool_size == 6
    assert cfg.qps == 30
    assert validate_config(cfg) == []


def test_zero_pool_is_reported():
    assert validate_config(replace(SimConfig(), thread_pool_size=0)) == ["thread_pool_size must be ≥ 1"]


def test_inverted_rates_reported_once():
    cfg = replace(SimConfig(), service_model=ServiceModel(little_ms_per_keyword=100, big_ms_per_keyword=120))
    problems = validate_config(cfg)
    assert len(problems) == 1
    assert "big_ms_per_keyword" in problems[0] and "little_ms_per_keyword" in problems[0]


@pytest.mark.parametrize("cfg, field_name", [
    (replace(SimConfig(), topology=Topology(0, 0), thread_pool_size=1), "big_cores + little_cores"),
    (replace(SimConfig(), topology=Topology(-1, 4)), "big_cores"),
    (replace(SimConfig(), qps=0), "qps"),
    (replace(SimConfig(), duration_s=-1), "duration_s"),
    (replace(SimConfig(), migration_overhead_ms=-0.5), "migration_overhead_ms"),
    (replace(SimConfig(), mapper=MapperConfig(0, 50)), "sampling_time_ms"),
    (replace(SimConfig(), mapper=MapperConfig(25, 0)), "migration_threshold_ms"),
    (replace(SimConfig(), power_model=PowerModel(big_active_w=0.1, big_idle_w=0.2)), "big_active_w"),
    (replace(SimConfig(), service_model=ServiceModel(noise_cv=-1)), "noise_cv"),
    (replace(SimConfig(), keyword_dist=Uniform(5, 2)), "keyword_dist"),
    (replace(SimConfig(), keyword_dist=Zipf(0, 10)), "keyword_dist.s"),
    (replace(SimConfig(), thread_pool_size=7), "thread_pool_size"),
])
def test_violations_name_the_field(cfg, field_name):
    problems = validate_config(cfg)
    assert problems and any(field_name in p for p in problems)


def test_topology_ids_big_first():
    t = Topology(2, 4)
    assert list(t.core_ids) == [0, 1, 2, 3, 4, 5]
    assert [t.core_type(c) for c in t.core_ids] == [CoreType.BIG] * 2 + [CoreType.LITTLE] * 4
    assert t.big_core_ids == [0, 1] and t.little_core_ids == [2, 3, 4, 5]


def test_config_file_roundtrip(tmp_path):
    cfg = replace(SimConfig(), qps=12.5, keyword_dist=Zipf(1.5, 17), policy=Policy.STATIC_RANDOM,
                  topology=Topology(1, 3), thread_pool_size=4)
    path = tmp_path / "exp.conf"
    path.write_text("# experiment\n" + dump_config(cfg))
    assert load_config(path) == cfg


def test_config_file_comments_and_partial():
    cfg = parse_config_text("""
        # only a few keys
        qps = 20   # trailing comment
        keyword_dist = fixed(5)
        migration_threshold_ms = 100
    """)
    assert cfg.qps == 20 and cfg.keyword_dist == Fixed(5) and cfg.mapper.migration_threshold_ms == 100
    assert cfg.topology == Topology(2, 4)


@pytest.mark.parametrize("text", ["nonsense = 3", "qps 3", "qps = fast", "keyword_dist = gauss(1)",
                                  "policy = fifo"])
def test_config_file_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


numbers = st.one_of(st.integers(-5, 50), st.floats(allow_nan=True, allow_infinity=True))


@settings(max_examples=300, deadline=None)
@given(
    big=st.integers(-2, 5), little=st.integers(-2, 5), pool=st.integers(-2, 12),
    lr=numbers, br=numbers, cv=numbers, qps=numbers, dur=numbers, samp=numbers, thr=numbers,
    ovh=numbers, ba=numbers, bi=numbers,
    dist=st.sampled_from([Uniform(1, 10), Uniform(3, 1), Zipf(1.0, 5), Zipf(-1, 0), Fixed(0), Fixed(3)]),
)
def test_validate_is_total_and_sufficient(big, little, pool, lr, br, cv, qps, dur, samp, thr, ovh, ba, bi, dist):
    cfg = SimConfig(
        topology=Topology(big, little),
        service_model=ServiceModel(lr, br, 0.0, cv),
        power_model=PowerModel(big_active_w=ba, big_idle_w=bi),
        mapper=MapperConfig(samp, thr),
        thread_pool_size=pool,
        qps=qps, duration_s=dur, keyword_dist=dist, migration_overhead_ms=ovh,
    )
    problems = validate_config(cfg)
    assert isinstance(problems, list)
    if not problems:
        # valid configs must construct a simulator without error
        Simulator(replace(cfg, duration_s=min(cfg.duration_s, 0.5), qps=min(cfg.qps, 50)))
