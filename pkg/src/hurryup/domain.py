"""Shared vocabulary types, defaults and config-file handling.

All types here are plain frozen dataclasses. Construction never validates;
``validate_config`` is the single place invariants are checked so that any
combination readable from a config file can be reported on instead of
raising halfway through parsing.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Union


class CoreType(enum.Enum):
    BIG = "big"
    LITTLE = "little"


class Policy(enum.Enum):
    HURRYUP = "hurryup"
    STATIC_RANDOM = "static"


@dataclass(frozen=True)
class Topology:
    big_cores: int = 2
    little_cores: int = 4

    @property
    def core_count(self) -> int:
        return self.big_cores + self.little_cores

    @property
    def core_ids(self) -> range:
        return range(self.core_count)

    @property
    def big_core_ids(self) -> list[int]:
        # big cores always come first
        return list(range(self.big_cores))

    @property
    def little_core_ids(self) -> list[int]:
        return list(range(self.big_cores, self.core_count))

    def core_type(self, core_id: int) -> CoreType:
        if not 0 <= core_id < self.core_count:
            raise ValueError(f"core {core_id} not in topology of {self.core_count} cores")
        return CoreType.BIG if core_id < self.big_cores else CoreType.LITTLE

    @property
    def label(self) -> str:
        parts = []
        if self.big_cores:
            parts.append(f"{self.big_cores}-B")
        if self.little_cores:
            parts.append(f"{self.little_cores}-L")
        return "+".join(parts) or "empty"


@dataclass(frozen=True)
class ServiceModel:
    """Linear keyword cost model; one calibration point per core type.

    The little-core rate puts a 5-keyword query exactly at a 500 ms target
    and the big-core rate puts a 17-keyword query there.
    """

    little_ms_per_keyword: float = 100.0
    big_ms_per_keyword: float = 500.0 / 17.0
    fixed_overhead_ms: float = 0.0
    noise_cv: float = 0.15

    def ms_per_keyword(self, core_type: CoreType) -> float:
        if core_type is CoreType.BIG:
            return self.big_ms_per_keyword
        return self.little_ms_per_keyword

    @property
    def speedup(self) -> float:
        return self.little_ms_per_keyword / self.big_ms_per_keyword


@dataclass(frozen=True)
class PowerModel:
    # Defaults are the output of hurryup.simengine.fit_power_model() with its
    # default targets, rounded to 4 decimals. test_simengine checks they agree.
    big_active_w: float = 0.76
    big_idle_w: float = 0.4078
    little_active_w: float = 0.0963
    little_idle_w: float = 0.031
    rest_of_system_w: float = 0.76

    def core_w(self, core_type: CoreType, active: bool) -> float:
        if core_type is CoreType.BIG:
            return self.big_active_w if active else self.big_idle_w
        return self.little_active_w if active else self.little_idle_w


@dataclass(frozen=True)
class MapperConfig:
    sampling_time_ms: float = 25.0
    migration_threshold_ms: float = 50.0


# Headline evaluation used 25/50; 50 ms sampling was the standalone best.
MAPPER_PRESETS = {
    "evaluation": MapperConfig(25.0, 50.0),
    "slow-sampling": MapperConfig(50.0, 50.0),
}


@dataclass(frozen=True)
class Uniform:
    lo: int = 1
    hi: int = 10

    def __str__(self) -> str:
        return f"uniform({self.lo},{self.hi})"


@dataclass(frozen=True)
class Zipf:
    s: float = 1.0
    max_k: int = 20

    def __str__(self) -> str:
        return f"zipf({self.s:g},{self.max_k})"


@dataclass(frozen=True)
class Fixed:
    k: int = 5

    def __str__(self) -> str:
        return f"fixed({self.k})"


KeywordDist = Union[Uniform, Zipf, Fixed]


@dataclass(frozen=True)
class SimConfig:
    topology: Topology = field(default_factory=Topology)
    service_model: ServiceModel = field(default_factory=ServiceModel)
    power_model: PowerModel = field(default_factory=PowerModel)
    mapper: MapperConfig = field(default_factory=MapperConfig)
    thread_pool_size: int = 6
    qps: float = 30.0
    duration_s: float = 60.0
    keyword_dist: KeywordDist = field(default_factory=Uniform)
    migration_overhead_ms: float = 0.0
    rng_seed: int = 0
    policy: Policy = Policy.HURRYUP


class ConfigError(ValueError):
    """Raised when a config file cannot be read into a SimConfig at all."""


class ConfigInvalid(ValueError):
    """Raised by consumers handed a config that fails validate_config."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid config: " + "; ".join(self.violations))


def _finite(x) -> bool:
    try:
        return math.isfinite(x)
    except TypeError:
        return False


def _check_number(out: list[str], name: str, value, *, positive=False, nonneg=False) -> bool:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not _finite(value):
        out.append(f"{name} must be a finite number (got {value!r})")
        return False
    if positive and value <= 0:
        out.append(f"{name} must be > 0")
        return False
    if nonneg and value < 0:
        out.append(f"{name} must be ≥ 0")
        return False
    return True


def _check_int(out: list[str], name: str, value, minimum: int | None = None) -> bool:
    if isinstance(value, bool) or not isinstance(value, int):
        out.append(f"{name} must be an integer (got {value!r})")
        return False
    if minimum is not None and value < minimum:
        out.append(f"{name} must be ≥ {minimum}")
        return False
    return True


def validate_config(cfg: SimConfig) -> list[str]:
    """Return every invariant violation in ``cfg``; an empty list means valid."""
    out: list[str] = []

    topo = cfg.topology
    ok_big = _check_int(out, "big_cores", topo.big_cores, 0)
    ok_little = _check_int(out, "little_cores", topo.little_cores, 0)
    if ok_big and ok_little and topo.big_cores + topo.little_cores < 1:
        out.append("big_cores + little_cores must be ≥ 1")

    sm = cfg.service_model
    ok_l = _check_number(out, "little_ms_per_keyword", sm.little_ms_per_keyword, positive=True)
    ok_b = _check_number(out, "big_ms_per_keyword", sm.big_ms_per_keyword, positive=True)
    _check_number(out, "fixed_overhead_ms", sm.fixed_overhead_ms, nonneg=True)
    _check_number(out, "noise_cv", sm.noise_cv, nonneg=True)
    if ok_l and ok_b and not sm.big_ms_per_keyword < sm.little_ms_per_keyword:
        out.append("big_ms_per_keyword must be < little_ms_per_keyword (big cores are faster)")

    pm = cfg.power_model
    ok = {n: _check_number(out, n, getattr(pm, n), nonneg=True)
          for n in ("big_active_w", "big_idle_w", "little_active_w", "little_idle_w", "rest_of_system_w")}
    if ok["big_active_w"] and ok["big_idle_w"] and pm.big_active_w < pm.big_idle_w:
        out.append("big_active_w must be ≥ big_idle_w")
    if ok["little_active_w"] and ok["little_idle_w"] and pm.little_active_w < pm.little_idle_w:
        out.append("little_active_w must be ≥ little_idle_w")

    _check_number(out, "sampling_time_ms", cfg.mapper.sampling_time_ms, positive=True)
    _check_number(out, "migration_threshold_ms", cfg.mapper.migration_threshold_ms, positive=True)

    _check_int(out, "thread_pool_size", cfg.thread_pool_size, 1)
    _check_number(out, "qps", cfg.qps, positive=True)
    _check_number(out, "duration_s", cfg.duration_s, positive=True)
    _check_number(out, "migration_overhead_ms", cfg.migration_overhead_ms, nonneg=True)
    _check_int(out, "rng_seed", cfg.rng_seed, 0)
    if not isinstance(cfg.policy, Policy):
        out.append(f"policy must be one of {[p.value for p in Policy]} (got {cfg.policy!r})")

    dist = cfg.keyword_dist
    if isinstance(dist, Uniform):
        if _check_int(out, "keyword_dist.lo", dist.lo, 1) and _check_int(out, "keyword_dist.hi", dist.hi, 1):
            if dist.lo > dist.hi:
                out.append("keyword_dist: lo must be ≤ hi")
    elif isinstance(dist, Zipf):
        _check_number(out, "keyword_dist.s", dist.s, positive=True)
        _check_int(out, "keyword_dist.max_k", dist.max_k, 1)
    elif isinstance(dist, Fixed):
        _check_int(out, "keyword_dist.k", dist.k, 1)
    else:
        out.append(f"keyword_dist must be uniform/zipf/fixed (got {dist!r})")

    if (
        isinstance(cfg.thread_pool_size, int)
        and ok_big and ok_little
        and cfg.thread_pool_size > topo.big_cores + topo.little_cores
    ):
        out.append("thread_pool_size must be ≤ total core count (one thread per core)")
    return out


# --- config file -----------------------------------------------------------

_SECTIONS = {
    "topology": Topology,
    "service_model": ServiceModel,
    "power_model": PowerModel,
    "mapper": MapperConfig,
}
_TOP_LEVEL = ("thread_pool_size", "qps", "duration_s", "keyword_dist",
              "migration_overhead_ms", "rng_seed", "policy")
_INT_KEYS = {"big_cores", "little_cores", "thread_pool_size", "rng_seed"}

CONFIG_KEYS: dict[str, str] = {}
for _section, _cls in _SECTIONS.items():
    for _f in fields(_cls):
        CONFIG_KEYS[_f.name] = _section
for _k in _TOP_LEVEL:
    CONFIG_KEYS[_k] = ""

_DIST_RE = re.compile(r"^\s*(\w+)\s*\(([^)]*)\)\s*$")


def parse_keyword_dist(text: str) -> KeywordDist:
    """Parse ``uniform(lo,hi)``, ``zipf(s,max_k)`` or ``fixed(k)``."""
    m = _DIST_RE.match(text)
    if not m:
        raise ConfigError(f"bad keyword_dist {text!r}; expected e.g. uniform(1,10)")
    kind = m.group(1).lower()
    args = [a.strip() for a in m.group(2).split(",") if a.strip()]
    try:
        if kind == "uniform" and len(args) == 2:
            return Uniform(int(args[0]), int(args[1]))
        if kind == "zipf" and len(args) == 2:
            return Zipf(float(args[0]), int(args[1]))
        if kind == "fixed" and len(args) == 1:
            return Fixed(int(args[0]))
    except ValueError as exc:
        raise ConfigError(f"bad keyword_dist {text!r}: {exc}") from None
    raise ConfigError(f"bad keyword_dist {text!r}; expected uniform(lo,hi), zipf(s,max_k) or fixed(k)")


def parse_policy(text: str) -> Policy:
    text = text.strip().lower()
    aliases = {"hurryup": Policy.HURRYUP, "hurry-up": Policy.HURRYUP,
               "static": Policy.STATIC_RANDOM, "staticrandom": Policy.STATIC_RANDOM,
               "linux": Policy.STATIC_RANDOM}
    try:
        return aliases[text]
    except KeyError:
        raise ConfigError(f"unknown policy {text!r}; expected hurryup or static") from None


def _convert(key: str, raw: str):
    if key == "keyword_dist":
        return parse_keyword_dist(raw)
    if key == "policy":
        return parse_policy(raw)
    try:
        if key in _INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as a number") from None


def with_overrides(cfg: SimConfig, overrides: dict[str, object]) -> SimConfig:
    """Return ``cfg`` with flat ``key -> value`` overrides applied.

    String values are parsed as they would be in a config file.
    """
    nested: dict[str, dict] = {s: {} for s in _SECTIONS}
    top: dict[str, object] = {}
    for key, value in overrides.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            value = _convert(key, value)
        section = CONFIG_KEYS[key]
        if section:
            nested[section][key] = value
        else:
            top[key] = value
    for section, vals in nested.items():
        if vals:
            top[section] = replace(getattr(cfg, section), **vals)
    return replace(cfg, **top)


def parse_config_text(text: str, base: SimConfig | None = None) -> SimConfig:
    overrides: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        overrides[key] = raw
    return with_overrides(base or SimConfig(), overrides)


def load_config(path: str | Path) -> SimConfig:
    return parse_config_text(Path(path).read_text())


def dump_config(cfg: SimConfig) -> str:
    lines = []
    for key, section in CONFIG_KEYS.items():
        value = getattr(getattr(cfg, section), key) if section else getattr(cfg, key)
        if isinstance(value, Policy):
            value = value.value
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
