"""Paired policy runs and Cartesian parameter sweeps."""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

from .domain import ConfigError, Policy, SimConfig, parse_policy, with_overrides
from .metrics import Comparison, Report, compare, report_from_trace
from .simengine import Trace, rng_streams, run
from .workload import Arrival, generate

# sweep axis name -> config key
SWEEP_AXES = {
    "qps": "qps",
    "migration_threshold_ms": "migration_threshold_ms",
    "threshold_ms": "migration_threshold_ms",
    "sampling_time_ms": "sampling_time_ms",
    "sampling_ms": "sampling_time_ms",
    "policy": "policy",
    "seed": "rng_seed",
}


def workload_for(cfg: SimConfig) -> list[Arrival]:
    """The arrival stream a run of ``cfg`` sees; depends only on seed, qps, duration and dist."""
    return generate(cfg.qps, cfg.duration_s, cfg.keyword_dist, rng_streams(cfg.rng_seed)["workload"])


@dataclass
class PairedResult:
    hurryup: Trace
    static: Trace
    hurryup_report: Report
    static_report: Report
    comparison: Comparison


def run_pair(cfg: SimConfig, arrivals: Optional[Sequence[Arrival]] = None) -> PairedResult:
    """Run both policies on one replayed workload."""
    if arrivals is None:
        arrivals = workload_for(cfg)
    h = run(replace(cfg, policy=Policy.HURRYUP), arrivals)
    s = run(replace(cfg, policy=Policy.STATIC_RANDOM), arrivals)
    hr, sr = report_from_trace(h), report_from_trace(s)
    return PairedResult(h, s, hr, sr, compare(hr, sr))


def parse_axis(spec: str) -> tuple[str, list]:
    """``"qps=5,10,20"`` -> ("qps", [5.0, 10.0, 20.0])."""
    if "=" not in spec:
        raise ConfigError(f"axis {spec!r} must look like name=v1,v2,...")
    name, raw = (s.strip() for s in spec.split("=", 1))
    if name not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {name!r}; choose from {sorted(set(SWEEP_AXES))}")
    values = []
    for item in (v.strip() for v in raw.split(",")):
        if not item:
            continue
        try:
            if name == "policy":
                values.append(parse_policy(item))
            elif name == "seed":
                values.append(int(item))
            else:
                values.append(float(item))
        except ValueError:
            raise ConfigError(f"axis {name}: bad value {item!r}") from None
    if not values:
        raise ConfigError(f"axis {name} has no values")
    return name, values


@dataclass(frozen=True)
class SweepCell:
    axes: tuple[tuple[str, object], ...]
    config: SimConfig


def sweep_cells(base: SimConfig, axes: dict[str, list]) -> list[SweepCell]:
    names = list(axes)
    cells = []
    for combo in itertools.product(*(axes[n] for n in names)):
        overrides = {SWEEP_AXES[n]: v for n, v in zip(names, combo)}
        cells.append(SweepCell(tuple(zip(names, combo)), with_overrides(base, overrides)))
    return cells


def _run_cell(cfg: SimConfig) -> Report:
    return report_from_trace(run(cfg))


def run_sweep(base: SimConfig, axes: dict[str, list], jobs: int = 1) -> list[tuple[SweepCell, Report]]:
    cells = sweep_cells(base, axes)
    configs = [c.config for c in cells]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_cell, configs, chunksize=1))
    else:
        reports = [_run_cell(c) for c in configs]
    return list(zip(cells, reports))


SWEEP_METRICS = ("p90_ms", "energy_total_j", "p50_ms", "p99_ms", "request_count", "migration_count")


def sweep_csv(results: Iterable[tuple[SweepCell, Report]]) -> str:
    results = list(results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if not results:
        return ""
    axis_names = [n for n, _ in results[0][0].axes]
    w.writerow(axis_names + list(SWEEP_METRICS))
    for cell, rep in results:
        vals = [v.value if isinstance(v, Policy) else v for _, v in cell.axes]
        w.writerow(vals + [getattr(rep, m) for m in SWEEP_METRICS])
    return buf.getvalue()
