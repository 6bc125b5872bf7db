"""Open-loop Poisson request generator and workload CSV replay."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import Fixed, KeywordDist, Uniform, Zipf


@dataclass(frozen=True)
class Arrival:
    request_id: int
    arrival_ms: float
    keywords: int


def sample_keywords(dist: KeywordDist, n: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(dist, Fixed):
        return np.full(n, dist.k, dtype=np.int64)
    if isinstance(dist, Uniform):
        return rng.integers(dist.lo, dist.hi + 1, size=n)
    if isinstance(dist, Zipf):
        ks = np.arange(1, dist.max_k + 1)
        weights = ks.astype(float) ** -dist.s
        return rng.choice(ks, size=n, p=weights / weights.sum())
    raise TypeError(f"unknown keyword distribution {dist!r}")


def poisson_arrival_times(qps: float, duration_s: float, rng: np.random.Generator) -> np.ndarray:
    """Arrival instants in ms of a rate-``qps`` Poisson process on [0, duration)."""
    if qps <= 0:
        raise ValueError("qps must be > 0")
    mean_gap_ms = 1000.0 / qps
    horizon_ms = duration_s * 1000.0
    expected = qps * duration_s
    block = int(expected + 6.0 * np.sqrt(expected) + 16)
    times = np.cumsum(rng.exponential(mean_gap_ms, size=block))
    while times[-1] < horizon_ms:
        more = times[-1] + np.cumsum(rng.exponential(mean_gap_ms, size=block))
        times = np.concatenate([times, more])
    return times[times < horizon_ms]


def generate(qps: float, duration_s: float, dist: KeywordDist, rng: np.random.Generator) -> list[Arrival]:
    times = poisson_arrival_times(qps, duration_s, rng)
    keywords = sample_keywords(dist, len(times), rng)
    return [Arrival(i, float(t), int(k)) for i, (t, k) in enumerate(zip(times, keywords))]


def write_workload_csv(arrivals: list[Arrival], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["request_id", "arrival_ms", "keywords"])
        for a in arrivals:
            w.writerow([a.request_id, repr(a.arrival_ms), a.keywords])


def read_workload_csv(path: str | Path) -> list[Arrival]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    arrivals = [Arrival(int(r["request_id"]), float(r["arrival_ms"]), int(r["keywords"])) for r in rows]
    arrivals.sort(key=lambda a: (a.arrival_ms, a.request_id))
    return arrivals
