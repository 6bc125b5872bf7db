"""Tail percentiles, latency histograms, energy reports and policy deltas."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from .domain import CoreType


class EmptySample(ValueError):
    pass


def percentile(latencies: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value (1-based)."""
    if len(latencies) == 0:
        raise EmptySample("percentile of an empty sample")
    if not 0 <= p <= 100:
        raise ValueError("p must be within [0, 100]")
    ordered = sorted(latencies)
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return ordered[rank - 1]


@dataclass(frozen=True)
class HistogramBin:
    lo_ms: float
    hi_ms: float
    value: float


def histogram(latencies: Sequence[float], bin_ms: float) -> tuple[list[HistogramBin], list[HistogramBin]]:
    """Return (PDF, CDF) tables over fixed-width bins starting at 0 ms.

    PDF values are the fraction of samples per bin; empty bins between the
    first and last occupied bin are kept so the tables plot directly.
    """
    if bin_ms <= 0:
        raise ValueError("bin_ms must be > 0")
    n = len(latencies)
    if n == 0:
        raise EmptySample("histogram of an empty sample")
    counts: dict[int, int] = {}
    for x in latencies:
        b = int(x // bin_ms)
        counts[b] = counts.get(b, 0) + 1
    pdf, cdf = [], []
    running = 0
    for b in range(min(counts), max(counts) + 1):
        c = counts.get(b, 0)
        running += c
        lo, hi = b * bin_ms, (b + 1) * bin_ms
        pdf.append(HistogramBin(lo, hi, c / n))
        cdf.append(HistogramBin(lo, hi, running / n))
    return pdf, cdf


def histogram_csv(table: list[HistogramBin], value_name: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_start_ms", value_name])
    for b in table:
        w.writerow([repr(b.lo_ms), repr(b.value)])
    return buf.getvalue()


@dataclass
class Report:
    request_count: int
    p50_ms: Optional[float] = None
    p90_ms: Optional[float] = None
    p95_ms: Optional[float] = None
    p99_ms: Optional[float] = None
    max_ms: Optional[float] = None
    energy_big_j: float = 0.0
    energy_little_j: float = 0.0
    energy_rest_j: float = 0.0
    energy_total_j: float = 0.0
    migration_count: int = 0
    big_share: float = 0.0
    little_share: float = 0.0
    qps_achieved: float = 0.0
    in_flight: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_text(self) -> str:
        rows = [
            ("requests", f"{self.request_count}"),
            ("in flight", f"{self.in_flight}"),
            ("qps achieved", f"{self.qps_achieved:.3f}"),
        ]
        for name in ("p50", "p90", "p95", "p99", "max"):
            v = getattr(self, f"{name}_ms")
            rows.append((f"{name} latency ms", "-" if v is None else f"{v:.1f}"))
        rows += [
            ("energy big J", f"{self.energy_big_j:.3f}"),
            ("energy little J", f"{self.energy_little_j:.3f}"),
            ("energy rest J", f"{self.energy_rest_j:.3f}"),
            ("energy total J", f"{self.energy_total_j:.3f}"),
            ("migrations", f"{self.migration_count}"),
            ("completed on big", f"{self.big_share:.3f}"),
            ("completed on little", f"{self.little_share:.3f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v:>12}" for k, v in rows)


def latency_report(latencies: Sequence[float], **extra) -> Report:
    if not latencies:
        return Report(request_count=0, **extra)
    return Report(
        request_count=len(latencies),
        p50_ms=percentile(latencies, 50),
        p90_ms=percentile(latencies, 90),
        p95_ms=percentile(latencies, 95),
        p99_ms=percentile(latencies, 99),
        max_ms=max(latencies),
        **extra,
    )


def report_from_trace(trace) -> Report:
    done = trace.completed
    latencies = [r.latency_ms for r in done]
    n_big = sum(1 for r in done if r.final_core_type is CoreType.BIG)
    n = len(done)
    span_s = trace.end_ms / 1000.0
    return latency_report(
        latencies,
        energy_big_j=trace.energy_big_j,
        energy_little_j=trace.energy_little_j,
        energy_rest_j=trace.energy_rest_j,
        energy_total_j=trace.energy_total_j,
        migration_count=len(trace.migrations),
        big_share=n_big / n if n else 0.0,
        little_share=(n - n_big) / n if n else 0.0,
        qps_achieved=n / span_s if span_s > 0 else 0.0,
        in_flight=trace.arrived - n,
    )


@dataclass(frozen=True)
class Comparison:
    tail_reduction_pct: float
    energy_overhead_pct: float
    hurryup_p90_ms: float
    static_p90_ms: float
    hurryup_energy_j: float
    static_energy_j: float


def compare(hurryup: Report, static: Report) -> Comparison:
    """Tail reduction and energy overhead of ``hurryup`` relative to ``static``."""
    h90, s90 = hurryup.p90_ms, static.p90_ms
    he, se = hurryup.energy_total_j, static.energy_total_j
    return Comparison(
        tail_reduction_pct=(s90 - h90) / s90 * 100.0 if s90 else 0.0,
        energy_overhead_pct=(he - se) / se * 100.0 if se else 0.0,
        hurryup_p90_ms=h90,
        static_p90_ms=s90,
        hurryup_energy_j=he,
        static_energy_j=se,
    )
