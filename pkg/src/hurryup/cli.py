"""Command-line experiment runner.

    hurryup run   [--config F] [--qps Q] [--policy hurryup|static] [--compare] ...
    hurryup sweep [--config F] --axis qps=5,10,20 --axis policy=hurryup,static ...
    hurryup live  --pipe PATH [--config F] [--sampling-ms N] [--threshold-ms N]
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional

from .domain import (
    CONFIG_KEYS,
    ConfigError,
    ConfigInvalid,
    SimConfig,
    dump_config,
    load_config,
    validate_config,
    with_overrides,
)
from .experiments import parse_axis, run_pair, run_sweep, sweep_csv
from .metrics import histogram, histogram_csv, report_from_trace
from .simengine import Trace, run
from .statsproto import StatsChannel
from .workload import read_workload_csv, write_workload_csv

log = logging.getLogger("hurryup")

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

# CLI flag dest -> config key
_FLAG_KEYS = {
    "qps": "qps",
    "policy": "policy",
    "seed": "rng_seed",
    "duration_s": "duration_s",
    "sampling_ms": "sampling_time_ms",
    "threshold_ms": "migration_threshold_ms",
}


def _default_out() -> str:
    return os.environ.get("HURRYUP_OUT", "hurryup-out")


def build_config(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    overrides = {key: getattr(args, dest) for dest, key in _FLAG_KEYS.items()
                 if getattr(args, dest, None) is not None}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        overrides[key] = value
    cfg = with_overrides(cfg, {k: str(v) for k, v in overrides.items()})
    problems = validate_config(cfg)
    if problems:
        raise ConfigInvalid(problems)
    return cfg


def write_run_outputs(trace: Trace, out: Path, bin_ms: float) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    trace.write_csv(out)
    report = report_from_trace(trace)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.txt").write_text(report.to_text() + "\n")
    (out / "config.txt").write_text(dump_config(trace.config))
    latencies = [r.latency_ms for r in trace.completed]
    if latencies:
        pdf, cdf = histogram(latencies, bin_ms)
        (out / "latency_pdf.csv").write_text(histogram_csv(pdf, "density"))
        (out / "latency_cdf.csv").write_text(histogram_csv(cdf, "cumulative"))
    return asdict(report)


def cmd_run(args) -> int:
    cfg = build_config(args)
    out = Path(args.out or _default_out())
    out.mkdir(parents=True, exist_ok=True)
    arrivals = read_workload_csv(args.workload) if args.workload else None

    if args.compare:
        pair = run_pair(cfg, arrivals)
        write_workload_csv(_arrivals_of(pair.hurryup), out / "workload.csv")
        write_run_outputs(pair.hurryup, out / "hurryup", args.bin_ms)
        write_run_outputs(pair.static, out / "static", args.bin_ms)
        (out / "comparison.json").write_text(json.dumps(asdict(pair.comparison), indent=2) + "\n")
        print("hurryup\n" + pair.hurryup_report.to_text())
        print("\nstatic\n" + pair.static_report.to_text())
        c = pair.comparison
        print(f"\ntail reduction {c.tail_reduction_pct:.1f}%  energy overhead {c.energy_overhead_pct:.2f}%")
        return EXIT_OK

    trace = run(cfg, arrivals)
    write_workload_csv(_arrivals_of(trace), out / "workload.csv")
    write_run_outputs(trace, out, args.bin_ms)
    print(report_from_trace(trace).to_text())
    print(f"trace digest {trace.digest()}")
    return EXIT_OK


def _arrivals_of(trace: Trace):
    from .workload import Arrival
    return [Arrival(r.request_id, r.arrival_ms, r.keywords) for r in trace.requests]


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    if not args.axis:
        raise ConfigError("sweep needs at least one --axis name=v1,v2,...")
    axes: dict[str, list] = {}
    for spec in args.axis:
        name, values = parse_axis(spec)
        axes[name] = values
    results = run_sweep(cfg, axes, jobs=args.jobs)
    out = Path(args.out or _default_out())
    out.mkdir(parents=True, exist_ok=True)
    text = sweep_csv(results)
    (out / "sweep.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_live(args) -> int:
    from .live import LoggingBackend, SchedAffinityBackend, run_live

    cfg = build_config(args)
    backend = SchedAffinityBackend() if args.pin else LoggingBackend()
    channel = StatsChannel.open(args.pipe)
    try:
        session = run_live(channel, cfg.topology, cfg.mapper, backend)
    finally:
        channel.close()
    report = session.report()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "live_report.json").write_text(report.to_json() + "\n")
    print(report.to_text())
    print(f"windows {session.windows}  malformed lines {len(channel.malformed)}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--qps", type=float)
    p.add_argument("--policy", choices=["hurryup", "static"])
    p.add_argument("--seed", type=int)
    p.add_argument("--duration-s", dest="duration_s", type=float)
    p.add_argument("--sampling-ms", dest="sampling_ms", type=float)
    p.add_argument("--threshold-ms", dest="threshold_ms", type=float)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help=f"override any config key ({', '.join(CONFIG_KEYS)})")
    p.add_argument("--out", help="output directory (default: $HURRYUP_OUT or ./hurryup-out)")
    p.add_argument("-v", "--verbose", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hurryup", description=__doc__.splitlines()[0] if __doc__ else None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one configuration")
    _add_common(p)
    p.add_argument("--compare", action="store_true", help="run both policies on the same workload")
    p.add_argument("--workload", help="replay arrivals from a workload CSV")
    p.add_argument("--bin-ms", dest="bin_ms", type=float, default=50.0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="Cartesian parameter sweep")
    _add_common(p)
    p.add_argument("--axis", action="append",
                   help="name=v1,v2,... with name in qps, migration_threshold_ms, sampling_time_ms, policy, seed")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("live", help="map threads of a live process from its stats pipe")
    _add_common(p)
    p.add_argument("--pipe", required=True, help="FIFO or file carrying TID;RID;TIMESTAMP lines")
    p.add_argument("--pin", action="store_true", help="apply plans with sched_setaffinity")
    p.set_defaults(func=cmd_live)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print("invalid config:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
