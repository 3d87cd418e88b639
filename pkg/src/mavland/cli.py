"""Command-line entry point.

Exit codes: 0 when every requested episode ran (landing success is data, not
an error), 2 for configuration or usage errors, 3 when an external detector
failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from mavland.bridge import parse_detector_spec
from mavland.config import ConfigError, ScenarioConfig, field_type, load_scenario
from mavland.harness import (
    BridgeFailure,
    aggregate,
    run_batch,
    sweep,
    write_run,
    write_sweep,
)

EXIT_OK, EXIT_CONFIG, EXIT_BRIDGE = 0, 2, 3


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mavland", description="Simulated MAV landing harness.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one or more seeded episodes")
    run.add_argument("config")
    run.add_argument("--seeds", type=int, help="number of consecutive seeds starting at noise.seed")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument(
        "--detector",
        default="synthetic",
        help="synthetic | exec:<cmd> | tcp:<host>:<port>; {config} and {seed} are substituted in exec commands",
    )
    run.add_argument(
        "--deadline", type=float, help="seconds to wait for each external detection (default: one frame period)"
    )
    run.add_argument("--out", default="out")

    sw = sub.add_parser("sweep", help="aggregate batches over values of one parameter")
    sw.add_argument("config")
    sw.add_argument("--param", required=True, help="dotted key, e.g. noise.corner_sigma")
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--seeds", type=int)
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", default="out")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _seeds(cfg: ScenarioConfig, count) -> list[int]:
    if count is not None and count < 1:
        raise UsageError("--seeds must be >= 1")
    return cfg.seed_list(count)


def _cmd_run(args) -> int:
    cfg = load_scenario(args.config)
    parse_detector_spec(args.detector)
    seeds = _seeds(cfg, args.seeds)
    if args.deadline is not None and not args.deadline > 0:
        raise UsageError("--deadline must be > 0")
    config_path = str(Path(args.config).resolve())
    try:
        results = run_batch(
            cfg, seeds, jobs=args.jobs, detector=args.detector, config_path=config_path,
            deadline=args.deadline,
        )
    except BridgeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BRIDGE
    out = Path(args.out)
    write_run(results, out)
    print(f"{cfg.name}: {aggregate(results).summary()}")
    print(f"wrote {out / 'metrics.csv'}")
    if any(r.detector_failed for r in results):
        print("error: external detector stream ended mid-episode", file=sys.stderr)
        return EXIT_BRIDGE
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_scenario(args.config)
    try:
        tp = field_type(args.param)
    except KeyError:
        raise UsageError(f"unknown parameter '{args.param}'") from None
    if tp not in (int, float):
        raise UsageError(f"parameter '{args.param}' is not numeric")
    raw = [v for v in args.values.split(",") if v.strip()]
    if not raw:
        raise UsageError("--values needs at least one value")
    try:
        values = [float(v) for v in raw]
    except ValueError:
        raise UsageError(f"--values must be numbers, got {args.values!r}") from None
    rows = sweep(cfg, args.param, values, _seeds(cfg, args.seeds), jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep(rows, out / "sweep.csv")
    for row in rows:
        print(f"{row[0]}={row[1]:g}: success_rate={row[3]:.3f} mean_error_m={row[4]:.4f} mean_time_s={row[7]:.2f}")
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_sweep(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
