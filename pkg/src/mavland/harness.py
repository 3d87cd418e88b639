"""Batch episodes, CSV output and aggregate metrics."""

from __future__ import annotations

import csv
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Iterable, Optional, Sequence

from mavland.bridge import open_detector
from mavland.config import ScenarioConfig, with_value
from mavland.simulator import TRAJECTORY_COLUMNS, EpisodeResult, run_episode

METRICS_COLUMNS = ("seed", "success", "final_error_m", "landing_time_s", "mean_descent_speed_mps")
SWEEP_COLUMNS = (
    "param", "value", "episodes", "success_rate",
    "mean_error_m", "std_error_m", "median_error_m",
    "mean_time_s", "std_time_s", "mean_descent_speed_mps",
)


class BridgeFailure(RuntimeError):
    """An external detector could not be started or went away mid-episode."""


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def run_one(
    scenario: ScenarioConfig,
    seed: int,
    detector: str = "synthetic",
    config_path: Optional[str] = None,
    deadline: Optional[float] = None,
) -> EpisodeResult:
    """Run one episode; ``deadline`` defaults to one frame period."""
    source = None
    if detector != "synthetic":
        if deadline is None:
            deadline = scenario.camera.frame.period
        try:
            source = open_detector(detector, deadline=deadline, config=config_path, seed=seed)
        except (OSError, ValueError, KeyError) as exc:
            raise BridgeFailure(f"cannot start detector {detector!r}: {exc}") from exc
    return run_episode(scenario, seed=seed, detector=source)


def run_batch(
    scenario: ScenarioConfig,
    seeds: Sequence[int],
    jobs: int = 1,
    detector: str = "synthetic",
    config_path: Optional[str] = None,
    deadline: Optional[float] = None,
) -> list[EpisodeResult]:
    """Run one episode per seed; results come back in seed order."""
    fn = partial(run_one, scenario, detector=detector, config_path=config_path, deadline=deadline)
    if jobs <= 1 or len(seeds) <= 1:
        return [fn(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, seeds))


@dataclass(frozen=True)
class Aggregate:
    episodes: int
    successes: int
    mean_error_m: float
    std_error_m: float
    median_error_m: float
    mean_time_s: float
    std_time_s: float
    mean_descent_speed_mps: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else math.nan

    def summary(self) -> str:
        return (
            f"episodes={self.episodes} success_rate={self.success_rate:.3f} "
            f"error_m mean={self.mean_error_m:.4f} std={self.std_error_m:.4f} "
            f"median={self.median_error_m:.4f} "
            f"time_s mean={self.mean_time_s:.2f} std={self.std_time_s:.2f} "
            f"descent_mps mean={self.mean_descent_speed_mps:.3f}"
        )


def _mean(xs):
    return statistics.fmean(xs) if xs else math.nan


def _std(xs):
    return statistics.stdev(xs) if len(xs) > 1 else (0.0 if xs else math.nan)


def aggregate(results: Iterable[EpisodeResult]) -> Aggregate:
    """Statistics over successful episodes; std is the sample std-dev."""
    results = list(results)
    ok = [r for r in results if r.success]
    errors = [r.final_error_m for r in ok]
    times = [r.landing_time_s for r in ok]
    return Aggregate(
        episodes=len(results),
        successes=len(ok),
        mean_error_m=_mean(errors),
        std_error_m=_std(errors),
        median_error_m=statistics.median(errors) if errors else math.nan,
        mean_time_s=_mean(times),
        std_time_s=_std(times),
        mean_descent_speed_mps=_mean([r.mean_descent_speed_mps for r in ok]),
    )


def write_metrics(results: Iterable[EpisodeResult], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in results:
            w.writerow(
                _fmt(v)
                for v in (r.seed, r.success, r.final_error_m, r.landing_time_s, r.mean_descent_speed_mps)
            )


def read_metrics(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_trajectory(result: EpisodeResult, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for row in result.trajectory:
            w.writerow(_fmt(v) for v in row)


def trajectory_name(seed: int) -> str:
    return f"trajectory_seed{seed}.csv"


def write_run(results: Sequence[EpisodeResult], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(results, out_dir / "metrics.csv")
    for r in results:
        write_trajectory(r, out_dir / trajectory_name(r.seed))


def sweep(
    scenario: ScenarioConfig,
    key: str,
    values: Sequence[float],
    seeds: Sequence[int],
    jobs: int = 1,
) -> list[tuple]:
    """One aggregate row per value of the dotted numeric parameter ``key``."""
    if not values:
        raise ValueError("sweep needs at least one value")
    variants = [with_value(scenario, key, v) for v in values]
    rows = []
    for value, variant in zip(values, variants):
        agg = aggregate(run_batch(variant, seeds, jobs=jobs))
        rows.append(
            (key, value, agg.episodes, agg.success_rate, agg.mean_error_m, agg.std_error_m,
             agg.median_error_m, agg.mean_time_s, agg.std_time_s, agg.mean_descent_speed_mps)
        )
    return rows


def write_sweep(rows: Sequence[tuple], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow(_fmt(v) for v in row)
