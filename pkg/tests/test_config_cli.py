import csv
import math
import statistics
import sys
from pathlib import Path

import pytest

from mavland import SCENARIO_DIR, bundled_scenario
from mavland.cli import main
from mavland.config import ConfigError, ScenarioConfig, field_type, load_scenario, parse_scenario, with_value
from mavland.harness import METRICS_COLUMNS, SWEEP_COLUMNS, aggregate, read_metrics, run_batch
from mavland.simulator import TRAJECTORY_COLUMNS

NOMINAL = str(bundled_scenario("nominal"))
NOISELESS = str(bundled_scenario("noiseless"))


def write(tmp_path, text, name="s.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestConfig:
    def test_defaults(self):
        cfg = parse_scenario("")
        assert cfg == ScenarioConfig()
        assert cfg.camera.width == 640 and cfg.camera.focal_px == 554.3
        assert cfg.landing.z_land_threshold == 0.3

    def test_bundled_scenarios_load(self):
        names = sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))
        assert names == ["L1", "L2", "L3", "L4", "L5", "noiseless", "nominal"]
        for name in names:
            assert load_scenario(bundled_scenario(name)).name == name

    @pytest.mark.parametrize(
        "name, length, breadth",
        [("L1", 1.8, 0.5), ("L2", 0.7, 0.8), ("L3", 1.2, 1.0), ("L4", 0.5, 0.5), ("L5", 1.1, 0.8)],
    )
    def test_site_geometry(self, name, length, breadth):
        cfg = load_scenario(bundled_scenario(name))
        assert (cfg.pad.length, cfg.pad.breadth) == (length, breadth)
        assert cfg.landing.expected_aspect == pytest.approx(length / breadth)

    def test_nested_sections(self):
        cfg = parse_scenario(
            "noise: {corner_sigma: 3, occlusion_rect: [0.1, -0.6, 0.6, 0.6]}\n"
            "filter: {max_coast_frames: 7, measurement_noise: [1, 1, 0.01, 2, 2]}\n"
            "landing: {xy_gains: {kp: 0.5, output_limit: 2.0}}\n"
            "seeds: [3, 4]\n"
        )
        assert cfg.noise.corner_sigma == 3.0 and cfg.noise.occlusion_rect == (0.1, -0.6, 0.6, 0.6)
        assert cfg.filter.max_coast_frames == 7
        assert cfg.landing.xy_gains.kp == 0.5
        assert cfg.seed_list() == [3, 4] and cfg.seed_list(2) == [0, 1]

    @pytest.mark.parametrize(
        "text, needle, line, column",
        [
            ("padd: {cx: 1.0}\n", "unknown key 'padd'", 1, 1),
            ("pad:\n  cx: 1.0\n  cz: 2.0\n", "unknown key 'pad.cz'", 3, 3),
            ("padd.cx: 1.0\n", "unknown key 'padd.cx'", 1, 1),
            ("max_time: 1\nmax_time: 2\n", "duplicate key 'max_time'", 2, 1),
            ("noise: {dropout_prob: 2.0}\n", "dropout_prob", 1, 8),
            ("filter: {max_coast_frames: 1.5}\n", "expected int", 1, 28),
            ("pad: [1, 2]\n", "expected a mapping", 1, 6),
            ("pad: {cx: 1\n", "YAML syntax", None, None),
        ],
    )
    def test_errors_carry_location(self, text, needle, line, column):
        with pytest.raises(ConfigError, match=needle.replace(".", r"\.").replace("[", r"\[")) as info:
            parse_scenario(text)
        if line is not None:
            assert (info.value.line, info.value.column) == (line, column)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_scenario(tmp_path / "nope.yaml")

    def test_with_value(self):
        cfg = with_value(ScenarioConfig(), "noise.corner_sigma", 5)
        assert cfg.noise.corner_sigma == 5.0
        assert with_value(cfg, "filter.max_coast_frames", 4.0).filter.max_coast_frames == 4
        with pytest.raises(ValueError):
            with_value(cfg, "filter.max_coast_frames", 4.5)
        with pytest.raises(KeyError):
            with_value(cfg, "noise.nope", 1)
        assert field_type("landing.k_alt") is float


class TestRun:
    def test_noiseless_single_seed(self, tmp_path, capsys):
        assert main(["run", NOISELESS, "--seeds", "1", "--out", str(tmp_path)]) == 0
        rows = read_metrics(tmp_path / "metrics.csv")
        assert len(rows) == 1 and rows[0]["success"] == "true"
        assert float(rows[0]["final_error_m"]) < 0.01
        assert "success_rate=1.000" in capsys.readouterr().out

    def test_output_schema(self, tmp_path):
        assert main(["run", NOMINAL, "--seeds", "2", "--out", str(tmp_path)]) == 0
        with open(tmp_path / "metrics.csv") as fh:
            assert next(csv.reader(fh)) == list(METRICS_COLUMNS)
        for seed in (0, 1):
            with open(tmp_path / f"trajectory_seed{seed}.csv") as fh:
                rows = list(csv.reader(fh))
            assert rows[0] == list(TRAJECTORY_COLUMNS)
            assert rows[1][0] == "0.0" and rows[-1][5] == "LANDED"

    def test_reproducible_and_parallel(self, tmp_path):
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        assert main(["run", NOMINAL, "--seeds", "3", "--out", str(a)]) == 0
        assert main(["run", NOMINAL, "--seeds", "3", "--out", str(b)]) == 0
        assert main(["run", NOMINAL, "--seeds", "3", "--jobs", "2", "--out", str(c)]) == 0
        for name in ("metrics.csv", "trajectory_seed2.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()

    def test_aggregate_matches_recompute(self, nominal):
        results = run_batch(nominal, [0, 1, 2, 3])
        agg = aggregate(results)
        errors = [r.final_error_m for r in results if r.success]
        times = [r.landing_time_s for r in results if r.success]
        assert agg.success_rate == 1.0
        assert agg.mean_error_m == pytest.approx(sum(errors) / len(errors), rel=1e-12)
        assert agg.std_error_m == pytest.approx(
            math.sqrt(sum((e - agg.mean_error_m) ** 2 for e in errors) / (len(errors) - 1)), rel=1e-9
        )
        assert agg.median_error_m == pytest.approx(sorted(errors)[1] / 2 + sorted(errors)[2] / 2)
        assert agg.mean_time_s == pytest.approx(sum(times) / len(times), rel=1e-12)

    def test_csv_recompute(self, tmp_path, capsys):
        assert main(["run", NOMINAL, "--seeds", "4", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        rows = read_metrics(tmp_path / "metrics.csv")
        errs = [float(r["final_error_m"]) for r in rows if r["success"] == "true"]
        assert f"mean={statistics.fmean(errs):.4f}" in out
        assert f"std={statistics.stdev(errs):.4f}" in out

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        path = write(tmp_path, "padd:\n  cx: 1.0\n")
        assert main(["run", path, "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "padd" in err and "line 1" in err

    @pytest.mark.parametrize("flags", [["--seeds", "0"], ["--detector", "carrier-pigeon"], ["--deadline", "0"]])
    def test_usage_errors_exit_2(self, tmp_path, flags):
        assert main(["run", NOMINAL, "--out", str(tmp_path), *flags]) == 2

    def test_failing_detector_exits_3(self, tmp_path, capsys):
        cmd = f"exec:{sys.executable} -c pass"
        assert main(["run", NOISELESS, "--seeds", "1", "--detector", cmd, "--out", str(tmp_path)]) == 3
        assert "detector" in capsys.readouterr().err

    def test_missing_detector_binary_exits_3(self, tmp_path):
        assert main(["run", NOISELESS, "--detector", "exec:/no/such/binary", "--out", str(tmp_path)]) == 3

    def test_unreachable_tcp_detector_exits_3(self, tmp_path):
        assert main(["run", NOISELESS, "--detector", "tcp:127.0.0.1:1", "--out", str(tmp_path)]) == 3


class TestSweep:
    def sweep_rows(self, tmp_path, *args):
        assert main(["sweep", NOMINAL, *args, "--out", str(tmp_path)]) == 0
        with open(tmp_path / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == list(SWEEP_COLUMNS)
        return rows

    def test_sigma_trend(self, tmp_path):
        rows = self.sweep_rows(tmp_path, "--param", "noise.corner_sigma", "--values", "0,2,5,10", "--seeds", "10")
        assert [float(r["value"]) for r in rows] == [0, 2, 5, 10]
        errors = [float(r["mean_error_m"]) for r in rows]
        assert all(b >= a for a, b in zip(errors, errors[1:]))

    def test_dropout_trend(self, tmp_path):
        rows = self.sweep_rows(tmp_path, "--param", "noise.dropout_prob", "--values", "0,0.5", "--seeds", "5")
        assert float(rows[0]["success_rate"]) >= float(rows[1]["success_rate"])

    @pytest.mark.parametrize(
        "args",
        [
            ["--param", "noise.corner_sigma", "--values", ""],
            ["--param", "noise.corner_sigma", "--values", ","],
            ["--param", "noise.colour", "--values", "1"],
            ["--param", "name", "--values", "1"],
            ["--param", "noise.corner_sigma", "--values", "a,b"],
            ["--param", "noise.corner_sigma", "--values", "-1"],
        ],
    )
    def test_bad_sweeps_exit_2(self, tmp_path, args):
        assert main(["sweep", NOMINAL, *args, "--out", str(tmp_path)]) == 2
        assert not Path(tmp_path / "sweep.csv").exists()
