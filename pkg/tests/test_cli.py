import csv
import json
import subprocess
import sys

import pytest

from iflds.cli import EXIT_OK, EXIT_SPEC, build_parser, main
from iflds.io import read_series


def write_spec(tmp_path, **fields):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(fields))
    return path


SMALL = dict(model={"benchmark_sources": 2}, length=300, window=20, fa_interval=100, amplitudes=[0.5])


def test_simulate_writes_series_and_manifest(tmp_path):
    spec = write_spec(tmp_path, **SMALL)
    out = tmp_path / "sim"
    assert main(["simulate", str(spec), str(out), "--seed", "4"]) == EXIT_OK
    series = read_series(out / "series.csv")
    assert len(series) == 300
    assert read_series(out / "series.bin").samples.tobytes() == series.samples.tobytes()
    truth = json.loads((out / "truth.json").read_text())
    assert truth["arrival"] == 150 and truth["amplitude"] == 0.5
    manifest = json.loads((out / "manifest.json").read_text())
    for key in ("command", "spec_hash", "seed", "git_describe", "package_version", "wall_time_s", "outputs"):
        assert key in manifest
    assert manifest["seed"] == 4 and manifest["command"] == "simulate"
    assert manifest["outputs"] == ["series.bin", "series.csv", "truth.json"]


def test_missing_spec_exits_2_naming_path(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["simulate", str(missing), str(tmp_path / "o")]) == EXIT_SPEC
    assert str(missing) in capsys.readouterr().err


@pytest.mark.parametrize("content", ['{"trials": -1}', '{"unknown": 1}', "[1, 2]", "{not json"])
def test_bad_spec_exits_2(tmp_path, content, capsys):
    path = tmp_path / "spec.json"
    path.write_text(content)
    assert main(["bench-tsd", str(path), str(tmp_path / "o")]) == EXIT_SPEC
    assert "error" in capsys.readouterr().err


def test_detect_at_median_threshold_fires_half_the_time(tmp_path):
    # w=1 and a single-step false-alarm interval at target 0.5 put the threshold at the H0 median
    spec = write_spec(
        tmp_path, model={"benchmark_sources": 4}, length=4000, window=1, fa_interval=1,
        target_fa=0.5, amplitudes=[0.3], arrival=4000,
    )
    out = tmp_path / "det"
    assert main(["detect", str(spec), str(out), "--seed", "1"]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert abs(report["alarm_rate"] - 0.5) <= 0.15
    assert (out / "statistic.csv").read_text().count("\n") == 4001


def test_detect_needs_threshold_for_cusum(tmp_path):
    spec = write_spec(tmp_path, **SMALL, rule="cusum")
    assert main(["detect", str(spec), str(tmp_path / "o")]) == EXIT_SPEC


def test_detect_reads_series_file(tmp_path):
    sim = tmp_path / "sim"
    main(["simulate", str(write_spec(tmp_path, **SMALL)), str(sim)])
    spec = tmp_path / "det.json"
    spec.write_text(json.dumps({**SMALL, "series": "sim/series.csv", "threshold": 1e6}))
    out = tmp_path / "det"
    assert main(["detect", str(spec), str(out)]) == EXIT_OK
    assert json.loads((out / "report.json").read_text())["alarm_time"] is None
    spec.write_text(json.dumps({**SMALL, "series": "sim/missing.csv"}))
    assert main(["detect", str(spec), str(out)]) == EXIT_SPEC


def test_learn_small(tmp_path):
    spec = write_spec(tmp_path, model={"benchmark_sources": 1}, length=60, iterations=3, particles=5)
    out = tmp_path / "learn"
    assert main(["learn", str(spec), str(out)]) == EXIT_OK
    with open(out / "results.csv") as fh:
        row = next(csv.DictReader(fh))
    assert int(row["M_hat"]) >= 0 and float(row["RE"]) >= 0
    assert "trace.json" in json.loads((out / "manifest.json").read_text())["outputs"]


def test_bench_tsd_rerun_is_byte_identical(tmp_path):
    spec = write_spec(
        tmp_path, model={"benchmark_sources": 2}, amplitudes=[0.4], window=20, windows=[20], fa_interval=100,
        length=300, training_length=300, trials=30, em_iterations=3,
    )
    for name in ("a", "b"):
        assert main(["bench-tsd", str(spec), str(tmp_path / name), "--seed", "9"]) == EXIT_OK
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_bench_window_and_rpl_small(tmp_path):
    spec = write_spec(
        tmp_path, model={"benchmark_sources": 1}, amplitudes=[0.4], window=10, windows=[5, 10], detectors=["flds-fma"],
        fa_interval=50, length=200, trials=10, bins=5, iterations=2, particles=4, true_sources=[1],
    )
    assert main(["bench-window", str(spec), str(tmp_path / "w")]) == EXIT_OK
    assert (tmp_path / "w" / "densities.csv").exists()
    assert main(["bench-rpl", str(spec), str(tmp_path / "r")]) == EXIT_OK
    assert (tmp_path / "r" / "runs.csv").read_text().count("\n") == 1 + 2 * 10


def test_parser_lists_all_commands():
    parser = build_parser()
    for cmd in ("simulate", "learn", "detect", "bench-rpl", "bench-tsd", "bench-window", "bench-comm"):
        assert parser.parse_args([cmd, "s.json", "o"]).command == cmd


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "iflds.cli", "simulate", str(tmp_path / "x.json"), str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2
