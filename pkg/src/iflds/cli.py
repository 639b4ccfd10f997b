"""Command-line entry points.

Every subcommand takes a JSON spec file, an output directory and ``--seed``
(which overrides the spec's seed). Exit codes: 0 success, 2 invalid spec or
inputs, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bench import EXPERIMENTS, ExperimentSpec, SpecError, write_outputs, write_rows
from .detect import detect_series, fma_threshold, perf_bounds, perf_model, write_report, write_statistic_csv
from .io import load_json, model_to_config, read_series, write_series_bin, write_series_csv
from .learn import Hyper, learn, reconstruction_error
from .learn.learner import log_joint
from .learn.pgas import ParticleDegeneracy
from .learn.slice import SliceError
from .model import (
    CommScenario,
    ModelError,
    ObservationSeries,
    SoiProfile,
    constant_waveform,
    inject_soi,
    simulate_comm_scenario,
    simulate_flds,
)
from .randdist import DistributionError, RngHandle

EXIT_OK, EXIT_SPEC, EXIT_NUMERIC = 0, 2, 3

NUMERICAL_ERRORS = (ArithmeticError, np.linalg.LinAlgError, DistributionError, ParticleDegeneracy, SliceError)


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def write_manifest(out: Path, command: str, spec: ExperimentSpec, wall: float, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "spec_hash": spec.digest(),
        "seed": spec.seed,
        "git_describe": _git_describe(),
        "package_version": __version__,
        "wall_time_s": round(wall, 3),
        "outputs": sorted(outputs),
        "spec": spec.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_spec(path: str, seed: int | None) -> tuple[ExperimentSpec, Path]:
    data = load_json(path)
    if seed is not None:
        data["seed"] = seed
    return ExperimentSpec.from_dict(data), Path(path).resolve().parent


def _input_series(spec: ExperimentSpec, base: Path, rng: RngHandle, with_soi: bool) -> tuple[ObservationSeries, dict]:
    """The spec's series file if given, else a fresh simulation of the spec's scenario."""
    if spec.series is not None:
        path = Path(spec.series)
        if not path.is_absolute():
            path = base / path
        if not path.is_file():
            raise FileNotFoundError(f"series file not found: {path}")
        return read_series(path), {"source": str(path)}
    if spec.scenario == "comm-interference":
        try:
            cfg = CommScenario(**{**spec.comm, "length": spec.length})
        except TypeError as exc:
            raise SpecError(f"bad comm settings: {exc}") from exc
        series, mask, _ = simulate_comm_scenario(cfg, rng)
        return series, {"source": "comm-interference", "pulse_starts": (cfg.pulse_starts() + 1).tolist(), "pulse_width": cfg.width, "soi_samples": int(mask.sum())}
    model = spec.build_model()
    series, _ = simulate_flds(model, spec.length, rng, "zero")
    truth: dict = {"source": "flds-synthetic", "model": model_to_config(model)}
    if with_soi and spec.amplitudes:
        soi = SoiProfile(spec.soi_arrival, spec.window, constant_waveform(float(spec.amplitudes[0])))
        series = inject_soi(series, soi)
        truth.update(arrival=soi.arrival, duration=soi.duration, amplitude=float(spec.amplitudes[0]))
    return series, truth


def cmd_simulate(spec: ExperimentSpec, base: Path, out: Path) -> list[str]:
    series, truth = _input_series(spec, base, RngHandle(spec.seed), with_soi=True)
    write_series_csv(series, out / "series.csv")
    write_series_bin(series, out / "series.bin")
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return ["series.csv", "series.bin", "truth.json"]


@dataclass
class LearnRow:
    M_hat: int
    best_chains: int
    RE: float
    best_iteration: int
    log_joint: float


def cmd_learn(spec: ExperimentSpec, base: Path, out: Path) -> list[str]:
    root = RngHandle(spec.seed)
    obs, _ = _input_series(spec, base, root.child(0), with_soi=False)
    prior_m = spec.prior_sources or spec.build_model().M
    hyper = Hyper.from_data(obs, prior_m, sticky=spec.sticky)
    res = learn(obs, hyper, spec.iterations, spec.particles, root.child(1), spec.proposal, init_chains=spec.init_chains)
    res.write_trace(out / "trace.json")
    written = ["trace.json", "results.csv"]
    if res.best.active().any():
        (out / "model.json").write_text(json.dumps(model_to_config(res.best.to_model()), indent=2) + "\n")
        written.append("model.json")
    row = LearnRow(res.M_hat, int(res.best.active().sum()), reconstruction_error(obs, res.best), res.best_iteration, log_joint(res.best, obs.samples, spec.sticky))
    write_rows([row], out / "results.csv")
    return written


def cmd_detect(spec: ExperimentSpec, base: Path, out: Path) -> list[str]:
    if not spec.amplitudes or len(spec.amplitudes) != 1:
        raise SpecError("detect needs exactly one SOI amplitude in 'amplitudes'")
    model = spec.build_model()
    obs, _ = _input_series(spec, base, RngHandle(spec.seed), with_soi=True)
    y = np.full(2, float(spec.amplitudes[0]))
    perf = None
    if spec.rule == "fma" and np.any(y):
        perf = perf_model(model, y, spec.window, spec.fa_interval, spec.target_fa)
    if spec.threshold is not None:
        h = float(spec.threshold)
    elif perf is not None:
        h = fma_threshold(perf)
    else:
        raise SpecError("give 'threshold' for cusum or shewhart rules (or a zero amplitude)")
    report, L, W = detect_series(model, obs, y, h, spec.window, spec.rule)
    if perf is not None:
        report.fa_bound, report.md_bound = perf_bounds(perf, h)
    write_report(report, out / "report.json")
    write_statistic_csv(L, W, out / "statistic.csv")
    return ["report.json", "statistic.csv"]


def _bench(name: str):
    def run(spec: ExperimentSpec, base: Path, out: Path) -> list[str]:
        if name in ("bench-rpl", "bench-comm"):
            res = EXPERIMENTS[name](spec, progress=lambda msg: print(msg, file=sys.stderr))
        else:
            res = EXPERIMENTS[name](spec)
        return write_outputs(out, res)

    return run


COMMANDS = {
    "simulate": (cmd_simulate, "simulate a background series (plus optional SOI)"),
    "learn": (cmd_learn, "fit the nonparametric background model to a series"),
    "detect": (cmd_detect, "run a stopping rule over one series"),
    "bench-rpl": (_bench("bench-rpl"), "source-number recovery with stickiness on and off"),
    "bench-tsd": (_bench("bench-tsd"), "missed detection and false alarm against SOI amplitude"),
    "bench-window": (_bench("bench-window"), "window-length study with statistic densities"),
    "bench-comm": (_bench("bench-comm"), "pulsed SOI under communication interference"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iflds", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("spec", help="JSON spec file")
        p.add_argument("out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the spec seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        spec, base = load_spec(args.spec, args.seed)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    out = Path(args.out)
    start = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        outputs = func(spec, base, out)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, SpecError, ModelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    write_manifest(out, args.command, spec, time.perf_counter() - start, outputs)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
