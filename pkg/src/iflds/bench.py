"""Seeded Monte Carlo experiments at desk scale.

Experiments:

* source-number recovery of the learner on synthetic data;
* missed-detection / false-alarm rates against SOI amplitude;
* the window-length study, with statistic densities;
* the pulsed-SOI-over-communications scenario.

The per-sample statistic is linear in the observations: the predictive mean
of every background filter used here is a linear function of past samples.
So each trial's background is filtered once, and the SOI contribution is a
deterministic offset computed by filtering the SOI alone.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, astuple, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .baselines import GaussianBackground, fit_lds_em
from .detect import fma_threshold, perf_bounds, perf_model, statistic_path
from .fkff import gain_schedule, batch_predictive_means
from .io import model_from_config
from .learn import Hyper, learn, reconstruction_error
from .model import (
    CommScenario,
    FldsModel,
    ObservationSeries,
    amplitude_for_sinr,
    comm_soi_amplitude,
    empirical_sinr_db,
    simulate_comm_scenario,
)
from .randdist import RngHandle, psd_sqrt

SPEC_VERSION = 1
SCENARIOS = ("flds-synthetic", "comm-interference")
DETECTORS = ("flds-fma", "lds-fma", "gaussian-fma", "flds-cusum", "flds-shewhart")
_RULE = {"flds-fma": "fma", "lds-fma": "fma", "gaussian-fma": "fma", "flds-cusum": "cusum", "flds-shewhart": "shewhart"}
_CHUNK = 200  # trials simulated together

# stream ids under the spec seed
_TRAIN, _CALIB, _EVAL, _LEARN = 1, 2, 3, 4


class SpecError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    """One experiment description; loaded from JSON, unknown keys rejected."""

    spec_version: int = SPEC_VERSION
    scenario: str = "flds-synthetic"
    model: dict = field(default_factory=lambda: {"benchmark_sources": 4})
    amplitudes: list[float] | None = None
    sinr_db: list[float] | None = None
    window: int = 200
    windows: list[int] = field(default_factory=lambda: [10, 100, 200])
    fa_interval: int = 1000
    target_fa: float = 0.01
    trials: int = 1000
    detectors: list[str] = field(default_factory=lambda: ["flds-fma", "gaussian-fma"])
    calibrate: list[str] | None = None  # default: every detector except flds-fma
    seed: int = 0
    length: int = 2000
    arrival: int | None = None  # 1-based SOI start; default mid-sequence
    training_length: int = 2000
    em_iterations: int = 50
    calibration_iterations: int = 40
    calibration_tolerance: float = 0.1
    bins: int = 60
    # learner
    true_sources: list[int] = field(default_factory=lambda: [2])
    iterations: int = 300
    particles: int = 20
    init_chains: int = 1
    proposal: str = "full"
    sticky: bool = True
    prior_sources: int | None = None
    # comm scenario overrides (fields of CommScenario) and evaluation record length
    comm: dict = field(default_factory=dict)
    eval_length: int = 51200
    # single-series commands
    series: str | None = None
    rule: str = "fma"
    threshold: float | None = None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentSpec":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise SpecError(f"unknown spec keys: {', '.join(unknown)}")
        try:
            spec = cls(**data)
        except TypeError as exc:
            raise SpecError(str(exc)) from exc
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.spec_version != SPEC_VERSION:
            raise SpecError(f"unsupported spec_version {self.spec_version}; expected {SPEC_VERSION}")
        if self.scenario not in SCENARIOS:
            raise SpecError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise SpecError(f"trials must be a positive integer, got {self.trials!r}")
        bad = [d for d in self.detectors if d not in DETECTORS]
        if bad or not self.detectors:
            raise SpecError(f"detectors must be a non-empty subset of {DETECTORS}, got {self.detectors}")
        if self.calibrate is not None and any(d not in DETECTORS for d in self.calibrate):
            raise SpecError(f"calibrate entries must come from {DETECTORS}")
        if self.amplitudes is not None and self.sinr_db is not None:
            raise SpecError("give either amplitudes or sinr_db, not both")
        for name in ("amplitudes", "sinr_db"):
            grid = getattr(self, name)
            if grid is not None and (len(grid) == 0 or not all(math.isfinite(float(v)) for v in grid)):
                raise SpecError(f"{name} must be a non-empty list of finite values")
        if self.amplitudes is not None and any(float(v) < 0 for v in self.amplitudes):
            raise SpecError("amplitudes must be non-negative")
        for name in ("window", "fa_interval", "length", "training_length", "iterations", "particles", "bins", "eval_length"):
            if int(getattr(self, name)) < 1:
                raise SpecError(f"{name} must be positive")
        if not self.windows or any(int(w) < 1 for w in self.windows):
            raise SpecError("windows must be a non-empty list of positive integers")
        if not 0.0 < self.target_fa < 1.0:
            raise SpecError(f"target_fa must lie in (0, 1), got {self.target_fa}")
        if self.seed < 0:
            raise SpecError("seed must be non-negative")
        if self.init_chains < 0:
            raise SpecError("init_chains must be non-negative")
        if any(int(m) < 1 for m in self.true_sources):
            raise SpecError("true_sources entries must be positive")
        if self.rule not in ("fma", "cusum", "shewhart"):
            raise SpecError(f"rule must be fma, cusum or shewhart, got {self.rule!r}")
        if self.threshold is not None and not math.isfinite(self.threshold):
            raise SpecError("threshold must be finite")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def soi_arrival(self) -> int:
        return self.length // 2 if self.arrival is None else int(self.arrival)

    def calibrated(self, detector: str) -> bool:
        if self.calibrate is None:
            return detector != "flds-fma"
        return detector in self.calibrate

    def build_model(self) -> FldsModel:
        try:
            return model_from_config(self.model)
        except (KeyError, TypeError) as exc:
            raise SpecError(f"bad model config: {exc}") from exc


# ---------------------------------------------------------------------------
# Rows

@dataclass
class ResultRow:
    experiment: str
    detector: str
    sources: int
    amplitude: float
    sinr_db: float
    window: int
    threshold: float
    pmd: float
    pmd_se: float
    pmd_trials: int
    pfa: float
    pfa_se: float
    pfa_trials: int
    fa_bound: float | None = None
    md_bound: float | None = None
    status: str = "ok"


@dataclass
class RplRun:
    sources: int
    sticky: bool
    run: int
    M_hat: int
    RE: float
    best_iteration: int


@dataclass
class RplSummary:
    sources: int
    sticky: bool
    runs: int
    modal_M_hat: int
    mean_M_hat: float
    mean_abs_error: float
    median_RE: float
    mean_RE: float


@dataclass
class DensityRow:
    window: int
    bin: float
    h0_density: float
    h1_density: float
    h0_theory: float
    h1_theory: float


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    densities: list[DensityRow] = field(default_factory=list)
    runs: list[RplRun] = field(default_factory=list)


def binomial_se(p: float, n: int) -> float:
    if n < 1 or not math.isfinite(p):
        return float("nan")
    return math.sqrt(p * (1.0 - p) / n)


# ---------------------------------------------------------------------------
# Batched simulation and filtering

def simulate_backgrounds(model: FldsModel, trials: int, length: int, rng: RngHandle) -> np.ndarray:
    """(trials, length, 2) background records, zero initial states.

    Trial k uses ``rng.child(k)`` and source m within it ``.child(m)``, with
    the same draw order as :func:`iflds.model.simulate_flds`, so trial k
    equals ``simulate_flds(model, length, rng.child(k), "zero")``.
    """
    out = np.empty((trials, length, 2))
    Gs = np.stack([s.G for s in model.sources])
    Cs = np.stack([s.C for s in model.sources])
    Lq = [psd_sqrt(s.Q) for s in model.sources]
    Lr = [psd_sqrt(s.R) for s in model.sources]
    M = model.M
    for lo in range(0, trials, _CHUNK):
        hi = min(trials, lo + _CHUNK)
        B = hi - lo
        W = np.empty((B, M, length, 2))
        V = np.zeros((B, length, 2))
        for k in range(lo, hi):
            h = rng.child(k)
            for m in range(M):
                g = h.child(m).gen
                W[k - lo, m] = g.standard_normal((length, 2)) @ Lq[m].T
                V[k - lo] += g.standard_normal((length, 2)) @ Lr[m].T
        x = np.zeros((B, M, 2))
        for t in range(length):
            if t > 0:
                x = np.einsum("mij,bmj->bmi", Gs, x) + W[:, :, t]
            V[:, t] += np.einsum("mij,bmj->bi", Cs, x)
        out[lo:hi] = V
    return out


@dataclass
class BackgroundFilter:
    """Innovation and predictive-precision provider for one background model."""

    name: str
    model: FldsModel | None = None
    gaussian: GaussianBackground | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def precision(self, length: int) -> np.ndarray:
        if self.gaussian is not None:
            return np.broadcast_to(np.linalg.inv(self.gaussian.cov), (length, 2, 2))
        return self._schedule(length).sigma_p_inv

    def _schedule(self, length: int):
        if length not in self._cache:
            self._cache[length] = gain_schedule(self.model, length)
        return self._cache[length]

    def innovations(self, P: np.ndarray) -> np.ndarray:
        """p_t minus the predictive mean, for a batch (B, T, 2)."""
        if self.gaussian is not None:
            return P - self.gaussian.mean
        return P - batch_predictive_means(self.model, self._schedule(P.shape[1]), P)

    def soi_offset(self, soi: np.ndarray) -> np.ndarray:
        """Change in innovations caused by adding ``soi`` (T, 2) to any record."""
        if self.gaussian is not None:
            return soi.copy()
        return self.innovations(soi[None])[0]


def statistic_from_innovations(innov: np.ndarray, precision: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(innov - y/2)^T precision y for every trial and step; y is a constant 2-vector."""
    u = np.einsum("tij,j->ti", precision, y)
    return np.einsum("bti,ti->bt", innov - 0.5 * y, u)


def build_filters(spec: ExperimentSpec, model: FldsModel, training: np.ndarray, em_init=None) -> dict[str, BackgroundFilter]:
    """Background filters needed by the detector list; baselines fitted on ``training``."""
    out: dict[str, BackgroundFilter] = {}
    kinds = {d.split("-")[0] for d in spec.detectors}
    if "flds" in kinds:
        out["flds"] = BackgroundFilter("flds", model=model)
    if "lds" in kinds:
        fit = fit_lds_em(training, spec.em_iterations, em_init)
        out["lds"] = BackgroundFilter("lds", model=fit.model())
    if "gaussian" in kinds:
        out["gaussian"] = BackgroundFilter("gaussian", gaussian=GaussianBackground.fit(training))
    return out


def calibrate_threshold(scores: np.ndarray, target: float, iterations: int = 40, tolerance: float = 0.1) -> tuple[float, float, bool]:
    """Bisection for the smallest threshold whose exceedance rate is at most ``target``.

    ``scores`` holds one value per trial (the largest statistic in the
    false-alarm window). Returns (h, achieved rate, within tolerance).
    """
    scores = np.asarray(scores, dtype=float)
    finite = scores[np.isfinite(scores)]
    if finite.size == 0:
        raise CalibrationError("no finite statistic values to calibrate on")
    lo, hi = float(finite.min()) - 1.0, float(finite.max()) + 1.0

    def rate(h: float) -> float:
        return float(np.mean(scores >= h))

    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if rate(mid) > target:
            lo = mid
        else:
            hi = mid
    achieved = rate(hi)
    return hi, achieved, abs(achieved - target) <= tolerance * target


# ---------------------------------------------------------------------------
# Detection experiments on synthetic data

@dataclass
class _Records:
    """Shared per-experiment data: backgrounds, calibration set, training record."""

    model: FldsModel
    eval_bg: np.ndarray
    calib_bg: np.ndarray
    training: np.ndarray
    filters: dict[str, BackgroundFilter]
    innov_eval: dict[str, np.ndarray]
    innov_calib: dict[str, np.ndarray]


def _prepare(spec: ExperimentSpec) -> _Records:
    model = spec.build_model()
    root = RngHandle(spec.seed)
    T = spec.length
    if T - spec.fa_interval < max(spec.windows + [spec.window]) - 1:
        raise SpecError("length must leave room for a full false-alarm interval after the window fills")
    if not 1 <= spec.soi_arrival <= T - max(spec.windows + [spec.window]) + 1:
        raise SpecError("SOI must fit inside the record")
    training = simulate_backgrounds(model, 1, spec.training_length, root.child(_TRAIN))[0]
    eval_bg = simulate_backgrounds(model, spec.trials, T, root.child(_EVAL))
    calib_bg = simulate_backgrounds(model, spec.trials, T, root.child(_CALIB))
    filters = build_filters(spec, model, training)
    return _Records(
        model, eval_bg, calib_bg, training, filters,
        {k: f.innovations(eval_bg) for k, f in filters.items()},
        {k: f.innovations(calib_bg) for k, f in filters.items()},
    )


def _amplitude_grid(spec: ExperimentSpec, rec: _Records, window: int) -> list[tuple[float, float]]:
    """(amplitude, empirical SINR in dB) pairs for the grid in the spec."""
    frac = window / spec.length
    bg = rec.eval_bg.reshape(-1, 2)
    if spec.sinr_db is not None:
        amps = [amplitude_for_sinr(float(s), bg, frac) for s in spec.sinr_db]
    elif spec.amplitudes is not None:
        amps = [float(a) for a in spec.amplitudes]
    else:
        amps = list(np.linspace(0.001, 1.5, 20))
    out = []
    for a in amps:
        soi = np.zeros((spec.length, 2))
        soi[:window] = a  # only the power matters
        out.append((a, empirical_sinr_db(soi, bg)))
    return out


def _evaluate(
    spec: ExperimentSpec, rec: _Records, detector: str, amplitude: float, sinr: float, window: int, experiment: str
) -> tuple[ResultRow, np.ndarray, np.ndarray]:
    """One (detector, amplitude, window) grid point. Also returns H0 and H1 rule paths."""
    kind = detector.split("-")[0]
    rule = _RULE[detector]
    filt = rec.filters[kind]
    T = spec.length
    y = np.full(2, amplitude)
    prec = filt.precision(T)
    nu = spec.soi_arrival - 1  # 0-based
    soi = np.zeros((T, 2))
    soi[nu : nu + window] = y
    L0 = statistic_from_innovations(rec.innov_eval[kind], prec, y)
    L1 = L0 + np.einsum("ti,ti->t", filt.soi_offset(soi), np.einsum("tij,j->ti", prec, y))[None, :]
    W0 = statistic_path(rule, L0, window)
    W1 = statistic_path(rule, L1, window)
    fa_slice = slice(T - spec.fa_interval, T)

    fa_bound = md_bound = None
    status = "ok"
    perf = None
    if detector == "flds-fma" and amplitude > 0:
        perf = perf_model(rec.model, y, window, spec.fa_interval, spec.target_fa)
    if spec.calibrated(detector):
        Lc = statistic_from_innovations(rec.innov_calib[kind], prec, y)
        Wc = statistic_path(rule, Lc, window)
        h, _, ok = calibrate_threshold(Wc[:, fa_slice].max(axis=1), spec.target_fa, spec.calibration_iterations, spec.calibration_tolerance)
        if not ok:
            status = "calibration-failed"
    elif perf is not None:
        h = fma_threshold(perf)
    else:
        # zero amplitude: the statistic is identically zero; never fire
        h = 1.0
    if perf is not None:
        fa_bound, md_bound = perf_bounds(perf, h)

    fired0 = W0[:, fa_slice].max(axis=1) >= h
    pfa = float(fired0.mean())
    before = W1[:, :nu].max(axis=1) >= h if nu > 0 else np.zeros(spec.trials, bool)
    eligible = ~before
    caught = W1[:, nu : nu + window].max(axis=1) >= h
    n_md = int(eligible.sum())
    pmd = float(np.mean(~caught[eligible])) if n_md else float("nan")
    if not n_md:
        status = "no-eligible-trials"
    row = ResultRow(
        experiment, detector, rec.model.M, float(amplitude), float(sinr), int(window), float(h),
        pmd, binomial_se(pmd, n_md), n_md, pfa, binomial_se(pfa, spec.trials), spec.trials,
        fa_bound, md_bound, status,
    )
    return row, W0, W1


def run_tsd_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Missed-detection and false-alarm rates over the SOI amplitude grid at one window length."""
    rec = _prepare(spec)
    res = ExperimentResult()
    for amp, sinr in _amplitude_grid(spec, rec, spec.window):
        for det in spec.detectors:
            row, _, _ = _evaluate(spec, rec, det, amp, sinr, spec.window, "tsd")
            res.rows.append(row)
    return res


def _gauss_pdf(x: np.ndarray, mean: float, var: float) -> np.ndarray:
    return np.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)


def run_window_study(spec: ExperimentSpec) -> ExperimentResult:
    """Rates per window length at a fixed amplitude, plus flds-fma statistic densities.

    Densities compare the rule statistic at the end of the H0 record and at
    the last step of the SOI (window fully covering it) with the Gaussian
    laws N(w mu, w var) of the statistic under each hypothesis.
    """
    amps = spec.amplitudes if spec.amplitudes is not None else ([0.48] if spec.sinr_db is None else None)
    rec = _prepare(spec)
    res = ExperimentResult()
    for w in sorted(int(v) for v in spec.windows):
        grid = _amplitude_grid(ExperimentSpec(**{**spec.to_dict(), "amplitudes": amps}), rec, w) if amps else _amplitude_grid(spec, rec, w)
        if len(grid) != 1:
            raise SpecError("window study takes exactly one amplitude or SINR value")
        amp, sinr = grid[0]
        for det in spec.detectors:
            row, W0, W1 = _evaluate(spec, rec, det, amp, sinr, w, "window")
            res.rows.append(row)
            if det == "flds-fma" and amp > 0:
                nu = spec.soi_arrival - 1
                h0 = W0[:, -1]
                h1 = W1[:, nu + w - 1]
                perf = perf_model(rec.model, np.full(2, amp), w, spec.fa_interval, spec.target_fa)
                res.densities.extend(_densities(w, h0, h1, perf, spec.bins))
    return res


def _densities(w: int, h0: np.ndarray, h1: np.ndarray, perf, bins: int) -> list[DensityRow]:
    lo = float(min(h0.min(), h1.min()))
    hi = float(max(h0.max(), h1.max()))
    edges = np.linspace(lo, hi, bins + 1)
    d0, _ = np.histogram(h0, edges, density=True)
    d1, _ = np.histogram(h1, edges, density=True)
    centers = 0.5 * (edges[1:] + edges[:-1])
    t0 = _gauss_pdf(centers, w * perf.mu_h0, w * perf.var_h0)
    t1 = _gauss_pdf(centers, w * perf.mu_h1, w * perf.var_h1)
    return [DensityRow(w, float(c), float(a), float(b), float(c0), float(c1)) for c, a, b, c0, c1 in zip(centers, d0, d1, t0, t1)]


# ---------------------------------------------------------------------------
# Source-number recovery

def _hyper_for(obs: ObservationSeries, sources: int, sticky: bool) -> Hyper:
    return Hyper.from_data(obs, sources, sticky=sticky)


def run_rpl_experiment(spec: ExperimentSpec, progress: Callable[[str], None] | None = None) -> ExperimentResult:
    """Learner runs with stickiness on and off on the same data and learner seed.

    Run r for M_true sources draws data from ``seed -> child(M_true) -> child(r) -> child(0)``
    and the learner stream from ``... -> child(1)``.
    """
    from .model import benchmark_model, simulate_flds

    res = ExperimentResult()
    root = RngHandle(spec.seed)
    for M_true in spec.true_sources:
        model = benchmark_model(int(M_true)) if "benchmark_sources" in spec.model or spec.model == {} else spec.build_model()
        for r in range(spec.trials):
            base = root.child(int(M_true)).child(r)
            obs, _ = simulate_flds(model, spec.length, base.child(0), "zero")
            prior_m = spec.prior_sources or model.M
            for sticky in (True, False):
                hyper = _hyper_for(obs, prior_m, sticky)
                out = learn(obs, hyper, spec.iterations, spec.particles, base.child(1), spec.proposal, init_chains=spec.init_chains)
                run = RplRun(model.M, sticky, r, out.M_hat, reconstruction_error(obs, out.best), out.best_iteration)
                res.runs.append(run)
                if progress:
                    progress(f"M_true={model.M} run={r} sticky={sticky} M_hat={run.M_hat} RE={run.RE:.4f}")
    res.rows = summarize_rpl(res.runs)
    return res


def summarize_rpl(runs: list[RplRun]) -> list[RplSummary]:
    out = []
    keys = sorted({(r.sources, r.sticky) for r in runs}, key=lambda k: (k[0], not k[1]))
    for M, sticky in keys:
        sel = [r for r in runs if r.sources == M and r.sticky == sticky]
        mh = np.array([r.M_hat for r in sel])
        re = np.array([r.RE for r in sel])
        out.append(RplSummary(
            M, sticky, len(sel), int(np.argmax(np.bincount(mh))), float(mh.mean()),
            float(np.mean(np.abs(mh - M))), float(np.median(re)), float(re.mean()),
        ))
    return out


# ---------------------------------------------------------------------------
# Communication-interference scenario

def _comm_config(spec: ExperimentSpec, length: int) -> CommScenario:
    try:
        return CommScenario(**{**spec.comm, "length": length})
    except TypeError as exc:
        raise SpecError(f"bad comm settings: {exc}") from exc


def run_comm_experiment(spec: ExperimentSpec, progress: Callable[[str], None] | None = None) -> ExperimentResult:
    """Train the three background models on signal-free data, then detect pulses.

    Thresholds for every detector are set on the evaluation records so the
    per-step exceedance rate over SOI-free windows equals ``target_fa``.
    A pulse counts as detected when the rule crosses the threshold while
    its window overlaps the pulse start, i.e. within w steps of arrival.
    """
    root = RngHandle(spec.seed)
    train_cfg = _comm_config(spec, spec.training_length)
    _, _, train_bg = simulate_comm_scenario(train_cfg, root.child(_TRAIN))
    train = ObservationSeries(train_bg)

    models: dict[str, BackgroundFilter] = {}
    kinds = {d.split("-")[0] for d in spec.detectors}
    if "flds" in kinds:
        hyper = _hyper_for(train, spec.prior_sources or 2, spec.sticky)
        out = learn(train, hyper, spec.iterations, spec.particles, root.child(_LEARN), spec.proposal, init_chains=spec.init_chains)
        if progress:
            progress(f"learned {out.best.active().sum()} chains (modal {out.M_hat})")
        models["flds"] = BackgroundFilter("flds", model=out.best.to_model())
    if "lds" in kinds:
        models["lds"] = BackgroundFilter("lds", model=fit_lds_em(train_bg, spec.em_iterations).model())
    if "gaussian" in kinds:
        models["gaussian"] = BackgroundFilter("gaussian", gaussian=GaussianBackground.fit(train_bg))

    cfg = _comm_config(spec, spec.eval_length)
    w = cfg.width if spec.window is None else spec.window
    records, masks, amps, sinrs = [], [], [], []
    for k in range(spec.trials):
        series, mask, bg = simulate_comm_scenario(cfg, root.child(_EVAL).child(k))
        records.append(series.samples)
        masks.append(mask)
        amps.append(comm_soi_amplitude(cfg, bg, mask))
        soi = series.samples - bg
        sinrs.append(empirical_sinr_db(soi[mask], bg) if cfg.sinr_reference == "pulse" else empirical_sinr_db(soi, bg))
    P = np.stack(records)
    mask = np.stack(masks)
    starts = cfg.pulse_starts()
    T = cfg.length
    # steps whose window holds no SOI sample, once the window has filled
    window_has_soi = np.stack([np.convolve(m.astype(float), np.ones(w))[:T] > 0 for m in mask])
    h0_steps = ~window_has_soi
    h0_steps[:, : w - 1] = False

    res = ExperimentResult()
    for det in spec.detectors:
        kind = det.split("-")[0]
        filt = models[kind]
        prec = filt.precision(T)
        innov = filt.innovations(P)
        stats = []
        for k in range(spec.trials):
            y = np.full(2, amps[k])
            stats.append(statistic_path(_RULE[det], statistic_from_innovations(innov[k : k + 1], prec, y), w)[0])
        W = np.stack(stats)
        h, achieved, ok = calibrate_threshold(W[h0_steps], spec.target_fa, spec.calibration_iterations, spec.calibration_tolerance)
        hits = np.array([[np.any(W[k, s : s + w] >= h) for s in starts] for k in range(spec.trials)])
        pd = float(hits.mean()) if hits.size else float("nan")
        n = int(hits.size)
        pfa = float(np.mean(W[h0_steps] >= h))
        res.rows.append(ResultRow(
            "comm", det, filt.model.M if filt.model is not None else 0, float(np.mean(amps)), float(np.mean(sinrs)), int(w),
            float(h), 1.0 - pd, binomial_se(1.0 - pd, n), n, pfa, binomial_se(pfa, int(h0_steps.sum())), int(h0_steps.sum()),
            None, None, "ok" if ok else "calibration-failed",
        ))
    return res


EXPERIMENTS = {
    "bench-rpl": run_rpl_experiment,
    "bench-tsd": run_tsd_experiment,
    "bench-window": run_window_study,
    "bench-comm": run_comm_experiment,
}


# ---------------------------------------------------------------------------
# Output

def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _sort_key(row) -> tuple:
    key = []
    for v in astuple(row):
        if v is None:
            key.append((0, 0.0, ""))
        elif isinstance(v, (int, float, np.integer, np.floating)):
            key.append((1, float(v), ""))
        else:
            key.append((2, 0.0, str(v)))
    return tuple(key)


def write_rows(rows: list, path: str | Path) -> None:
    """Dataclass rows to CSV, sorted by field values so run order does not matter."""
    if not rows:
        Path(path).write_text("")
        return
    names = [f.name for f in fields(rows[0])]
    lines = [[_fmt(getattr(r, n)) for n in names] for r in sorted(rows, key=_sort_key)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        writer.writerows(lines)


def write_outputs(out_dir: str | Path, result: ExperimentResult) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = ["results.csv"]
    write_rows(result.rows, out / "results.csv")
    if result.densities:
        write_rows(result.densities, out / "densities.csv")
        written.append("densities.csv")
    if result.runs:
        write_rows(result.runs, out / "runs.csv")
        written.append("runs.csv")
    return written
