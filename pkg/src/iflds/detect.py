"""Transient detection on top of the factorial filter.

The per-sample statistic is the log-likelihood ratio between "SOI present"
and "SOI absent" predictive densities. Both share the covariance of the
background filter, so one filter run is enough: the alternative is the null
predictive shifted by the SOI value.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fkff import FilterError, fkff_init, fkff_step, steady_state
from .model import FldsModel, ObservationSeries
from .randdist import std_normal_logcdf, std_normal_quantile

DIVERGENCE_LIMIT = 1e9


class DetectorError(ValueError):
    pass


def llr(p: np.ndarray, mu_p: np.ndarray, sigma_p: np.ndarray, y: np.ndarray) -> float:
    """(p - mu_p - y/2)^T inv(sigma_p) y."""
    u = np.linalg.solve(sigma_p, y)
    return float((np.asarray(p) - mu_p - 0.5 * np.asarray(y)) @ u)


def batch_llr(P: np.ndarray, mu_p: np.ndarray, sigma_p_inv: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Vectorized statistic: P and mu_p are (B, T, 2), sigma_p_inv (T, 2, 2), y (2,) or (T, 2)."""
    y = np.broadcast_to(y, (P.shape[1], 2))
    u = np.einsum("tij,tj->ti", sigma_p_inv, y)
    return np.einsum("bti,ti->bt", P - mu_p - 0.5 * y, u)


def llr_stream(model: FldsModel, observations: ObservationSeries, y: np.ndarray) -> np.ndarray:
    """Run the background filter on the raw series and emit one statistic per sample."""
    state = fkff_init(model)
    y = np.broadcast_to(np.asarray(y, dtype=float), (len(observations), 2))
    out = np.empty(len(observations))
    for i, p in enumerate(observations.samples):
        state, pred = fkff_step(state, model, p)
        out[i] = llr(p, pred.mean, pred.cov, y[i])
    return out


# ---------------------------------------------------------------------------
# Stopping rules

def _check_threshold(h: float) -> float:
    if not np.isfinite(h):
        raise DetectorError(f"threshold must be finite, got {h}")
    return float(h)


@dataclass
class FmaDetector:
    """Moving sum of the last ``window`` statistics; inert until ``window`` samples are seen."""

    window: int
    threshold: float
    t: int = 0
    statistic: float = 0.0
    alarm_time: int | None = None
    buffer: deque = field(default_factory=deque, repr=False)

    def __post_init__(self) -> None:
        if self.window < 1:
            raise DetectorError("window must be positive")
        self.threshold = _check_threshold(self.threshold)

    def update(self, value: float) -> bool:
        """Advance one sample; returns True when the rule is above threshold at this step."""
        self.t += 1
        self.buffer.append(value)
        self.statistic += value
        if len(self.buffer) > self.window:
            self.statistic -= self.buffer.popleft()
        fired = self.t >= self.window and self.statistic >= self.threshold
        if fired and self.alarm_time is None:
            self.alarm_time = self.t
        return fired

    def recomputed(self) -> float:
        return math.fsum(self.buffer)

    def reset(self) -> None:
        self.t, self.statistic, self.alarm_time = 0, 0.0, None
        self.buffer.clear()


@dataclass
class CusumDetector:
    threshold: float
    t: int = 0
    statistic: float = 0.0
    alarm_time: int | None = None

    def __post_init__(self) -> None:
        self.threshold = _check_threshold(self.threshold)

    def update(self, value: float) -> bool:
        self.t += 1
        self.statistic = max(0.0, self.statistic) + value if self.t > 1 else value
        fired = self.statistic >= self.threshold
        if fired and self.alarm_time is None:
            self.alarm_time = self.t
        return fired

    def reset(self) -> None:
        self.t, self.statistic, self.alarm_time = 0, 0.0, None


@dataclass
class ShewhartDetector:
    threshold: float
    t: int = 0
    statistic: float = 0.0
    alarm_time: int | None = None

    def __post_init__(self) -> None:
        self.threshold = _check_threshold(self.threshold)

    def update(self, value: float) -> bool:
        self.t += 1
        self.statistic = value
        fired = value >= self.threshold
        if fired and self.alarm_time is None:
            self.alarm_time = self.t
        return fired

    def reset(self) -> None:
        self.t, self.statistic, self.alarm_time = 0, 0.0, None


def make_detector(kind: str, threshold: float, window: int = 1):
    if kind == "fma":
        return FmaDetector(window, threshold)
    if kind == "cusum":
        return CusumDetector(threshold)
    if kind == "shewhart":
        return ShewhartDetector(threshold)
    raise DetectorError(f"unknown stopping rule {kind!r}")


def window_sums(L: np.ndarray, window: int) -> np.ndarray:
    """Moving sums along the last axis; entries before the window fills are -inf (rule inert)."""
    L = np.asarray(L, dtype=float)
    c = np.cumsum(L, axis=-1)
    out = np.full_like(L, -np.inf)
    out[..., window - 1] = c[..., window - 1]
    out[..., window:] = c[..., window:] - c[..., :-window]
    return out


def cusum_path(L: np.ndarray) -> np.ndarray:
    """W_t = max(0, W_{t-1}) + L_t along the last axis, W_1 = L_1."""
    L = np.asarray(L, dtype=float)
    W = np.empty_like(L)
    W[..., 0] = L[..., 0]
    for t in range(1, L.shape[-1]):
        W[..., t] = np.maximum(W[..., t - 1], 0.0) + L[..., t]
    return W


def statistic_path(kind: str, L: np.ndarray, window: int = 1) -> np.ndarray:
    if kind == "fma":
        return window_sums(L, window)
    if kind == "cusum":
        return cusum_path(L)
    if kind == "shewhart":
        return np.asarray(L, dtype=float).copy()
    raise DetectorError(f"unknown stopping rule {kind!r}")


def first_alarm(stat: np.ndarray, h: float) -> np.ndarray:
    """1-based index of the first crossing along the last axis, 0 when none."""
    hit = stat >= h
    any_hit = hit.any(axis=-1)
    return np.where(any_hit, hit.argmax(axis=-1) + 1, 0)


# ---------------------------------------------------------------------------
# Statistic distributions, thresholds and bounds

def h0_moments(y: np.ndarray, sigma_p: np.ndarray) -> tuple[float, float]:
    """Mean and variance of the per-sample statistic with no SOI present."""
    y = np.asarray(y, dtype=float)
    q = float(y @ np.linalg.solve(sigma_p, y))
    return -0.5 * q, q


@dataclass
class H1Recursion:
    means: np.ndarray  # per-step mean of the statistic with the SOI present
    errors: np.ndarray  # observation-error trace e_t, (steps, 2)
    converged_mean: float
    converged_at: int | None


def h1_mean_recursion(
    model: FldsModel,
    gains: np.ndarray,
    sigma_p: np.ndarray,
    y: np.ndarray,
    steps: int = 10_000,
    tol: float = 1e-8,
) -> H1Recursion:
    """Propagate a deterministic SOI through the steady-state filter.

    ``e_t`` is the part of the SOI the filter has not yet absorbed into its
    predicted background; ``psi`` tracks what it has absorbed per source.
    ``y`` may be a constant 2-vector or a (steps, 2) waveform.
    """
    yy = np.broadcast_to(np.asarray(y, dtype=float), (steps, 2))
    Sinv = np.linalg.inv(sigma_p)
    M = model.M
    psi = np.zeros((M, 2))
    e = yy[0].copy()
    errs = np.empty((steps, 2))
    means = np.empty(steps)
    converged_at = None
    for t in range(steps):
        if t > 0:
            psi = np.stack([src.G @ (psi[m] + gains[m] @ e) for m, src in enumerate(model.sources)])
            e = yy[t] - sum(src.C @ psi[m] for m, src in enumerate(model.sources))
            if np.max(np.abs(e)) > DIVERGENCE_LIMIT:
                closed = _closed_loop(model, gains)
                raise FilterError(
                    f"observation error diverged at step {t}; closed-loop spectral radius {closed:.4f}"
                )
        errs[t] = e
        means[t] = float((e - 0.5 * yy[t]) @ Sinv @ yy[t])
        if converged_at is None and t > 0 and np.max(np.abs(errs[t] - errs[t - 1])) < tol:
            converged_at = t
    return H1Recursion(means, errs, float(means[-1]), converged_at)


def _closed_loop(model: FldsModel, gains: np.ndarray) -> float:
    G, C, _ = model.stacked()
    K = np.vstack(gains)
    return float(np.max(np.abs(np.linalg.eigvals(G @ (np.eye(G.shape[0]) - K @ C)))))


@dataclass
class PerfModel:
    mu_h0: float
    var_h0: float
    mu_h1: float
    var_h1: float
    window: int
    fa_interval: int
    target_fa: float = 0.01

    def __post_init__(self) -> None:
        if self.window < 1 or self.fa_interval < 1:
            raise DetectorError("window and false-alarm interval must be positive")
        if not self.var_h0 > 0 or not self.var_h1 > 0:
            raise DetectorError("statistic variances must be positive")


def perf_model(model: FldsModel, y: np.ndarray, window: int, fa_interval: int, target_fa: float = 0.01) -> PerfModel:
    """Moments at the converged filter: null moments and the settled SOI-present mean."""
    ss = steady_state(model)
    mu0, var0 = h0_moments(y, ss.sigma_p)
    h1 = h1_mean_recursion(model, ss.gains, ss.sigma_p, y)
    return PerfModel(mu0, var0, h1.converged_mean, var0, window, fa_interval, target_fa)


def fma_threshold(perf: PerfModel, target_fa: float | None = None) -> float:
    """Smallest threshold whose Gaussian false-alarm bound equals ``target_fa``."""
    a = perf.target_fa if target_fa is None else target_fa
    if not 0.0 < a < 1.0:
        raise DetectorError(f"target false-alarm probability must lie in (0, 1), got {a}")
    q = math.exp(math.log1p(-a) / perf.fa_interval)
    return math.sqrt(perf.window * perf.var_h0) * std_normal_quantile(q) + perf.window * perf.mu_h0


def perf_bounds(perf: PerfModel, h: float) -> tuple[float, float]:
    """(false-alarm bound over ``fa_interval`` windows, missed-detection bound) at threshold h."""
    w = perf.window
    z0 = (h - w * perf.mu_h0) / math.sqrt(w * perf.var_h0)
    z1 = (h - w * perf.mu_h1) / math.sqrt(w * perf.var_h1)
    alpha = -math.expm1(perf.fa_interval * float(std_normal_logcdf(z0)))
    beta = math.exp(float(std_normal_logcdf(z1)))
    return min(max(alpha, 0.0), 1.0), min(max(beta, 0.0), 1.0)


# ---------------------------------------------------------------------------
# Single-series run and reporting

@dataclass
class DetectionReport:
    rule: str
    threshold: float
    window: int
    alarm_time: int | None
    fa_bound: float | None = None
    md_bound: float | None = None
    alarm_rate: float | None = None  # share of operational steps at or above threshold
    statistic: list[float] | None = None


def detect_series(
    model: FldsModel,
    observations: ObservationSeries,
    y: np.ndarray,
    h: float,
    window: int,
    rule: str = "fma",
) -> tuple[DetectionReport, np.ndarray, np.ndarray]:
    """Returns (report, per-sample statistic, rule statistic path)."""
    L = llr_stream(model, observations, y)
    det = make_detector(rule, h, window)
    W = np.empty_like(L)
    for i, v in enumerate(L):
        det.update(float(v))
        W[i] = det.statistic
    start = window - 1 if rule == "fma" else 0
    rate = float(np.mean(W[start:] >= h)) if len(W) > start else None
    return DetectionReport(rule, float(h), window, det.alarm_time, alarm_rate=rate), L, W


def write_report(report: DetectionReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(asdict(report), indent=2, sort_keys=True) + "\n")


def write_statistic_csv(L: np.ndarray, W: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "llr", "W"])
        for t, (a, b) in enumerate(zip(L, W), start=1):
            writer.writerow([t, repr(float(a)), repr(float(b))])
