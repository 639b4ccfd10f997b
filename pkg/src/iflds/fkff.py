"""Factorial Kalman forward filter.

Each source keeps its own 2-d Gaussian belief; the sources are coupled only
through the factorial gain, whose numerator and denominator carry the
cross-source process-noise terms. For one source it is the ordinary Kalman
filter. For several sources it is *not* the exact joint filter; the stacked
filter in :func:`stacked_kalman_loglik` is kept as an independent reference.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .model import FldsModel, ObservationSeries
from .randdist import PSD_TOL, clamp_psd

LOG_2PI = math.log(2 * math.pi)


class FilterError(FloatingPointError):
    """Numerical breakdown inside the filter."""


@dataclass
class ForwardState:
    """Per-source predicted (bar) and updated (hat) moments after ``t`` observations."""

    mu_bar: np.ndarray  # (M, 2)
    sigma_bar: np.ndarray  # (M, 2, 2)
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    t: int = 0
    gains: np.ndarray | None = None  # (M, 2, 2), gains of the last update


@dataclass
class PredictiveLikelihood:
    mean: np.ndarray
    cov: np.ndarray
    logpdf: float


def fkff_init(model: FldsModel) -> ForwardState:
    M = model.M
    if M < 1:
        raise ValueError("filter needs at least one source")
    sig = np.stack([src.Q.copy() for src in model.sources])
    zeros = np.zeros((M, 2))
    return ForwardState(zeros.copy(), sig, zeros.copy(), sig.copy(), 0)


def _predict_cov(model: FldsModel, state: ForwardState) -> np.ndarray:
    if state.t == 0:
        return np.stack([src.Q for src in model.sources])
    return np.stack([src.G @ S @ src.G.T + src.Q for src, S in zip(model.sources, state.sigma_hat)])


def _gains(model: FldsModel, sigma_bar: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Factorial gains, predictive covariance and per-source cross terms sum_{n!=m} C^n Q^T."""
    M = model.M
    Cs = [src.C for src in model.sources]
    Q = model.sources[0].Q
    R = model.sources[0].R
    CQ = [C @ Q for C in Cs]
    sum_CQ = sum(CQ)
    # sum_{n} sum_{m != n} C^n Q C^m^T
    sum_all_CQC = sum_CQ @ sum(Cs).T - sum(CQ[n] @ Cs[n].T for n in range(M))
    CSC = sum(C @ S @ C.T for C, S in zip(Cs, sigma_bar))
    denom = CSC + sum_all_CQC + M * M * R
    try:
        denom_inv = np.linalg.inv(denom)
    except np.linalg.LinAlgError as exc:
        raise FilterError("singular factorial gain denominator") from exc
    QCt_all = sum(Q @ C.T for C in Cs)
    K = np.empty((M, 2, 2))
    cross = np.empty((M, 2, 2))
    for m in range(M):
        K[m] = (sigma_bar[m] @ Cs[m].T + QCt_all - Q @ Cs[m].T) @ denom_inv
        cross[m] = sum(Cs[n] @ Q.T for n in range(M) if n != m) if M > 1 else np.zeros((2, 2))
    sigma_p = CSC + M * M * R
    return K, sigma_p, cross


def fkff_step(state: ForwardState, model: FldsModel, p_t: np.ndarray) -> tuple[ForwardState, PredictiveLikelihood]:
    Gs = [src.G for src in model.sources]
    mu_bar = state.mu_bar if state.t == 0 else np.stack([G @ m for G, m in zip(Gs, state.mu_hat)])
    sigma_bar = _predict_cov(model, state)
    K, sigma_p, cross = _gains(model, sigma_bar)
    mu_p = sum(src.C @ mb for src, mb in zip(model.sources, mu_bar))
    innov = np.asarray(p_t, dtype=float) - mu_p
    mu_hat = mu_bar + np.einsum("mij,j->mi", K, innov)
    sigma_hat = np.empty_like(sigma_bar)
    for m, src in enumerate(model.sources):
        raw = sigma_bar[m] - K[m] @ (src.C @ sigma_bar[m].T + cross[m])
        sigma_hat[m] = clamp_psd(raw)
    logpdf = gaussian_logpdf(innov, sigma_p)
    new = ForwardState(mu_bar, sigma_bar, mu_hat, sigma_hat, state.t + 1, K)
    return new, PredictiveLikelihood(mu_p, sigma_p, logpdf)


def gaussian_logpdf(diff: np.ndarray, cov: np.ndarray) -> float:
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise FilterError("predictive covariance is not positive definite") from exc
    z = np.linalg.solve(L, diff)
    return float(-0.5 * (len(diff) * LOG_2PI + z @ z) - np.log(np.diag(L)).sum())


# ---------------------------------------------------------------------------
# Compiled whole-series filter. Same recursion as fkff_step, written with
# closed-form 2x2 algebra; tests pin the two implementations together.

_OK, _SINGULAR_GAIN, _NOT_PD, _NOT_PSD = 0, 1, 2, 3


@njit(cache=True)
def _clamp2(a, b, d, tol):
    """Eigen-clamp of the symmetric matrix [[a, b], [b, d]]; status 1 if an eigenvalue is below -tol."""
    half_tr = 0.5 * (a + d)
    rad = np.sqrt(0.25 * (a - d) ** 2 + b * b)
    lo = half_tr - rad
    if lo >= 0.0:
        return a, b, d, 0
    if lo < -tol:
        return a, b, d, 1
    hi = half_tr + rad
    if hi <= 0.0:
        return 0.0, 0.0, 0.0, 0
    if b != 0.0:
        v0, v1 = hi - d, b
    elif a >= d:
        v0, v1 = 1.0, 0.0
    else:
        v0, v1 = 0.0, 1.0
    nrm = v0 * v0 + v1 * v1
    return hi * v0 * v0 / nrm, hi * v0 * v1 / nrm, hi * v1 * v1 / nrm, 0


@njit(cache=True, inline="always")
def _mm(A, B):
    # 2x2 product written out; numba's @ dispatches to BLAS, which dominates at this size
    out = np.empty((2, 2))
    out[0, 0] = A[0, 0] * B[0, 0] + A[0, 1] * B[1, 0]
    out[0, 1] = A[0, 0] * B[0, 1] + A[0, 1] * B[1, 1]
    out[1, 0] = A[1, 0] * B[0, 0] + A[1, 1] * B[1, 0]
    out[1, 1] = A[1, 0] * B[0, 1] + A[1, 1] * B[1, 1]
    return out


@njit(cache=True, inline="always")
def _mv(A, x):
    out = np.empty(2)
    out[0] = A[0, 0] * x[0] + A[0, 1] * x[1]
    out[1] = A[1, 0] * x[0] + A[1, 1] * x[1]
    return out


@njit(cache=True)
def _filter_kernel(Gs, Cs, Q, R, P, tol):
    M = Gs.shape[0]
    T = P.shape[0]
    sumC = np.zeros((2, 2))
    sumCQ = np.zeros((2, 2))
    diagCQC = np.zeros((2, 2))
    QCt_all = np.zeros((2, 2))
    for m in range(M):
        sumC += Cs[m]
        CQ = _mm(Cs[m], Q)
        sumCQ += CQ
        diagCQC += _mm(CQ, Cs[m].T)
        QCt_all += _mm(Q, Cs[m].T)
    cross_all = _mm(sumCQ, sumC.T) - diagCQC
    cross = np.zeros((M, 2, 2))
    for m in range(M):
        for n in range(M):
            if n != m:
                cross[m] += _mm(Cs[n], Q.T)
    M2R = M * M * R
    mu_hat = np.zeros((M, 2))
    sig_hat = np.zeros((M, 2, 2))
    mu_bar = np.zeros((M, 2))
    sig_bar = np.zeros((M, 2, 2))
    logliks = np.empty(T)
    gains = np.empty((T, M, 2, 2))
    sigma_p = np.empty((T, 2, 2))
    mean_p = np.empty((T, 2))
    log2pi = np.log(2.0 * np.pi)
    for t in range(T):
        for m in range(M):
            if t == 0:
                mu_bar[m] = 0.0
                sig_bar[m] = Q
            else:
                mu_bar[m] = _mv(Gs[m], mu_hat[m])
                sig_bar[m] = _mm(_mm(Gs[m], sig_hat[m]), Gs[m].T) + Q
        CSC = np.zeros((2, 2))
        mu_p = np.zeros(2)
        for m in range(M):
            CSC += _mm(_mm(Cs[m], sig_bar[m]), Cs[m].T)
            mu_p += _mv(Cs[m], mu_bar[m])
        den = CSC + cross_all + M2R
        det = den[0, 0] * den[1, 1] - den[0, 1] * den[1, 0]
        if det == 0.0 or not np.isfinite(det):
            return logliks, gains, sigma_p, mean_p, _SINGULAR_GAIN, t + 1
        den_inv = np.empty((2, 2))
        den_inv[0, 0] = den[1, 1] / det
        den_inv[0, 1] = -den[0, 1] / det
        den_inv[1, 0] = -den[1, 0] / det
        den_inv[1, 1] = den[0, 0] / det
        Sp = CSC + M2R
        sigma_p[t] = Sp
        mean_p[t] = mu_p
        d0 = P[t, 0] - mu_p[0]
        d1 = P[t, 1] - mu_p[1]
        for m in range(M):
            K = _mm(_mm(sig_bar[m], Cs[m].T) + QCt_all - _mm(Q, Cs[m].T), den_inv)
            gains[t, m] = K
            mu_hat[m, 0] = mu_bar[m, 0] + K[0, 0] * d0 + K[0, 1] * d1
            mu_hat[m, 1] = mu_bar[m, 1] + K[1, 0] * d0 + K[1, 1] * d1
            raw = sig_bar[m] - _mm(K, _mm(Cs[m], sig_bar[m].T) + cross[m])
            a, b, d, bad = _clamp2(raw[0, 0], 0.5 * (raw[0, 1] + raw[1, 0]), raw[1, 1], tol)
            if bad:
                return logliks, gains, sigma_p, mean_p, _NOT_PSD, t + 1
            sig_hat[m, 0, 0] = a
            sig_hat[m, 0, 1] = b
            sig_hat[m, 1, 0] = b
            sig_hat[m, 1, 1] = d
        # log density via the 2x2 Cholesky factor
        if not Sp[0, 0] > 0.0:
            return logliks, gains, sigma_p, mean_p, _NOT_PD, t + 1
        l11 = np.sqrt(Sp[0, 0])
        l21 = Sp[1, 0] / l11
        r = Sp[1, 1] - l21 * l21
        if not r > 0.0:
            return logliks, gains, sigma_p, mean_p, _NOT_PD, t + 1
        l22 = np.sqrt(r)
        z1 = d0 / l11
        z2 = (d1 - l21 * z1) / l22
        logliks[t] = -0.5 * (2.0 * log2pi + z1 * z1 + z2 * z2) - np.log(l11) - np.log(l22)
    return logliks, gains, sigma_p, mean_p, _OK, 0


@dataclass
class FilterRun:
    logliks: np.ndarray  # (T,)
    gains: np.ndarray  # (T, M, 2, 2)
    sigma_p: np.ndarray  # (T, 2, 2)
    mean_p: np.ndarray  # (T, 2)


def run_filter(model: FldsModel, samples: np.ndarray) -> FilterRun:
    """Whole-series factorial filter (compiled); equals repeated :func:`fkff_step`."""
    if model.M < 1:
        raise ValueError("filter needs at least one source")
    Gs = np.ascontiguousarray(np.stack([s.G for s in model.sources]), dtype=float)
    Cs = np.ascontiguousarray(np.stack([s.C for s in model.sources]), dtype=float)
    Q = np.ascontiguousarray(model.sources[0].Q, dtype=float)
    R = np.ascontiguousarray(model.sources[0].R, dtype=float)
    P = np.ascontiguousarray(samples, dtype=float).reshape(-1, 2)
    ll, K, S, mu, status, t = _filter_kernel(Gs, Cs, Q, R, P, PSD_TOL)
    if status == _SINGULAR_GAIN:
        raise FilterError(f"singular factorial gain denominator at t={t}")
    if status == _NOT_PD:
        raise FilterError(f"predictive covariance is not positive definite at t={t}")
    if status == _NOT_PSD:
        raise FilterError(f"updated covariance lost positive semi-definiteness at t={t}")
    return FilterRun(ll, K, S, mu)


def fkff_logliks(model: FldsModel, observations: ObservationSeries) -> np.ndarray:
    """Per-step log predictive densities for the whole series."""
    return run_filter(model, observations.samples).logliks


def fkff_loglik(model: FldsModel, observations: ObservationSeries, start: int = 1, stop: int | None = None) -> float:
    """Sum of log predictive densities over 1-based indices start..stop inclusive.

    The filter always runs from the first sample so the window conditions on
    the full past.
    """
    T = len(observations)
    stop = T if stop is None else stop
    if not 1 <= start <= stop <= T:
        raise ValueError(f"invalid window [{start}, {stop}] for series of length {T}")
    vals = fkff_logliks(model, ObservationSeries(observations.samples[:stop]))
    return math.fsum(vals[start - 1 : stop])


def fkff_trace_csv(model: FldsModel, observations: ObservationSeries, path: str | Path) -> None:
    """Per-step debug dump: predictive mean, log-det of its covariance, gain Frobenius norms."""
    state = fkff_init(model)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mu_p_i", "mu_p_q", "logdet_sigma_p"] + [f"gain_norm_{m}" for m in range(model.M)])
        for t, p in enumerate(observations.samples, start=1):
            state, pred = fkff_step(state, model, p)
            logdet = np.linalg.slogdet(pred.cov)[1]
            norms = [np.linalg.norm(K) for K in state.gains]
            writer.writerow([t, repr(pred.mean[0]), repr(pred.mean[1]), repr(logdet)] + [repr(float(n)) for n in norms])


# ---------------------------------------------------------------------------
# Precomputed schedules for many filters sharing one model

@dataclass
class GainSchedule:
    """Data-independent part of the filter for steps 1..T.

    The covariance recursion never looks at the observations, so gains and
    predictive covariances can be computed once and reused across trials.
    """

    gains: np.ndarray  # (T, M, 2, 2)
    sigma_p: np.ndarray  # (T, 2, 2)
    sigma_p_inv: np.ndarray
    logdet_p: np.ndarray  # (T,)

    @property
    def length(self) -> int:
        return self.gains.shape[0]


def gain_schedule(model: FldsModel, length: int) -> GainSchedule:
    run = run_filter(model, np.zeros((length, 2)))
    S = run.sigma_p
    return GainSchedule(run.gains, S, np.linalg.inv(S), np.linalg.slogdet(S)[1])


@dataclass
class SteadyState:
    gains: np.ndarray  # (M, 2, 2)
    sigma_p: np.ndarray
    steps: int


def steady_state(model: FldsModel, tol: float = 1e-10, max_steps: int = 10_000) -> SteadyState:
    """Run the covariance recursion until successive gains differ by less than ``tol``."""
    state = fkff_init(model)
    zero = np.zeros(2)
    prev = None
    for t in range(1, max_steps + 1):
        state, pred = fkff_step(state, model, zero)
        if prev is not None and np.max(np.abs(state.gains - prev)) < tol:
            return SteadyState(state.gains.copy(), pred.cov, t)
        prev = state.gains.copy()
    raise FilterError(f"gains did not converge to {tol:g} within {max_steps} steps")


def batch_predictive_means(model: FldsModel, schedule: GainSchedule, P: np.ndarray) -> np.ndarray:
    """Predictive means for a batch of series ``P`` of shape (B, T, 2); returns (B, T, 2).

    Uses the same mean recursion as :func:`fkff_step` with the precomputed gains.
    """
    B, T, _ = P.shape
    if T > schedule.length:
        raise ValueError(f"schedule covers {schedule.length} steps, batch needs {T}")
    Gs = np.stack([src.G for src in model.sources])  # (M,2,2)
    C_stack = np.hstack([src.C for src in model.sources])  # (2, 2M)
    M = model.M
    mu_hat = np.zeros((B, M, 2))
    out = np.empty((B, T, 2))
    for t in range(T):
        mu_bar = mu_hat if t == 0 else np.einsum("mij,bmj->bmi", Gs, mu_hat)
        mu_p = mu_bar.reshape(B, 2 * M) @ C_stack.T
        out[:, t] = mu_p
        innov = P[:, t] - mu_p
        mu_hat = mu_bar + np.einsum("mij,bj->bmi", schedule.gains[t], innov)
    return out


# ---------------------------------------------------------------------------
# Reference: exact Kalman filter on the stacked state

def stacked_kalman_loglik(model: FldsModel, observations: ObservationSeries, noise_scale: float | None = None) -> np.ndarray:
    """Per-step log predictive densities of the exact joint filter.

    State is the concatenation of all sources; observation noise is
    ``noise_scale * R`` (default M, i.e. one independent draw per source).
    Written independently of the factorial filter, in the textbook
    predict / update form.
    """
    G, C, Qb = model.stacked()
    scale = model.M if noise_scale is None else noise_scale
    R = scale * model.R
    d = G.shape[0]
    x = np.zeros(d)
    P = Qb.copy()
    out = np.empty(len(observations))
    for t, p in enumerate(observations.samples):
        if t > 0:
            x = G @ x
            P = G @ P @ G.T + Qb
        S = C @ P @ C.T + R
        v = p - C @ x
        Sinv = np.linalg.inv(S)
        sign, logdet = np.linalg.slogdet(S)
        out[t] = -0.5 * (2 * LOG_2PI + logdet + v @ Sinv @ v)
        K = P @ C.T @ Sinv
        x = x + K @ v
        IKC = np.eye(d) - K @ C
        P = IKC @ P @ IKC.T + K @ R @ K.T
    return out
