"""Background models used by the comparison detectors.

* a single i.i.d. Gaussian fitted by maximum likelihood;
* a single 2-d LDS fitted by expectation-maximization (Kalman filter plus
  Rauch-Tung-Striebel smoother).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FldsModel, LdsParams


@dataclass
class GaussianBackground:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def fit(cls, samples: np.ndarray) -> "GaussianBackground":
        samples = np.asarray(samples, dtype=float)
        mu = samples.mean(axis=0)
        d = samples - mu
        return cls(mu, d.T @ d / len(samples))

    def llr(self, P: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-sample statistic with constant predictive (mean, cov); P is (..., T, 2)."""
        u = np.linalg.solve(self.cov, np.asarray(y, dtype=float))
        return (P - self.mean - 0.5 * np.asarray(y)) @ u


def _smooth(P: np.ndarray, G, C, Q, R):
    """Filter + RTS smoother with x_1 ~ N(0, Q); returns smoothed means, covariances, lag-one cross covariances and loglik."""
    T = P.shape[0]
    d = G.shape[0]
    mf = np.zeros((T, d))
    Pf = np.zeros((T, d, d))
    mp = np.zeros((T, d))
    Pp = np.zeros((T, d, d))
    ll = 0.0
    m, V = np.zeros(d), Q.copy()
    for t in range(T):
        if t > 0:
            m, V = G @ mf[t - 1], G @ Pf[t - 1] @ G.T + Q
        mp[t], Pp[t] = m, V
        S = C @ V @ C.T + R
        Sinv = np.linalg.inv(S)
        v = P[t] - C @ m
        ll += -0.5 * (len(v) * np.log(2 * np.pi) + np.linalg.slogdet(S)[1] + v @ Sinv @ v)
        K = V @ C.T @ Sinv
        mf[t] = m + K @ v
        Vf = V - K @ C @ V
        Pf[t] = 0.5 * (Vf + Vf.T)
    ms = mf.copy()
    Ps = Pf.copy()
    cross = np.zeros((T, d, d))  # cross[t] = Cov(x_t, x_{t-1} | all)
    for t in range(T - 2, -1, -1):
        J = Pf[t] @ G.T @ np.linalg.inv(Pp[t + 1])
        ms[t] = mf[t] + J @ (ms[t + 1] - mp[t + 1])
        Vs = Pf[t] + J @ (Ps[t + 1] - Pp[t + 1]) @ J.T
        Ps[t] = 0.5 * (Vs + Vs.T)
        cross[t + 1] = Ps[t + 1] @ J.T
    return ms, Ps, cross, ll


@dataclass
class EmFit:
    params: LdsParams
    logliks: list[float]

    def model(self) -> FldsModel:
        return FldsModel([self.params])


def fit_lds_em(samples: np.ndarray, iterations: int = 50, init: LdsParams | None = None) -> EmFit:
    """Maximum-likelihood single LDS on zero-mean data."""
    P = np.asarray(samples, dtype=float)
    T = P.shape[0]
    if init is None:
        cov = P.T @ P / T
        G, C, Q, R = 0.9 * np.eye(2), np.eye(2), 0.5 * cov * (1 - 0.81), 0.5 * cov
    else:
        G, C, Q, R = init.G.copy(), init.C.copy(), init.Q.copy(), init.R.copy()
    lls = []
    for _ in range(iterations):
        ms, Ps, cross, ll = _smooth(P, G, C, Q, R)
        lls.append(float(ll))
        Exx = Ps + np.einsum("ti,tj->tij", ms, ms)
        Exx1 = cross[1:] + np.einsum("ti,tj->tij", ms[1:], ms[:-1])  # E[x_t x_{t-1}^T]
        Sxx = Exx.sum(axis=0)
        C = (P.T @ ms) @ np.linalg.inv(Sxx)
        R = (P.T @ P - C @ (ms.T @ P)) / T
        R = 0.5 * (R + R.T)
        A = Exx1.sum(axis=0)
        B = Exx[:-1].sum(axis=0)
        G = A @ np.linalg.inv(B)
        # x_1 ~ N(0, Q) contributes E[x_1 x_1^T]
        Q = (Exx[1:].sum(axis=0) - G @ A.T + Exx[0]) / T
        Q = 0.5 * (Q + Q.T)
    return EmFit(LdsParams(G, C, Q, R), lls)
