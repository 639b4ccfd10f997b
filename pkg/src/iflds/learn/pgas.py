"""Particle Gibbs with ancestor sampling over chain activity and latent states.

A particle holds, for every chain, its activity bit and 2-d latent state at
one time step. The sticky variables are summed out of the activity
transition while the particle system runs and drawn afterwards from their
full conditional given the selected path.

Proposals:

* ``"full"`` (default): activity pattern from its conditional given the
  current observation (all 2^M patterns enumerated), then latent states from
  their Gaussian conditional. The weight is the observation's predictive
  density given the parent, summed over patterns.
* ``"adapted"``: activity from its transition, latent states as above; the
  weight is the predictive density given parent and activity.
* ``"bootstrap"``: everything from the transition; the weight is the
  observation density.

Above ``MAX_ENUMERATED_CHAINS`` chains the full proposal falls back to
``"adapted"``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .state import IfldsState

_LOG_2PI = math.log(2 * math.pi)


class ParticleDegeneracy(FloatingPointError):
    pass


@njit(cache=True)
def _inv2(A):
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    out = np.empty((2, 2))
    out[0, 0] = A[1, 1] / det
    out[1, 1] = A[0, 0] / det
    out[0, 1] = -A[0, 1] / det
    out[1, 0] = -A[1, 0] / det
    return out, math.log(det)


@njit(cache=True)
def _chol2(A):
    L = np.zeros((2, 2))
    L[0, 0] = math.sqrt(max(A[0, 0], 0.0))
    if L[0, 0] > 0:
        L[1, 0] = A[1, 0] / L[0, 0]
    L[1, 1] = math.sqrt(max(A[1, 1] - L[1, 0] ** 2, 0.0))
    return L


@njit(cache=True)
def _gauss_logpdf(d0, d1, Sinv, logdet):
    q = d0 * (Sinv[0, 0] * d0 + Sinv[0, 1] * d1) + d1 * (Sinv[1, 0] * d0 + Sinv[1, 1] * d1)
    return -0.5 * (2.0 * 1.8378770664093453 + logdet + q)


@njit(cache=True)
def _normalize(logw, W):
    mx = -np.inf
    for i in range(logw.shape[0]):
        if logw[i] > mx:
            mx = logw[i]
    if mx == -np.inf or not np.isfinite(mx):
        return False
    tot = 0.0
    for i in range(logw.shape[0]):
        W[i] = math.exp(logw[i] - mx)
        tot += W[i]
    for i in range(logw.shape[0]):
        W[i] /= tot
    return True


@njit(cache=True)
def _draw(W):
    u = np.random.random()
    c = 0.0
    n = W.shape[0]
    for i in range(n):
        c += W[i]
        if u < c:
            return i
    # Round-off: fall back to the last index with positive weight.
    for i in range(n - 1, -1, -1):
        if W[i] > 0:
            return i
    return n - 1


@njit(cache=True)
def _predictive(s, x_prev, G, C, CQC, R, fx):
    """Fill fx with transition means and return the observation predictive (mean, cov)."""
    M = G.shape[0]
    mu = np.zeros(2)
    S = R.copy()
    for m in range(M):
        if s[m] == 1:
            fx[m, 0] = G[m, 0, 0] * x_prev[m, 0] + G[m, 0, 1] * x_prev[m, 1]
            fx[m, 1] = G[m, 1, 0] * x_prev[m, 0] + G[m, 1, 1] * x_prev[m, 1]
            mu[0] += C[m, 0, 0] * fx[m, 0] + C[m, 0, 1] * fx[m, 1]
            mu[1] += C[m, 1, 0] * fx[m, 0] + C[m, 1, 1] * fx[m, 1]
            S += CQC[m]
        else:
            fx[m, 0] = x_prev[m, 0]
            fx[m, 1] = x_prev[m, 1]
    return mu, S


@njit(cache=True)
def _pattern_logs(p0, p1, x_prev, s_prev, G, C, CQC, R, trans_log, pat, fx, out):
    """Log of P(s | s_prev) * N(p; predictive given s) for every activity pattern; returns log-sum."""
    M = G.shape[0]
    mx = -np.inf
    for k in range(pat.shape[0]):
        lt = 0.0
        for m in range(M):
            lt += trans_log[m, s_prev[m], pat[k, m]]
        if lt == -np.inf:
            out[k] = -np.inf
            continue
        mu, S = _predictive(pat[k], x_prev, G, C, CQC, R, fx)
        Sinv, logdet = _inv2(S)
        out[k] = lt + _gauss_logpdf(p0 - mu[0], p1 - mu[1], Sinv, logdet)
        if out[k] > mx:
            mx = out[k]
    if mx == -np.inf:
        return -np.inf
    tot = 0.0
    for k in range(pat.shape[0]):
        tot += math.exp(out[k] - mx)
    return mx + math.log(tot)


@njit(cache=True)
def _pgas_kernel(P, G, C, Q, R, trans_log, ref_s, ref_x, n_part, seed, mode, pat):
    """mode 0: bootstrap; 1: latent states adapted; 2: activity and latent states adapted."""
    np.random.seed(seed)
    T = P.shape[0]
    M = G.shape[0]
    xs = np.zeros((T, n_part, M, 2))
    ss = np.zeros((T, n_part, M), dtype=np.int8)
    anc = np.zeros((T, n_part), dtype=np.int64)
    logw = np.empty(n_part)
    W = np.empty(n_part)
    W_prev = np.empty(n_part)
    Qinv, logdetQ = _inv2(Q)
    Rinv, logdetR = _inv2(R)
    LQ = _chol2(Q)
    LR = _chol2(R)
    CQC = np.zeros((M, 2, 2))
    QCt = np.zeros((M, 2, 2))
    for m in range(M):
        QCt[m] = Q @ C[m].T
        CQC[m] = C[m] @ QCt[m]
    x_prev = np.zeros((M, 2))
    s_prev = np.zeros(M, dtype=np.int8)
    fx = np.zeros((M, 2))
    lw_anc = np.empty(n_part)
    W_anc = np.empty(n_part)
    lpat = np.empty(pat.shape[0])
    wpat = np.empty(pat.shape[0])
    for t in range(T):
        p0 = P[t, 0]
        p1 = P[t, 1]
        # ancestor of the reference particle
        if t > 0:
            for j in range(n_part):
                lf = 0.0
                for m in range(M):
                    sr = ref_s[t, m]
                    lf += trans_log[m, ss[t - 1, j, m], sr]
                    xp0 = xs[t - 1, j, m, 0]
                    xp1 = xs[t - 1, j, m, 1]
                    if sr == 1:
                        m0 = G[m, 0, 0] * xp0 + G[m, 0, 1] * xp1
                        m1 = G[m, 1, 0] * xp0 + G[m, 1, 1] * xp1
                    else:
                        m0 = xp0
                        m1 = xp1
                    lf += _gauss_logpdf(ref_x[t, m, 0] - m0, ref_x[t, m, 1] - m1, Qinv, logdetQ)
                lw_anc[j] = math.log(W_prev[j]) + lf if W_prev[j] > 0 else -np.inf
            if not _normalize(lw_anc, W_anc):
                return xs[:, 0], ss[:, 0], -(t + 1), anc
            anc[t, n_part - 1] = _draw(W_anc)
            for i in range(n_part - 1):
                anc[t, i] = _draw(W_prev)
        for i in range(n_part):
            is_ref = i == n_part - 1
            if t > 0:
                a_i = anc[t, i]
                for m in range(M):
                    x_prev[m, 0] = xs[t - 1, a_i, m, 0]
                    x_prev[m, 1] = xs[t - 1, a_i, m, 1]
                    s_prev[m] = ss[t - 1, a_i, m]
            else:
                for m in range(M):
                    x_prev[m, 0] = 0.0
                    x_prev[m, 1] = 0.0
                    s_prev[m] = 0
            # activity, and for mode 2 the weight p(p_t | parent)
            if mode == 2:
                logw[i] = _pattern_logs(p0, p1, x_prev, s_prev, G, C, CQC, R, trans_log, pat, fx, lpat)
            if is_ref:
                for m in range(M):
                    ss[t, i, m] = ref_s[t, m]
            elif mode == 2:
                _normalize(lpat, wpat)
                k = _draw(wpat)
                for m in range(M):
                    ss[t, i, m] = pat[k, m]
            else:
                for m in range(M):
                    p_on = math.exp(trans_log[m, s_prev[m], 1])
                    ss[t, i, m] = 1 if np.random.random() < p_on else 0
            mu, S = _predictive(ss[t, i], x_prev, G, C, CQC, R, fx)
            if is_ref:
                for m in range(M):
                    xs[t, i, m, 0] = ref_x[t, m, 0]
                    xs[t, i, m, 1] = ref_x[t, m, 1]
            elif mode >= 1:
                # Matheron update: prior draw corrected by the simulated observation residual.
                e0 = np.random.standard_normal()
                e1 = np.random.standard_normal()
                pt0 = LR[0, 0] * e0
                pt1 = LR[1, 0] * e0 + LR[1, 1] * e1
                for m in range(M):
                    e0 = np.random.standard_normal()
                    e1 = np.random.standard_normal()
                    xs[t, i, m, 0] = fx[m, 0] + LQ[0, 0] * e0
                    xs[t, i, m, 1] = fx[m, 1] + LQ[1, 0] * e0 + LQ[1, 1] * e1
                    if ss[t, i, m] == 1:
                        pt0 += C[m, 0, 0] * xs[t, i, m, 0] + C[m, 0, 1] * xs[t, i, m, 1]
                        pt1 += C[m, 1, 0] * xs[t, i, m, 0] + C[m, 1, 1] * xs[t, i, m, 1]
                Sinv, _ = _inv2(S)
                r0 = p0 - pt0
                r1 = p1 - pt1
                v0 = Sinv[0, 0] * r0 + Sinv[0, 1] * r1
                v1 = Sinv[1, 0] * r0 + Sinv[1, 1] * r1
                for m in range(M):
                    if ss[t, i, m] == 1:
                        xs[t, i, m, 0] += QCt[m, 0, 0] * v0 + QCt[m, 0, 1] * v1
                        xs[t, i, m, 1] += QCt[m, 1, 0] * v0 + QCt[m, 1, 1] * v1
            else:
                for m in range(M):
                    e0 = np.random.standard_normal()
                    e1 = np.random.standard_normal()
                    xs[t, i, m, 0] = fx[m, 0] + LQ[0, 0] * e0
                    xs[t, i, m, 1] = fx[m, 1] + LQ[1, 0] * e0 + LQ[1, 1] * e1
            if mode == 1:
                Sinv, logdetS = _inv2(S)
                logw[i] = _gauss_logpdf(p0 - mu[0], p1 - mu[1], Sinv, logdetS)
            elif mode == 0:
                o0 = 0.0
                o1 = 0.0
                for m in range(M):
                    if ss[t, i, m] == 1:
                        o0 += C[m, 0, 0] * xs[t, i, m, 0] + C[m, 0, 1] * xs[t, i, m, 1]
                        o1 += C[m, 1, 0] * xs[t, i, m, 0] + C[m, 1, 1] * xs[t, i, m, 1]
                logw[i] = _gauss_logpdf(p0 - o0, p1 - o1, Rinv, logdetR)
        if not _normalize(logw, W):
            return xs[:, 0], ss[:, 0], t + 1, anc
        for i in range(n_part):
            W_prev[i] = W[i]
    # select one path by its final weight and trace its lineage back
    fail = 0
    k = _draw(W_prev)
    x_out = np.empty((T, M, 2))
    s_out = np.empty((T, M), dtype=np.int8)
    for t in range(T - 1, -1, -1):
        x_out[t] = xs[t, k]
        s_out[t] = ss[t, k]
        k = anc[t, k]
    return x_out, s_out, fail, anc


PROPOSALS = {"bootstrap": 0, "adapted": 1, "full": 2}
MAX_ENUMERATED_CHAINS = 8


def activity_patterns(M: int) -> np.ndarray:
    """All 2^M activity bit patterns, (2^M, M) int8."""
    k = np.arange(2**M)[:, None]
    return ((k >> np.arange(M)[None, :]) & 1).astype(np.int8)


def pgas_sweep(
    state: IfldsState,
    observations: np.ndarray,
    n_particles: int,
    seed: int,
    sticky: bool = True,
    proposal: str = "full",
) -> tuple[np.ndarray, np.ndarray]:
    """One conditional SMC sweep with the state's current (S, X) as reference.

    Returns the new activity matrix (T, M) and latent paths (T, M, 2).
    With a single particle the reference is returned unchanged.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if proposal not in PROPOSALS:
        raise ValueError(f"unknown proposal {proposal!r}")
    mode = PROPOSALS[proposal]
    if mode == 2 and state.M > MAX_ENUMERATED_CHAINS:
        mode = 1
    if state.M == 0:
        return state.S.copy(), state.X.copy()
    P = np.ascontiguousarray(observations, dtype=float)
    with np.errstate(divide="ignore"):
        trans_log = np.log(state.transition_matrices(sticky))
    x, s, fail, _ = _pgas_kernel(
        P,
        np.ascontiguousarray(state.G),
        np.ascontiguousarray(state.C),
        np.ascontiguousarray(state.Q),
        np.ascontiguousarray(state.R_obs),
        trans_log,
        np.ascontiguousarray(state.S, dtype=np.int8),
        np.ascontiguousarray(state.X),
        int(n_particles),
        int(seed),
        mode,
        activity_patterns(state.M if mode == 2 else 0),
    )
    if fail > 0:
        raise ParticleDegeneracy(f"all particle weights vanished at t={fail}")
    if fail < 0:
        raise ParticleDegeneracy(f"all ancestor weights vanished at t={-fail}")
    return s, x


def sample_sticky(state: IfldsState, gen: np.random.Generator, sticky: bool = True) -> np.ndarray:
    """Draw z from its full conditional given the activity path.

    A change of state forces z = 1. A repeat has z = 0 with probability
    proportional to gamma and z = 1 proportional to (1 - gamma) times the
    chain's own stay probability.
    """
    S = state.S
    if not sticky:
        return np.ones_like(S, dtype=np.int8)
    prev = np.vstack([np.zeros((1, S.shape[1]), S.dtype), S[:-1]])
    stay = np.where(prev == 1, state.b[None, :], 1 - state.a[None, :])
    g = state.gamma[None, :]
    p_sticky = g / (g + (1 - g) * stay)
    z = (gen.random(S.shape) >= p_sticky).astype(np.int8)
    z[S != prev] = 1
    return z
