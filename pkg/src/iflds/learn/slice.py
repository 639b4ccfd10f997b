"""Slice sampling of the number of chains.

New chains have their activity-onset probability drawn from the density

    f(a) ~ exp(alpha * sum_{t=1}^T (1-a)^t / t) * a^(alpha-1) * (1-a)^T

truncated to (0, a_prev). The density is not log-concave (the a^(alpha-1)
factor and the exponential term pull in opposite directions near 0), so we
use plain rejection from the a^(alpha-1) envelope instead of adaptive
rejection, with a grid inverse-CDF fallback.
"""

from __future__ import annotations

import numpy as np

from ..randdist import RngHandle, sample_inverse_wishart, sample_matrix_normal
from .state import Hyper, IfldsState

MAX_REJECTIONS = 10_000
GRID_POINTS = 10_000
_BATCH = 256


class SliceError(RuntimeError):
    pass


def _partial_log_sum(a: np.ndarray, T: int) -> np.ndarray:
    """sum_{t=1}^T ((1-a)^t - 1) / t for each a, computed stably."""
    t = np.arange(1, T + 1)
    la = np.log1p(-np.asarray(a, dtype=float))[:, None]
    return np.sum(np.expm1(t * la) / t, axis=1)


def log_density(a: np.ndarray, alpha: float, T: int) -> np.ndarray:
    """Log of the unnormalized onset density, up to the constant alpha * H_T."""
    a = np.asarray(a, dtype=float)
    return alpha * _partial_log_sum(a, T) + (alpha - 1) * np.log(a) + T * np.log1p(-a)


def sample_onset(a_prev: float, alpha: float, T: int, rng: RngHandle, max_tries: int = MAX_REJECTIONS) -> float:
    """One draw on (0, a_prev).

    Envelope draws a = a_prev * U^(1/alpha) are accepted with probability
    exp(alpha * (partial sum) + T log(1 - a)), which never exceeds one.
    """
    if not 0.0 < a_prev <= 1.0:
        raise SliceError(f"upper bound must lie in (0, 1], got {a_prev}")
    tries = 0
    while tries < max_tries:
        n = min(_BATCH, max_tries - tries)
        u = rng.gen.random(n)
        a = a_prev * u ** (1.0 / alpha)
        a = np.clip(a, np.finfo(float).tiny, np.nextafter(1.0, 0.0))
        log_acc = alpha * _partial_log_sum(a, T) + T * np.log1p(-a)
        ok = np.log(rng.gen.random(n)) < log_acc
        if ok.any():
            return float(a[np.argmax(ok)])
        tries += n
    return _grid_draw(a_prev, alpha, T, rng)


def _grid_draw(a_prev: float, alpha: float, T: int, rng: RngHandle) -> float:
    lo = max(a_prev * 1e-12, np.finfo(float).tiny)
    hi = min(a_prev, np.nextafter(1.0, 0.0))
    grid = np.geomspace(lo, hi, GRID_POINTS)
    # log-spaced grid: include the Jacobian da = a dlog(a)
    lw = log_density(grid, alpha, T) + np.log(grid)
    if not np.all(np.isfinite(lw)):
        raise SliceError(f"onset density not finite on (0, {a_prev}) with alpha={alpha}, T={T}")
    w = np.exp(lw - lw.max())
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    k = int(np.searchsorted(cdf, rng.gen.random()))
    return float(grid[min(k, GRID_POINTS - 1)])


def new_chain_globals(state: IfldsState, hyper: Hyper, rng: RngHandle) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Prior draws for a new chain: (G, C, b, gamma) given the shared noise covariances."""
    G = sample_matrix_normal(hyper.M0, state.Q, hyper.K0, rng)
    C = sample_matrix_normal(hyper.M0, state.R_obs, hyper.K0, rng)
    b = float(rng.gen.beta(hyper.beta0, hyper.beta1))
    g = float(rng.gen.beta(hyper.gamma0, hyper.gamma1))
    return G, C, b, g


def slice_extend_chains(state: IfldsState, hyper: Hyper, rng: RngHandle) -> tuple[IfldsState, float]:
    """Append all-idle chains whose onset probability exceeds a fresh slice level.

    Returns the extended state (sorted by onset probability) and the slice
    level. With no active chain the first proposed chain is always kept.
    """
    T = state.T
    active = state.active()
    a_min = float(state.a[active].min()) if active.any() else 1.0
    level = float(rng.gen.uniform(0.0, a_min))
    a_prev = a_min
    new_a: list[float] = []
    while True:
        a_new = sample_onset(a_prev, hyper.alpha, T, rng)
        bootstrap = not active.any() and not new_a
        if a_new <= level and not bootstrap:
            break
        new_a.append(a_new)
        a_prev = a_new
    if not new_a:
        return state, level
    k = len(new_a)
    S = np.hstack([state.S, np.zeros((T, k), np.int8)])
    Z = np.hstack([state.Z, np.ones((T, k), np.int8)])
    X_new = np.cumsum(rng.gen.standard_normal((T, k, 2)) @ np.linalg.cholesky(state.Q).T, axis=0)
    X = np.concatenate([state.X, X_new], axis=1)
    G, C, b, g = [list(v) for v in (state.G, state.C, state.b, state.gamma)]
    for _ in range(k):
        Gm, Cm, bm, gm = new_chain_globals(state, hyper, rng)
        G.append(Gm)
        C.append(Cm)
        b.append(bm)
        g.append(gm)
    out = IfldsState(
        S, Z, X,
        np.concatenate([state.a, new_a]),
        np.asarray(b), np.asarray(g),
        np.asarray(G).reshape(-1, 2, 2), np.asarray(C).reshape(-1, 2, 2),
        state.Q, state.R_obs,
    )
    return out.sort_by_a(), level


def initial_noise(hyper: Hyper, rng: RngHandle) -> tuple[np.ndarray, np.ndarray]:
    """Prior draws for the shared process and total observation noise."""
    return sample_inverse_wishart(hyper.n0, hyper.S0, rng), sample_inverse_wishart(hyper.n0, hyper.S0, rng)
