"""Conjugate updates of the global variables given activity and latent paths."""

from __future__ import annotations

import numpy as np

from ..randdist import (
    DistributionError,
    MniwPrior,
    RngHandle,
    mniw_posterior,
    sample_inverse_wishart,
    sample_matrix_normal,
)
from .state import ZERO_SHAPE_EPS, Hyper, IfldsState, dynamics_regression, transition_counts


def _shape(v: float) -> float:
    return v if v > 0 else ZERO_SHAPE_EPS


def sample_switch_probs(state: IfldsState, hyper: Hyper, rng: RngHandle) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Onset, persistence and stickiness probabilities for every chain."""
    c = transition_counts(state.S, state.Z)
    M = state.M
    a = np.array([rng.gen.beta(_shape(c.n01[m]), 1.0 + c.n00[m]) for m in range(M)])
    b = np.array([rng.gen.beta(hyper.beta0 + c.n11[m], hyper.beta1 + c.n10[m]) for m in range(M)])
    g = np.array([rng.gen.beta(hyper.gamma0 + c.n_sticky[m], hyper.gamma1 + c.n_moving[m]) for m in range(M)])
    # keep draws strictly inside (0, 1) so log transition probabilities stay finite
    lo, hi = np.finfo(float).tiny, np.nextafter(1.0, 0.0)
    return np.clip(a, lo, hi), np.clip(b, lo, hi), np.clip(g, lo, hi)


def dynamics_posteriors(state: IfldsState, hyper: Hyper) -> tuple[list[MniwPrior], np.ndarray, int]:
    """Per-chain transition posteriors plus the pooled residual scatter and count for the shared Q.

    Active steps regress x_t on x_{t-1}; idle steps are random-walk increments.
    """
    prior = hyper.prior
    posts = []
    scatter = np.zeros((2, 2))
    n = 0
    for m in range(state.M):
        psi, psi_bar, idle = dynamics_regression(state.X[:, m], state.S[:, m])
        post = mniw_posterior(prior, psi, psi_bar)
        posts.append(post)
        scatter += (post.S0 - prior.S0) + idle
        n += state.T
    return posts, scatter, n


def sample_dynamics(state: IfldsState, hyper: Hyper, rng: RngHandle) -> tuple[np.ndarray, np.ndarray]:
    """Shared Q from its marginal posterior, then each G given Q."""
    posts, scatter, n = dynamics_posteriors(state, hyper)
    S = hyper.S0 + scatter
    Q = sample_inverse_wishart(hyper.n0 + n, 0.5 * (S + S.T), rng)
    G = np.stack([sample_matrix_normal(p.M0, Q, p.K0, rng) for p in posts]) if posts else np.zeros((0, 2, 2))
    return G, Q


def sample_output(state: IfldsState, observations: np.ndarray, hyper: Hyper, rng: RngHandle) -> tuple[np.ndarray, np.ndarray]:
    """Joint regression of the observations on all masked latent states.

    Returns per-chain output matrices (M, 2, 2) and the total observation
    noise covariance.
    """
    M = state.M
    T = state.T
    Xm = (state.X * state.S[:, :, None]).reshape(T, 2 * M).T  # (2M, T)
    K0 = np.kron(np.eye(M), hyper.K0)
    M0 = np.tile(hyper.M0, (1, M))
    prior = MniwPrior(M0, K0, hyper.n0, hyper.S0)
    post = mniw_posterior(prior, np.asarray(observations).T, Xm)
    R = sample_inverse_wishart(post.n0, post.S0, rng)
    C_stack = sample_matrix_normal(post.M0, R, post.K0, rng)
    C = C_stack.reshape(2, M, 2).transpose(1, 0, 2)
    return C, R


def gibbs_globals(state: IfldsState, observations: np.ndarray, hyper: Hyper, rng: RngHandle) -> IfldsState:
    """One pass over (a, b, gamma), (G, Q) and (C, R); chains re-sorted by onset probability."""
    if state.M == 0:
        return state
    a, b, g = sample_switch_probs(state, hyper, rng)
    try:
        G, Q = sample_dynamics(state, hyper, rng)
        C, R = sample_output(state, observations, hyper, rng)
    except DistributionError as exc:
        raise DistributionError(f"global update failed: {exc}") from exc
    out = IfldsState(state.S, state.Z, state.X, a, b, g, G, C, Q, R)
    return out.sort_by_a()


def prune_idle(state: IfldsState) -> IfldsState:
    """Drop chains that are never active."""
    keep = np.flatnonzero(state.active())
    if keep.size == state.M:
        return state
    return state.take(keep)
