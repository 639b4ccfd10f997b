"""The full learner loop, its diagnostics and trace checkpointing."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..model import ObservationSeries
from ..randdist import RngHandle, sample_matrix_normal
from .gibbs import gibbs_globals, prune_idle
from .pgas import pgas_sweep, sample_sticky
from .slice import initial_noise, slice_extend_chains
from .state import Hyper, IfldsState, empty_state

_LOG_2PI = np.log(2 * np.pi)


@dataclass
class TraceEntry:
    iteration: int
    M: int
    a: list[float]
    b: list[float]
    gamma: list[float]
    G: list[float]
    C: list[float]
    Q: list[float]
    R_obs: list[float]
    log_joint: float


@dataclass
class LearnResult:
    trace: list[TraceEntry]
    best: IfldsState
    best_iteration: int
    final: IfldsState = field(repr=False)

    @property
    def M_hat(self) -> int:
        """Most frequent chain count over the second half of the trace (smallest on ties)."""
        counts = [e.M for e in self.trace[len(self.trace) // 2 :]]
        return int(np.argmax(np.bincount(counts)))

    def write_trace(self, path: str | Path) -> None:
        rows = [e.__dict__ for e in self.trace]
        Path(path).write_text(json.dumps(rows, indent=1) + "\n")


def _samples(observations) -> np.ndarray:
    return observations.samples if isinstance(observations, ObservationSeries) else np.asarray(observations, dtype=float)


def _gauss_terms(diff: np.ndarray, cov: np.ndarray) -> float:
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, diff.T)
    n = diff.shape[0]
    return float(-0.5 * (n * (2 * _LOG_2PI + 2 * np.log(np.diag(L)).sum()) + np.sum(z * z)))


def log_joint(state: IfldsState, observations, sticky: bool = True) -> float:
    """Log joint density of activity, stickiness, latent paths and observations given the globals.

    Priors over the globals and the nonparametric chain-count prior are left out.
    """
    P = _samples(observations)
    if state.M == 0:
        return _gauss_terms(P, state.R_obs)
    S, Z, X = state.S, state.Z, state.X
    prev = np.vstack([np.zeros((1, state.M), S.dtype), S[:-1]])
    A = np.empty((state.M, 2, 2))
    A[:, 0, 0], A[:, 0, 1] = 1 - state.a, state.a
    A[:, 1, 0], A[:, 1, 1] = 1 - state.b, state.b
    m_idx = np.arange(state.M)[None, :]
    moving = Z == 1
    with np.errstate(divide="ignore"):
        total = float(np.sum(np.log(A[m_idx, prev, S])[moving]))
        if np.any(~moving & (S != prev)):
            return -np.inf
        if sticky:
            total += float(np.sum(np.where(moving, np.log1p(-state.gamma), np.log(state.gamma))))
    x_prev = np.concatenate([np.zeros((1, state.M, 2)), X[:-1]], axis=0)
    drift = np.einsum("mij,tmj->tmi", state.G, x_prev)
    mean = np.where(S[:, :, None] == 1, drift, x_prev)
    total += _gauss_terms((X - mean).reshape(-1, 2), state.Q)
    total += _gauss_terms(P - reconstruct(state), state.R_obs)
    return total


def reconstruct(state: IfldsState) -> np.ndarray:
    """Sum over chains of C x, counting only active steps."""
    return np.einsum("mij,tmj->ti", state.C, state.X * state.S[:, :, None])


def reconstruction_error(observations, state: IfldsState) -> float:
    """Mean over time of the squared Euclidean reconstruction error."""
    P = _samples(observations)
    if P.shape[0] != state.T:
        raise ValueError(f"series has {P.shape[0]} samples, state covers {state.T}")
    if state.M == 0:
        return float(np.mean(np.sum(P * P, axis=1)))
    d = P - reconstruct(state)
    return float(np.mean(np.sum(d * d, axis=1)))


def _entry(it: int, state: IfldsState, lj: float) -> TraceEntry:
    return TraceEntry(
        it, int(state.active().sum()), state.a.tolist(), state.b.tolist(), state.gamma.tolist(),
        state.G.ravel().tolist(), state.C.ravel().tolist(), state.Q.ravel().tolist(), state.R_obs.ravel().tolist(), lj,
    )


def initial_state(P: np.ndarray, hyper: Hyper, rng: RngHandle, chains: int = 0) -> IfldsState:
    """Starting point: ``chains`` always-active chains with prior globals, or no chains at all.

    Latent paths start as scaled copies of the observations split evenly
    across chains; the first particle sweep replaces them.
    """
    Q0, R0 = initial_noise(hyper, rng)
    T = P.shape[0]
    state = empty_state(T, Q0, R0)
    if chains == 0:
        return state
    K = chains
    S = np.ones((T, K), np.int8)
    Z = np.ones((T, K), np.int8)
    X = np.repeat(P[:, None, :] / K, K, axis=1)
    G = np.stack([sample_matrix_normal(hyper.M0, Q0, hyper.K0, rng) for _ in range(K)])
    C = np.stack([np.eye(2) + sample_matrix_normal(np.zeros((2, 2)), R0, hyper.K0, rng) for _ in range(K)])
    a = np.sort(rng.gen.uniform(size=K))[::-1].copy()
    b = rng.gen.beta(hyper.beta0, hyper.beta1, size=K)
    g = rng.gen.beta(hyper.gamma0, hyper.gamma1, size=K) if hyper.sticky else np.full(K, 0.5)
    return IfldsState(S, Z, X, a, b, g, G, C, Q0, R0)


def learn(
    observations,
    hyper: Hyper,
    iterations: int,
    n_particles: int,
    rng: RngHandle,
    proposal: str = "full",
    init: IfldsState | None = None,
    init_chains: int = 0,
) -> LearnResult:
    """Run ``iterations`` rounds of: extend chains, particle sweep, global update, prune.

    ``hyper.sticky = False`` forces every z to 1 (the plain Markov IBP).
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    P = _samples(observations)
    if init is None:
        state = initial_state(P, hyper, rng, init_chains)
    else:
        state = init.copy()
    trace: list[TraceEntry] = []
    best, best_lj, best_it = state, -np.inf, 0
    for it in range(1, iterations + 1):
        state, _ = slice_extend_chains(state, hyper, rng)
        S, X = pgas_sweep(state, P, n_particles, rng.seed32(), hyper.sticky, proposal)
        state = IfldsState(S, state.Z, X, state.a, state.b, state.gamma, state.G, state.C, state.Q, state.R_obs)
        state.Z = sample_sticky(state, rng.gen, hyper.sticky)
        state = gibbs_globals(state, P, hyper, rng)
        state = prune_idle(state)
        lj = log_joint(state, P, hyper.sticky)
        trace.append(_entry(it, state, lj))
        if lj > best_lj:
            best, best_lj, best_it = state.copy(), lj, it
    return LearnResult(trace, best, best_it, state)
