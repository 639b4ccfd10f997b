"""Sampler state, hyperparameters and the count / scatter statistics the updates need."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import FldsModel, LdsParams, ObservationSeries
from ..randdist import MniwPrior

ZERO_SHAPE_EPS = 1e-6


@dataclass
class Hyper:
    alpha: float = 1.0
    beta0: float = 2.0
    beta1: float = 0.1
    gamma0: float = 10.0
    gamma1: float = 1.0
    n0: float = 4.0
    K0: np.ndarray = field(default_factory=lambda: np.eye(2))
    M0: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    S0: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(2))
    sticky: bool = True

    def __post_init__(self) -> None:
        for name in ("alpha", "beta0", "beta1", "gamma0", "gamma1"):
            if not getattr(self, name) > 0:
                raise ValueError(f"hyperparameter {name} must be positive")
        self.K0 = np.asarray(self.K0, dtype=float)
        self.M0 = np.asarray(self.M0, dtype=float)
        self.S0 = np.asarray(self.S0, dtype=float)
        MniwPrior(self.M0, self.K0, self.n0, self.S0)  # validates

    @property
    def prior(self) -> MniwPrior:
        return MniwPrior(self.M0, self.K0, self.n0, self.S0)

    @classmethod
    def from_data(cls, observations: ObservationSeries, sources: int, scale: float = 0.75, **kw) -> "Hyper":
        """Noise scale matrix set to ``scale`` times the per-source share of the sample covariance."""
        p = observations.samples
        d = p - p.mean(axis=0)
        s_bar = d.T @ d / (sources * len(p))
        return cls(S0=scale * s_bar, **kw)


@dataclass
class IfldsState:
    """All sampled quantities for M chains over T steps.

    ``gamma`` is the probability that a step is *sticky* (z = 0, chain keeps
    its state). ``R_obs`` is the total observation-noise covariance; each
    source's share is ``R_obs / M``.
    """

    S: np.ndarray  # (T, M) int8 activity
    Z: np.ndarray  # (T, M) int8, 1 = transition drawn from the chain's matrix
    X: np.ndarray  # (T, M, 2)
    a: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    G: np.ndarray  # (M, 2, 2)
    C: np.ndarray  # (M, 2, 2)
    Q: np.ndarray
    R_obs: np.ndarray

    @property
    def M(self) -> int:
        return self.S.shape[1]

    @property
    def T(self) -> int:
        return self.S.shape[0]

    def active(self) -> np.ndarray:
        return self.S.any(axis=0)

    def check(self) -> None:
        T, M = self.S.shape
        shapes = {
            "Z": (self.Z.shape, (T, M)),
            "X": (self.X.shape, (T, M, 2)),
            "a": (self.a.shape, (M,)),
            "b": (self.b.shape, (M,)),
            "gamma": (self.gamma.shape, (M,)),
            "G": (self.G.shape, (M, 2, 2)),
            "C": (self.C.shape, (M, 2, 2)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise ValueError(f"state field {name} has shape {got}, expected {want}")

    def take(self, idx) -> "IfldsState":
        """Chains reordered / subset by ``idx``."""
        idx = np.asarray(idx, dtype=int)
        return IfldsState(
            self.S[:, idx].copy(),
            self.Z[:, idx].copy(),
            self.X[:, idx].copy(),
            self.a[idx].copy(),
            self.b[idx].copy(),
            self.gamma[idx].copy(),
            self.G[idx].copy(),
            self.C[idx].copy(),
            self.Q.copy(),
            self.R_obs.copy(),
        )

    def copy(self) -> "IfldsState":
        return self.take(np.arange(self.M))

    def sort_by_a(self) -> "IfldsState":
        return self.take(np.argsort(-self.a, kind="stable"))

    def transition_matrices(self, sticky: bool = True) -> np.ndarray:
        """Per-chain activity transition matrices with z marginalized out, (M, 2, 2).

        With stickiness off, z is always 1 and the chain's own matrix applies.
        """
        A = np.empty((self.M, 2, 2))
        A[:, 0, 0] = 1 - self.a
        A[:, 0, 1] = self.a
        A[:, 1, 0] = 1 - self.b
        A[:, 1, 1] = self.b
        if sticky:
            g = self.gamma[:, None, None]
            A = g * np.eye(2) + (1 - g) * A
        return A

    def to_model(self) -> FldsModel:
        """Background model made of the chains that are active somewhere."""
        idx = np.flatnonzero(self.active())
        if idx.size == 0:
            raise ValueError("no active chains")
        R = self.R_obs / idx.size
        R = 0.5 * (R + R.T)
        Q = 0.5 * (self.Q + self.Q.T)
        return FldsModel([LdsParams(self.G[m], self.C[m], Q, R) for m in idx])


def empty_state(T: int, Q: np.ndarray, R_obs: np.ndarray) -> IfldsState:
    z2 = np.zeros((0, 2, 2))
    return IfldsState(
        np.zeros((T, 0), np.int8), np.zeros((T, 0), np.int8), np.zeros((T, 0, 2)),
        np.zeros(0), np.zeros(0), np.zeros(0), z2, z2.copy(), Q, R_obs,
    )


@dataclass
class TransitionCounts:
    """Per-chain counts; n_ij counts moves i -> j on steps with z = 1, starting from s_0 = 0."""

    n00: np.ndarray
    n01: np.ndarray
    n10: np.ndarray
    n11: np.ndarray
    n_sticky: np.ndarray  # steps with z = 0
    n_moving: np.ndarray  # steps with z = 1


def transition_counts(S: np.ndarray, Z: np.ndarray) -> TransitionCounts:
    S = np.asarray(S, dtype=np.int8)
    Z = np.asarray(Z, dtype=np.int8)
    if S.ndim == 1:
        S, Z = S[:, None], Z[:, None]
    prev = np.vstack([np.zeros((1, S.shape[1]), np.int8), S[:-1]])
    live = Z == 1

    def count(i: int, j: int) -> np.ndarray:
        return np.sum(live & (prev == i) & (S == j), axis=0)

    return TransitionCounts(count(0, 0), count(0, 1), count(1, 0), count(1, 1), np.sum(Z == 0, axis=0), np.sum(live, axis=0))


def dynamics_regression(x: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split one chain's path into active regression pairs and idle increments.

    Returns (targets psi, regressors psi_bar) as (2, N) arrays over active
    steps, plus the (2, 2) scatter of idle-step increments. The path starts
    from x_0 = 0.
    """
    prev = np.vstack([np.zeros((1, 2)), x[:-1]])
    on = s.astype(bool)
    psi = x[on].T
    psi_bar = prev[on].T
    inc = x[~on] - prev[~on]
    return psi, psi_bar, inc.T @ inc
