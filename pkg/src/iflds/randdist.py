"""Seeded sampling and density helpers shared by every stochastic routine.

All randomness in the package flows through :class:`RngHandle`; nothing
touches numpy's global generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

PSD_TOL = 1e-10
SYM_TOL = 1e-12


class DistributionError(ValueError):
    """Invalid distribution parameters."""


@dataclass
class RngHandle:
    """A (seed, stream-id) pair backed by a PCG64 generator.

    Two handles with the same pair produce the same draws. Different stream
    ids map to independent ``SeedSequence`` spawn keys.
    """

    seed: int
    stream_id: int = 0
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id),))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RngHandle":
        """Independent handle for sub-task ``index`` (e.g. one Monte Carlo trial)."""
        # Mix the parent stream into a fresh 64-bit stream id.
        key = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream_id), int(index) + 1))
        return RngHandle(self.seed, int(key.generate_state(1, np.uint64)[0]))

    def seed32(self) -> int:
        """Draw a 32-bit seed for kernels that keep their own generator (numba)."""
        return int(self.gen.integers(0, 2**31 - 1))


@dataclass
class MvGaussian:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise DistributionError(f"covariance shape {self.covariance.shape} does not match mean length {d}")
        if not np.allclose(self.covariance, self.covariance.T, atol=SYM_TOL, rtol=0):
            raise DistributionError("covariance is not symmetric")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass
class MniwPrior:
    """Matrix-normal inverse-Wishart prior.

    ``K0`` enters as the column *precision* of the matrix-normal block:
    ``vec(A) ~ N(vec(M0), inv(K0) kron Sigma)``. Large ``K0`` pins ``A`` to
    ``M0``; ``K0 -> 0`` is the flat limit.
    """

    M0: np.ndarray
    K0: np.ndarray
    n0: float
    S0: np.ndarray

    def __post_init__(self) -> None:
        self.M0 = np.atleast_2d(np.asarray(self.M0, dtype=float))
        self.K0 = np.atleast_2d(np.asarray(self.K0, dtype=float))
        self.S0 = np.atleast_2d(np.asarray(self.S0, dtype=float))
        d = self.S0.shape[0]
        if self.M0.shape[0] != d or self.K0.shape != (self.M0.shape[1], self.M0.shape[1]):
            raise DistributionError("inconsistent MNIW prior shapes")
        if self.n0 <= d - 1:
            raise DistributionError(f"n0={self.n0} must exceed d-1={d - 1}")
        for name, mat in (("K0", self.K0), ("S0", self.S0)):
            if not np.allclose(mat, mat.T, atol=SYM_TOL, rtol=0):
                raise DistributionError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(mat).min() <= 0:
                raise DistributionError(f"{name} is not positive definite")


def clamp_psd(cov: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetrize and clip eigenvalues at zero.

    Eigenvalues below ``-tol`` are a genuine error, not drift.
    """
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -tol:
        raise DistributionError(f"covariance not PSD: eigenvalue {vals.min():.3e} < -{tol:g}")
    if vals.min() >= 0:
        return cov
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals) @ vecs.T


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Square-root factor L with L @ L.T == cov, tolerant of singular cov."""
    cov = clamp_psd(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_mv_gaussian(dist: MvGaussian, rng: RngHandle, size: int | None = None) -> np.ndarray:
    L = psd_sqrt(dist.covariance)
    if size is None:
        return dist.mean + L @ rng.gen.standard_normal(dist.dim)
    z = rng.gen.standard_normal((size, dist.dim))
    return dist.mean + z @ L.T


def sample_beta(alpha: float, beta: float, rng: RngHandle, size: int | None = None):
    if not (np.isfinite(alpha) and np.isfinite(beta)) or alpha <= 0 or beta <= 0:
        raise DistributionError(f"Beta shapes must be finite and positive, got ({alpha}, {beta})")
    return rng.gen.beta(alpha, beta, size=size)


def sample_inverse_wishart(n: float, S: np.ndarray, rng: RngHandle) -> np.ndarray:
    """IW(n, S) via the Bartlett factor of Wishart(n, inv(S))."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    d = S.shape[0]
    if n <= d - 1:
        raise DistributionError(f"degrees of freedom n={n} must exceed d-1={d - 1}")
    L = np.linalg.cholesky(np.linalg.inv(S))
    A = np.zeros((d, d))
    for i in range(d):
        A[i, i] = np.sqrt(rng.gen.chisquare(n - i))
        A[i, :i] = rng.gen.standard_normal(i)
    LA = L @ A
    W = LA @ LA.T
    sigma = np.linalg.inv(W)
    return 0.5 * (sigma + sigma.T)


def sample_matrix_normal(M: np.ndarray, row_cov: np.ndarray, col_precision: np.ndarray, rng: RngHandle) -> np.ndarray:
    Lr = psd_sqrt(row_cov)
    Lc = np.linalg.cholesky(np.linalg.inv(col_precision))
    Z = rng.gen.standard_normal(M.shape)
    return M + Lr @ Z @ Lc.T


def sample_mniw(prior: MniwPrior, rng: RngHandle) -> tuple[np.ndarray, np.ndarray]:
    """Draw (A, Sigma): Sigma ~ IW(n0, S0), then A | Sigma ~ MN(M0, Sigma, K0)."""
    sigma = sample_inverse_wishart(prior.n0, prior.S0, rng)
    A = sample_matrix_normal(prior.M0, sigma, prior.K0, rng)
    return A, sigma


def mniw_posterior(prior: MniwPrior, Y: np.ndarray, X: np.ndarray) -> MniwPrior:
    """Conjugate update for Y = A X + E with E columns ~ N(0, Sigma).

    ``Y`` is (d, N) and ``X`` is (k, N); columns are paired observations.
    """
    Sxx = X @ X.T + prior.K0
    Syx = Y @ X.T + prior.M0 @ prior.K0
    Syy = Y @ Y.T + prior.M0 @ prior.K0 @ prior.M0.T
    Sxx = 0.5 * (Sxx + Sxx.T)
    try:
        Sxx_inv = np.linalg.inv(Sxx)
    except np.linalg.LinAlgError as exc:
        raise DistributionError("singular regressor scatter matrix") from exc
    Sy_x = Syy - Syx @ Sxx_inv @ Syx.T
    Sy_x = 0.5 * (Sy_x + Sy_x.T)
    return MniwPrior(M0=Syx @ Sxx_inv, K0=Sxx, n0=prior.n0 + Y.shape[1], S0=prior.S0 + Sy_x)


def mv_normal_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Log density via Cholesky; ``x`` may be (d,) or (n, d)."""
    L = np.linalg.cholesky(cov)
    diff = np.atleast_2d(x - mean)
    sol = np.linalg.solve(L, diff.T)
    d = cov.shape[0]
    logdet = 2.0 * np.log(np.diag(L)).sum()
    out = -0.5 * (d * np.log(2 * np.pi) + logdet + (sol**2).sum(axis=0))
    return out if np.ndim(x) > 1 else float(out[0])


def std_normal_cdf(x):
    return special.ndtr(x)


def std_normal_quantile(p):
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr <= 0) | (p_arr >= 1)) or np.any(~np.isfinite(p_arr)):
        raise DistributionError(f"quantile argument must lie strictly inside (0, 1), got {p}")
    out = special.ndtri(p_arr)
    return float(out) if np.ndim(p) == 0 else out


def std_normal_logcdf(x):
    return special.log_ndtr(x)
