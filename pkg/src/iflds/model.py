"""Factorial linear dynamical system data model and synthetic signal generators."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .randdist import RngHandle, psd_sqrt

STATE_DIM = 2
OBS_DIM = 2
BLOWUP_LIMIT = 1e12

# Output matrix and noise level shared by the synthetic benchmark sources.
DEFAULT_C = np.array([[0.25, -1.25], [-1.0, -0.5]])
DEFAULT_NOISE = 0.01
# (radius, angle) of the damped-rotation transition matrices, in source order.
DEFAULT_ROTATIONS = ((0.95, 0.0), (0.9, np.pi / 2), (0.85, np.pi / 3), (0.75, np.pi / 6))


class ModelError(ValueError):
    """Invalid model or signal configuration."""


def rotation(radius: float, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return radius * np.array([[c, -s], [s, c]])


def spectral_radius(mat: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(mat))))


def _check_square(name: str, mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (STATE_DIM, STATE_DIM):
        raise ModelError(f"{name} must be 2x2, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ModelError(f"{name} has non-finite entries")
    return mat


def _check_cov(name: str, mat: np.ndarray) -> np.ndarray:
    mat = _check_square(name, mat)
    if not np.allclose(mat, mat.T, atol=1e-12, rtol=0):
        raise ModelError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(mat).min() < -1e-10:
        raise ModelError(f"{name} is not positive semidefinite")
    return mat


@dataclass
class LdsParams:
    """One background source: transition G, output C, noises Q and R."""

    G: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        self.G = _check_square("G", self.G)
        self.C = _check_square("C", self.C)
        self.Q = _check_cov("Q", self.Q)
        self.R = _check_cov("R", self.R)

    @property
    def radius(self) -> float:
        return spectral_radius(self.G)

    def copy(self) -> "LdsParams":
        return LdsParams(self.G.copy(), self.C.copy(), self.Q.copy(), self.R.copy())


@dataclass
class FldsModel:
    sources: list[LdsParams]
    shared_noise: bool = True

    def __post_init__(self) -> None:
        if len(self.sources) < 1:
            raise ModelError("an FLDS needs at least one source")
        if self.shared_noise:
            Q0, R0 = self.sources[0].Q, self.sources[0].R
            for src in self.sources[1:]:
                if not (np.array_equal(src.Q, Q0) and np.array_equal(src.R, R0)):
                    raise ModelError("shared-noise model has sources with different Q or R")
        for m, src in enumerate(self.sources):
            if src.radius >= 1.0:
                warnings.warn(f"source {m} has spectral radius {src.radius:.4f} >= 1", RuntimeWarning, stacklevel=2)

    @property
    def M(self) -> int:
        return len(self.sources)

    @property
    def Q(self) -> np.ndarray:
        return self.sources[0].Q

    @property
    def R(self) -> np.ndarray:
        return self.sources[0].R

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Block-diagonal transition, horizontally stacked output, block process noise."""
        d = STATE_DIM * self.M
        G = np.zeros((d, d))
        Qb = np.zeros((d, d))
        for m, src in enumerate(self.sources):
            sl = slice(STATE_DIM * m, STATE_DIM * (m + 1))
            G[sl, sl] = src.G
            Qb[sl, sl] = src.Q
        C = np.hstack([src.C for src in self.sources])
        return G, C, Qb


def benchmark_model(M: int, C: np.ndarray | None = None, noise: float = DEFAULT_NOISE) -> FldsModel:
    """The synthetic multi-source benchmark: first ``M`` damped rotations, common C, Q=R=noise*I."""
    if not 1 <= M <= len(DEFAULT_ROTATIONS):
        raise ModelError(f"benchmark model defined for 1..{len(DEFAULT_ROTATIONS)} sources, got {M}")
    C = DEFAULT_C if C is None else np.asarray(C, dtype=float)
    Q = noise * np.eye(STATE_DIM)
    R = noise * np.eye(OBS_DIM)
    return FldsModel([LdsParams(rotation(r, a), C.copy(), Q.copy(), R.copy()) for r, a in DEFAULT_ROTATIONS[:M]])


@dataclass
class ObservationSeries:
    samples: np.ndarray
    sample_period: float | None = None

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[1] != OBS_DIM:
            raise ModelError(f"samples must have shape (T, 2), got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ModelError("observation series has non-finite values")

    def __len__(self) -> int:
        return self.samples.shape[0]


def constant_waveform(amplitude: float | Sequence[float]) -> Callable[[np.ndarray], np.ndarray]:
    """Waveform returning the same 2-vector at every index; a scalar sets both I and Q."""
    amp = np.broadcast_to(np.asarray(amplitude, dtype=float), (OBS_DIM,)).copy()

    def wave(t: np.ndarray) -> np.ndarray:
        return np.tile(amp, (np.size(t), 1))

    return wave


@dataclass
class SoiProfile:
    """A transient of ``duration`` samples starting at 1-based index ``arrival``."""

    arrival: int
    duration: int
    waveform: Callable[[np.ndarray], np.ndarray] = field(default_factory=lambda: constant_waveform(1.0))

    def __post_init__(self) -> None:
        if self.arrival < 1 or self.duration < 1:
            raise ModelError(f"need arrival >= 1 and duration >= 1, got ({self.arrival}, {self.duration})")

    def values(self) -> np.ndarray:
        t = np.arange(self.arrival, self.arrival + self.duration)
        y = np.asarray(self.waveform(t), dtype=float)
        if y.shape != (self.duration, OBS_DIM) or not np.all(np.isfinite(y)):
            raise ModelError("waveform must return finite (duration, 2) values")
        return y


def sticky_transition_prob(a: float, b: float, z: int, src: int, dst: int) -> float:
    """P(s_t = dst | s_{t-1} = src, z_t = z) for the sticky two-state chain.

    With z = 1 the chain moves by [[1-a, a], [1-b, b]]; with z = 0 it stays put.
    """
    if z == 0:
        return 1.0 if src == dst else 0.0
    if src == 0:
        return a if dst == 1 else 1.0 - a
    return b if dst == 1 else 1.0 - b


def _check_blowup(x: np.ndarray, t: int) -> None:
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_LIMIT:
        raise FloatingPointError(f"simulated state exceeded {BLOWUP_LIMIT:g} at step {t}")


def simulate_source(
    params: LdsParams, length: int, rng: RngHandle, initial: str | np.ndarray = "random"
) -> tuple[np.ndarray, np.ndarray]:
    """One LDS: returns (outputs C x_t + v_t, states x_t), each (length, 2).

    ``initial`` is "random" for x_1 ~ N(0, Q), "zero", or an explicit 2-vector.
    """
    if length < 1:
        raise ModelError("length must be positive")
    Lq = psd_sqrt(params.Q)
    Lr = psd_sqrt(params.R)
    w = rng.gen.standard_normal((length, STATE_DIM)) @ Lq.T
    v = rng.gen.standard_normal((length, OBS_DIM)) @ Lr.T
    if isinstance(initial, str):
        if initial == "random":
            x0 = w[0]
        elif initial == "zero":
            x0 = np.zeros(STATE_DIM)
        else:
            raise ModelError(f"unknown initial-state mode {initial!r}")
    else:
        x0 = np.asarray(initial, dtype=float).reshape(STATE_DIM)
    x = np.empty((length, STATE_DIM))
    x[0] = x0
    G = params.G
    for t in range(1, length):
        x[t] = G @ x[t - 1] + w[t]
        if t % 256 == 0:
            _check_blowup(x[t], t)
    _check_blowup(x, length)
    return x @ params.C.T + v, x


def simulate_flds(
    model: FldsModel, length: int, rng: RngHandle, initial: str | np.ndarray = "random"
) -> tuple[ObservationSeries, np.ndarray]:
    """Sum of ``model.M`` independent sources, each with its own observation noise draw.

    Source m draws from ``rng.child(m)``, so the result equals the sum of
    separate :func:`simulate_source` calls on those child streams.
    Returns the series and latent states of shape (M, length, 2).
    """
    if length < 1:
        raise ModelError("length must be positive")
    total = np.zeros((length, OBS_DIM))
    states = np.empty((model.M, length, STATE_DIM))
    for m, src in enumerate(model.sources):
        out, x = simulate_source(src, length, rng.child(m), initial)
        total += out
        states[m] = x
    return ObservationSeries(total), states


def inject_soi(series: ObservationSeries, soi: SoiProfile) -> ObservationSeries:
    """Add the SOI waveform on 1-based indices [arrival, arrival + duration)."""
    T = len(series)
    if soi.arrival + soi.duration > T + 1:
        raise ModelError(f"SOI window [{soi.arrival}, {soi.arrival + soi.duration}) exceeds series length {T}")
    out = series.samples.copy()
    out[soi.arrival - 1 : soi.arrival - 1 + soi.duration] += soi.values()
    return ObservationSeries(out, series.sample_period)


def empirical_sinr_db(soi: np.ndarray, background: np.ndarray) -> float:
    """10 log10 of mean SOI power over mean background power, both over the full record."""
    p_soi = float(np.mean(np.sum(np.square(soi), axis=1)))
    p_bg = float(np.mean(np.sum(np.square(background), axis=1)))
    if p_bg == 0.0:
        return float("inf")
    if p_soi == 0.0:
        return float("-inf")
    return 10.0 * np.log10(p_soi / p_bg)


def amplitude_for_sinr(sinr_db: float, background: np.ndarray, soi_fraction: float) -> float:
    """Per-component amplitude a so that y = a*[1, 1] present on ``soi_fraction`` of samples hits ``sinr_db``."""
    p_bg = float(np.mean(np.sum(np.square(background), axis=1)))
    return float(np.sqrt(p_bg * 10.0 ** (sinr_db / 10.0) / (OBS_DIM * soi_fraction)))


@dataclass
class CommScenario:
    """Pulsed SOI over BPSK + QPSK interference at complex baseband.

    Symbols are rectangular (held for ``samples_per_symbol`` samples); each
    emitter carries a residual frequency offset, given in Hz.
    """

    length: int = 4000
    sample_rate: float = 10e6
    prf: float = 3e3
    duty: float = 0.08
    pulse_width: int | None = 200
    sinr_db: float = -10.02
    bpsk_amplitude: float = 1.0
    qpsk_amplitude: float = 1.0
    bpsk_samples_per_symbol: int = 50
    qpsk_samples_per_symbol: int = 80
    bpsk_offset_hz: float = 20e3
    qpsk_offset_hz: float = -35e3
    noise_std: float = 0.1
    first_pulse: int = 500
    sinr_reference: str = "pulse"  # SOI power while on ("pulse") or averaged over the record ("record")

    def __post_init__(self) -> None:
        if not 0.0 < self.duty <= 1.0:
            raise ModelError(f"duty cycle must lie in (0, 1], got {self.duty}")
        if self.length < 1 or self.sample_rate <= 0 or self.prf <= 0:
            raise ModelError("length, sample_rate and prf must be positive")
        if self.sinr_reference not in ("pulse", "record"):
            raise ModelError(f"sinr_reference must be 'pulse' or 'record', got {self.sinr_reference!r}")

    @property
    def period(self) -> int:
        return int(np.floor(self.sample_rate / self.prf))

    @property
    def width(self) -> int:
        # An explicit pulse width wins over the duty-cycle value.
        if self.pulse_width is not None:
            return int(self.pulse_width)
        return max(1, int(round(self.duty * self.period)))

    def pulse_starts(self) -> np.ndarray:
        starts = np.arange(self.first_pulse, self.length - self.width + 1, self.period)
        return starts


def _psk(n: int, sps: int, order: int, offset_hz: float, fs: float, rng: RngHandle) -> np.ndarray:
    n_sym = -(-n // sps)
    phase = 2 * np.pi * rng.gen.integers(0, order, n_sym) / order
    if order == 4:
        phase = phase + np.pi / 4
    sym = np.repeat(np.exp(1j * phase), sps)[:n]
    start = rng.gen.uniform(0, 2 * np.pi)
    carrier = np.exp(1j * (start + 2 * np.pi * offset_hz / fs * np.arange(n)))
    return sym * carrier


def comm_soi_amplitude(cfg: CommScenario, background: np.ndarray, mask: np.ndarray) -> float:
    frac = float(mask.mean())
    if frac == 0 or not np.any(background):
        return 0.0
    return amplitude_for_sinr(cfg.sinr_db, background, 1.0 if cfg.sinr_reference == "pulse" else frac)


def simulate_comm_scenario(cfg: CommScenario, rng: RngHandle) -> tuple[ObservationSeries, np.ndarray, np.ndarray]:
    """Returns (observed series, SOI mask, background-only samples)."""
    n = cfg.length
    bpsk = cfg.bpsk_amplitude * _psk(n, cfg.bpsk_samples_per_symbol, 2, cfg.bpsk_offset_hz, cfg.sample_rate, rng.child(0))
    qpsk = cfg.qpsk_amplitude * _psk(n, cfg.qpsk_samples_per_symbol, 4, cfg.qpsk_offset_hz, cfg.sample_rate, rng.child(1))
    noise = cfg.noise_std * rng.child(2).gen.standard_normal((n, 2))
    background = np.column_stack([(bpsk + qpsk).real, (bpsk + qpsk).imag]) + noise
    mask = np.zeros(n, dtype=bool)
    for s in cfg.pulse_starts():
        mask[s : s + cfg.width] = True
    obs = background.copy()
    amp = comm_soi_amplitude(cfg, background, mask)
    obs[mask] += amp
    return ObservationSeries(obs, 1.0 / cfg.sample_rate), mask, background
