import math

import numpy as np
import pytest
from scipy import integrate, stats

from iflds.learn.slice import SliceError, _grid_draw, log_density, sample_onset, slice_extend_chains
from iflds.learn.state import Hyper, IfldsState, empty_state
from iflds.randdist import RngHandle


def one_chain_state(a_min, T=200):
    return IfldsState(
        np.ones((T, 1), np.int8), np.ones((T, 1), np.int8), np.zeros((T, 1, 2)),
        np.array([a_min]), np.array([0.9]), np.array([0.5]),
        0.5 * np.eye(2)[None], np.eye(2)[None], 0.01 * np.eye(2), 0.01 * np.eye(2),
    )


def onset_cdf(a_prev, alpha, T):
    """Numerical CDF of the truncated onset density by quadrature (independent of the sampler)."""
    dens = lambda a: math.exp(log_density(np.array([a]), alpha, T)[0])
    total = integrate.quad(dens, 0.0, a_prev, limit=200, points=[a_prev / T])[0]
    return lambda x: np.array([integrate.quad(dens, 0.0, v, limit=200)[0] / total for v in np.atleast_1d(x)])


@pytest.mark.parametrize("a_prev,alpha,T", [(1.0, 1.0, 50), (0.2, 2.0, 100), (0.05, 1.0, 2000)])
def test_onset_draws_follow_density(a_prev, alpha, T):
    rng = RngHandle(1)
    draws = np.array([sample_onset(a_prev, alpha, T, rng) for _ in range(800)])
    assert np.all((draws > 0) & (draws < a_prev))
    cdf = onset_cdf(a_prev, alpha, T)
    grid = np.quantile(draws, np.linspace(0.05, 0.95, 10))
    assert np.max(np.abs(cdf(grid) - np.linspace(0.05, 0.95, 10))) < 0.07
    assert stats.kstest(draws, cdf).pvalue > 0.001


def test_grid_fallback_matches_rejection():
    rng = RngHandle(2)
    a = np.array([sample_onset(0.3, 1.5, 80, rng) for _ in range(600)])
    b = np.array([_grid_draw(0.3, 1.5, 80, rng) for _ in range(600)])
    assert stats.ks_2samp(a, b).pvalue > 0.001


def test_onset_rejects_bad_bound():
    with pytest.raises(SliceError):
        sample_onset(0.0, 1.0, 10, RngHandle(0))
    with pytest.raises(SliceError):
        sample_onset(1.5, 1.0, 10, RngHandle(0))


def test_tiny_onset_adds_about_one_chain():
    # For a_min -> 0 the density is ~a^(alpha-1); the number of added chains then has
    # P(K >= j) = (alpha / (alpha + 1))^j, so E[K] = alpha and P(K <= 1) = 3/4 at alpha = 1.
    ks = np.array([slice_extend_chains(one_chain_state(1e-9), Hyper(), RngHandle(r, 1))[0].M - 1 for r in range(1000)])
    se_mean = ks.std() / math.sqrt(len(ks))
    assert abs(ks.mean() - 1.0) < 3 * se_mean
    assert abs(np.mean(ks <= 1) - 0.75) < 3 * math.sqrt(0.75 * 0.25 / len(ks))


@pytest.mark.parametrize("a_min", [1e-9, 0.01])
def test_doubling_alpha_doubles_new_chains(a_min):
    means, ses = [], []
    for alpha in (1.0, 2.0):
        ks = np.array([slice_extend_chains(one_chain_state(a_min), Hyper(alpha=alpha), RngHandle(r, 2))[0].M - 1 for r in range(2000)])
        means.append(ks.mean())
        ses.append(ks.std() / math.sqrt(len(ks)))
    ratio = means[1] / means[0]
    se_ratio = ratio * math.hypot(ses[0] / means[0], ses[1] / means[1])
    assert ratio >= 2.0 - 3 * se_ratio


def test_new_chains_idle_and_sorted():
    st_ = one_chain_state(0.05, T=2000)
    for r in range(20):
        out, level = slice_extend_chains(st_, Hyper(), RngHandle(r, 3))
        assert 0 < level < 0.05
        assert np.all(np.diff(out.a) <= 0)
        new = [m for m in range(out.M) if not out.S[:, m].any()]
        assert len(new) == out.M - 1
        for m in new:
            assert np.all(out.Z[:, m] == 1)
            assert level < out.a[m] < 0.05
        out.check()


def test_empty_start_bootstraps_one_chain():
    for r in range(50):
        out, _ = slice_extend_chains(empty_state(100, 0.01 * np.eye(2), 0.01 * np.eye(2)), Hyper(), RngHandle(r, 4))
        assert out.M >= 1
