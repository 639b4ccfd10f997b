import numpy as np
import pytest

from iflds.baselines import GaussianBackground, _smooth, fit_lds_em
from iflds.detect import llr
from iflds.fkff import fkff_loglik, steady_state
from iflds.model import benchmark_model, simulate_flds
from iflds.randdist import RngHandle


def test_gaussian_fit_is_maximum_likelihood():
    P = np.random.default_rng(0).normal(size=(500, 2)) @ np.array([[1.0, 0.3], [0.0, 0.5]])
    g = GaussianBackground.fit(P)
    assert np.allclose(g.mean, P.mean(axis=0))
    assert np.allclose(g.cov, np.cov(P.T, bias=True))


def test_gaussian_statistic_matches_generic_form():
    P = np.random.default_rng(1).normal(size=(50, 2))
    g = GaussianBackground.fit(P)
    y = np.array([0.3, -0.2])
    out = g.llr(P, y)
    assert np.allclose(out, [llr(p, g.mean, g.cov, y) for p in P], atol=1e-12)


def test_smoother_likelihood_equals_filter():
    model = benchmark_model(1)
    series, _ = simulate_flds(model, 300, RngHandle(2))
    src = model.sources[0]
    *_, ll = _smooth(series.samples, src.G, src.C, src.Q, src.R)
    assert ll == pytest.approx(fkff_loglik(model, series), rel=1e-10)


def test_em_likelihood_never_decreases():
    series, _ = simulate_flds(benchmark_model(1), 800, RngHandle(3))
    fit = fit_lds_em(series.samples, iterations=25)
    assert np.all(np.diff(fit.logliks) > -1e-6 * np.abs(fit.logliks[1:]))


def test_em_fit_matches_output_covariance():
    model = benchmark_model(1)
    series, _ = simulate_flds(model, 3000, RngHandle(4))
    fit = fit_lds_em(series.samples, iterations=50).model()
    # the learned model's stationary predictive covariance matches the true one
    ss_true = steady_state(model).sigma_p
    ss_fit = steady_state(fit).sigma_p
    assert np.allclose(ss_fit, ss_true, atol=0.25 * np.abs(ss_true).max())
    assert fkff_loglik(fit, series) >= fkff_loglik(model, series) - 5.0
