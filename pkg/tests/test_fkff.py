import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import iflds.fkff as fkff_mod
from iflds.fkff import (
    FilterError,
    ForwardState,
    batch_predictive_means,
    fkff_init,
    fkff_loglik,
    fkff_logliks,
    fkff_step,
    fkff_trace_csv,
    gain_schedule,
    run_filter,
    stacked_kalman_loglik,
    steady_state,
)
from iflds.model import FldsModel, LdsParams, ObservationSeries, benchmark_model, simulate_flds
from iflds.randdist import RngHandle
from oracles import rel_close, random_stable_model, textbook_kalman


def step_through(model, samples):
    state = fkff_init(model)
    records = []
    for p in samples:
        state, pred = fkff_step(state, model, p)
        records.append((state, pred))
    return records


def test_single_source_equals_textbook_kalman():
    rng = np.random.default_rng(0)
    for k in range(10):
        model = random_stable_model(rng)
        src = model.sources[0]
        series, _ = simulate_flds(model, 1000, RngHandle(k))
        ref = textbook_kalman(src.G, src.C, src.Q, src.R, series.samples)
        run = run_filter(model, series.samples)
        assert rel_close(run.logliks, ref["loglik"], 1e-10)
        assert rel_close(run.gains[:, 0], ref["gain"], 1e-10)
        assert rel_close(run.mean_p, ref["mean_p"], 1e-10)
        assert rel_close(run.sigma_p, ref["cov_p"], 1e-10)


def test_single_source_step_states_match_textbook():
    rng = np.random.default_rng(1)
    model = random_stable_model(rng)
    src = model.sources[0]
    series, _ = simulate_flds(model, 300, RngHandle(1))
    ref = textbook_kalman(src.G, src.C, src.Q, src.R, series.samples)
    recs = step_through(model, series.samples)
    means = np.array([s.mu_hat[0] for s, _ in recs])
    covs = np.array([s.sigma_hat[0] for s, _ in recs])
    assert rel_close(means, ref["mean"], 1e-10)
    assert rel_close(covs, ref["cov"], 1e-10)


def test_single_source_matches_stacked_oracle():
    model = benchmark_model(1)
    series, _ = simulate_flds(model, 500, RngHandle(2))
    assert np.allclose(fkff_logliks(model, series), stacked_kalman_loglik(model, series), rtol=1e-10, atol=0)


def test_two_sources_differ_from_stacked_oracle_but_stay_finite():
    # The factorial filter is an approximation for M > 1; record the size of the gap.
    model = benchmark_model(2)
    series, _ = simulate_flds(model, 200, RngHandle(0))
    gap = np.abs(fkff_logliks(model, series) - stacked_kalman_loglik(model, series))
    assert np.all(np.isfinite(gap))
    assert gap.max() > 1e-3
    assert gap.mean() < 1.0


def test_compiled_kernel_matches_python_step():
    model = benchmark_model(4)
    series, _ = simulate_flds(model, 400, RngHandle(3))
    run = run_filter(model, series.samples)
    recs = step_through(model, series.samples)
    assert np.allclose(run.logliks, [p.logpdf for _, p in recs], rtol=0, atol=1e-12)
    assert np.allclose(run.gains, np.array([s.gains for s, _ in recs]), rtol=0, atol=1e-13)
    assert np.allclose(run.sigma_p, np.array([p.cov for _, p in recs]), rtol=0, atol=1e-13)
    assert np.allclose(run.mean_p, np.array([p.mean for _, p in recs]), rtol=0, atol=1e-12)


def test_one_step_reduction():
    Q = np.array([[0.3, 0.1], [0.1, 0.2]])
    R = 0.05 * np.eye(2)
    model = FldsModel([LdsParams(np.zeros((2, 2)), np.eye(2), Q, R)])
    p = np.array([0.4, -0.7])
    expected = stats.multivariate_normal(np.zeros(2), Q + R).logpdf(p)
    assert fkff_loglik(model, ObservationSeries(p[None])) == pytest.approx(expected, rel=1e-13)


@pytest.mark.filterwarnings("ignore:source 0 has spectral radius")
def test_scalar_riccati_contraction():
    # Q=0, G=C=R=I, starting from unit prior variance: s_{t+1} = s_t / (1 + s_t)
    z = np.zeros((2, 2))
    I = np.eye(2)
    model = FldsModel([LdsParams(I, I, z, I)])
    state = ForwardState(np.zeros((1, 2)), I[None].copy(), np.zeros((1, 2)), I[None].copy(), t=1)
    s = 1.0
    prev = np.inf
    for _ in range(50):
        state, _ = fkff_step(state, model, np.zeros(2))
        bar = s
        assert np.allclose(state.gains[0], bar / (bar + 1) * I, atol=1e-15)
        s = s / (1 + s)
        assert np.allclose(state.sigma_hat[0], s * I, atol=1e-15)
        assert state.sigma_hat[0, 0, 0] < prev
        prev = state.sigma_hat[0, 0, 0]


def test_covariance_symmetric_before_projection(monkeypatch):
    seen = []
    real = fkff_mod.clamp_psd

    def spy(A, *args, **kwargs):
        seen.append(np.max(np.abs(A - A.T)))
        return real(A, *args, **kwargs)

    monkeypatch.setattr(fkff_mod, "clamp_psd", spy)
    model = benchmark_model(4)
    series, _ = simulate_flds(model, 300, RngHandle(4))
    step_through(model, series.samples)
    assert len(seen) == 4 * 300
    assert max(seen) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=299), st.integers(min_value=0, max_value=3))
def test_likelihood_telescopes(k, seed):
    model = benchmark_model(3)
    series, _ = simulate_flds(model, 300, RngHandle(seed))
    whole = fkff_loglik(model, series, 1, 300)
    parts = fkff_loglik(model, series, 1, k) + fkff_loglik(model, series, k + 1, 300)
    assert abs(whole - parts) <= 1e-12


def test_window_conditions_on_full_past():
    model = benchmark_model(2)
    series, _ = simulate_flds(model, 100, RngHandle(5))
    tail_only = fkff_loglik(model, ObservationSeries(series.samples[50:]))
    assert fkff_loglik(model, series, 51, 100) != pytest.approx(tail_only)
    assert fkff_loglik(model, series, 51, 100) == pytest.approx(math.fsum(fkff_logliks(model, series)[50:]), abs=1e-12)


@pytest.mark.parametrize("start,stop", [(0, 5), (5, 4), (1, 101)])
def test_bad_window_rejected(start, stop):
    series = ObservationSeries(np.zeros((100, 2)))
    with pytest.raises(ValueError):
        fkff_loglik(benchmark_model(1), series, start, stop)


def test_gain_convergence_for_stable_model():
    ss = steady_state(benchmark_model(4), tol=1e-10, max_steps=10_000)
    assert ss.steps < 10_000
    assert np.all(np.linalg.eigvalsh(ss.sigma_p) > 0)


def test_singular_denominator_raises():
    z = np.zeros((2, 2))
    model = FldsModel([LdsParams(0.5 * np.eye(2), z, np.eye(2), z)])
    with pytest.raises(FilterError, match="t=1"):
        run_filter(model, np.zeros((3, 2)))
    with pytest.raises(FilterError):
        fkff_step(fkff_init(model), model, np.zeros(2))


def test_predictive_covariance_positive_definite_when_r_is():
    model = benchmark_model(4)
    run = run_filter(model, np.zeros((500, 2)))
    assert np.all(np.linalg.eigvalsh(run.sigma_p) > 0)


def test_batch_means_match_single_filter():
    model = benchmark_model(3)
    sched = gain_schedule(model, 150)
    P = np.stack([simulate_flds(model, 150, RngHandle(s))[0].samples for s in range(4)])
    batch = batch_predictive_means(model, sched, P)
    for b in range(4):
        assert np.allclose(batch[b], run_filter(model, P[b]).mean_p, atol=1e-12)


def test_trace_csv(tmp_path):
    model = benchmark_model(2)
    series, _ = simulate_flds(model, 20, RngHandle(6))
    path = tmp_path / "trace.csv"
    fkff_trace_csv(model, series, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,mu_p_i,mu_p_q,logdet_sigma_p,gain_norm_0,gain_norm_1"
    assert len(lines) == 21
