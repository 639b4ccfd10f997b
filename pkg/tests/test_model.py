import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iflds.model import (
    DEFAULT_C,
    CommScenario,
    FldsModel,
    LdsParams,
    ModelError,
    ObservationSeries,
    SoiProfile,
    benchmark_model,
    comm_soi_amplitude,
    constant_waveform,
    empirical_sinr_db,
    inject_soi,
    rotation,
    simulate_comm_scenario,
    simulate_flds,
    simulate_source,
    sticky_transition_prob,
)
from iflds.randdist import RngHandle


def lyapunov_fixed_point(G, Q, iters=5000):
    P = np.zeros_like(Q)
    for _ in range(iters):
        P = G @ P @ G.T + Q
    return P


@pytest.mark.filterwarnings("ignore:source 0 has spectral radius")
def test_noiseless_fixed_point_gives_zeros():
    z = np.zeros((2, 2))
    model = FldsModel([LdsParams(np.eye(2), np.eye(2), z, z)])
    series, states = simulate_flds(model, 50, RngHandle(0), "zero")
    assert np.array_equal(series.samples, np.zeros((50, 2)))
    assert np.array_equal(states, np.zeros((1, 50, 2)))


def test_stationary_covariance_matches_lyapunov():
    G = rotation(0.95, 0.0)
    params = LdsParams(G, DEFAULT_C, 0.01 * np.eye(2), 0.01 * np.eye(2))
    out, _ = simulate_source(params, 100_000, RngHandle(1), "zero")
    P = lyapunov_fixed_point(G, params.Q)
    expected = DEFAULT_C @ P @ DEFAULT_C.T + params.R
    emp = np.cov(out[1000:].T)
    # AR(1) at radius 0.95 leaves ~2500 effective samples: a few percent of scatter
    assert np.all(np.abs(emp - expected) < 0.1 * np.abs(expected).max())


def test_benchmark_config_length():
    model = benchmark_model(4)
    series, states = simulate_flds(model, 2000, RngHandle(2))
    assert len(series) == 2000 and states.shape == (4, 2000, 2)
    assert [round(s.radius, 12) for s in model.sources] == [0.95, 0.9, 0.85, 0.75]


def test_sum_of_single_source_simulations():
    model = benchmark_model(3)
    rng = RngHandle(3)
    series, _ = simulate_flds(model, 300, rng, "random")
    parts = sum(simulate_source(src, 300, rng.child(m), "random")[0] for m, src in enumerate(model.sources))
    assert np.array_equal(series.samples, parts)


def test_observation_noise_scales_with_source_count():
    # G=0, C=0: the observation is the sum of M independent N(0, R) draws
    z = np.zeros((2, 2))
    R = 0.5 * np.eye(2)
    model = FldsModel([LdsParams(z, z, 0.1 * np.eye(2), R) for _ in range(3)])
    series, _ = simulate_flds(model, 50_000, RngHandle(4))
    assert np.allclose(np.cov(series.samples.T), 3 * R, atol=0.05)


def test_zero_length_rejected():
    with pytest.raises(ModelError):
        simulate_flds(benchmark_model(1), 0, RngHandle(0))


def test_unstable_transition_warns_not_rejects():
    with pytest.warns(RuntimeWarning, match="spectral radius"):
        FldsModel([LdsParams(1.01 * np.eye(2), np.eye(2), np.eye(2), np.eye(2))])


def test_runaway_simulation_errors():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = FldsModel([LdsParams(3.0 * np.eye(2), np.eye(2), np.eye(2), np.eye(2))])
    with pytest.raises(FloatingPointError):
        simulate_flds(model, 100, RngHandle(0))


def test_shared_noise_flag_enforced():
    a = LdsParams(np.eye(2) * 0.5, np.eye(2), np.eye(2), np.eye(2))
    b = LdsParams(np.eye(2) * 0.5, np.eye(2), 2 * np.eye(2), np.eye(2))
    with pytest.raises(ModelError):
        FldsModel([a, b])
    assert FldsModel([a, b], shared_noise=False).M == 2


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(G=np.eye(3), C=np.eye(2), Q=np.eye(2), R=np.eye(2)),
        dict(G=np.eye(2), C=np.eye(2), Q=np.array([[1.0, 0.5], [0.0, 1.0]]), R=np.eye(2)),
        dict(G=np.eye(2), C=np.eye(2), Q=np.eye(2), R=-np.eye(2)),
        dict(G=np.full((2, 2), np.nan), C=np.eye(2), Q=np.eye(2), R=np.eye(2)),
    ],
)
def test_bad_params_rejected(kwargs):
    with pytest.raises(ModelError):
        LdsParams(**kwargs)


def test_series_rejects_wrong_shape_and_nan():
    with pytest.raises(ModelError):
        ObservationSeries(np.zeros((5, 3)))
    with pytest.raises(ModelError):
        ObservationSeries(np.array([[0.0, np.inf]]))


def test_inject_zero_amplitude_is_bitwise_identity():
    series, _ = simulate_flds(benchmark_model(2), 100, RngHandle(5))
    out = inject_soi(series, SoiProfile(10, 20, constant_waveform(0.0)))
    assert np.array_equal(out.samples, series.samples)


def test_inject_benchmark_window_touches_exactly_200_samples():
    series, _ = simulate_flds(benchmark_model(4), 2000, RngHandle(6))
    before = series.samples.copy()
    out = inject_soi(series, SoiProfile(1000, 200, constant_waveform(0.48)))
    changed = np.any(out.samples != series.samples, axis=1)
    assert changed.sum() == 200
    assert np.all(changed[999:1199])
    assert np.array_equal(series.samples, before)


def test_inject_full_length_window():
    series = ObservationSeries(np.zeros((30, 2)))
    out = inject_soi(series, SoiProfile(1, 30, constant_waveform([1.0, -2.0])))
    assert np.array_equal(out.samples, np.tile([1.0, -2.0], (30, 1)))


def test_inject_window_past_end_rejected():
    with pytest.raises(ModelError):
        inject_soi(ObservationSeries(np.zeros((30, 2))), SoiProfile(25, 7))


def test_soi_profile_rejects_bad_window():
    with pytest.raises(ModelError):
        SoiProfile(0, 5)
    with pytest.raises(ModelError):
        SoiProfile(1, 0)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(min_value=1, max_value=50),
    st.integers(min_value=1, max_value=50),
    st.floats(min_value=-1e3, max_value=1e3),
)
def test_inject_then_remove_restores_series(arrival, duration, amp):
    T = 100
    # dyadic background and amplitude keep every sum representable, so exactness is well posed
    raw = RngHandle(7).gen.integers(-(2**20), 2**20, size=(T, 2))
    series = ObservationSeries(np.ldexp(raw.astype(float), -20))
    amp = float(np.ldexp(np.round(np.ldexp(amp, 10)), -10))
    plus = inject_soi(series, SoiProfile(arrival, duration, constant_waveform(amp)))
    back = inject_soi(plus, SoiProfile(arrival, duration, constant_waveform(-amp)))
    assert np.array_equal(back.samples, series.samples)


def test_sticky_transition_examples():
    assert sticky_transition_prob(0.3, 0.8, 0, 1, 1) == 1.0
    assert sticky_transition_prob(0.3, 0.8, 1, 0, 1) == 0.3
    assert sticky_transition_prob(0.3, 0.8, 1, 1, 0) == pytest.approx(0.2)


def test_sticky_rows_sum_to_one_on_grid():
    grid = np.linspace(0.01, 0.99, 100)
    for a, b in zip(grid, grid[::-1]):
        for z in (0, 1):
            for src in (0, 1):
                total = sticky_transition_prob(a, b, z, src, 0) + sticky_transition_prob(a, b, z, src, 1)
                assert total == pytest.approx(1.0, abs=1e-15)


def test_comm_pulse_geometry():
    cfg = CommScenario()
    assert cfg.period == 3333
    assert cfg.width == 200
    # without an explicit width, the duty cycle sets it
    assert CommScenario(pulse_width=None, duty=0.06).width == 200


def test_comm_duty_validation():
    with pytest.raises(ModelError):
        CommScenario(duty=0.0)
    with pytest.raises(ModelError):
        CommScenario(duty=1.5)


def test_comm_mask_marks_pulses():
    cfg = CommScenario(length=8000)
    series, mask, bg = simulate_comm_scenario(cfg, RngHandle(8))
    starts = cfg.pulse_starts()
    assert mask.sum() == len(starts) * cfg.width
    for s in starts:
        assert np.all(mask[s : s + cfg.width])
    assert np.array_equal(series.samples[~mask], bg[~mask])


@pytest.mark.parametrize("reference", ["pulse", "record"])
def test_comm_sinr_hits_target(reference):
    cfg = CommScenario(length=40_000, sinr_reference=reference)
    series, mask, bg = simulate_comm_scenario(cfg, RngHandle(9))
    soi = series.samples - bg
    if reference == "pulse":
        sinr = empirical_sinr_db(soi[mask], bg)
    else:
        sinr = empirical_sinr_db(soi, bg)
    assert abs(sinr - (-10.02)) <= 0.3


def test_comm_soi_zero_without_background():
    cfg = CommScenario()
    mask = np.ones(10, dtype=bool)
    assert comm_soi_amplitude(cfg, np.zeros((10, 2)), mask) == 0.0


def test_sinr_sentinels():
    assert empirical_sinr_db(np.ones((5, 2)), np.zeros((5, 2))) == float("inf")
    assert empirical_sinr_db(np.zeros((5, 2)), np.ones((5, 2))) == float("-inf")


def test_same_rng_gives_identical_simulation():
    a, _ = simulate_flds(benchmark_model(4), 500, RngHandle(10))
    b, _ = simulate_flds(benchmark_model(4), 500, RngHandle(10))
    assert np.array_equal(a.samples, b.samples)
