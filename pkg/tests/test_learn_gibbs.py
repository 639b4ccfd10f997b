import numpy as np
from scipy import stats

from iflds.learn.gibbs import dynamics_posteriors, gibbs_globals, prune_idle, sample_output, sample_switch_probs
from iflds.learn.state import Hyper, IfldsState, transition_counts
from iflds.model import DEFAULT_C, rotation
from iflds.randdist import RngHandle


def simulated_state(T=300, M=3, seed=0):
    rng = np.random.default_rng(seed)
    S = (rng.random((T, M)) < 0.7).astype(np.int8)
    S[:, -1] = 0
    S[5:40, -1] = 1
    X = rng.normal(scale=0.3, size=(T, M, 2))
    G = np.stack([rotation(0.9, 0.4 * m) for m in range(M)])
    C = np.stack([DEFAULT_C] * M)
    return IfldsState(S, np.ones((T, M), np.int8), X, np.array([0.5, 0.3, 0.1][:M]), np.full(M, 0.8), np.full(M, 0.6), G, C, 0.01 * np.eye(2), 0.02 * np.eye(2))


def test_persistence_draws_follow_beta_posterior():
    st_ = simulated_state()
    h = Hyper()
    c = transition_counts(st_.S, st_.Z)
    rng = RngHandle(1)
    draws = np.array([sample_switch_probs(st_, h, rng)[1] for _ in range(3000)])
    for m in range(st_.M):
        post = stats.beta(h.beta0 + c.n11[m], h.beta1 + c.n10[m])
        assert stats.kstest(draws[:, m], post.cdf).pvalue > 0.001


def test_idle_chain_onset_stays_inside_unit_interval():
    st_ = simulated_state()
    st_.S[:, 0] = 0
    rng = RngHandle(2)
    a = np.array([sample_switch_probs(st_, Hyper(), rng)[0][0] for _ in range(500)])
    assert np.all((a > 0) & (a < 1))


def test_transition_posterior_mean_recovers_noise_free_dynamics():
    T = 200
    G_true = rotation(0.999, 0.3)
    x = np.zeros((T, 1, 2))
    x[0, 0] = [1.0, -0.5]
    for t in range(1, T):
        x[t, 0] = G_true @ x[t - 1, 0]
    S = np.ones((T, 1), np.int8)
    S[0] = 0  # the first step is an idle increment from x_0 = 0, so every active pair is exact
    st_ = IfldsState(S, np.ones((T, 1), np.int8), x, np.array([0.5]), np.array([0.9]), np.array([0.5]), np.eye(2)[None], np.eye(2)[None], 0.01 * np.eye(2), 0.01 * np.eye(2))
    posts, _, _ = dynamics_posteriors(st_, Hyper(K0=1e-8 * np.eye(2)))
    assert np.max(np.abs(posts[0].M0 - G_true)) < 1e-6


def test_output_regression_recovers_noise_free_outputs():
    st_ = simulated_state(T=400, M=2, seed=3)
    st_.C[1] = np.array([[0.3, 0.1], [-0.2, 0.8]])
    P = np.einsum("mij,tmj->ti", st_.C, st_.X * st_.S[:, :, None])
    rng = RngHandle(4)
    C, R = sample_output(st_, P, Hyper(K0=1e-8 * np.eye(2), S0=1e-12 * np.eye(2)), rng)
    assert np.max(np.abs(C - st_.C)) < 1e-4
    assert np.max(np.abs(R)) < 1e-8


def test_globals_sorted_and_shaped():
    st_ = simulated_state()
    out = gibbs_globals(st_, np.zeros((st_.T, 2)), Hyper(), RngHandle(5))
    out.check()
    assert np.all(np.diff(out.a) <= 0)
    assert np.all(np.linalg.eigvalsh(out.Q) > 0) and np.all(np.linalg.eigvalsh(out.R_obs) > 0)


def test_relabeling_leaves_draws_distribution_unchanged():
    st_ = simulated_state(T=120)
    perm = st_.take([2, 0, 1])
    P = np.random.default_rng(6).normal(scale=0.2, size=(st_.T, 2))
    h = Hyper()

    def summaries(state, stream):
        rng = RngHandle(7, stream)
        rows = []
        for _ in range(600):
            o = gibbs_globals(state, P, h, rng)
            rows.append([o.a.sum(), o.b.sum(), o.gamma.sum(), np.trace(o.Q), np.abs(o.G).sum()])
        return np.array(rows)

    A, B = summaries(st_, 1), summaries(perm, 2)
    for k in range(A.shape[1]):
        assert stats.ks_2samp(A[:, k], B[:, k]).pvalue > 0.001


def test_prune_drops_idle_chains():
    st_ = simulated_state()
    st_.S[:, 1] = 0
    out = prune_idle(st_)
    assert out.M == 2
    assert prune_idle(out) is out
