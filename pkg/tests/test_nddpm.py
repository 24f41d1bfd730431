import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import logsumexp

from bnpmed.config import HyperParams
from bnpmed.nddpm import (NestedMixture, prior_predictive_corr, unit_class_counts,
                          update_cluster_sticks, update_concentrations, update_unit_sticks)
from bnpmed.stochastic import make_rng


def _mixture(seed=0, k_c=3, k_i=2, q=2):
    r = np.random.default_rng(seed)
    sizes = np.array([3, 4, 2, 5])
    n = sizes.sum()
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    C = np.column_stack([np.ones(n), r.normal(size=n)])
    R = r.normal(size=(n, q))
    mix = NestedMixture(C, R, starts, sizes, np.repeat(np.arange(4), sizes), k_c, k_i,
                        (np.zeros(2), 10.0 * np.eye(2)), (q + 1.0, np.eye(q)), HyperParams(),
                        make_rng(seed, "mix"))
    mix.coef = r.normal(size=mix.coef.shape)
    A = r.normal(size=(mix.K, q, q))
    mix.cov = A @ np.swapaxes(A, 1, 2) + np.eye(q)
    mix.s = np.append(r.uniform(0.2, 0.8, k_c - 1), 1.0)
    mix.u = np.vstack([r.uniform(0.2, 0.8, (k_i - 1, k_c)), np.ones((1, k_c))])
    return mix


def test_cluster_sticks_posterior_mean():
    zeta = np.array([0, 0, 0, 1, 2, 2])
    k_c, alpha = 4, 1.5
    rng = make_rng(0, "sticks")
    draws = np.array([update_cluster_sticks(zeta, alpha, k_c, rng)[0] for _ in range(20_000)])
    assert np.all(draws[:, -1] == 1.0)
    # Be(1 + n_k, alpha + n_{>k}) with n = (3, 1, 2, 0)
    want = [(1 + 3) / (1 + 3 + alpha + 3), (1 + 1) / (2 + alpha + 2), 3 / (3 + alpha)]
    np.testing.assert_allclose(draws[:, :-1].mean(0), want, atol=0.01)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), k_i=st.integers(1, 4), k_c=st.integers(1, 4))
def test_unit_sticks_weights_are_distributions(seed, k_i, k_c):
    r = np.random.default_rng(seed)
    xi, zeta_u = r.integers(0, k_i, 15), r.integers(0, k_c, 15)
    u, w = update_unit_sticks(xi, zeta_u, np.ones(k_c), k_i, k_c, r)
    assert np.all(u[-1] == 1.0)
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)
    assert unit_class_counts(xi, zeta_u, k_i, k_c).sum() == 15


def test_concentration_update_is_gamma():
    s = np.array([0.3, 0.6, 0.2, 1.0])
    u = np.array([[0.5, 0.4], [1.0, 1.0]])
    hyper = HyperParams(a_alpha=2.0, b_alpha=1.0, a_beta=1.0, b_beta=3.0)
    rng = make_rng(0, "conc")
    draws = [update_concentrations(s, u, hyper, rng) for _ in range(20_000)]
    alpha = np.array([d[0] for d in draws])
    beta = np.array([d[1] for d in draws])
    rate_a = 1.0 - np.log1p(-s[:-1]).sum()
    assert stats.kstest(alpha, stats.gamma(2.0 + 3, scale=1 / rate_a).cdf).statistic < 0.015
    rate_b = 3.0 - np.log1p(-u[0])
    np.testing.assert_allclose(beta.mean(0), 2.0 / rate_b, rtol=0.02)


def test_cluster_logits_match_naive():
    mix = _mixture(1)
    logits, _, _ = mix.cluster_label_logits()
    log_pi = np.log(mix.pi)
    log_w = np.log(mix.w)
    for i, (s, n) in enumerate(zip(mix.starts, mix.sizes)):
        for k in range(mix.k_c):
            tot = log_pi[k]
            for j in range(s, s + n):
                terms = []
                for l in range(mix.k_i):
                    c = l * mix.k_c + k
                    mean = mix.coef[c] @ mix.C[j]
                    terms.append(log_w[l, k] + stats.multivariate_normal(mean, mix.cov[c]).logpdf(mix.R[j]))
                tot += logsumexp(terms)
            assert logits[i, k] == pytest.approx(tot, abs=1e-9)


def test_label_update_frequencies():
    mix = _mixture(2, k_c=2, k_i=2)
    logits, _, _ = mix.cluster_label_logits()
    p = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    rng = make_rng(0, "labels")
    n = 8000
    hits = np.zeros_like(p)
    for _ in range(n):
        mix.update_labels(rng)
        hits[np.arange(len(mix.zeta)), mix.zeta] += 1
    np.testing.assert_allclose(hits / n, p, atol=0.02)


def test_label_permutation_invariance():
    # relabelling cluster classes (with sticks mapped to the same weights) leaves the
    # per-cluster likelihood of each class unchanged
    mix = _mixture(3, k_c=3, k_i=2)
    logits, ll, logw = mix.cluster_label_logits()
    perm = np.array([2, 0, 1])
    idx = (np.arange(mix.k_i)[:, None] * mix.k_c + perm[None, :]).ravel()
    mix.coef, mix.cov = mix.coef[idx], mix.cov[idx]
    mix.u = mix.u[:, perm]
    logits2, _, _ = mix.cluster_label_logits()
    np.testing.assert_allclose((logits2 - mix.log_pi())[:, np.argsort(perm)],
                               logits - mix.log_pi(), atol=1e-10)


def test_sweep_keeps_state_valid():
    mix = _mixture(4)
    rng = make_rng(4, "sweep")
    for _ in range(5):
        mix.sweep(rng)
    assert mix.zeta.max() < mix.k_c and mix.xi.max() < mix.k_i
    assert np.all(np.linalg.eigvalsh(mix.cov) > 0)
    snap = mix.snapshot()
    assert snap["coef"].shape == (mix.K, 2, 2)
    assert abs(snap["pi"].sum() - 1) < 1e-12
    oc, oi = mix.occupancy()
    assert 1 <= oc <= mix.k_c and 1 <= oi <= mix.k_i


def test_prior_corr_ratio_small_run():
    within, between = prior_predictive_corr(1.0, 1.0, 20_000, make_rng(9, "pc"))
    assert 1.5 < within / between < 2.6
    with pytest.raises(ValueError):
        prior_predictive_corr(1.0, 1.0, 0, make_rng(0))
