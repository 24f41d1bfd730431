"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The three desk-scale simulation studies (criteria 6 to 8) take about half an
hour on one core. Their per-replicate artifacts go to ``BNPMED_ACCEPTANCE_DIR``
(default ``<repo>/.acceptance``) and are reused on the next run when the study
configuration is unchanged; delete the directory to recompute from scratch.
"""

import os
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import logsumexp, ndtr

from bnpmed import cli
from bnpmed.baselines import fit_model
from bnpmed.chain import run_chain
from bnpmed.config import ChainConfig
from bnpmed.data import make_dataset
from bnpmed.dgp import MediatorCorrParams, ScenarioSpec, approximate_truth, build_mediator_covariance
from bnpmed.dgp import generate_cluster_frame, generate_potential_mediators, mediator_means
from bnpmed.estimands import identity_residuals
from bnpmed.evaluation import StudyConfig, compute_lpml, run_study
from bnpmed.fd import fd_cluster_weights, mh_update_locations, mh_update_sticks
from bnpmed.gcomp import estimate
from bnpmed.nddpm import prior_predictive_corr
from bnpmed.stochastic import make_rng, stick_weights

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("BNPMED_ACCEPTANCE_DIR", ROOT / ".acceptance"))
DESK_CHAIN = ChainConfig(n_burn=500, n_keep=1000)


def desk_study(name, spec, models, n_rep, seed):
    cfg = StudyConfig(spec=spec, models=models, n_replicates=n_rep, chain=DESK_CHAIN, seed=seed,
                      n_oracle=100_000)
    _, report = run_study(cfg, out_dir=CACHE / name)
    return report


# --------------------------------------------------------------------- 1 ---

def test_criterion_01_identities(small_data, tiny_chain, record_criterion):
    worst = {}
    for model in ("ad", "fd", "lmm", "ndpm"):
        post = fit_model(small_data, tiny_chain, model)
        draws = estimate(post, small_data, seed=1, check=False)
        worst[model] = float(identity_residuals(draws.values).max())
    ok = max(worst.values()) <= 1e-10
    detail = ", ".join(f"{m} {r:.1e}" for m, r in worst.items())
    record_criterion(1, ok, f"max identity residual per draw: {detail} (tol 1e-10)")
    assert ok


# --------------------------------------------------------------------- 2 ---

def _regression_data(seed=0):
    r = np.random.default_rng(seed)
    sizes = np.tile([6, 7, 8, 9, 10], 5)
    I, N = sizes.size, int(sizes.sum())
    a = np.arange(I) % 2
    v = r.normal(size=(I, 1))
    x = r.normal(size=(N, 1))
    m1, m2 = r.normal(size=N), r.normal(size=N)
    skeleton = make_dataset(a, v, x, m1, m2, np.zeros(N), sizes)
    C = skeleton.flat.outcome_design(skeleton.flat.m1, skeleton.flat.m2)
    theta = r.normal(size=C.shape[1])
    theta[-1] = 0.05
    y = C @ theta + 0.7 * r.normal(size=N)
    return make_dataset(a, v, x, m1, m2, y, sizes), C, y


def regression_posterior_oracle(C, y, m0, S0, a0, b0, n_grid=4000):
    """Posterior mean/cov of the coefficients under independent N(m0,S0) and IG(a0,b0) priors.

    The coefficients are integrated analytically given sigma^2 and sigma^2 by
    quadrature on a log grid: p(s2 | y) is IG(a0, b0) times N(y; C m0, s2 I + C S0 C').
    """
    lam, U = np.linalg.eigh(C @ S0 @ C.T)
    lam = np.maximum(lam, 0.0)
    r = U.T @ (y - C @ m0)
    ls = np.linspace(np.log(1e-3), np.log(1e2), n_grid)
    s2 = np.exp(ls)
    logp = np.array([-0.5 * np.sum(np.log(lam + s)) - 0.5 * np.sum(r ** 2 / (lam + s)) for s in s2])
    logp += -(a0 + 1.0) * ls - b0 / s2 + ls
    w = np.exp(logp - logsumexp(logp))
    S0i = np.linalg.inv(S0)
    means, covs = [], []
    for s in s2:
        V = np.linalg.inv(C.T @ C / s + S0i)
        means.append(V @ (C.T @ y / s + S0i @ m0))
        covs.append(V)
    means, covs = np.array(means), np.array(covs)
    mean = w @ means
    d = means - mean
    return mean, np.einsum("g,gij->ij", w, covs) + np.einsum("g,gi,gj->ij", w, d, d)


def test_criterion_02_conjugacy(record_criterion):
    ds, C, y = _regression_data()
    p = C.shape[1]
    m_or, c_or = regression_posterior_oracle(C, y, np.zeros(p), 100.0 * np.eye(p), 2.0, 1.0)
    cfg = ChainConfig(k_c=1, k_i=1, n_burn=500, n_keep=50_000, seed=1, models=("outcome",))
    th = run_chain(ds, cfg).arrays["outcome.coef"][:, 0, 0, :]
    rel_mean = np.linalg.norm(th.mean(0) - m_or) / np.linalg.norm(m_or)
    c_mc = np.cov(th.T)
    rel_cov = np.linalg.norm(c_mc - c_or) / np.linalg.norm(c_or)
    rel_var = np.max(np.abs(np.diag(c_mc) - np.diag(c_or)) / np.diag(c_or))
    ok = rel_mean < 0.02 and rel_cov < 0.02 and rel_var < 0.02
    record_criterion(2, ok, f"50k draws: rel. error mean {rel_mean:.4f}, cov {rel_cov:.4f}, "
                            f"max variance {rel_var:.4f} (tol 0.02)")
    assert ok


# --------------------------------------------------------------------- 3 ---

def test_criterion_03_prior_correlation(record_criterion):
    ratios = {}
    for alpha in (1.0, 4.0):
        within, between = prior_predictive_corr(alpha, 1.0, 100_000, make_rng(0, "corr", int(alpha)))
        ratios[alpha] = within / between
    ok = 1.8 <= ratios[1.0] <= 2.2 and 4.5 <= ratios[4.0] <= 5.5
    record_criterion(3, ok, f"within/between ratio alpha=1: {ratios[1.0]:.3f} [1.8, 2.2], "
                            f"alpha=4: {ratios[4.0]:.3f} [4.5, 5.5]")
    assert ok


# --------------------------------------------------------------------- 4 ---

# rows/cols: unit 1 (M1(1), M1(0), M2(1), M2(0)), then unit 2 in the same order
EXPECTED_N2 = np.array([
    [1.00, 0.08, 0.05, 0.05, 0.10, 0.00, 0.00, 0.00],
    [0.08, 1.00, 0.05, 0.05, 0.00, 0.10, 0.00, 0.00],
    [0.05, 0.05, 1.00, 0.08, 0.00, 0.00, 0.10, 0.00],
    [0.05, 0.05, 0.08, 1.00, 0.00, 0.00, 0.00, 0.10],
    [0.10, 0.00, 0.00, 0.00, 1.00, 0.08, 0.05, 0.05],
    [0.00, 0.10, 0.00, 0.00, 0.08, 1.00, 0.05, 0.05],
    [0.00, 0.00, 0.10, 0.00, 0.05, 0.05, 1.00, 0.08],
    [0.00, 0.00, 0.00, 0.10, 0.05, 0.05, 0.08, 1.00],
])


def test_criterion_04_dgp_fidelity(record_criterion):
    corr = MediatorCorrParams()
    cov = build_mediator_covariance(2, corr)
    exact = np.array_equal(cov, EXPECTED_N2)
    spec = ScenarioSpec(scenario=1)
    rng = make_rng(0, "dgp-fidelity")
    frame = generate_cluster_frame(spec, rng, n_clusters=2500)  # ~10^5 units
    pm = generate_potential_mediators(frame, corr, rng)
    m1_1, _ = mediator_means(frame, 1)
    m1_0, _ = mediator_means(frame, 0)
    e1, e0 = pm["m1_1"] - m1_1, pm["m1_0"] - m1_0
    a1 = np.corrcoef(e1, e0)[0, 1]
    # disjoint pairs (j, j+1) inside each cluster
    first = np.concatenate([s + np.arange(0, n - 1, 2) for s, n in zip(frame.starts, frame.n)])
    cross = np.corrcoef(e1[first], e0[first + 1])[0, 1]
    ok = exact and abs(a1 - 0.08) <= 0.01 and abs(cross) <= 0.01
    record_criterion(4, ok, f"8x8 covariance exact: {exact}; {e1.size} units: alpha1 {a1:.4f} "
                            f"(0.08 +- 0.01), cross-world between-unit {cross:.4f} (0 +- 0.01)")
    assert ok


# --------------------------------------------------------------------- 5 ---

def test_criterion_05_truth_stability(record_criterion):
    spec = ScenarioSpec(scenario=1)
    t1 = approximate_truth(spec, 100_000, make_rng(1, "truth"))
    t2 = approximate_truth(spec, 100_000, make_rng(2, "truth"))
    n1, n2 = t1.values["NIE"], t2.values["NIE"]
    rel = abs(n1 - n2) / abs(n1)
    res = max(float(identity_residuals(np.array(list(t.values.values()))).max()) for t in (t1, t2))
    ok = rel < 0.02 and res <= 1e-12
    record_criterion(5, ok, f"NIE truth {n1:.4f} vs {n2:.4f}: rel. diff {rel:.4f} (< 0.02); "
                            f"identity residual {res:.1e} (<= 1e-12)")
    assert ok


# --------------------------------------------------------------------- 6 ---

@pytest.mark.slow
def test_criterion_06_scenario1_calibration(record_criterion):
    rep = desk_study("scenario1", ScenarioSpec(scenario=1, n_clusters=50), ("ad",), 30, seed=6)
    m = rep.metrics["ad"]
    bias, cov = m["NIE"]["bias"], m["EIE1"]["coverage"]
    ok = abs(bias) <= 0.15 and 75.0 <= cov <= 100.0
    record_criterion(6, ok, f"AD-nDDPM, {rep.n_replicates['ad']} reps: NIE bias {bias:.4f} "
                            f"(+-0.15), EIE1 coverage {cov:.1f}% [75, 100]")
    assert ok


# --------------------------------------------------------------------- 7 ---

@pytest.mark.slow
def test_criterion_07_scenario2_ordering(record_criterion):
    rep = desk_study("scenario2", ScenarioSpec(scenario=2, n_clusters=50), ("ad", "ndpm", "lmm"),
                     30, seed=7)
    r = {k: rep.metrics[k]["NIE"]["rmse"] for k in ("ad", "ndpm", "lmm")}
    ok = r["ad"] < r["ndpm"] < r["lmm"]
    record_criterion(7, ok, f"NIE RMSE AD-nDDPM {r['ad']:.3f}, nDPM {r['ndpm']:.3f}, "
                            f"LMM {r['lmm']:.3f} (need AD < nDPM < LMM)")
    assert ok


# --------------------------------------------------------------------- 8 ---

@pytest.mark.slow
def test_criterion_08_heavy_tail(record_criterion):
    spec = ScenarioSpec(scenario=1, n_clusters=50, error_family="t", t_df=1.5)
    rep = desk_study("heavy_tail", spec, ("ad", "lmm"), 20, seed=8)
    r = {k: rep.metrics[k]["NIE"]["rmse"] for k in ("ad", "lmm")}
    ok = r["ad"] < r["lmm"]
    record_criterion(8, ok, f"t(1.5) errors: NIE RMSE AD-nDDPM {r['ad']:.3f} vs LMM {r['lmm']:.3f}")
    assert ok


# --------------------------------------------------------------------- 9 ---

def test_criterion_09_lpml_formula(record_criterion):
    lik = np.array([[0.20, 0.05, 0.30],
                    [0.25, 0.04, 0.10],
                    [0.18, 0.06, 0.50],
                    [0.22, 0.05, 0.20]])  # 4 draws x 3 observations, likelihood scale
    naive_cpo = 1.0 / np.mean(1.0 / lik, axis=0)
    naive = float(np.sum(np.log(naive_cpo)))
    res = compute_lpml(np.log(lik))
    err = max(abs(res.lpml - naive), float(np.max(np.abs(res.cpo - naive_cpo))))
    ok = err <= 1e-10
    record_criterion(9, ok, f"toy 3 obs x 4 draws: LPML {res.lpml:.12f} vs naive {naive:.12f}, "
                            f"max error {err:.1e} (tol 1e-10)")
    assert ok


# -------------------------------------------------------------------- 10 ---

def _numeric_cdf(logpdf, lo, hi, n=20001):
    grid = np.linspace(lo, hi, n)
    lp = np.array([logpdf(g) for g in grid])
    dens = np.exp(lp - lp.max())
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cdf /= cdf[-1]
    return lambda x: np.interp(x, grid, cdf)


def test_criterion_10_fd_reduction_and_mh(record_criterion):
    rng = make_rng(0, "fd-check")
    k_c = 8
    v_all = rng.normal(size=(25, 2))
    s = np.append(rng.uniform(0.05, 0.95, k_c - 1), 1.0)
    ad = stick_weights(s)
    bitwise = all(np.array_equal(fd_cluster_weights(v, s, np.tile(v, (k_c, 1))), ad) for v in v_all)

    # 1-d toy: two classes, labels fixed; MH chains for location 0 and stick 0
    v1 = np.array([[-0.5], [0.2], [0.4], [1.5], [2.0], [-1.0]])
    zeta = np.array([0, 0, 0, 1, 1, 1])
    s_fix = np.array([0.6, 1.0])
    mu, var = np.array([0.0]), np.array([[2.0]])
    gam = np.array([[0.0], [1.0]])
    n_iter, thin = 40_000, 4
    g_draws, s_draws = [], []
    g_state = gam.copy()
    s_state = s_fix.copy()
    for it in range(n_iter):
        g_state = mh_update_locations(zeta, s_fix, v1, g_state, rng, mu, var)
        s_state = mh_update_sticks(zeta, gam, v1, 1.0, s_state, rng)
        if it % thin == 0:
            g_draws.append(g_state[0, 0])
            s_draws.append(s_state[0])

    def loc_logpdf(g):
        kv = np.exp(-0.5 * (v1[:, 0] - g) ** 2)
        return (-0.5 * g * g / var[0, 0] + np.log(kv[zeta == 0]).sum()
                + np.log1p(-s_fix[0] * kv[zeta > 0]).sum())

    def stick_logpdf(x):
        kv = np.exp(-0.5 * (v1[zeta > 0, 0] - gam[0, 0]) ** 2)
        x = min(max(x, 1e-12), 1 - 1e-12)
        return 3 * np.log(x) + np.log1p(-x * kv).sum()  # alpha = 1

    ks_g = stats.kstest(g_draws, _numeric_cdf(loc_logpdf, -8, 8)).statistic
    ks_s = stats.kstest(s_draws, _numeric_cdf(stick_logpdf, 0.0, 1.0)).statistic
    ok = bitwise and ks_g < 0.05 and ks_s < 0.05
    record_criterion(10, ok, f"FD == AD weights bitwise: {bitwise}; MH KS location {ks_g:.4f}, "
                             f"stick {ks_s:.4f} (< 0.05)")
    assert ok


# -------------------------------------------------------------------- 11 ---

def test_criterion_11_probit(record_criterion):
    r = np.random.default_rng(0)
    I = 400
    sizes = r.integers(4, 11, I)
    N = int(sizes.sum())
    a = np.arange(I) % 2
    v = r.normal(size=(I, 1))
    x = r.normal(size=(N, 1))
    skeleton = make_dataset(a, v, x, np.zeros(N), np.zeros(N), np.zeros(N), sizes)
    C = skeleton.flat.mediator_design()
    g1 = np.array([-0.8, 0.9, 0.6, 0.3, 0.4, 0.01])
    g2 = np.array([0.5, 1.0, -0.5, 0.2, 0.3, 0.0])
    S = np.array([[1.0, 0.4], [0.4, 1.0]])
    e = r.normal(size=(N, 2)) @ np.linalg.cholesky(S).T
    m1 = (C @ g1 + e[:, 0] > 0).astype(float)
    m2 = C @ g2 + e[:, 1]
    ds = make_dataset(a, v, x, m1, m2, r.normal(size=N), sizes, mediator1_binary=True)
    target = 2.0 * ds.flat.m1 - 1.0
    bad = []

    def check(it, sampler):
        if not np.array_equal(np.sign(sampler.z_latent), target):
            bad.append(it)

    post = run_chain(ds, ChainConfig(n_burn=300, n_keep=500, seed=2), callback=check)
    A = post.arrays
    T, k_i, k_c = A["mediator.w"].shape
    wt = (A["mediator.w"] * A["mediator.pi"][:, None, :]).reshape(T, -1)
    errs = []
    for arm in (0, 1):
        c = C.mean(axis=0)
        c[1] = arm
        truth = ndtr(c @ g1)
        mu = A["mediator.coef"][:, :, 0, :] @ c
        est = float((wt * ndtr(mu / np.sqrt(A["mediator.cov"][:, :, 0, 0]))).sum(1).mean())
        errs.append((arm, truth, est))
    worst = max(abs(t - e) for _, t, e in errs)
    ok = worst <= 0.03 and not bad
    desc = "; ".join(f"a={arm}: true {t:.3f} est {e:.3f}" for arm, t, e in errs)
    record_criterion(11, ok, f"{desc} (max abs error {worst:.3f} <= 0.03); "
                             f"sign(Z) != 2M-1 after {len(bad)} of {T + 300} sweeps")
    assert ok


# -------------------------------------------------------------------- 12 ---

def test_criterion_12_determinism(tmp_path, record_criterion):
    base = ["study", "--seed", "12", "--scenario", "1", "--clusters", "8", "--min-size", "3",
            "--max-size", "6", "--models", "ad,lmm", "--replicates", "3", "--burn", "10",
            "--keep", "20", "--kc", "3", "--ki", "2", "--oracle", "2000"]
    outs = []
    for name, workers in (("a", "1"), ("b", "1"), ("c", "8")):
        d = tmp_path / name
        assert cli.main(base + ["--parallel", workers, "--out-dir", str(d)]) == 0
        outs.append((d / "metrics.json").read_bytes())
    ok = outs[0] == outs[1] == outs[2]
    record_criterion(12, ok, "MetricsReport bytes identical for two serial runs and 8 workers: "
                             f"{ok} ({len(outs[0])} bytes)")
    assert ok
