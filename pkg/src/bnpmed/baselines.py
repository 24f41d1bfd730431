"""Comparator models sharing the g-computation back end.

``lmm``
    Bayesian random-intercept regression for the bivariate mediator and the
    outcome. The fixed-effect block is a one-component nested mixture run on
    responses with the random intercepts removed, so it reuses the conjugate
    regression update of the main sampler.
``ndpm``
    The intercept is given a truncated nested DP mixture (intercept-only atoms)
    while the slopes stay parametric and are redrawn by weighted least squares
    given each unit's component covariance.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .chain import ChainError, _flat, run_chain
from .config import ChainConfig
from .gcomp import EstimandDraws, estimate
from .nddpm import NestedMixture
from .posterior import Posterior, stack_snapshots
from .stochastic import make_rng, sample_inverse_gamma, sample_inverse_wishart, sample_truncated_normal


def _probit_latent(z_col, m1_binary, mean, cov, other_resid, rng):
    """Redraw latents of a binary first mediator given the second mediator's residual."""
    ratio = cov[0, 1] / cov[1, 1]
    mu = mean + ratio * other_resid
    var = cov[0, 0] - cov[0, 1] * ratio
    pos = np.asarray(m1_binary) == 1
    z_col[:] = sample_truncated_normal(mu, np.full(mu.shape, var), np.where(pos, 0.0, -np.inf),
                                       np.where(pos, np.inf, 0.0), rng)


class _LmmPart:
    """Random-intercept regression for a q-variate response."""

    def __init__(self, flat, C, R, coef_prior, cov_prior, hyper, rng):
        self.flat = flat
        self.R = np.array(R, dtype=float)
        q = self.R.shape[1]
        self.q = q
        self.fix = NestedMixture(C, self.R.copy(), flat.starts, flat.sizes, flat.cluster_of, 1, 1,
                                 coef_prior, cov_prior, hyper, rng)
        self.b = np.zeros((flat.n_clusters, q))
        # random-intercept covariance shares the kernel covariance prior
        self.T_df, self.T_scale = cov_prior[0], np.asarray(cov_prior[1], float).reshape(q, q)
        self.T = np.eye(q)

    def fitted_fixed(self):
        return self.fix.C @ self.fix.coef[0].T  # (N, q)

    def update(self, rng):
        flat = self.flat
        self.fix.R[:] = self.R - self.b[flat.cluster_of]
        self.fix.update_atoms(rng)
        resid = self.R - self.fitted_fixed()
        sums = np.add.reduceat(resid, flat.starts, axis=0)  # (I, q)
        lam = np.linalg.inv(self.fix.cov[0])
        Tinv = np.linalg.inv(self.T)
        prec = Tinv[None] + flat.sizes[:, None, None] * lam[None]
        cov_b = np.linalg.inv(prec)
        mean_b = np.einsum("iab,ib->ia", cov_b, sums @ lam)
        L = np.linalg.cholesky(cov_b)
        self.b = mean_b + np.einsum("iab,ib->ia", L, rng.standard_normal(mean_b.shape))
        S = self.b.T @ self.b
        if self.q == 1:
            self.T = np.array([[sample_inverse_gamma(self.T_df / 2 + flat.n_clusters / 2,
                                                     (self.T_scale[0, 0] + S[0, 0]) / 2, rng)]])
        else:
            self.T = sample_inverse_wishart(self.T_df + flat.n_clusters, self.T_scale + S, rng)


def run_lmm_chain(data, config: ChainConfig, chain: int = 0) -> Posterior:
    """Conjugate Gibbs for the random-intercept mediator and outcome models."""
    flat = _flat(data)
    if flat.n_clusters == 0:
        raise ValueError("dataset has no clusters")
    hyper = config.hyper
    rng = make_rng(config.seed, "chain", chain, "lmm")
    Cm = flat.mediator_design()
    m1 = np.where(flat.m1 == 1, 0.5, -0.5) if flat.mediator1_binary else flat.m1
    med = _LmmPart(flat, Cm, np.column_stack([m1, flat.m2]), hyper.mediator_coef_prior(Cm.shape[1]),
                   hyper.mediator_cov_prior(), hyper, rng)
    Cy = flat.outcome_design(flat.m1, flat.m2)
    out = _LmmPart(flat, Cy, flat.y[:, None], hyper.outcome_coef_prior(Cy.shape[1]),
                   hyper.outcome_var_prior(), hyper, rng)
    snaps = []
    total = config.n_burn + config.n_keep * config.thin
    for it in range(total):
        try:
            med.update(rng)
            if flat.mediator1_binary:
                fit = med.fitted_fixed() + med.b[flat.cluster_of]
                _probit_latent(med.R[:, 0], flat.m1, fit[:, 0], med.fix.cov[0],
                               med.R[:, 1] - fit[:, 1], rng)
            out.update(rng)
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            raise ChainError(f"iteration {it}: {exc}") from exc
        if it >= config.n_burn and (it - config.n_burn) % config.thin == 0:
            snaps.append({
                "mediator.fixed": med.fix.coef[0].copy(),
                "mediator.b": med.b.copy(),
                "mediator.cov": med.fix.cov[0].copy(),
                "mediator.T": med.T.copy(),
                "outcome.fixed": out.fix.coef[0, 0].copy(),
                "outcome.b": out.b[:, 0].copy(),
                "outcome.sigma2": np.float64(out.fix.cov[0, 0, 0]),
                "outcome.tau2": np.float64(out.T[0, 0]),
            })
    meta = {"model": "lmm", "config": config.to_dict(), "chain": chain,
            "n_units": flat.n_units, "n_clusters": flat.n_clusters,
            "mediator1_binary": bool(flat.mediator1_binary)}
    return Posterior("lmm", stack_snapshots(snaps), meta)


class _NdpmPart:
    """Nested-DP intercepts plus parametric slopes for a q-variate response."""

    def __init__(self, flat, C, R, coef_prior, cov_prior, config, rng):
        self.X = np.ascontiguousarray(C[:, 1:])  # slopes; intercept goes to the mixture
        self.R = np.array(R, dtype=float)
        n, p = self.X.shape
        self.q = self.R.shape[1]
        m0, S0 = coef_prior
        self.fm0, self.fS0inv = np.asarray(m0)[1:], np.linalg.inv(np.asarray(S0)[1:, 1:])
        Cf = np.column_stack([np.ones(n), self.X])
        beta = np.linalg.solve(Cf.T @ Cf + 1e-6 * np.eye(p + 1), Cf.T @ self.R)
        self.F = beta[1:].T.copy()  # (q, p)
        ones = np.ones((n, 1))
        self.mix = NestedMixture(ones, self.R - self.X @ self.F.T, flat.starts, flat.sizes,
                                 flat.cluster_of, config.k_c, config.k_i,
                                 (np.asarray(m0)[:1], np.asarray(S0)[:1, :1]), cov_prior,
                                 config.hyper, rng)
        self.xx = np.einsum("np,nq->npq", self.X, self.X)

    def intercepts(self):
        return self.mix.coef[self.mix.comp, :, 0]  # (N, q)

    def update_fixed(self, rng):
        comp, q = self.mix.comp, self.q
        p = self.X.shape[1]
        resid = self.R - self.intercepts()
        lam = np.linalg.inv(self.mix.cov)  # (K, q, q)
        cr = np.einsum("np,nq->npq", self.X, resid)
        _, ctc, ctr = kernels.suffstats(comp, self.mix.K, self.xx, cr)
        prec = np.zeros((q * p, q * p))
        lin = np.zeros(q * p)
        for a in range(q):
            lin[a * p:(a + 1) * p] = np.einsum("kpb,kb->p", ctr, lam[:, :, a]) + self.fS0inv @ self.fm0
            for b in range(q):
                prec[a * p:(a + 1) * p, b * p:(b + 1) * p] = np.einsum("k,kpr->pr", lam[:, a, b], ctc)
            prec[a * p:(a + 1) * p, a * p:(a + 1) * p] += self.fS0inv
        L = np.linalg.cholesky(prec)
        mean = np.linalg.solve(L.T, np.linalg.solve(L, lin) + rng.standard_normal(q * p))
        self.F = mean.reshape(q, p)

    def update(self, rng):
        self.mix.R[:] = self.R - self.X @ self.F.T
        self.mix.sweep(rng)
        self.update_fixed(rng)


def run_ndpm_chain(data, config: ChainConfig, chain: int = 0) -> Posterior:
    """Gibbs sampler of the nested-DP random-intercept comparator."""
    flat = _flat(data)
    if flat.n_clusters == 0:
        raise ValueError("dataset has no clusters")
    hyper = config.hyper
    rng = make_rng(config.seed, "chain", chain, "ndpm")
    Cm = flat.mediator_design()
    m1 = np.where(flat.m1 == 1, 0.5, -0.5) if flat.mediator1_binary else flat.m1
    med = _NdpmPart(flat, Cm, np.column_stack([m1, flat.m2]), hyper.mediator_coef_prior(Cm.shape[1]),
                    hyper.mediator_cov_prior(), config, rng)
    Cy = flat.outcome_design(flat.m1, flat.m2)
    out = _NdpmPart(flat, Cy, flat.y[:, None], hyper.outcome_coef_prior(Cy.shape[1]),
                    hyper.outcome_var_prior(), config, rng)
    snaps = []
    total = config.n_burn + config.n_keep * config.thin
    for it in range(total):
        try:
            med.update(rng)
            if flat.mediator1_binary:
                fit = med.X @ med.F.T + med.intercepts()
                cov = med.mix.cov[med.mix.comp]
                ratio = cov[:, 0, 1] / cov[:, 1, 1]
                mu = fit[:, 0] + ratio * (med.R[:, 1] - fit[:, 1])
                var = cov[:, 0, 0] - cov[:, 0, 1] * ratio
                pos = flat.m1 == 1
                med.R[:, 0] = sample_truncated_normal(mu, var, np.where(pos, 0.0, -np.inf),
                                                      np.where(pos, np.inf, 0.0), rng)
            out.update(rng)
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            raise ChainError(f"iteration {it}: {exc}") from exc
        if it >= config.n_burn and (it - config.n_burn) % config.thin == 0:
            snap = {}
            for name, part in (("mediator", med), ("outcome", out)):
                for k, v in part.mix.snapshot().items():
                    snap[f"{name}.{k}"] = v
            snap["mediator.fixed"] = med.F.copy()
            snap["outcome.fixed"] = out.F[0].copy()
            snaps.append(snap)
    meta = {"model": "ndpm", "config": config.to_dict(), "chain": chain,
            "n_units": flat.n_units, "n_clusters": flat.n_clusters,
            "mediator1_binary": bool(flat.mediator1_binary)}
    return Posterior("ndpm", stack_snapshots(snaps), meta)


def gcompute_baseline(post: Posterior, data, seed: int = 0, **kw) -> EstimandDraws:
    """Estimand draws for an ``lmm`` or ``ndpm`` posterior."""
    if post.tag not in ("lmm", "ndpm"):
        raise ValueError(f"not a baseline posterior: {post.tag!r}")
    return estimate(post, data, seed=seed, **kw)


def fit_model(data, config: ChainConfig, model: str, chain: int = 0) -> Posterior:
    """Dispatch on the model tag (``ad``, ``fd``, ``lmm``, ``ndpm``)."""
    if model in ("ad", "fd"):
        return run_chain(data, config, kind=model, chain=chain)
    if model == "lmm":
        return run_lmm_chain(data, config, chain)
    if model == "ndpm":
        return run_ndpm_chain(data, config, chain)
    raise ValueError(f"unknown model {model!r}")
