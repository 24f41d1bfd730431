"""Blocked Gibbs updates for a two-level truncated stick-breaking mixture.

:class:`NestedMixture` holds the state of one mixture of Gaussian regressions
(``q``-variate response on a shared design): cluster labels ``zeta``, unit
labels ``xi``, cluster sticks ``s``, unit sticks ``u`` (one column per
cluster class), concentrations ``alpha`` and ``beta`` and the component
atoms. The mediator model is a bivariate instance, the outcome model a
univariate one whose variance prior IG(a0, b0) is written as the equivalent
1-d inverse-Wishart IW(2 a0, 2 b0).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .stochastic import (sample_beta, sample_gamma, stick_log_weights,
                         stick_weights)


class DegeneracyError(FloatingPointError):
    """A label update found no class with positive probability."""


# ------------------------------------------------------------- sticks ---

def update_cluster_sticks(zeta, alpha, k_c, rng):
    """s_k ~ Be(1 + n_k, alpha + n_{>k}) for k < k_c - 1, last stick 1."""
    counts = np.bincount(np.asarray(zeta), minlength=k_c)[:k_c]
    above = counts[::-1].cumsum()[::-1] - counts
    s = np.ones(k_c)
    if k_c > 1:
        s[:-1] = sample_beta(1.0 + counts[:-1], alpha + above[:-1], rng)
    return s, stick_weights(s)


def unit_class_counts(xi, zeta_u, k_i, k_c):
    flat = np.asarray(xi) * k_c + np.asarray(zeta_u)
    return np.bincount(flat, minlength=k_i * k_c).reshape(k_i, k_c)


def update_unit_sticks(xi, zeta_u, beta, k_i, k_c, rng):
    """u_lk ~ Be(1 + n_lk, beta_k + n_{>l,k}); last row 1. Returns (u, w)."""
    counts = unit_class_counts(xi, zeta_u, k_i, k_c)
    above = counts[::-1].cumsum(axis=0)[::-1] - counts
    u = np.ones((k_i, k_c))
    if k_i > 1:
        u[:-1] = sample_beta(1.0 + counts[:-1], np.asarray(beta)[None, :] + above[:-1], rng)
    return u, stick_weights(u)


def update_concentrations(s, u, hyper, rng):
    """Conjugate Gamma updates for alpha and the vector beta."""
    s = np.asarray(s)
    u = np.asarray(u)
    k_c = s.shape[0]
    k_i = u.shape[0]
    rate_a = hyper.b_alpha - np.log1p(-s[:-1]).sum()
    rate_b = hyper.b_beta - np.log1p(-u[:-1]).sum(axis=0)
    if rate_a <= 0 or np.any(rate_b <= 0):
        raise FloatingPointError("non-positive concentration rate")
    alpha = float(sample_gamma(hyper.a_alpha + k_c - 1, rate_a, rng))
    beta = sample_gamma(hyper.a_beta + k_i - 1, rate_b, rng)
    return alpha, np.atleast_1d(beta)


# ------------------------------------------------------------ mixture ---

class NestedMixture:
    """State and Gibbs updates of one nested mixture of Gaussian regressions.

    Parameters
    ----------
    design : (N, p) array
    response : (N, q) array; may be modified in place between sweeps
        (probit latents, baseline residuals).
    starts, sizes, cluster_of : cluster layout of the units.
    coef_prior : (mean (p,), cov (p, p)) shared by every response row.
    cov_prior : (df, scale (q, q)) inverse-Wishart prior on the kernel covariance.
    hyper : HyperParams (concentration priors).
    """

    def __init__(self, design, response, starts, sizes, cluster_of, k_c, k_i,
                 coef_prior, cov_prior, hyper, rng):
        self.C = np.ascontiguousarray(design, dtype=float)
        self.R = np.ascontiguousarray(response, dtype=float)
        self.starts = np.asarray(starts, dtype=np.int64)
        self.sizes = np.asarray(sizes, dtype=np.int64)
        self.cluster_of = np.asarray(cluster_of, dtype=np.int64)
        self.k_c, self.k_i = int(k_c), int(k_i)
        self.K = self.k_c * self.k_i
        self.hyper = hyper
        n, p = self.C.shape
        q = self.R.shape[1]
        self.n, self.p, self.q = n, p, q
        self.m0 = np.asarray(coef_prior[0], dtype=float)
        self.S0inv = np.linalg.inv(coef_prior[1])
        self.S0inv_m0 = self.S0inv @ self.m0
        self.nu0 = float(cov_prior[0])
        self.Psi0 = np.asarray(cov_prior[1], dtype=float).reshape(q, q)
        self.outer = np.einsum("np,nq->npq", self.C, self.C)
        self._init_state(rng)

    # -- initialisation
    def _init_state(self, rng):
        I = len(self.sizes)
        C, R = self.C, self.R
        ridge = 1e-6 * np.eye(self.p)
        b = np.linalg.solve(C.T @ C + ridge + self.S0inv, C.T @ R + self.S0inv_m0[:, None])
        resid = R - C @ b
        cov0 = resid.T @ resid / max(self.n - 1, 1) + 1e-6 * np.eye(self.q)
        self.coef = np.repeat(b.T[None], self.K, axis=0)  # (K, q, p)
        self.cov = np.repeat(cov0[None], self.K, axis=0)  # (K, q, q)
        self.alpha = 1.0
        self.beta = np.ones(self.k_c)
        self.zeta = rng.integers(0, self.k_c, I)
        self.xi = rng.integers(0, self.k_i, self.n)
        self.s, _ = update_cluster_sticks(self.zeta, self.alpha, self.k_c, rng)
        self.u, _ = update_unit_sticks(self.xi, self.zeta[self.cluster_of], self.beta,
                                       self.k_i, self.k_c, rng)

    # -- derived quantities
    @property
    def zeta_u(self):
        return self.zeta[self.cluster_of]

    @property
    def comp(self):
        """Flattened component index of each unit."""
        return self.xi * self.k_c + self.zeta_u

    @property
    def pi(self):
        return stick_weights(self.s)

    @property
    def w(self):
        return stick_weights(self.u)

    def log_pi(self):
        """Cluster-class log weights, (k_c,) or (I, k_c) for covariate-dependent weights."""
        return stick_log_weights(self.s)

    def component_means(self):
        """(N, K, q) regression means under every component."""
        flat = self.coef.reshape(self.K * self.q, self.p)
        return (self.C @ flat.T).reshape(self.n, self.K, self.q)

    def precisions(self):
        prec = np.linalg.inv(self.cov)
        prec = 0.5 * (prec + np.swapaxes(prec, 1, 2))
        logdet = np.linalg.slogdet(self.cov)[1]
        return prec, logdet

    def loglik(self):
        """(N, k_i, k_c) kernel log-densities of every unit under every component."""
        prec, logdet = self.precisions()
        ll = kernels.component_loglik(self.R, self.component_means(), prec, logdet)
        return ll.reshape(self.n, self.k_i, self.k_c)

    # -- Gibbs steps
    def cluster_label_logits(self, ll=None):
        if ll is None:
            ll = self.loglik()
        logw = stick_log_weights(self.u)
        logits = kernels.cluster_logits(ll, logw, self.starts) + self.log_pi()
        return logits, ll, logw

    def update_labels(self, rng):
        logits, ll, logw = self.cluster_label_logits()
        dead = ~np.isfinite(logits.max(axis=1))
        if dead.any():
            raise DegeneracyError(f"cluster {int(np.flatnonzero(dead)[0])}: every cluster class "
                                  "has zero likelihood")
        self.zeta = kernels.draw_labels(logits, rng.random(logits.shape[0]))
        self.xi = kernels.draw_unit_labels(ll, logw, self.zeta_u, rng.random(self.n))

    def update_sticks(self, rng):
        self.s, _ = update_cluster_sticks(self.zeta, self.alpha, self.k_c, rng)
        self.u, _ = update_unit_sticks(self.xi, self.zeta_u, self.beta, self.k_i, self.k_c, rng)

    def update_concentrations(self, rng):
        self.alpha, self.beta = update_concentrations(self.s, self.u, self.hyper, rng)

    def update_atoms(self, rng):
        comp = self.comp
        K, p, q = self.K, self.p, self.q
        cr = np.einsum("np,nq->npq", self.C, self.R)
        counts, ctc, ctr = kernels.suffstats(comp, K, self.outer, cr)
        # residual cross-products at the current coefficients
        fitted = np.einsum("np,nqp->nq", self.C, self.coef[comp])
        resid = self.R - fitted
        S = np.zeros((K, q, q))
        for a in range(q):
            for b in range(a, q):
                S[:, a, b] = np.bincount(comp, weights=resid[:, a] * resid[:, b], minlength=K)
                S[:, b, a] = S[:, a, b]
        df = self.nu0 + counts
        chi2 = rng.chisquare(df[:, None] - np.arange(q)[None, :])
        normals = rng.standard_normal((K, q * (q - 1) // 2))
        self.cov = kernels.iw_bartlett(self.Psi0[None] + S, chi2, normals)
        lam = np.linalg.inv(self.cov)
        for r in range(q):
            lin = lam[:, r, r, None] * ctr[:, :, r] + self.S0inv_m0[None, :]
            for s_ in range(q):
                if s_ != r:
                    other = ctr[:, :, s_] - np.einsum("kab,kb->ka", ctc, self.coef[:, s_, :])
                    lin += lam[:, r, s_, None] * other
            prec = lam[:, r, r, None, None] * ctc + self.S0inv[None]
            self.coef[:, r, :] = kernels.gaussian_draw(prec, lin, rng.standard_normal((K, p)))
        self.counts = counts

    def sweep(self, rng):
        self.update_labels(rng)
        self.update_sticks(rng)
        self.update_concentrations(rng)
        self.update_atoms(rng)

    def snapshot(self) -> dict:
        return {
            "zeta": self.zeta.astype(np.int16),
            "xi": self.xi.astype(np.int16),
            "s": self.s.copy(),
            "pi": self.pi,
            "u": self.u.copy(),
            "w": self.w,
            "alpha": np.float64(self.alpha),
            "beta": self.beta.copy(),
            "coef": self.coef.copy(),
            "cov": self.cov.copy(),
        }

    def occupancy(self):
        """(number of occupied cluster classes, max occupied unit classes within a class)."""
        occ_c = np.unique(self.zeta).size
        pairs = np.unique(self.comp)
        per_k = np.bincount(pairs % self.k_c, minlength=self.k_c)
        return occ_c, int(per_k.max())


# ------------------------------------------------------- prior checks ---

def _truncated_sticks(conc, n, k, rng):
    s = rng.beta(1.0, conc, size=(n, k))
    s[:, -1] = 1.0
    return stick_weights(s.T).T


def prior_predictive_corr(alpha, beta, n_draws, rng, sets=((-np.inf, 0.0), (-np.inf, 0.5)),
                          k_c=None, k_i=None):
    """Monte Carlo correlations of random measures under the nested prior.

    Draws the top-level weights, two independent cluster picks and the
    lower-level measures they point to, with standard-normal atoms and no
    covariates. Returns ``(within, between)``: the correlation of
    ``F(A)`` and ``F(B)`` for the same cluster, and for two different
    clusters. Their ratio estimates ``alpha + 1``.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be positive")
    tol = 1e-10
    if k_c is None:
        k_c = int(np.ceil(np.log(tol) / np.log(alpha / (alpha + 1.0)))) + 1 if alpha > 0 else 1
        k_c = max(2, min(k_c, 400))
    if k_i is None:
        k_i = int(np.ceil(np.log(tol) / np.log(beta / (beta + 1.0)))) + 1
        k_i = max(2, min(k_i, 400))
    (a_lo, a_hi), (b_lo, b_hi) = sets
    out = np.empty((n_draws, 3))
    batch = 20000
    for start in range(0, n_draws, batch):
        m = min(batch, n_draws - start)
        pi = _truncated_sticks(alpha, m, k_c, rng)
        cdf = np.cumsum(pi, axis=1)
        z1 = np.minimum((cdf < rng.random((m, 1)) * cdf[:, -1:]).sum(axis=1), k_c - 1)
        z2 = np.minimum((cdf < rng.random((m, 1)) * cdf[:, -1:]).sum(axis=1), k_c - 1)
        same = z1 == z2

        def lower():
            w = _truncated_sticks(beta, m, k_i, rng)
            atoms = rng.standard_normal((m, k_i))
            fa = (w * ((atoms > a_lo) & (atoms <= a_hi))).sum(axis=1)
            fb = (w * ((atoms > b_lo) & (atoms <= b_hi))).sum(axis=1)
            return fa, fb

        f1a, f1b = lower()
        _, f2b_new = lower()
        f2b = np.where(same, f1b, f2b_new)
        out[start:start + m] = np.column_stack([f1a, f1b, f2b])
    within = np.corrcoef(out[:, 0], out[:, 1])[0, 1]
    between = np.corrcoef(out[:, 0], out[:, 2])[0, 1]
    return float(within), float(between)
