"""Covariate-dependent cluster weights via kernel stick-breaking.

Cluster class ``k`` gets weight ``K(v; G_k) s_k prod_{m<k} (1 - K(v; G_m) s_m)``
with the Gaussian kernel ``K(v; G) = exp(-|v - G|^2 / 2)``; the last class
takes the remaining mass. Locations ``G_k`` and sticks ``s_k`` are updated
by Metropolis-Hastings, everything else is as in the plain nested mixture.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .nddpm import NestedMixture, update_unit_sticks
from .stochastic import stick_log_weights, stick_weights

CLAMP = 1.0 - 1e-12


def kernel_value(v, gamma_k):
    """exp(-|v - gamma_k|^2 / 2); broadcasts over leading axes of ``v``."""
    d = np.asarray(v, dtype=float) - np.asarray(gamma_k, dtype=float)
    return np.exp(-0.5 * np.sum(np.atleast_1d(d) ** 2, axis=-1))


def kernel_matrix(v_all, gamma):
    """(I, k_c) kernel values of every cluster covariate against every location."""
    d = v_all[:, None, :] - gamma[None, :, :]
    return np.exp(-0.5 * np.einsum("ika,ika->ik", d, d))


def _stick_matrix(s, kmat):
    U = kmat * s[None, :]
    U[:, -1] = 1.0
    return U


def fd_cluster_weights(v, s, gamma):
    """Weights for one covariate vector ``v`` (or a stack of them)."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    U = _stick_matrix(np.asarray(s, dtype=float), kernel_matrix(v, np.asarray(gamma, float)))
    w = stick_weights(U.T).T
    return w[0] if w.shape[0] == 1 else w


def fd_log_weights(v_all, s, gamma):
    U = _stick_matrix(np.asarray(s, float), kernel_matrix(v_all, gamma))
    return stick_log_weights(np.minimum(U, 1.0).T).T


def mvn_logdensity_unnorm(x, mean, prec):
    d = x - mean
    return -0.5 * d @ prec @ d


def location_log_target(k, g, zeta, s, v_all, mu, prec):
    """Unnormalised log full conditional of location ``k`` at value ``g``."""
    lp = mvn_logdensity_unnorm(g, mu, prec)
    if k == len(s) - 1:
        return lp  # the remainder weight does not involve the last kernel
    kv = kernel_value(v_all, g)
    lp += np.log(kv[zeta == k]).sum() if np.any(zeta == k) else 0.0
    above = zeta > k
    if above.any():
        lp += np.log1p(-np.minimum(s[k] * kv[above], CLAMP)).sum()
    return float(lp)


def stick_log_target(k, x, zeta, gamma, v_all, alpha):
    n_k = np.count_nonzero(zeta == k)
    kv = kernel_value(v_all[zeta > k], gamma[k])
    return float(n_k * np.log(x) + (alpha - 1.0) * np.log1p(-x)
                 + np.log1p(-np.minimum(x * kv, CLAMP)).sum())


def mh_update_locations(zeta, s, v_all, gamma, rng, mu, cov, accept_log=None):
    """One random-walk MH pass (proposal N(G_k, I)) over all locations."""
    gamma = np.array(gamma, dtype=float, copy=True)
    prec = np.linalg.inv(np.atleast_2d(cov))
    for k in range(gamma.shape[0]):
        prop = gamma[k] + rng.standard_normal(gamma.shape[1])
        log_r = (location_log_target(k, prop, zeta, s, v_all, mu, prec)
                 - location_log_target(k, gamma[k], zeta, s, v_all, mu, prec))
        ok = np.log(rng.random()) < log_r
        if ok:
            gamma[k] = prop
        if accept_log is not None:
            accept_log.append(bool(ok))
    return gamma


def mh_update_sticks(zeta, gamma, v_all, alpha, s, rng, accept_log=None):
    """Independence MH with U(0, 1) proposals for s_k, k < k_c - 1."""
    s = np.array(s, dtype=float, copy=True)
    for k in range(s.shape[0] - 1):
        prop = rng.random()
        while prop <= 0.0:
            prop = rng.random()
        log_r = (stick_log_target(k, prop, zeta, gamma, v_all, alpha)
                 - stick_log_target(k, s[k], zeta, gamma, v_all, alpha))
        ok = np.log(rng.random()) < log_r
        if ok:
            s[k] = prop
        if accept_log is not None:
            accept_log.append(bool(ok))
    s[-1] = 1.0
    return s


class FDNestedMixture(NestedMixture):
    """Nested mixture whose cluster weights depend on cluster covariates."""

    def __init__(self, *args, v_all, gamma_prior, **kw):
        self.v_all = np.asarray(v_all, dtype=float)
        self.mu_gamma = np.asarray(gamma_prior[0], dtype=float)
        self.cov_gamma = np.atleast_2d(np.asarray(gamma_prior[1], dtype=float))
        self.accept_gamma = []
        self.accept_s = []
        super().__init__(*args, **kw)

    def _init_state(self, rng):
        super()._init_state(rng)
        L = np.linalg.cholesky(self.cov_gamma)
        self.gamma = self.mu_gamma + rng.standard_normal((self.k_c, self.mu_gamma.size)) @ L.T

    def log_pi(self):
        return fd_log_weights(self.v_all, self.s, self.gamma)

    @property
    def pi_rows(self):
        return fd_cluster_weights(self.v_all, self.s, self.gamma).reshape(len(self.v_all), -1)

    def update_sticks(self, rng):
        self.gamma = mh_update_locations(self.zeta, self.s, self.v_all, self.gamma, rng,
                                         self.mu_gamma, self.cov_gamma, self.accept_gamma)
        self.s = mh_update_sticks(self.zeta, self.gamma, self.v_all, self.alpha, self.s, rng,
                                  self.accept_s)
        self.u, _ = update_unit_sticks(self.xi, self.zeta_u, self.beta, self.k_i, self.k_c, rng)

    def snapshot(self):
        out = super().snapshot()
        out["gamma_loc"] = self.gamma.copy()
        out["pi_rows"] = self.pi_rows
        return out


def fd_sample_cluster_labels(mix: FDNestedMixture, rng):
    """Cluster-label update with row-specific weights (the AD step with pi_k(v_i))."""
    logits, _, _ = mix.cluster_label_logits()
    return kernels.draw_labels(logits, rng.random(logits.shape[0]))
