"""Hot loops of the Gibbs sweep, each in a numba and a pure-numpy version.

The public names at the bottom of the module point at the numba versions
unless numba is unavailable or disabled (see :mod:`bnpmed._accel`). Both
versions consume the same pre-drawn random numbers, so they agree up to
floating-point summation order.

Mixture components are flattened as ``c = l * k_c + k`` for unit-level
class ``l`` and cluster-level class ``k``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ._accel import HAVE_NUMBA, njit

LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------- numpy ---

def component_loglik_np(obs, mean, prec, logdet):
    """Gaussian log-density of each unit under each component.

    obs (N, q), mean (N, K, q), prec (K, q, q), logdet (K,) -> (N, K)
    """
    d = obs[:, None, :] - mean
    quad = np.einsum("nka,kab,nkb->nk", d, prec, d)
    q = obs.shape[1]
    return -0.5 * (q * LOG_2PI + logdet[None, :] + quad)


def cluster_logits_np(ll, logw, starts):
    """sum_j log sum_l w_lk f_lk(obs_ij) per cluster and class.

    ll (N, k_i, k_c), logw (k_i, k_c) -> (I, k_c)
    """
    per_unit = logsumexp(ll + logw[None, :, :], axis=1)
    return np.add.reduceat(per_unit, starts, axis=0)


def draw_labels_np(logits, u):
    m = logits.max(axis=1, keepdims=True)
    cdf = np.cumsum(np.exp(logits - m), axis=1)
    idx = (cdf <= u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(idx, logits.shape[1] - 1).astype(np.int64)


def draw_unit_labels_np(ll, logw, zeta_u, u):
    rows = np.arange(ll.shape[0])
    logits = ll[rows, :, zeta_u] + logw[:, zeta_u].T
    return draw_labels_np(logits, u)


def suffstats_np(labels, n_comp, outer, cr):
    """Per-component count, sum of c c^T and sum of c r^T.

    outer (N, p, p) holds c c^T per unit, cr (N, p, q) holds c r^T.
    """
    counts = np.bincount(labels, minlength=n_comp)
    p, q = cr.shape[1], cr.shape[2]
    ctc = np.zeros((n_comp, p, p))
    ctr = np.zeros((n_comp, p, q))
    order = np.argsort(labels, kind="stable")
    occupied = np.flatnonzero(counts)
    if occupied.size:
        starts = np.concatenate([[0], np.cumsum(counts[occupied])[:-1]])
        ctc[occupied] = np.add.reduceat(outer[order], starts, axis=0)
        ctr[occupied] = np.add.reduceat(cr[order], starts, axis=0)
    return counts, ctc, ctr


def gaussian_draw_np(prec, lin, z):
    """x ~ N(P^{-1} b, P^{-1}) per component, given standard normals z."""
    L = np.linalg.cholesky(prec)
    y = np.linalg.solve(L, lin[..., None])
    Lt = np.swapaxes(L, -1, -2)
    return np.linalg.solve(Lt, y + z[..., None])[..., 0]


def iw_bartlett_np(scale, chi2, normals):
    """Batched inverse-Wishart draws from Bartlett variates.

    scale (K, q, q), chi2 (K, q) with chi2[:, i] ~ chi2(df - i),
    normals (K, q(q-1)/2) filling the strict lower triangle row-wise.
    """
    K, q, _ = scale.shape
    U = np.linalg.cholesky(scale)
    A = np.zeros((K, q, q))
    ii = np.arange(q)
    A[:, ii, ii] = np.sqrt(chi2)
    r, c = np.tril_indices(q, -1)
    A[:, r, c] = normals
    X = np.linalg.solve(A, np.swapaxes(U, -1, -2))
    out = np.swapaxes(X, -1, -2) @ X
    return 0.5 * (out + np.swapaxes(out, -1, -2))


# ---------------------------------------------------------------- numba ---

@njit
def component_loglik_nb(obs, mean, prec, logdet):
    n, K, q = mean.shape
    out = np.empty((n, K))
    for i in range(n):
        for k in range(K):
            quad = 0.0
            for a in range(q):
                da = obs[i, a] - mean[i, k, a]
                for b in range(q):
                    quad += da * prec[k, a, b] * (obs[i, b] - mean[i, k, b])
            out[i, k] = -0.5 * (q * LOG_2PI + logdet[k] + quad)
    return out


@njit
def cluster_logits_nb(ll, logw, starts):
    n, ki, kc = ll.shape
    n_cl = starts.shape[0]
    out = np.zeros((n_cl, kc))
    m = np.empty(kc)
    acc = np.empty(kc)
    g = 0
    for i in range(n):
        while g + 1 < n_cl and i >= starts[g + 1]:
            g += 1
        for k in range(kc):
            m[k] = ll[i, 0, k] + logw[0, k]
        for l in range(1, ki):
            for k in range(kc):
                t = ll[i, l, k] + logw[l, k]
                if t > m[k]:
                    m[k] = t
        acc[:] = 0.0
        for l in range(ki):
            for k in range(kc):
                acc[k] += np.exp(ll[i, l, k] + logw[l, k] - m[k])
        for k in range(kc):
            if m[k] == -np.inf:
                out[g, k] = -np.inf
            else:
                out[g, k] += m[k] + np.log(acc[k])
    return out


@njit
def draw_labels_nb(logits, u):
    n, K = logits.shape
    out = np.empty(n, dtype=np.int64)
    cdf = np.empty(K)
    for i in range(n):
        m = logits[i, 0]
        for k in range(1, K):
            if logits[i, k] > m:
                m = logits[i, k]
        acc = 0.0
        for k in range(K):
            acc += np.exp(logits[i, k] - m)
            cdf[k] = acc
        target = u[i] * acc
        idx = 0
        for k in range(K):
            if cdf[k] <= target:
                idx += 1
        out[i] = min(idx, K - 1)
    return out


@njit
def draw_unit_labels_nb(ll, logw, zeta_u, u):
    n, ki, _ = ll.shape
    logits = np.empty((n, ki))
    for i in range(n):
        k = zeta_u[i]
        for l in range(ki):
            logits[i, l] = ll[i, l, k] + logw[l, k]
    return draw_labels_nb(logits, u)


@njit
def suffstats_nb(labels, n_comp, outer, cr):
    n, p, q = cr.shape
    counts = np.zeros(n_comp, dtype=np.int64)
    ctc = np.zeros((n_comp, p, p))
    ctr = np.zeros((n_comp, p, q))
    for i in range(n):
        c = labels[i]
        counts[c] += 1
        for a in range(p):
            for b in range(p):
                ctc[c, a, b] += outer[i, a, b]
            for b in range(q):
                ctr[c, a, b] += cr[i, a, b]
    return counts, ctc, ctr


@njit
def _chol(a):
    p = a.shape[0]
    L = np.zeros((p, p))
    for j in range(p):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 0.0:
            raise np.linalg.LinAlgError("matrix is not positive definite")
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, p):
            s = a[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return L


@njit
def gaussian_draw_nb(prec, lin, z):
    K, p, _ = prec.shape
    out = np.empty((K, p))
    y = np.empty(p)
    for c in range(K):
        L = _chol(prec[c])
        for i in range(p):  # forward: L y = b
            s = lin[c, i]
            for k in range(i):
                s -= L[i, k] * y[k]
            y[i] = s / L[i, i]
        for i in range(p):
            y[i] += z[c, i]
        for i in range(p - 1, -1, -1):  # backward: L^T x = y + z
            s = y[i]
            for k in range(i + 1, p):
                s -= L[k, i] * out[c, k]
            out[c, i] = s / L[i, i]
    return out


@njit
def iw_bartlett_nb(scale, chi2, normals):
    K, q, _ = scale.shape
    out = np.empty((K, q, q))
    for c in range(K):
        U = _chol(scale[c])
        A = np.zeros((q, q))
        t = 0
        for i in range(q):
            A[i, i] = np.sqrt(chi2[c, i])
            for j in range(i):
                A[i, j] = normals[c, t]
                t += 1
        # X = A^{-1} U^T by forward substitution, column by column
        X = np.zeros((q, q))
        for col in range(q):
            for i in range(q):
                s = U[col, i]
                for k in range(i):
                    s -= A[i, k] * X[k, col]
                X[i, col] = s / A[i, i]
        for a in range(q):
            for b in range(a, q):
                s = 0.0
                for k in range(q):
                    s += X[k, a] * X[k, b]
                out[c, a, b] = s
                out[c, b, a] = s
    return out


if HAVE_NUMBA:
    component_loglik = component_loglik_nb
    cluster_logits = cluster_logits_nb
    draw_labels = draw_labels_nb
    draw_unit_labels = draw_unit_labels_nb
    suffstats = suffstats_nb
    gaussian_draw = gaussian_draw_nb
    iw_bartlett = iw_bartlett_nb
else:
    component_loglik = component_loglik_np
    cluster_logits = cluster_logits_np
    draw_labels = draw_labels_np
    draw_unit_labels = draw_unit_labels_np
    suffstats = suffstats_np
    gaussian_draw = gaussian_draw_np
    iw_bartlett = iw_bartlett_np
