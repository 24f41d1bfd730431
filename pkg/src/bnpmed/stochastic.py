"""Random streams, samplers and densities used by the Gibbs steps.

Every sampler takes a :class:`numpy.random.Generator`; nothing touches global
random state. Streams are derived from a root seed plus a tuple of keys so
that replicate/chain/purpose combinations are reproducible no matter how work
is scheduled.
"""

from __future__ import annotations

import zlib

import numpy as np
from scipy import special

LOG_2PI = float(np.log(2.0 * np.pi))
STICK_EPS = 1e-12


class ParameterError(ValueError):
    pass


class FactorizationError(np.linalg.LinAlgError):
    pass


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *keys)``.

    Keys may be integers or strings (strings are hashed with CRC32), e.g.
    ``make_rng(7, replicate, chain, "gcomp")``.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`FactorizationError` if not SPD."""
    a = np.asarray(a, dtype=float)
    if not np.allclose(a, np.swapaxes(a, -1, -2), atol=1e-10, rtol=0):
        raise FactorizationError("matrix is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"matrix is not positive definite: {exc}") from None


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a x = b`` for SPD ``a`` via its Cholesky factor."""
    from scipy.linalg import cho_solve

    return cho_solve((cholesky(a), True), b)


def sample_mvn(mean, cov, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (mean.size, mean.size):
        raise ParameterError(f"mean has length {mean.size} but cov is {cov.shape}")
    L = cholesky(cov)
    shape = (mean.size,) if size is None else (size, mean.size)
    z = rng.standard_normal(shape)
    return mean + z @ L.T


def sample_inverse_wishart(df: float, scale, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart draw by the Bartlett decomposition.

    With ``scale = U U^T`` and ``A`` the Bartlett factor of a standard Wishart,
    ``U A^{-T} A^{-1} U^T`` is distributed as IW(df, scale).
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    d = scale.shape[0]
    if df <= d - 1:
        raise ParameterError(f"inverse-Wishart needs df > dim - 1 (df={df}, dim={d})")
    U = cholesky(scale)
    chi2 = rng.chisquare(df - np.arange(d))
    normals = rng.standard_normal(d * (d - 1) // 2)
    return iw_from_bartlett(U, chi2, normals)


def iw_from_bartlett(U: np.ndarray, chi2: np.ndarray, normals: np.ndarray) -> np.ndarray:
    d = U.shape[0]
    A = np.diag(np.sqrt(chi2))
    A[np.tril_indices(d, -1)] = normals
    from scipy.linalg import solve_triangular

    X = solve_triangular(A, U.T, lower=True)  # A^{-1} U^T
    out = X.T @ X
    return 0.5 * (out + out.T)


def sample_gamma(shape, rate, rng: np.random.Generator, size=None):
    """Gamma draw in the shape/rate parameterisation."""
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise ParameterError("gamma shape and rate must be positive")
    return rng.gamma(shape, 1.0 / rate, size=size)


def sample_inverse_gamma(shape, scale, rng: np.random.Generator, size=None):
    """IG(shape, scale): reciprocal of a Gamma(shape, rate=scale) draw."""
    return 1.0 / sample_gamma(shape, scale, rng, size)


def sample_beta(a, b, rng: np.random.Generator, size=None, clamp: bool = True):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ParameterError("beta parameters must be positive")
    x = rng.beta(a, b, size=size)
    if clamp:
        x = np.clip(x, STICK_EPS, 1.0 - STICK_EPS)
    return x


def categorical_from_uniform(logits: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draws for each row of ``logits`` given uniforms."""
    logits = np.atleast_2d(logits)
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    cdf = np.cumsum(p, axis=1)
    target = np.asarray(u).reshape(-1, 1) * cdf[:, -1:]
    idx = (cdf <= target).sum(axis=1)
    return np.minimum(idx, logits.shape[1] - 1)


def sample_categorical(rng: np.random.Generator, logits=None, probs=None) -> np.ndarray | int:
    """Categorical draw(s) from log-weights or probabilities (rows for 2-d input)."""
    if (logits is None) == (probs is None):
        raise ParameterError("give exactly one of logits or probs")
    if probs is not None:
        probs = np.asarray(probs, dtype=float)
        if np.any(probs < 0):
            raise ParameterError("negative probability")
        with np.errstate(divide="ignore"):
            logits = np.log(probs)
    logits = np.asarray(logits, dtype=float)
    single = logits.ndim == 1
    lg = np.atleast_2d(logits)
    if np.any(np.all(np.isneginf(lg), axis=1)):
        raise ParameterError("categorical weights are all zero")
    out = categorical_from_uniform(lg, rng.random(lg.shape[0]))
    return int(out[0]) if single else out


def sample_student_t(df, rng: np.random.Generator, size=None):
    """Student-t as normal / sqrt(chi2/df)."""
    df = np.asarray(df, dtype=float)
    if np.any(df <= 0):
        raise ParameterError("degrees of freedom must be positive")
    z = rng.standard_normal(size)
    g = rng.chisquare(df, size)
    return z / np.sqrt(g / df)


_TAIL = 4.0


def _upper_tail(a, rng):
    """Draws from N(0,1) restricted to (a, inf), a > 0, by exponential rejection."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    todo = np.arange(a.size)
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    while todo.size:
        x = a[todo] + rng.exponential(1.0, todo.size) / lam[todo]
        ok = rng.random(todo.size) <= np.exp(-0.5 * (x - lam[todo]) ** 2)
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def _std_truncnorm(lo, hi, rng):
    """Standard normal truncated to (lo, hi), vectorised."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    lo = lo.ravel().copy()
    hi = hi.ravel().copy()
    out = np.empty(lo.size)
    # reflect so the interval sits mostly on the upper side
    flip = (hi <= 0) | ((lo < 0) & (np.abs(lo) > np.abs(hi)) & np.isfinite(lo))
    lo[flip], hi[flip] = -hi[flip], -lo[flip]
    u = rng.random(lo.size)
    tail = (lo > _TAIL) & np.isinf(hi)
    body = ~tail
    if body.any():
        # inverse CDF on the survival scale for accuracy in the upper region
        s_lo = special.ndtr(-lo[body])
        s_hi = special.ndtr(-hi[body])
        x = -special.ndtri(s_lo - u[body] * (s_lo - s_hi))
        out[body] = np.clip(x, lo[body], hi[body])
    if tail.any():
        out[tail] = _upper_tail(lo[tail], rng)
    bad = (out <= lo) | (out >= hi)
    if bad.any():
        # rounding at finite bounds: nudge inside
        out[bad] = np.clip(out[bad], np.nextafter(lo[bad], np.inf), np.nextafter(hi[bad], -np.inf))
    out[flip] = -out[flip]
    return out


def sample_truncated_normal(mu, sigma2, lower, upper, rng: np.random.Generator):
    """Normal(mu, sigma2) truncated to (lower, upper); broadcasts over arrays.

    Uses the inverse CDF in the body and exponential rejection for one-sided
    tails beyond four standard deviations.
    """
    mu = np.asarray(mu, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower >= upper):
        raise ParameterError("truncation requires lower < upper")
    if np.any(sigma2 <= 0):
        raise ParameterError("variance must be positive")
    mu, sigma2, lower, upper = np.broadcast_arrays(mu, sigma2, lower, upper)
    sd = np.sqrt(sigma2)
    z = _std_truncnorm((lower - mu) / sd, (upper - mu) / sd, rng).reshape(mu.shape)
    x = mu + sd * z
    x = np.clip(x, np.nextafter(lower, np.inf), np.nextafter(upper, -np.inf))
    return x if x.ndim else float(x)


def normal_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def mvn_logpdf(x, mean, cov) -> float:
    x = np.atleast_1d(np.asarray(x, float))
    mean = np.atleast_1d(np.asarray(mean, float))
    cov = np.atleast_2d(np.asarray(cov, float))
    L = cholesky(cov)
    from scipy.linalg import solve_triangular

    z = solve_triangular(L, x - mean, lower=True)
    return float(-0.5 * (x.size * LOG_2PI + z @ z) - np.log(np.diag(L)).sum())


def mixture_logpdf_row(obs, weights, component_means, component_covs) -> float:
    """log sum_k w_k N(obs; mean_k, cov_k), evaluated with log-sum-exp.

    Scalar observations take scalar variances; vector observations take
    covariance matrices.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.size == 0:
        raise ParameterError("mixture has no components")
    if abs(weights.sum() - 1.0) > 1e-10:
        raise ParameterError(f"weights sum to {weights.sum()!r}, not 1")
    scalar = np.ndim(obs) == 0
    terms = np.empty(weights.size)
    for k in range(weights.size):
        if scalar:
            lp = float(normal_logpdf(float(obs), float(component_means[k]), float(component_covs[k])))
        else:
            lp = mvn_logpdf(obs, component_means[k], component_covs[k])
        with np.errstate(divide="ignore"):
            terms[k] = np.log(weights[k]) + lp
    return float(special.logsumexp(terms))


def stick_log_weights(s: np.ndarray) -> np.ndarray:
    """log of s_k prod_{j<k}(1 - s_j) along the first axis."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        log1m = np.log1p(-s)
        out = np.log(s)
    prev = np.cumsum(log1m, axis=0)
    out[1:] += prev[:-1]
    return out


def stick_weights(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    rem = np.cumprod(1.0 - s, axis=0)
    out = s.copy()
    out[1:] *= rem[:-1]
    return out
