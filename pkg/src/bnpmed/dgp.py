"""Synthetic cluster-randomized trials with two mediators, and their true effects.

All four potential mediator vectors of a cluster are drawn jointly, so the
observed data and the truth oracle share one draw (common random numbers).
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import ClusterDataset, make_dataset
from .estimands import CONFIGS, ESTIMANDS, estimands_from_configs
from .stochastic import ParameterError, sample_student_t


@dataclass(frozen=True)
class MediatorCorrParams:
    sigma2: float = 1.0
    alpha0: float = 0.05
    alpha1: float = 0.08
    alpha2: float = 0.05
    rho0: float = 0.1
    rho1: float = 0.0

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ParameterError("sigma2 must be positive")
        if self.alpha0 != self.alpha2 or self.rho1 != 0.0:
            warnings.warn("mediator correlations with alpha0 != alpha2 or rho1 != 0 break the "
                          "homogeneity condition needed for identification", stacklevel=3)

    def blocks(self):
        a0, a1, a2, r0, r1 = self.alpha0, self.alpha1, self.alpha2, self.rho0, self.rho1
        R = np.array([[1, a1, a0, a2], [a1, 1, a2, a0], [a0, a2, 1, a1], [a2, a0, a1, 1]], float)
        M = np.array([[r0, 0, r1, 0], [0, r0, 0, r1], [r1, 0, r0, 0], [0, r1, 0, r0]], float)
        return R, M


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: int = 1
    n_clusters: int = 100
    size_range: tuple = (20, 60)
    error_family: str = "normal"
    t_df: float = 1.5
    fixed_effects: str = "linear"
    mediator1_binary: bool = False
    corr: MediatorCorrParams = field(default_factory=MediatorCorrParams)
    null_effects: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in (1, 2, 3):
            raise ParameterError(f"scenario must be 1, 2 or 3, got {self.scenario}")
        if self.error_family not in ("normal", "t"):
            raise ParameterError(f"error_family must be 'normal' or 't', got {self.error_family!r}")
        if self.fixed_effects not in ("linear", "nonlinear"):
            raise ParameterError("fixed_effects must be 'linear' or 'nonlinear'")
        lo, hi = self.size_range
        if not 2 <= lo <= hi:
            raise ParameterError("cluster sizes must satisfy 2 <= min <= max")
        if self.n_clusters < 1:
            raise ParameterError("need at least one cluster")

    def with_(self, **kw) -> "ScenarioSpec":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size_range"] = list(self.size_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        if "corr" in d and isinstance(d["corr"], dict):
            d["corr"] = MediatorCorrParams(**d["corr"])
        if "size_range" in d:
            d["size_range"] = tuple(d["size_range"])
        return cls(**d)


@dataclass
class ClusterFrame:
    """Cluster skeletons: sizes, treatment, covariates, unit covariates (flat)."""

    n: np.ndarray
    a: np.ndarray
    v: np.ndarray  # (I,)
    x1: np.ndarray  # (N,)
    x2: np.ndarray
    starts: np.ndarray

    @property
    def cluster_of(self):
        return np.repeat(np.arange(len(self.n)), self.n)

    def per_unit(self, arr):
        return np.repeat(arr, self.n)


@dataclass
class TruthEstimands:
    values: dict
    mc_se: dict
    n_oracle_clusters: int

    def to_dict(self):
        return {"values": dict(self.values), "mc_se": dict(self.mc_se),
                "n_oracle_clusters": self.n_oracle_clusters}

    @classmethod
    def from_dict(cls, d):
        return cls(dict(d["values"]), dict(d["mc_se"]), int(d["n_oracle_clusters"]))


def generate_cluster_frame(spec: ScenarioSpec, rng, n_clusters: int | None = None) -> ClusterFrame:
    I = spec.n_clusters if n_clusters is None else n_clusters
    lo, hi = spec.size_range
    n = rng.integers(lo, hi + 1, I)
    v = rng.normal(3.0 * n / 50.0, 1.0)
    a = rng.binomial(1, 0.5, I)
    total = int(n.sum())
    v_u = np.repeat(v, n)
    x1 = rng.normal(-v_u, 2.0, total)
    x2 = rng.normal(0.0, 1.0, total)
    starts = np.concatenate([[0], np.cumsum(n)[:-1]])
    return ClusterFrame(n, a, v, x1, x2, starts)


def build_mediator_covariance(n: int, corr: MediatorCorrParams) -> np.ndarray:
    """Joint covariance of the 4n potential mediators of a cluster.

    Unit-major ordering: for each unit (M1(1), M1(0), M2(1), M2(0)).
    """
    R, M = corr.blocks()
    eye = np.eye(n)
    cov = corr.sigma2 * (np.kron(eye, R) + np.kron(np.ones((n, n)) - eye, M))
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ParameterError(f"mediator covariance is not positive definite for n={n}") from None
    return cov


def mediator_means(frame: ClusterFrame, a: int, fixed_effects: str = "linear",
                   null_effects: bool = False):
    """Location of M1 and M2 under treatment ``a`` for every unit."""
    n_u = frame.per_unit(frame.n).astype(float)
    v_u = frame.per_unit(frame.v)
    x1, x2 = frame.x1, frame.x2
    t = 0.0 if null_effects else float(a)
    if fixed_effects == "linear":
        m1 = 1.5 * (-2.0 + 2.0 * t + (0.5 + 0.5 * t) * n_u / 50.0 + 0.5 * x1 - 0.5 * x2 + 0.5 * v_u)
        return m1, -m1
    m1 = (-1.0 + t + (0.5 + 0.5 * t) * n_u / 50.0 + x1 - x2 + x1 ** 2 + x2 ** 2 + x1 * x2
          + 0.5 * v_u)
    return m1, -0.5 * m1


def _psd(a):
    return np.all(np.linalg.eigvalsh(a) >= -1e-12)


def _psd_root(a):
    lam, vec = np.linalg.eigh(a)
    return vec * np.sqrt(np.maximum(lam, 0.0))


def generate_potential_mediators(frame: ClusterFrame, corr: MediatorCorrParams, rng,
                                 fixed_effects="linear", null_effects=False) -> dict:
    """Draw M1(1), M1(0), M2(1), M2(0) for every unit (flat arrays)."""
    R, M = corr.blocks()
    total = frame.x1.size
    noise = np.empty((total, 4))
    if _psd(M) and _psd(R - M):
        # covariance = I (x) (R - M) + J (x) M: shared cluster term plus unit term
        Lc = _psd_root(M)
        Lu = _psd_root(R - M)
        shared = rng.standard_normal((len(frame.n), 4)) @ Lc.T
        unit = rng.standard_normal((total, 4)) @ Lu.T
        noise = np.sqrt(corr.sigma2) * (np.repeat(shared, frame.n, axis=0) + unit)
    else:
        for size in np.unique(frame.n):
            L = np.linalg.cholesky(build_mediator_covariance(int(size), corr))
            idx = np.flatnonzero(frame.n == size)
            z = rng.standard_normal((idx.size, 4 * size)) @ L.T
            for row, i in enumerate(idx):
                s = frame.starts[i]
                noise[s:s + size] = z[row].reshape(size, 4)
    m1_1, m2_1 = mediator_means(frame, 1, fixed_effects, null_effects)
    m1_0, m2_0 = mediator_means(frame, 0, fixed_effects, null_effects)
    return {"m1_1": m1_1 + noise[:, 0], "m1_0": m1_0 + noise[:, 1],
            "m2_1": m2_1 + noise[:, 2], "m2_0": m2_0 + noise[:, 3]}


def binarize_mediator1(pm: dict, rng) -> dict:
    """Replace M1 by Bernoulli(logistic(M1)) with one uniform per unit and world."""
    out = dict(pm)
    for key in ("m1_1", "m1_0"):
        u = rng.random(pm[key].size)
        out[key] = (u < 1.0 / (1.0 + np.exp(-pm[key]))).astype(float)
    return out


def outcome_locations(a, m1, m1bar, m2, m2bar, x1, x2, v, n, fixed_effects="linear",
                      null_effects=False):
    """theta_1 .. theta_8 stacked along the last axis."""
    n50 = np.asarray(n, float) / 50.0
    t = 0.0 if null_effects else np.asarray(a, float)
    mscale = 0.0 if null_effects else 1.0
    out = []
    for c, d in ((0.5, 0.3), (0.3, 0.1)):
        if fixed_effects == "linear":
            pos = (1.0 + t + (c + c * t) * n50 + mscale * (c * m1bar - c * m2bar + m1 - m2)
                   + c * x1)
            odd = pos - c * x2 + c * v
            even = -pos - c * x2 + c * v
        else:
            quad = 0.1 * (x1 ** 2 + x2 ** 2 + x1 * x2)
            pos = (1.0 + t + (c + c * t) * n50 + mscale * (c * m1bar - c * m2bar + c * m1 - c * m2)
                   + d * x1 * t - d * x2 * t + quad)
            odd = pos + c * v
            even = -pos + c * v
        out += [odd, even]
    th = np.stack(out, axis=-1)
    return np.concatenate([th, -1.5 * th], axis=-1)


# (weight, theta index (0-based), sd) per group
MIXTURES = (
    ((0.5, 0, 2.0), (0.5, 1, 1.0)),
    ((0.5, 2, 0.5), (0.25, 3, 2.0), (0.25, 4, 1.5)),
    ((0.5, 5, 1.5), (0.25, 6, 1.0), (0.25, 7, 2.0)),
)


def group_probabilities(spec: ScenarioSpec, n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, float)
    if spec.scenario == 2:
        p = np.tile([0.2, 0.3, 0.5], (n.size, 1))
    elif spec.scenario == 3:
        p = np.column_stack([0.2 + 0.01 * n, 0.3 - 0.005 * n, 0.5 - 0.005 * n])
    else:
        raise ParameterError("group probabilities exist only for scenarios 2 and 3")
    if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
        raise ParameterError("cluster-size dependent group probabilities fall outside [0, 1]")
    return np.clip(p, 0.0, 1.0)


def _errors(spec, rng, size):
    if spec.error_family == "t":
        return sample_student_t(spec.t_df, rng, size)
    return rng.standard_normal(size)


def generate_outcomes(frame: ClusterFrame, m1, m2, spec: ScenarioSpec, rng):
    """Observed outcomes given the observed mediators."""
    theta = _locations_for(frame, frame.per_unit(frame.a), m1, m2, spec)
    total = frame.x1.size
    if spec.scenario == 1:
        b = rng.standard_normal(len(frame.n))
        return theta[:, 0] + np.repeat(b, frame.n) + _errors(spec, rng, total)
    probs = group_probabilities(spec, frame.n)
    cdf = np.cumsum(probs, axis=1)
    g = np.minimum((cdf < rng.random((len(frame.n), 1)) * cdf[:, -1:]).sum(axis=1), 2)
    g_u = np.repeat(g, frame.n)
    pick = rng.random(total)
    err = _errors(spec, rng, total)
    y = np.empty(total)
    for gi, comps in enumerate(MIXTURES):
        rows = np.flatnonzero(g_u == gi)
        w = np.cumsum([c[0] for c in comps])
        which = np.minimum(np.searchsorted(w, pick[rows], side="right"), len(comps) - 1)
        for ci, (_, k, sd) in enumerate(comps):
            r = rows[which == ci]
            y[r] = theta[r, k] + sd * err[r]
    return y


def _cluster_mean(values, frame):
    return np.repeat(np.add.reduceat(values, frame.starts) / frame.n, frame.n)


def _locations_for(frame, a_u, m1, m2, spec, m1bar=None, m2bar=None):
    if m1bar is None:
        m1bar = _cluster_mean(m1, frame)
    if m2bar is None:
        m2bar = _cluster_mean(m2, frame)
    return outcome_locations(a_u, m1, m1bar, m2, m2bar, frame.x1, frame.x2,
                             frame.per_unit(frame.v), frame.per_unit(frame.n),
                             spec.fixed_effects, spec.null_effects)


def simulate(spec: ScenarioSpec, rng, n_clusters: int | None = None):
    """Generate one dataset. Returns ``(dataset, frame, potential_mediators)``."""
    frame = generate_cluster_frame(spec, rng, n_clusters)
    pm = generate_potential_mediators(frame, spec.corr, rng, spec.fixed_effects, spec.null_effects)
    if spec.mediator1_binary:
        pm = binarize_mediator1(pm, rng)
    a_u = frame.per_unit(frame.a)
    m1 = np.where(a_u == 1, pm["m1_1"], pm["m1_0"])
    m2 = np.where(a_u == 1, pm["m2_1"], pm["m2_0"])
    y = generate_outcomes(frame, m1, m2, spec, rng)
    ds = make_dataset(frame.a, frame.v[:, None], np.column_stack([frame.x1, frame.x2]), m1, m2, y,
                      frame.n, mediator1_binary=spec.mediator1_binary)
    return ds, frame, pm


def _config_mediators(frame, pm, cfg):
    """Own values and cluster means (own unit included) for one configuration."""
    _, o1, r1, o2, r2 = cfg
    out = []
    for own_arm, rest_arm, key in ((o1, r1, "m1"), (o2, r2, "m2")):
        own = pm[f"{key}_{own_arm}"]
        rest = pm[f"{key}_{rest_arm}"]
        sums = np.repeat(np.add.reduceat(rest, frame.starts), frame.n)
        mean = (sums - rest + own) / frame.per_unit(frame.n)
        out += [own, mean]
    return out


def expected_outcome(frame, theta, spec):
    """Mean outcome given the locations, averaging over noise and latent groups."""
    if spec.scenario == 1:
        return theta[:, 0]
    probs = np.repeat(group_probabilities(spec, frame.n), frame.n, axis=0)
    out = np.zeros(theta.shape[0])
    for gi, comps in enumerate(MIXTURES):
        out += probs[:, gi] * sum(w * theta[:, k] for w, k, _ in comps)
    return out


def truth_from_frame(frame, pm, spec) -> np.ndarray:
    """Per-cluster estimands (I, 10) from conditional mean potential outcomes."""
    ybar = np.empty((len(frame.n), len(CONFIGS)))
    for c, cfg in enumerate(CONFIGS):
        m1, m1bar, m2, m2bar = _config_mediators(frame, pm, cfg)
        a_u = np.full(frame.x1.size, float(cfg[0]))
        theta = _locations_for(frame, a_u, m1, m2, spec, m1bar, m2bar)
        ey = expected_outcome(frame, theta, spec)
        ybar[:, c] = np.add.reduceat(ey, frame.starts) / frame.n
    return estimands_from_configs(ybar)


def approximate_truth(spec: ScenarioSpec, n_oracle: int, rng, batch: int = 20000) -> TruthEstimands:
    """Monte Carlo truth over ``n_oracle`` simulated clusters (equal cluster weights)."""
    if n_oracle < 1:
        raise ParameterError("n_oracle must be positive")
    s1 = np.zeros(len(ESTIMANDS))
    s2 = np.zeros(len(ESTIMANDS))
    done = 0
    while done < n_oracle:
        m = min(batch, n_oracle - done)
        frame = generate_cluster_frame(spec, rng, m)
        pm = generate_potential_mediators(frame, spec.corr, rng, spec.fixed_effects,
                                          spec.null_effects)
        if spec.mediator1_binary:
            pm = binarize_mediator1(pm, rng)
        est = truth_from_frame(frame, pm, spec)
        s1 += est.sum(axis=0)
        s2 += (est ** 2).sum(axis=0)
        done += m
    mean = s1 / n_oracle
    var = np.maximum(s2 / n_oracle - mean ** 2, 0.0) * n_oracle / max(n_oracle - 1, 1)
    se = np.sqrt(var / n_oracle)
    return TruthEstimands(dict(zip(ESTIMANDS, mean.tolist())), dict(zip(ESTIMANDS, se.tolist())),
                          int(n_oracle))
