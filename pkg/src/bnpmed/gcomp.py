"""G-computation: from posterior draws to draws of the causal estimands.

For every retained draw the unit-level parameters are used to simulate both
potential mediators of every unit, the seven outcome configurations are
evaluated, and cluster-then-overall averages feed the estimand algebra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClusterDataset, FlatData, loo_means
from .estimands import CONFIGS, ESTIMANDS, estimands_from_configs, identity_residuals
from .posterior import Posterior, UnitParams
from .stochastic import make_rng


class ContractError(ValueError):
    pass


@dataclass
class PotentialMediators:
    """Unit-level potential mediators, stored flat in cluster order."""

    m1_a0: np.ndarray
    m1_a1: np.ndarray
    m2_a0: np.ndarray
    m2_a1: np.ndarray

    def get(self, which: int, arm: int) -> np.ndarray:
        return getattr(self, f"m{which}_a{arm}")

    def per_cluster(self, which: int, arm: int, starts) -> list[np.ndarray]:
        return np.split(self.get(which, arm), np.asarray(starts)[1:])


@dataclass
class EstimandDraws:
    """(T, 10) array of estimand draws; columns follow ``ESTIMANDS``."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[-1] != len(ESTIMANDS):
            raise ContractError("estimand draws need one column per estimand")

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[:, ESTIMANDS.index(name)]

    def max_identity_residual(self) -> float:
        return float(identity_residuals(self.values).max()) if len(self) else 0.0

    def to_table(self) -> str:
        lines = ["draw," + ",".join(ESTIMANDS)]
        for t, row in enumerate(self.values):
            lines.append(f"{t}," + ",".join(repr(float(x)) for x in row))
        return "\n".join(lines) + "\n"


@dataclass
class PosteriorSummary:
    """Per estimand: posterior mean, central 95% interval and P(estimand > 0)."""

    mean: dict
    lower: dict
    upper: dict
    prob_positive: dict

    def to_dict(self) -> dict:
        return {k: {"est": self.mean[k], "lower": self.lower[k], "upper": self.upper[k],
                    "pp": self.prob_positive[k]} for k in self.mean}

    def format_table(self) -> str:
        rows = [f"{'estimand':<8} {'Est':>10} {'95% CI':>24} {'PP':>6}"]
        for k in self.mean:
            ci = f"({self.lower[k]:.3f}, {self.upper[k]:.3f})"
            rows.append(f"{k:<8} {self.mean[k]:>10.3f} {ci:>24} {self.prob_positive[k]:>6.3f}")
        return "\n".join(rows)


def _flat(data) -> FlatData:
    return data.flat if isinstance(data, ClusterDataset) else data


def _bivariate_draw(mean, Sigma, rng):
    L = np.linalg.cholesky(Sigma)
    z = rng.standard_normal(mean.shape)
    return mean + np.einsum("nab,nb->na", L, z)


def draw_potential_mediators(params: UnitParams, data, rng) -> PotentialMediators:
    """Draw (M1, M2) for every unit under both arms from its own mediator component.

    For a binary first mediator the draw is the probit latent and the returned
    value is its indicator of being positive.
    """
    flat = _flat(data)
    out = {}
    for arm in (0, 1):
        C = flat.mediator_design(arm)
        mean = np.einsum("np,nqp->nq", C, params.gamma)
        m = _bivariate_draw(mean, params.Sigma, rng)
        m1 = (m[:, 0] > 0).astype(float) if flat.mediator1_binary else m[:, 0]
        out[f"m1_a{arm}"] = m1
        out[f"m2_a{arm}"] = m[:, 1]
    return PotentialMediators(**out)


def draw_potential_outcomes(params: UnitParams, data, pm: PotentialMediators, rng=None,
                            noise: bool = False) -> np.ndarray:
    """(N, 7) outcomes under the seven configurations.

    Own mediators come from one arm and the leave-one-out cluster means from
    the (possibly different) arm listed in ``CONFIGS``. With ``noise`` false
    the outcome-kernel mean is returned; otherwise a normal draw around it.
    """
    flat = _flat(data)
    loo = {}
    for which in (1, 2):
        for arm in (0, 1):
            loo[which, arm] = loo_means(pm.get(which, arm), flat.starts, flat.sizes)
    y = np.empty((flat.n_units, len(CONFIGS)))
    for c, (a, o1, r1, o2, r2) in enumerate(CONFIGS):
        D = flat.outcome_design(pm.get(1, o1), pm.get(2, o2), a, loo[1, r1], loo[2, r2])
        y[:, c] = np.einsum("np,np->n", D, params.theta)
    if noise:
        if rng is None:
            raise ContractError("noise requires a random generator")
        y += np.sqrt(params.sigma2)[:, None] * rng.standard_normal(y.shape)
    return y


def compute_estimand_draw(y_units: np.ndarray, starts, sizes) -> np.ndarray:
    """Cluster means of the (N, 7) outcomes, then the equal-weight mean, then estimands."""
    y_units = np.asarray(y_units, dtype=float)
    if y_units.ndim != 2 or y_units.shape[1] != len(CONFIGS):
        raise ContractError("expected one column per configuration")
    per_cluster = np.add.reduceat(y_units, np.asarray(starts), axis=0) / np.asarray(sizes)[:, None]
    return estimands_from_configs(per_cluster.mean(axis=0))


def estimand_draw_from_params(params: UnitParams, data, rng, n_inner: int = 1,
                              noise: bool = False) -> np.ndarray:
    """One estimand draw; ``n_inner`` mediator replicates are averaged at the outcome level."""
    flat = _flat(data)
    acc = np.zeros((flat.n_units, len(CONFIGS)))
    for _ in range(n_inner):
        pm = draw_potential_mediators(params, flat, rng)
        acc += draw_potential_outcomes(params, flat, pm, rng, noise)
    return compute_estimand_draw(acc / n_inner, flat.starts, flat.sizes)


def estimate(post: Posterior, data, seed: int = 0, n_inner: int = 1, noise: bool = False,
             check: bool = True, key: tuple = ()) -> EstimandDraws:
    """Estimand draws for every retained posterior draw.

    Draw ``t`` uses its own stream ``make_rng(seed, "gcomp", *key, t)``, so
    the result does not depend on how draws are split across workers.
    """
    if n_inner < 1:
        raise ContractError("n_inner must be at least 1")
    flat = _flat(data)
    T = len(post)
    if T == 0:
        raise ContractError("posterior has no draws")
    vals = np.empty((T, len(ESTIMANDS)))
    for t in range(T):
        params = post.unit_params(t, flat)
        rng = make_rng(seed, "gcomp", *key, t)
        vals[t] = estimand_draw_from_params(params, flat, rng, n_inner, noise)
    draws = EstimandDraws(vals)
    if check:
        res = draws.max_identity_residual()
        if res > 1e-10 * max(1.0, float(np.abs(vals).max())):
            raise ArithmeticError(f"decomposition identity violated by {res:g}")
    return draws


def summarize_posterior(draws) -> PosteriorSummary:
    """Mean, 2.5%/97.5% linear-interpolation quantiles and fraction of draws > 0."""
    vals = draws.values if isinstance(draws, EstimandDraws) else np.atleast_2d(draws)
    if vals.shape[0] < 2:
        raise ContractError("at least two draws are needed for a summary")
    mean = vals.mean(axis=0)
    lo, hi = np.quantile(vals, [0.025, 0.975], axis=0)
    pp = (vals > 0).mean(axis=0)
    names = ESTIMANDS if vals.shape[1] == len(ESTIMANDS) else tuple(map(str, range(vals.shape[1])))
    f = lambda a: {k: float(x) for k, x in zip(names, a)}  # noqa: E731
    return PosteriorSummary(f(mean), f(lo), f(hi), f(pp))
