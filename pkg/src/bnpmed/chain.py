"""Joint mediator/outcome chains for the nested mixture models.

One sweep updates the mediator mixture, then the probit latents (binary
first mediator only), then the outcome mixture. The two mixtures have
independent priors and share nothing but the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ChainConfig
from .data import ClusterDataset, FlatData
from .fd import FDNestedMixture
from .nddpm import NestedMixture
from .posterior import Posterior, stack_snapshots
from .stochastic import make_rng, sample_truncated_normal


class AdaptationError(RuntimeError):
    pass


class ChainError(RuntimeError):
    """A Gibbs step failed; carries the iteration index."""


@dataclass(frozen=True)
class TruncationLevels:
    k_c: int
    k_i: int

    def __post_init__(self):
        if self.k_c < 1 or self.k_i < 1:
            raise ValueError("truncation levels must be at least 1")


def _flat(data) -> FlatData:
    return data.flat if isinstance(data, ClusterDataset) else data


def default_gamma_prior(flat: FlatData):
    """Kernel-location prior centred on the cluster covariates' empirical mean."""
    mu = flat.v.mean(axis=0)
    var = np.maximum(flat.v.var(axis=0), 1.0)
    return mu, np.diag(var)


def probit_conditional(R, C, coef, cov, comp):
    """Mean and variance of the latent Z given M2 under each unit's component."""
    g = coef[comp]  # (N, 2, p)
    S = cov[comp]
    mu1 = np.einsum("np,np->n", C, g[:, 0, :])
    mu2 = np.einsum("np,np->n", C, g[:, 1, :])
    ratio = S[:, 0, 1] / S[:, 1, 1]
    mean = mu1 + ratio * (R[:, 1] - mu2)
    var = S[:, 0, 0] - S[:, 0, 1] * ratio
    return mean, var


def augment_binary_mediator(m1_binary, mix: NestedMixture, rng):
    """Redraw probit latents Z so that Z > 0 exactly when M1 = 1.

    Writes the latents into the first response column of ``mix`` and returns them.
    """
    mean, var = probit_conditional(mix.R, mix.C, mix.coef, mix.cov, mix.comp)
    pos = np.asarray(m1_binary) == 1
    lower = np.where(pos, 0.0, -np.inf)
    upper = np.where(pos, np.inf, 0.0)
    z = sample_truncated_normal(mean, np.maximum(var, 1e-300), lower, upper, rng)
    mix.R[:, 0] = z
    return z


class JointSampler:
    """Mediator and outcome mixtures for one dataset (``kind`` 'ad' or 'fd')."""

    def __init__(self, data, config: ChainConfig, kind: str = "ad", rng=None):
        if kind not in ("ad", "fd"):
            raise ValueError(f"unknown nested mixture kind {kind!r}")
        flat = _flat(data)
        self.flat = flat
        self.config = config
        self.kind = kind
        self.binary = bool(flat.mediator1_binary)
        rng = make_rng(config.seed, "init") if rng is None else rng
        hyper = config.hyper
        layout = (flat.starts, flat.sizes, flat.cluster_of, config.k_c, config.k_i)
        extra = {}
        cls = NestedMixture
        if kind == "fd":
            cls = FDNestedMixture
            extra = {"v_all": flat.v,
                     "gamma_prior": config.gamma_prior or default_gamma_prior(flat)}
        self.mediator = self.outcome = None
        if "mediator" in config.models:
            Cm = flat.mediator_design()
            m1 = flat.m1.copy()
            if self.binary:
                m1 = np.where(flat.m1 == 1, 0.5, -0.5)
            R = np.column_stack([m1, flat.m2])
            self.mediator = cls(Cm, R, *layout, hyper.mediator_coef_prior(Cm.shape[1]),
                                hyper.mediator_cov_prior(), hyper, rng, **extra)
        if "outcome" in config.models:
            Cy = flat.outcome_design(flat.m1, flat.m2)
            self.outcome = cls(Cy, flat.y[:, None], *layout, hyper.outcome_coef_prior(Cy.shape[1]),
                               hyper.outcome_var_prior(), hyper, rng, **extra)

    @property
    def z_latent(self):
        return self.mediator.R[:, 0] if (self.binary and self.mediator is not None) else None

    def sweep(self, rng):
        if self.mediator is not None:
            self.mediator.sweep(rng)
            if self.binary:
                augment_binary_mediator(self.flat.m1, self.mediator, rng)
        if self.outcome is not None:
            self.outcome.sweep(rng)

    def snapshot(self) -> dict:
        out = {}
        for name in ("mediator", "outcome"):
            mix = getattr(self, name)
            if mix is not None:
                for k, v in mix.snapshot().items():
                    out[f"{name}.{k}"] = v
        if self.z_latent is not None:
            out["z_latent"] = self.z_latent.copy()
        return out

    def occupancy(self):
        occ = [getattr(self, n).occupancy() for n in ("mediator", "outcome")
               if getattr(self, n) is not None]
        return max(o[0] for o in occ), max(o[1] for o in occ)


def run_chain(data, config: ChainConfig, kind: str = "ad", chain: int = 0,
              callback=None) -> Posterior:
    """Run burn-in plus retained sweeps; deterministic given ``config.seed`` and ``chain``.

    ``callback(iteration, sampler)`` is called after every sweep if given.
    """
    flat = _flat(data)
    if config.adapt:
        levels = adapt_truncation(flat, config, kind=kind)
        config = config.with_(k_c=levels.k_c, k_i=levels.k_i, adapt=False)
    rng = make_rng(config.seed, "chain", chain, kind)
    sampler = JointSampler(flat, config, kind, rng)
    snaps = []
    total = config.n_burn + config.n_keep * config.thin
    for it in range(total):
        try:
            sampler.sweep(rng)
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            raise ChainError(f"iteration {it}: {exc}") from exc
        if callback is not None:
            callback(it, sampler)
        if it >= config.n_burn and (it - config.n_burn) % config.thin == 0:
            snaps.append(sampler.snapshot())
    meta = {"model": kind, "config": config.to_dict(), "chain": chain,
            "n_units": flat.n_units, "n_clusters": flat.n_clusters,
            "mediator1_binary": bool(flat.mediator1_binary)}
    if kind == "fd":
        for name in ("mediator", "outcome"):
            mix = getattr(sampler, name)
            if mix is not None:
                meta[f"{name}_accept_gamma"] = float(np.mean(mix.accept_gamma)) if mix.accept_gamma else None
                meta[f"{name}_accept_s"] = float(np.mean(mix.accept_s)) if mix.accept_s else None
    return Posterior(kind, stack_snapshots(snaps), meta)


def adapt_truncation(data, config: ChainConfig, kind: str = "ad", step: int = 5) -> TruncationLevels:
    """Grow the truncation levels until short pilot chains leave spare classes.

    A pilot of ``config.adapt_pilot`` sweeps is run; occupancy is checked every
    tenth sweep of its second half. Any level found fully occupied grows by
    ``step`` and the pilot is rerun. Exceeding ``config.adapt_cap`` raises
    :class:`AdaptationError`.
    """
    flat = _flat(data)
    if config.adapt_pilot <= 0:
        raise ValueError("pilot budget must be positive")
    k_c, k_i = config.k_c, config.k_i
    attempt = 0
    while True:
        if k_c > config.adapt_cap or k_i > config.adapt_cap:
            raise AdaptationError(f"truncation grew past the cap of {config.adapt_cap} "
                                  f"(k_c={k_c}, k_i={k_i})")
        cfg = config.with_(k_c=k_c, k_i=k_i, adapt=False)
        rng = make_rng(config.seed, "adapt", attempt, kind)
        sampler = JointSampler(flat, cfg, kind, rng)
        full_c = full_i = False
        half = config.adapt_pilot // 2
        for it in range(config.adapt_pilot):
            sampler.sweep(rng)
            if it >= half and (it - half) % 10 == 0:
                oc, oi = sampler.occupancy()
                full_c |= oc >= k_c
                full_i |= oi >= k_i
        if not (full_c or full_i):
            return TruncationLevels(k_c, k_i)
        k_c += step if full_c else 0
        k_i += step if full_i else 0
        attempt += 1
