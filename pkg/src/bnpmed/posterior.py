"""Containers for retained MCMC draws and their per-unit parameter views."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODEL_TAGS = ("ad", "fd", "lmm", "ndpm")


@dataclass(frozen=True)
class ModelDraw:
    """One retained state of a single nested mixture (mediator or outcome)."""

    zeta: np.ndarray
    xi: np.ndarray
    s: np.ndarray
    pi: np.ndarray
    u: np.ndarray
    w: np.ndarray
    alpha: float
    beta: np.ndarray
    coef: np.ndarray
    cov: np.ndarray
    gamma_loc: np.ndarray | None = None
    pi_rows: np.ndarray | None = None


@dataclass(frozen=True)
class PosteriorDraw:
    mediator: ModelDraw | None
    outcome: ModelDraw | None
    z_latent: np.ndarray | None = None


@dataclass
class UnitParams:
    """Model parameters expressed per unit for g-computation.

    gamma (N, 2, p_m), Sigma (N, 2, 2), theta (N, p_y), sigma2 (N,).
    Random intercepts are folded into the intercept coefficient.
    """

    gamma: np.ndarray
    Sigma: np.ndarray
    theta: np.ndarray
    sigma2: np.ndarray


@dataclass
class Posterior:
    """Stacked draws: ``arrays[name]`` has the draw index on axis 0.

    Names are ``"<part>.<field>"`` with part ``mediator``/``outcome`` (plus
    ``z_latent`` for the probit latents).
    """

    tag: str
    arrays: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in MODEL_TAGS:
            raise ValueError(f"unknown model tag {self.tag!r}")

    def __len__(self):
        for v in self.arrays.values():
            return v.shape[0]
        return 0

    def __iter__(self):
        for t in range(len(self)):
            yield self.draw(t)

    def __getitem__(self, t):
        return self.draw(t)

    def part(self, name, t):
        prefix = name + "."
        return {k[len(prefix):]: v[t] for k, v in self.arrays.items() if k.startswith(prefix)}

    def draw(self, t: int) -> PosteriorDraw:
        if self.tag not in ("ad", "fd"):
            raise TypeError("per-draw mixture records exist only for the nested mixture models")
        parts = {}
        for name in ("mediator", "outcome"):
            d = self.part(name, t)
            if d:
                d["alpha"] = float(d["alpha"])
                parts[name] = ModelDraw(**d)
            else:
                parts[name] = None
        z = self.arrays.get("z_latent")
        return PosteriorDraw(parts["mediator"], parts["outcome"], None if z is None else z[t])

    def unit_params(self, t: int, flat) -> UnitParams:
        return _BUILDERS[self.tag](self, t, flat)


def stack_snapshots(snaps: list[dict]) -> dict:
    if not snaps:
        return {}
    return {k: np.stack([s[k] for s in snaps]) for k in snaps[0]}


def _mixture_units(post, t, flat):
    med = post.part("mediator", t)
    out = post.part("outcome", t)
    k_cm = med["s"].shape[0]
    k_cy = out["s"].shape[0]
    cm = med["xi"].astype(np.int64) * k_cm + med["zeta"].astype(np.int64)[flat.cluster_of]
    cy = out["xi"].astype(np.int64) * k_cy + out["zeta"].astype(np.int64)[flat.cluster_of]
    return med, out, cm, cy


def _ad_builder(post, t, flat):
    med, out, cm, cy = _mixture_units(post, t, flat)
    return UnitParams(gamma=med["coef"][cm], Sigma=med["cov"][cm],
                      theta=out["coef"][cy, 0, :], sigma2=out["cov"][cy, 0, 0])


def _ndpm_builder(post, t, flat):
    # component atoms are intercepts; fixed effects are shared slopes
    med, out, cm, cy = _mixture_units(post, t, flat)
    n = flat.n_units
    fm = med["fixed"]  # (2, p_m - 1)
    fy = out["fixed"]  # (p_y - 1,)
    gamma = np.empty((n, 2, fm.shape[1] + 1))
    gamma[:, :, 0] = med["coef"][cm, :, 0]
    gamma[:, :, 1:] = fm[None]
    theta = np.empty((n, fy.shape[0] + 1))
    theta[:, 0] = out["coef"][cy, 0, 0]
    theta[:, 1:] = fy[None]
    return UnitParams(gamma=gamma, Sigma=med["cov"][cm], theta=theta, sigma2=out["cov"][cy, 0, 0])


def _lmm_builder(post, t, flat):
    med = post.part("mediator", t)
    out = post.part("outcome", t)
    n = flat.n_units
    gamma = np.repeat(med["fixed"][None], n, axis=0)
    gamma[:, :, 0] += med["b"][flat.cluster_of]
    theta = np.repeat(out["fixed"][None], n, axis=0)
    theta[:, 0] += out["b"][flat.cluster_of]
    Sigma = np.repeat(med["cov"][None], n, axis=0)
    sigma2 = np.full(n, float(out["sigma2"]))
    return UnitParams(gamma=gamma, Sigma=Sigma, theta=theta, sigma2=sigma2)


_BUILDERS = {"ad": _ad_builder, "fd": _ad_builder, "ndpm": _ndpm_builder, "lmm": _lmm_builder}
