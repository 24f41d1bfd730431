"""Hyperparameters, chain settings and the named prior scenarios."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources

import numpy as np
import yaml


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    """Prior hyperparameters for the outcome and mediator mixtures.

    ``Sigma0``, ``S0`` and ``Psi0`` may be given as scalars, meaning that
    multiple of the identity; ``mu0``/``m0`` scalars are broadcast.
    Gamma priors use the shape/rate convention.
    """

    mu0: float = 0.0
    Sigma0: float = 100.0
    a0: float = 2.0
    b0: float = 1.0
    m0: float = 0.0
    S0: float = 100.0
    nu0: float = 2.0
    Psi0: float = 1.0
    a_alpha: float = 1.0
    b_alpha: float = 1.0
    a_beta: float = 1.0
    b_beta: float = 1.0

    def __post_init__(self):
        for name in ("a0", "b0", "a_alpha", "b_alpha", "a_beta", "b_beta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"hyperparameter {name} must be positive")
        if not self.nu0 > 1:
            raise ConfigError("nu0 must exceed 1 for a 2x2 inverse-Wishart prior")
        for name in ("Sigma0", "S0", "Psi0"):
            m = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if m.shape[0] == 1 and m.shape[1] == 1:
                if not m[0, 0] > 0:
                    raise ConfigError(f"{name} must be positive")
            elif np.any(np.linalg.eigvalsh(0.5 * (m + m.T)) <= 0):
                raise ConfigError(f"{name} must be positive definite")

    @staticmethod
    def _vec(x, p):
        x = np.asarray(x, dtype=float)
        return np.full(p, float(x)) if x.ndim == 0 else x.reshape(p).copy()

    @staticmethod
    def _mat(x, p):
        x = np.asarray(x, dtype=float)
        return float(x) * np.eye(p) if x.ndim == 0 else x.reshape(p, p).copy()

    def outcome_coef_prior(self, p):
        return self._vec(self.mu0, p), self._mat(self.Sigma0, p)

    def mediator_coef_prior(self, p):
        return self._vec(self.m0, p), self._mat(self.S0, p)

    def mediator_cov_prior(self):
        return float(self.nu0), self._mat(self.Psi0, 2)

    def outcome_var_prior(self):
        """The IG(a0, b0) prior written as a 1-d inverse-Wishart (2 a0, 2 b0)."""
        return 2.0 * self.a0, np.array([[2.0 * self.b0]])

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = np.asarray(v).tolist() if not np.isscalar(v) else float(v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameter(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass(frozen=True)
class ChainConfig:
    k_c: int = 10
    k_i: int = 5
    n_burn: int = 1000
    n_keep: int = 2000
    thin: int = 1
    seed: int = 0
    hyper: HyperParams = field(default_factory=HyperParams)
    adapt: bool = False
    adapt_pilot: int = 200
    adapt_cap: int = 100
    # fitted parts; the outcome-only setting is for checking conjugate updates
    models: tuple = ("mediator", "outcome")
    gamma_prior: tuple | None = None  # (mean, cov) of kernel locations, FD only

    def __post_init__(self):
        if self.k_c < 1 or self.k_i < 1:
            raise ConfigError("truncation levels must be at least 1")
        if self.n_burn < 0 or self.n_keep < 0 or self.thin < 1:
            raise ConfigError("n_burn, n_keep must be non-negative and thin positive")

    def with_(self, **kw) -> "ChainConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyper"] = self.hyper.to_dict()
        d["models"] = list(self.models)
        if self.gamma_prior is not None:
            d["gamma_prior"] = [np.asarray(x).tolist() for x in self.gamma_prior]
        return d


def prior_scenarios() -> dict[str, HyperParams]:
    """Named prior settings used in the sensitivity sweep (shipped YAML)."""
    text = resources.files("bnpmed").joinpath("priors.yaml").read_text()
    raw = yaml.safe_load(text)
    return {name: HyperParams.from_dict(vals) for name, vals in raw.items()}
