"""Operating characteristics of replicated studies, LPML, and prior sweeps."""

from __future__ import annotations

import hashlib
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_ndtr, logsumexp

from . import __version__
from .baselines import fit_model
from .chain import _flat
from .config import ChainConfig, HyperParams, prior_scenarios
from .dgp import ScenarioSpec, TruthEstimands, approximate_truth, simulate
from .estimands import ESTIMANDS
from .gcomp import PosteriorSummary, estimate, summarize_posterior
from .posterior import Posterior
from .serialize import dumps_json, read_json, write_json, write_text
from .stochastic import make_rng

log = logging.getLogger(__name__)

FAILURE_THRESHOLD = 0.10
MODEL_NAMES = {"ad": "AD-nDDPM", "fd": "FD-nDDPM", "ndpm": "nDPM", "lmm": "LMM"}


class StudyError(RuntimeError):
    pass


# ------------------------------------------------------------------ metrics ---

@dataclass
class ReplicateResult:
    replicate: int
    model: str
    summary: PosteriorSummary | None
    wall_time: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.summary is not None

    def to_dict(self) -> dict:
        return {"replicate": self.replicate, "model": self.model, "wall_time": self.wall_time,
                "error": self.error,
                "summary": None if self.summary is None else self.summary.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "ReplicateResult":
        s = d["summary"]
        summary = None
        if s is not None:
            summary = PosteriorSummary({k: v["est"] for k, v in s.items()},
                                       {k: v["lower"] for k, v in s.items()},
                                       {k: v["upper"] for k, v in s.items()},
                                       {k: v["pp"] for k, v in s.items()})
        return cls(d["replicate"], d["model"], summary, d["wall_time"], d["error"])


@dataclass
class MetricsReport:
    """Bias, RMSE, coverage (%) and RAL per model and estimand."""

    metrics: dict
    truth: dict
    n_replicates: dict
    failures: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metrics": self.metrics, "truth": self.truth, "n_replicates": self.n_replicates,
                "failures": self.failures, "notes": self.notes, "provenance": self.provenance}

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    @classmethod
    def from_dict(cls, d) -> "MetricsReport":
        return cls(d["metrics"], d["truth"], d["n_replicates"], d.get("failures", {}),
                   d.get("notes", []), d.get("provenance", {}))

    def to_table(self, sep: str = "\t") -> str:
        rows = [sep.join(["model", "estimand", "truth", "Bias", "RMSE", "RAL", "CP"])]
        for model, per in self.metrics.items():
            for est, m in per.items():
                ral = "NA" if m["ral"] is None else f"{m['ral']:.4f}"
                rows.append(sep.join([MODEL_NAMES.get(model, model), est, f"{self.truth[est]:.4f}",
                                      f"{m['bias']:.4f}", f"{m['rmse']:.4f}", ral,
                                      f"{m['coverage']:.1f}"]))
        return "\n".join(rows) + "\n"


def compute_metrics(results, truth, provenance=None) -> MetricsReport:
    """Aggregate replicate summaries against true values.

    ``truth`` is a :class:`TruthEstimands` or a plain name -> value mapping.
    Replicates are folded in replicate-id order, so the report does not depend
    on the order of ``results``.
    """
    tau = truth.values if isinstance(truth, TruthEstimands) else dict(truth)
    by_model: dict[str, list] = {}
    failures: dict[str, int] = {}
    for r in results:
        if r.ok:
            by_model.setdefault(r.model, []).append(r)
        else:
            failures[r.model] = failures.get(r.model, 0) + 1
    metrics, counts, notes = {}, {}, []
    # a truth at rounding level (e.g. INT of an additive scenario) counts as zero
    zero_tol = 1e-9 * max(1.0, max(abs(float(tau[k])) for k in ESTIMANDS))
    for model in sorted(by_model):
        reps = sorted(by_model[model], key=lambda r: r.replicate)
        if len(reps) < 2:
            raise ValueError(f"model {model}: at least two successful replicates are needed")
        per = {}
        for est in ESTIMANDS:
            t = float(tau[est])
            point = np.array([r.summary.mean[est] for r in reps])
            lo = np.array([r.summary.lower[est] for r in reps])
            hi = np.array([r.summary.upper[est] for r in reps])
            err = point - t
            ral = None
            if abs(t) > zero_tol:
                ral = float(np.mean((hi - lo) / t))
            elif f"RAL of {est}" not in " ".join(notes):
                notes.append(f"RAL of {est} omitted: true value is 0")
            per[est] = {"bias": float(err.mean()), "rmse": float(np.sqrt(np.mean(err ** 2))),
                        "coverage": float(100.0 * np.mean((lo <= t) & (t <= hi))), "ral": ral}
        metrics[model] = per
        counts[model] = len(reps)
    return MetricsReport(metrics, {k: float(tau[k]) for k in ESTIMANDS}, counts,
                         dict(sorted(failures.items())), notes, provenance or {})


# --------------------------------------------------------------------- LPML ---

def _component_means(part: dict, C: np.ndarray, tag: str) -> np.ndarray:
    coef = part["coef"]  # (K, q, p)
    if tag == "ndpm":
        fixed = np.atleast_2d(part["fixed"])  # (q, p - 1)
        return coef[None, :, :, 0] + (C[:, 1:] @ fixed.T)[:, None, :]
    return np.einsum("np,kqp->nkq", C, coef)


def _unit_log_weights(part: dict, flat, tag: str) -> np.ndarray:
    """(N, K) log mixture weights with components flattened as l * k_c + k."""
    w = part["w"]  # (k_i, k_c)
    k_i, k_c = w.shape
    if tag == "fd":
        lpi = np.log(part["pi_rows"])[flat.cluster_of]  # (N, k_c)
    else:
        lpi = np.broadcast_to(np.log(part["pi"]), (flat.n_units, k_c))
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    return (lw[None, :, :] + lpi[:, None, :]).reshape(flat.n_units, k_i * k_c)


def _kernel_logdens(obs, mean, cov, binary_first=False, m1=None):
    """Log kernel density (N, K) of ``obs`` (N, q) under means (N, K, q), covariances (K, q, q)."""
    q = obs.shape[1]
    if binary_first:
        mu1, mu2 = mean[..., 0], mean[..., 1]
        s11, s12, s22 = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
        r = obs[:, 1:2] - mu2
        dens2 = -0.5 * (np.log(2 * np.pi * s22)[None] + r ** 2 / s22[None])
        cmean = mu1 + (s12 / s22)[None] * r
        csd = np.sqrt(s11 - s12 ** 2 / s22)[None]
        sign = np.where(np.asarray(m1) == 1, 1.0, -1.0)[:, None]
        return dens2 + log_ndtr(sign * cmean / csd)
    d = obs[:, None, :] - mean
    prec = np.linalg.inv(cov)
    quad = np.einsum("nka,kab,nkb->nk", d, prec, d)
    logdet = np.linalg.slogdet(cov)[1]
    return -0.5 * (q * np.log(2 * np.pi) + logdet[None] + quad)


def pointwise_loglik(post: Posterior, data) -> np.ndarray:
    """(T, N) joint log-density of each unit's (M1, M2, Y) under each draw.

    Mixture labels are integrated out with the draw's weights. For the
    random-intercept model the density is conditional on the drawn intercepts.
    """
    flat = _flat(data)
    Cm = flat.mediator_design()
    Cy = flat.outcome_design(flat.m1, flat.m2)
    obs_m = np.column_stack([flat.m1, flat.m2])
    obs_y = flat.y[:, None]
    binary = bool(flat.mediator1_binary)
    T = len(post)
    out = np.empty((T, flat.n_units))
    for t in range(T):
        med, otc = post.part("mediator", t), post.part("outcome", t)
        if post.tag == "lmm":
            mean_m = (Cm @ med["fixed"].T + med["b"][flat.cluster_of])[:, None, :]
            lm = _kernel_logdens(obs_m, mean_m, med["cov"][None], binary, flat.m1)[:, 0]
            mean_y = (Cy @ otc["fixed"] + otc["b"][flat.cluster_of])[:, None, None]
            ly = _kernel_logdens(obs_y, mean_y, np.array([[[float(otc["sigma2"])]]]))[:, 0]
        else:
            lm = logsumexp(_unit_log_weights(med, flat, post.tag)
                           + _kernel_logdens(obs_m, _component_means(med, Cm, post.tag), med["cov"],
                                             binary, flat.m1), axis=1)
            ly = logsumexp(_unit_log_weights(otc, flat, post.tag)
                           + _kernel_logdens(obs_y, _component_means(otc, Cy, post.tag), otc["cov"]),
                           axis=1)
        out[t] = lm + ly
    return out


@dataclass
class LpmlResult:
    lpml: float
    log_cpo: np.ndarray
    flagged: np.ndarray  # observations with a zero likelihood under some draw

    @property
    def cpo(self) -> np.ndarray:
        return np.exp(self.log_cpo)


def compute_lpml(loglik: np.ndarray) -> LpmlResult:
    """Harmonic-mean CPO and LPML from a (T, N) matrix of log-likelihoods.

    log CPO_i = log T - logsumexp_t(-loglik[t, i]); a zero likelihood makes the
    observation's CPO zero (log CPO = -inf) and is reported in ``flagged``.
    """
    ll = np.atleast_2d(np.asarray(loglik, dtype=float))
    T = ll.shape[0]
    if T < 1:
        raise ValueError("no draws")
    flagged = np.flatnonzero(np.isneginf(ll).any(axis=0))
    with np.errstate(over="ignore", invalid="ignore"):
        log_cpo = math.log(T) - logsumexp(-ll, axis=0)
    log_cpo[flagged] = -np.inf
    if flagged.size:
        log.warning("%d observation(s) have zero likelihood under some draw", flagged.size)
    return LpmlResult(float(log_cpo.sum()), log_cpo, flagged)


def lpml_for_posterior(post: Posterior, data, min_draws: int = 10) -> LpmlResult:
    if len(post) < min_draws:
        raise ValueError(f"LPML needs at least {min_draws} retained draws, got {len(post)}")
    return compute_lpml(pointwise_loglik(post, data))


# -------------------------------------------------------------------- study ---

@dataclass(frozen=True)
class StudyConfig:
    spec: ScenarioSpec
    models: tuple = ("ad",)
    n_replicates: int = 30
    chain: ChainConfig = field(default_factory=ChainConfig)
    seed: int = 0
    n_oracle: int = 100_000
    n_inner: int = 1

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "models": list(self.models),
                "n_replicates": self.n_replicates, "chain": self.chain.to_dict(),
                "seed": self.seed, "n_oracle": self.n_oracle, "n_inner": self.n_inner}

    def fingerprint(self) -> str:
        d = self.to_dict()
        d.pop("n_replicates")
        return hashlib.sha256(dumps_json(d).encode()).hexdigest()[:16]


def run_replicate(cfg: StudyConfig, r: int) -> list[ReplicateResult]:
    """Simulate replicate ``r``, fit every model and summarize its estimands."""
    ds, _, _ = simulate(cfg.spec, make_rng(cfg.seed, "replicate", r, "data"))
    chain_cfg = cfg.chain.with_(seed=cfg.seed)
    out = []
    for model in cfg.models:
        t0 = time.perf_counter()
        try:
            post = fit_model(ds, chain_cfg, model, chain=r)
            draws = estimate(post, ds, seed=cfg.seed, n_inner=cfg.n_inner, key=(r, model))
            out.append(ReplicateResult(r, model, summarize_posterior(draws),
                                       time.perf_counter() - t0))
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            log.warning("replicate %d, model %s failed: %s", r, model, exc)
            out.append(ReplicateResult(r, model, None, time.perf_counter() - t0,
                                       f"{type(exc).__name__}: {exc}"))
    return out


def _replicate_path(out_dir, r):
    return Path(out_dir) / "replicates" / f"rep_{r:04d}.json"


def _load_done(out_dir, cfg, r):
    path = _replicate_path(out_dir, r)
    if not path.exists():
        return None
    d = read_json(path)
    if d.get("fingerprint") != cfg.fingerprint():
        return None
    results = [ReplicateResult.from_dict(x) for x in d["results"]]
    if {x.model for x in results} != set(cfg.models):
        return None
    return results


def _worker(args):
    cfg, r, out_dir = args
    res = run_replicate(cfg, r)
    if out_dir is not None:
        write_json(_replicate_path(out_dir, r), {"fingerprint": cfg.fingerprint(), "replicate": r,
                                                 "results": [x.to_dict() for x in res]})
    return r, res


def study_truth(cfg: StudyConfig) -> TruthEstimands:
    return approximate_truth(cfg.spec, cfg.n_oracle, make_rng(cfg.seed, "truth"))


def run_study(cfg: StudyConfig, parallel: int = 1, truth: TruthEstimands | None = None,
              out_dir=None, progress=None):
    """Replicated simulation study; returns ``(results, MetricsReport)``.

    Results are deterministic given ``cfg`` and independent of ``parallel``.
    With ``out_dir`` each replicate is written as it completes and already
    completed replicates (same configuration fingerprint) are reused.
    """
    if cfg.n_replicates < 1:
        raise ValueError("n_replicates must be positive")
    if truth is None:
        truth = study_truth(cfg)
    done: dict[int, list] = {}
    todo = []
    for r in range(cfg.n_replicates):
        prev = _load_done(out_dir, cfg, r) if out_dir is not None else None
        if prev is not None:
            done[r] = prev
        else:
            todo.append(r)
    if done:
        log.info("resuming: %d replicate(s) already complete", len(done))
    jobs = [(cfg, r, out_dir) for r in todo]
    if parallel <= 1 or len(jobs) <= 1:
        it = map(_worker, jobs)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=parallel)
        it = pool.map(_worker, jobs)
    try:
        for r, res in it:
            done[r] = res
            msg = f"replicate {r + 1}/{cfg.n_replicates} done ({len(done)} complete)"
            log.info(msg)
            if progress is not None:
                progress(msg)
    finally:
        if pool is not None:
            pool.shutdown()
    results = [x for r in sorted(done) for x in done[r]]
    for model in cfg.models:
        n_fail = sum(1 for x in results if x.model == model and not x.ok)
        if n_fail > FAILURE_THRESHOLD * cfg.n_replicates:
            raise StudyError(f"model {model}: {n_fail} of {cfg.n_replicates} replicates failed")
    prov = {"study": cfg.to_dict(), "code_version": __version__,
            "truth_mc_se": truth.mc_se, "truth_n_oracle": truth.n_oracle_clusters}
    report = compute_metrics(results, truth, prov)
    if out_dir is not None:
        write_text(Path(out_dir) / "metrics.json", report.to_json())
        write_text(Path(out_dir) / "metrics.tsv", report.to_table())
    return results, report


# -------------------------------------------------------- prior sensitivity ---

def prior_sensitivity_sweep(data, scenarios=None, config: ChainConfig | None = None,
                            model: str = "ad", seed: int = 0) -> dict:
    """Refit under each named prior; returns name -> PosteriorSummary.

    ``scenarios`` is a list of names from the shipped table, a mapping
    name -> HyperParams, or None for all shipped scenarios.
    """
    table = prior_scenarios()
    if scenarios is None:
        scenarios = table
    elif not isinstance(scenarios, dict):
        missing = [s for s in scenarios if s not in table]
        if missing:
            raise KeyError(f"unknown prior scenario(s): {', '.join(missing)}")
        scenarios = {s: table[s] for s in scenarios}
    config = config or ChainConfig()
    out = {}
    for name, hyper in scenarios.items():
        if not isinstance(hyper, HyperParams):
            hyper = HyperParams.from_dict(hyper)
        post = fit_model(data, config.with_(hyper=hyper, seed=seed), model)
        out[name] = summarize_posterior(estimate(post, data, seed=seed))
    return out


def format_sensitivity_table(summaries: dict, sep: str = "\t") -> str:
    names = list(summaries)
    rows = [sep.join(["estimand"] + names)]
    for est in ESTIMANDS:
        cells = [f"{summaries[n].mean[est]:.3f} ({summaries[n].lower[est]:.3f}, "
                 f"{summaries[n].upper[est]:.3f})" for n in names]
        rows.append(sep.join([est] + cells))
    return "\n".join(rows) + "\n"
