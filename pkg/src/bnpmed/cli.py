"""Command-line entry point: ``bnpmed <command> [options]``.

Settings are resolved as built-in defaults, then the YAML file given by
``--config`` (top-level keys, or a section named after the command), then
explicit flags. Exit codes: 0 success, 2 usage, 3 data, 4 numerical.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baselines import fit_model
from .chain import AdaptationError, ChainError, adapt_truncation
from .config import ChainConfig, ConfigError, HyperParams, prior_scenarios
from .data import DataError, load_dataset, write_dataset
from .dgp import MediatorCorrParams, ScenarioSpec, approximate_truth, simulate
from .evaluation import (StudyConfig, StudyError, format_sensitivity_table, lpml_for_posterior,
                         prior_sensitivity_sweep, run_study)
from .gcomp import estimate, summarize_posterior
from .serialize import FormatError, dumps_json, load_posterior, save_posterior, write_json, write_text
from .stochastic import ParameterError, make_rng

log = logging.getLogger("bnpmed")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

MODEL_ALIASES = {"ad": "ad", "ad-nddpm": "ad", "fd": "fd", "fd-nddpm": "fd",
                 "ndpm": "ndpm", "lmm": "lmm"}

DEFAULTS = {
    "seed": 0, "scenario": 1, "clusters": 100, "min_size": 20, "max_size": 60,
    "errors": "normal", "df": 1.5, "fixed_effects": "linear", "binary_m1": False,
    "null_effects": False, "oracle": 100_000,
    "model": "ad", "burn": 1000, "keep": 2000, "thin": 1, "kc": 10, "ki": 5,
    "adapt": False, "prior": "Default", "hyper": None, "inner": 1,
    "models": "ad", "replicates": 30, "parallel": 1, "priors": None,
}


class UsageError(Exception):
    pass


class ProvenanceError(DataError):
    pass


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _settings(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            raw = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a mapping")
        section = raw.get(args.command, {})
        flat = {k: v for k, v in raw.items() if not isinstance(v, dict) or k == "hyper"}
        for src in (flat, section if isinstance(section, dict) else {}):
            for k, v in src.items():
                key = k.replace("-", "_")
                if key not in DEFAULTS:
                    raise UsageError(f"unknown config field {k!r}")
                cfg[key] = v
    for k, v in vars(args).items():
        if k in DEFAULTS and v is not None:
            cfg[k] = v
    return cfg


def _model(name) -> str:
    try:
        return MODEL_ALIASES[str(name).lower()]
    except KeyError:
        raise UsageError(f"unknown model {name!r}; choose from {', '.join(MODEL_ALIASES)}") from None


def _spec(s) -> ScenarioSpec:
    return ScenarioSpec(scenario=int(s["scenario"]), n_clusters=int(s["clusters"]),
                        size_range=(int(s["min_size"]), int(s["max_size"])),
                        error_family=s["errors"], t_df=float(s["df"]),
                        fixed_effects=s["fixed_effects"], mediator1_binary=bool(s["binary_m1"]),
                        corr=MediatorCorrParams(), null_effects=bool(s["null_effects"]),
                        seed=int(s["seed"]))


def _hyper(s) -> HyperParams:
    table = prior_scenarios()
    if s["prior"] not in table:
        raise UsageError(f"unknown prior scenario {s['prior']!r}")
    base = table[s["prior"]].to_dict()
    if s["hyper"]:
        base.update(s["hyper"])
    return HyperParams.from_dict(base)


def _chain(s) -> ChainConfig:
    return ChainConfig(k_c=int(s["kc"]), k_i=int(s["ki"]), n_burn=int(s["burn"]),
                       n_keep=int(s["keep"]), thin=int(s["thin"]), seed=int(s["seed"]),
                       hyper=_hyper(s), adapt=bool(s["adapt"]))


# ------------------------------------------------------------------ commands ---

def cmd_simulate(args, s):
    spec = _spec(s)
    ds, _, _ = simulate(spec, make_rng(spec.seed, "simulate"))
    write_dataset(ds, args.out)
    print(f"wrote {ds.n_units} units in {ds.n_clusters} clusters to {args.out}")
    if args.truth:
        tr = approximate_truth(spec, int(s["oracle"]), make_rng(spec.seed, "truth"))
        write_json(args.truth, {"spec": spec.to_dict(), **tr.to_dict()})
        print(f"wrote truth ({tr.n_oracle_clusters} oracle clusters) to {args.truth}")


def cmd_truth(args, s):
    spec = _spec(s)
    tr = approximate_truth(spec, int(s["oracle"]), make_rng(spec.seed, "truth"))
    text = dumps_json({"spec": spec.to_dict(), **tr.to_dict()})
    if args.out:
        write_text(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_fit(args, s):
    model = _model(s["model"])
    ds = load_dataset(args.data, mediator1_binary=bool(s["binary_m1"]))
    cfg = _chain(s)
    if cfg.adapt and model in ("ad", "fd"):
        lv = adapt_truncation(ds, cfg, kind=model)
        cfg = cfg.with_(k_c=lv.k_c, k_i=lv.k_i, adapt=False)
        print(f"adapted truncation: K_C={lv.k_c}, K_I={lv.k_i}")
    post = fit_model(ds, cfg, model)
    post.meta.update(data_sha256=_file_hash(args.data), data_path=str(args.data),
                     settings={k: s[k] for k in sorted(s)}, code_version=__version__)
    save_posterior(post, args.out)
    print(f"wrote {len(post)} draws ({model}) to {args.out}")


def _load_matching(args):
    post = load_posterior(args.draws)
    ds = load_dataset(args.data, mediator1_binary=bool(post.meta.get("mediator1_binary", False)))
    if (ds.n_units, ds.n_clusters) != (post.meta.get("n_units"), post.meta.get("n_clusters")):
        raise ProvenanceError(
            f"draws were fitted to {post.meta.get('n_units')} units in {post.meta.get('n_clusters')} "
            f"clusters but {args.data} has {ds.n_units} units in {ds.n_clusters} clusters")
    if post.meta.get("data_sha256") not in (None, _file_hash(args.data)):
        log.warning("dataset contents differ from the file the draws were fitted to")
    return post, ds


def cmd_estimate(args, s):
    post, ds = _load_matching(args)
    draws = estimate(post, ds, seed=int(s["seed"]), n_inner=int(s["inner"]))
    summary = summarize_posterior(draws)
    res = draws.max_identity_residual()
    print(summary.format_table())
    print(f"identity check: max residual {res:.3e} over {len(draws)} draws")
    if args.out:
        out = Path(args.out)
        write_text(out.with_suffix(".draws.csv"), draws.to_table())
        write_json(out.with_suffix(".summary.json"),
                   {"summary": summary.to_dict(), "identity_max_residual": res,
                    "model": post.tag, "settings": {k: s[k] for k in sorted(s)},
                    "code_version": __version__})


def cmd_study(args, s):
    models = tuple(_model(m) for m in str(s["models"]).split(",") if m.strip())
    cfg = StudyConfig(spec=_spec(s), models=models, n_replicates=int(s["replicates"]),
                      chain=_chain(s), seed=int(s["seed"]), n_oracle=int(s["oracle"]),
                      n_inner=int(s["inner"]))
    _, report = run_study(cfg, parallel=int(s["parallel"]), out_dir=args.out_dir,
                          progress=lambda m: print(m, file=sys.stderr))
    sys.stdout.write(report.to_table())


def cmd_lpml(args, s):
    post, ds = _load_matching(args)
    res = lpml_for_posterior(post, ds)
    print(f"LPML = {res.lpml:.6f} ({post.tag}, {len(post)} draws, {len(res.log_cpo)} observations)")
    if res.flagged.size:
        print(f"{res.flagged.size} observation(s) with zero likelihood: CPO set to 0")
    if args.out:
        write_json(args.out, {"lpml": res.lpml, "log_cpo": res.log_cpo.tolist(),
                              "flagged": res.flagged.tolist(), "model": post.tag})


def cmd_sensitivity(args, s):
    ds = load_dataset(args.data, mediator1_binary=bool(s["binary_m1"]))
    names = s["priors"].split(",") if isinstance(s["priors"], str) else s["priors"]
    try:
        sums = prior_sensitivity_sweep(ds, names, _chain(s), model=_model(s["model"]),
                                       seed=int(s["seed"]))
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    table = format_sensitivity_table(sums)
    sys.stdout.write(table)
    if args.out:
        write_text(args.out, table)


# -------------------------------------------------------------------- parser ---

def _scenario_flags(p):
    p.add_argument("--scenario", type=int, choices=(1, 2, 3))
    p.add_argument("--clusters", type=int)
    p.add_argument("--min-size", type=int)
    p.add_argument("--max-size", type=int)
    p.add_argument("--errors", choices=("normal", "t"))
    p.add_argument("--df", type=float, help="degrees of freedom of t errors")
    p.add_argument("--fixed-effects", choices=("linear", "nonlinear"))
    p.add_argument("--binary-m1", action="store_const", const=True)
    p.add_argument("--null-effects", action="store_const", const=True)
    p.add_argument("--oracle", type=int, help="clusters in the truth Monte Carlo")


def _chain_flags(p):
    p.add_argument("--burn", type=int)
    p.add_argument("--keep", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--kc", type=int, help="cluster-level truncation")
    p.add_argument("--ki", type=int, help="unit-level truncation")
    p.add_argument("--adapt", action="store_const", const=True)
    p.add_argument("--prior", help="named prior scenario")
    p.add_argument("--inner", type=int, help="mediator replicates per draw in g-computation")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bnpmed", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"bnpmed {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML settings file")
        p.add_argument("--seed", type=int)
        return p

    p = add("simulate", "generate a synthetic trial")
    _scenario_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="also write Monte Carlo true effects here")

    p = add("truth", "Monte Carlo true effects of a scenario")
    _scenario_flags(p)
    p.add_argument("--out")

    p = add("fit", "run a sampler and save the draws")
    p.add_argument("--data", required=True)
    p.add_argument("--model")
    p.add_argument("--binary-m1", action="store_const", const=True)
    _chain_flags(p)
    p.add_argument("--out", required=True)

    p = add("estimate", "g-computation from saved draws")
    p.add_argument("--data", required=True)
    p.add_argument("--draws", required=True)
    p.add_argument("--inner", type=int)
    p.add_argument("--out", help="prefix for the draws table and summary")

    p = add("study", "replicated simulation study")
    _scenario_flags(p)
    _chain_flags(p)
    p.add_argument("--models", help="comma-separated model tags")
    p.add_argument("--replicates", type=int)
    p.add_argument("--parallel", type=int)
    p.add_argument("--out-dir")

    p = add("lpml", "log pseudo-marginal likelihood of saved draws")
    p.add_argument("--data", required=True)
    p.add_argument("--draws", required=True)
    p.add_argument("--out")

    p = add("sensitivity", "refit under the named prior scenarios")
    p.add_argument("--data", required=True)
    p.add_argument("--model")
    p.add_argument("--binary-m1", action="store_const", const=True)
    p.add_argument("--priors", help="comma-separated scenario names (default: all)")
    _chain_flags(p)
    p.add_argument("--out")
    return ap


COMMANDS = {"simulate": cmd_simulate, "truth": cmd_truth, "fit": cmd_fit,
            "estimate": cmd_estimate, "study": cmd_study, "lpml": cmd_lpml,
            "sensitivity": cmd_sensitivity}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = _settings(args)
        COMMANDS[args.command](args, settings)
    except (UsageError, ConfigError, ParameterError) as exc:
        print(f"bnpmed {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, OSError) as exc:
        print(f"bnpmed {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ChainError, AdaptationError, StudyError, ArithmeticError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"bnpmed {args.command}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (TypeError, ValueError) as exc:
        print(f"bnpmed {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
