"""Time the numba kernels against their numpy twins, and a full Gibbs sweep under each backend.

Usage: python benchmarks/bench_kernels.py [--units 2000] [--repeat 20] [--no-sweep]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import textwrap
import timeit

import numpy as np

from bnpmed import kernels
from bnpmed._accel import HAVE_NUMBA


def make_inputs(n, k_c=10, k_i=5, p=10, q=2, n_clusters=50, seed=0):
    rng = np.random.default_rng(seed)
    K = k_c * k_i
    A = rng.standard_normal((K, q, q))
    cov = A @ np.swapaxes(A, 1, 2) + q * np.eye(q)
    prec = np.linalg.inv(cov)
    prec = 0.5 * (prec + np.swapaxes(prec, 1, 2))
    logdet = np.linalg.slogdet(cov)[1]
    obs = rng.standard_normal((n, q))
    mean = rng.standard_normal((n, K, q))
    ll = rng.standard_normal((n, k_i, k_c)) - 3.0
    logw = np.log(rng.dirichlet(np.ones(k_i), size=k_c).T)
    starts = np.linspace(0, n, n_clusters, endpoint=False).astype(np.int64)
    labels = rng.integers(0, K, n)
    C = rng.standard_normal((n, p))
    outer = np.einsum("np,nq->npq", C, C)
    cr = np.einsum("np,nq->npq", C, obs)
    P = outer[:K] + np.eye(p)
    lin = rng.standard_normal((K, p))
    z = rng.standard_normal((K, p))
    chi2 = rng.chisquare(5.0, (K, q))
    normals = rng.standard_normal((K, q * (q - 1) // 2))
    return {
        "component_loglik": (obs, mean, prec, logdet),
        "cluster_logits": (ll, logw, starts),
        "draw_labels": (rng.standard_normal((n_clusters, k_c)), rng.random(n_clusters)),
        "draw_unit_labels": (ll, logw, rng.integers(0, k_c, n), rng.random(n)),
        "suffstats": (labels, K, outer, cr),
        "gaussian_draw": (P, lin, z),
        "iw_bartlett": (cov, chi2, normals),
    }


def bench_kernels(n, repeat):
    inputs = make_inputs(n)
    rows = []
    for name, args in inputs.items():
        f_np = getattr(kernels, f"{name}_np")
        f_nb = getattr(kernels, f"{name}_nb")
        f_nb(*args)  # compile outside the timing
        t_np = min(timeit.repeat(lambda: f_np(*args), number=1, repeat=repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*args), number=1, repeat=repeat))
        rows.append((name, t_np * 1e3, t_nb * 1e3, t_np / t_nb))
    return rows


SWEEP = textwrap.dedent("""
    import time
    from bnpmed._accel import backend_name
    from bnpmed.chain import run_chain
    from bnpmed.config import ChainConfig
    from bnpmed.dgp import ScenarioSpec, simulate
    from bnpmed.stochastic import make_rng
    ds, _, _ = simulate(ScenarioSpec(scenario=1, n_clusters=50), make_rng(1, "bench"))
    run_chain(ds, ChainConfig(n_burn=2, n_keep=2))
    t = time.perf_counter()
    run_chain(ds, ChainConfig(n_burn={iters}, n_keep=1))
    print(backend_name(), (time.perf_counter() - t) / ({iters} + 1) * 1e3)
""")


def bench_sweep(iters):
    out = {}
    for disable in ("0", "1"):
        env = dict(os.environ, BNPMED_DISABLE_NUMBA=disable)
        res = subprocess.run([sys.executable, "-c", SWEEP.format(iters=iters)], env=env,
                             capture_output=True, text=True, check=True)
        backend, ms = res.stdout.split()
        out[backend] = float(ms)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--units", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--sweep-iters", type=int, default=50)
    ap.add_argument("--no-sweep", action="store_true")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is disabled or missing; only the numpy kernels are available")
        return 1
    print(f"kernel timings, N={args.units} units, K_C=10, K_I=5 (best of {args.repeat}, ms)")
    print(f"{'kernel':<18}{'numpy':>10}{'numba':>10}{'speedup':>9}")
    for name, a, b, s in bench_kernels(args.units, args.repeat):
        print(f"{name:<18}{a:>10.3f}{b:>10.3f}{s:>8.1f}x")
    if not args.no_sweep:
        res = bench_sweep(args.sweep_iters)
        print("\nfull Gibbs sweep, Scenario 1 with 50 clusters (ms per sweep)")
        for k, v in res.items():
            print(f"  {k:<8}{v:>10.2f}")
        if "numba" in res and "numpy" in res:
            print(f"  speedup {res['numpy'] / res['numba']:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
