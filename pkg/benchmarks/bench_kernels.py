"""Compiled versus pure-Python kernels.

Times each hot kernel on identical inputs under both backends and checks
that the outputs agree.  Usage::

    python3 benchmarks/bench_kernels.py [--repeat N] [--json PATH]
"""
from __future__ import annotations

import argparse
import json
import platform
import timeit

import numpy as np

from ddcoupling._backend import get_kernels
from ddcoupling.model import make_catalog_model
from ddcoupling.simulate import rate_bounds, simulate_ctmc, working_compact


def _cases():
    rng = np.random.default_rng(0)
    levels = 12
    u = rng.random(1 << levels) + 2.0**-54
    kt = np.linspace(0.0, 100.0, 257)
    kb = np.concatenate([[0.0], np.cumsum(rng.normal(size=256) * np.sqrt(100.0 / 256))])
    q = np.sort(rng.uniform(0.0, 100.0, 5000))
    z = rng.normal(size=q.size)
    A = np.ascontiguousarray(rng.normal(size=(3000, 2, 2)) * 0.2 - np.eye(2))
    noise = np.ascontiguousarray(rng.normal(size=(3000, 2)) * 0.05)
    sirs = make_catalog_model("sirs")
    bounds = rate_bounds(sirs, working_compact(sirs, [0.6, 0.2], 5.0))
    # each case takes a backend name
    return {
        "kmt_tree (2^12 cells, T=4096)": lambda b: get_kernels(b).kmt_tree(4096.0, levels, u),
        "bridge_fill (5000 points)": lambda b: get_kernels(b).bridge_fill(kt, kb, q, z),
        "linear_em (3000 steps, d=2)": lambda b: get_kernels(b).linear_em(A, noise, np.zeros(2), 0.005),
        "ctmc_advance (SIRS K=2000, 5 time units)": lambda b: simulate_ctmc(
            sirs, 2000, [0.6, 0.2], 5.0, rng=1, bounds=bounds, backend=b).event_times,
    }


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return bool(np.allclose(a, b, rtol=1e-12, atol=1e-12))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)
    py, cy = "python", "compiled"
    get_kernels(cy)  # fail early if the extension is not built
    rows = []
    print(f"{'kernel':44s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speed-up':>9s}  agree")
    for name, fn in _cases().items():
        agree = _same(fn(py), fn(cy))
        n_py = max(1, args.repeat // 2)
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=n_py))
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat))
        rows.append({"kernel": name, "python_s": t_py, "compiled_s": t_cy, "speedup": t_py / t_cy, "agree": agree})
        print(f"{name:44s} {t_py * 1e3:12.2f} {t_cy * 1e3:14.3f} {t_py / t_cy:9.1f}  {agree}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"machine": platform.platform(), "python": platform.python_version(), "results": rows},
                      fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    raise SystemExit(main())
