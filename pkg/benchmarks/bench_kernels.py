"""Compare the compiled and pure-Python EM kernels.

Usage: python3 benchmarks/bench_kernels.py [--n 1000] [--features 20] [--repeat 3]
"""

import argparse
import time

import numpy as np

from emscreen import _backend
from emscreen.emtest import EmConfig, em_test_statistic
from emscreen.families import make_family, sample
from emscreen.rng import make_rng


def time_backend(name, family, X, cfg, repeat):
    saved = (_backend.fit_theta, _backend.logpdf_matrix, _backend.em_run)
    k = _backend.get(name)
    _backend.fit_theta, _backend.logpdf_matrix, _backend.em_run = k.fit_theta, k.logpdf_matrix, k.em_run
    try:
        best, stats = np.inf, None
        for _ in range(repeat):
            t0 = time.perf_counter()
            stats = [em_test_statistic(family, X[:, j], cfg).statistic for j in range(X.shape[1])]
            best = min(best, time.perf_counter() - t0)
        return best, np.array(stats)
    finally:
        _backend.fit_theta, _backend.logpdf_matrix, _backend.em_run = saved


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--features", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cfg = EmConfig()
    rows = []
    for kind, theta in (("poisson", [3.0]), ("negbin", [3.5, 5.5]), ("normal", [0.0, 2.0])):
        fam = make_family(kind)
        X = sample(fam, theta, (args.n, args.features), make_rng(7, kind == "negbin"))
        res = {b: time_backend(b, fam, X, cfg, args.repeat) for b in _backend.available()}
        py_t, py_s = res["python"]
        line = f"{kind:8s} python {1e3 * py_t / args.features:8.2f} ms/feature"
        if "cython" in res:
            cy_t, cy_s = res["cython"]
            diff = np.max(np.abs(cy_s - py_s))
            line += (f"   cython {1e3 * cy_t / args.features:7.2f} ms/feature"
                     f"   speedup {py_t / cy_t:5.1f}x   max |stat diff| {diff:.2e}")
        rows.append(line)
    print(f"n={args.n}, {args.features} features, best of {args.repeat}")
    print("\n".join(rows))


if __name__ == "__main__":
    main()
