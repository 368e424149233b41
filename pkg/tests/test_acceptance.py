"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the lines
next to the test names.
"""

import time

import numpy as np
import pytest
from scipy import stats

from emscreen.asymptotics import cone_sup, sample_limit_dist
from emscreen.cli import main
from emscreen.emtest import EmConfig, MixtureState, run_em
from emscreen.evalmetrics import bench_case
from emscreen.families import compress, deriv_bundle, homogeneous_mle, make_family, weighted_mle
from emscreen.rng import make_rng
from emscreen.screening import default_threads, feature_statistics, screen
from emscreen.simulate import generate, scenario
from oracles import cone_eigen_2d, cone_polar_2d, fd_bundle, nb_grid_mle

THREADS = default_threads()


@pytest.fixture
def report(capsys):
    def _report(num, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {num:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return _report


def _random_em_instance(k):
    rng = make_rng(900, k)
    kind = ("poisson", "negbin", "normal")[k % 3]
    fam = make_family(kind)
    n = int(rng.integers(50, 400))
    G = int(rng.integers(2, 6))
    comp = rng.integers(0, G, n)
    if kind == "poisson":
        x = rng.poisson(rng.uniform(0.5, 25, G)[comp])
    elif kind == "negbin":
        mu, r = rng.uniform(0.5, 25, G), rng.uniform(0.5, 20)
        x = rng.poisson(rng.gamma(r, mu[comp] / r))
    else:
        x = rng.normal(rng.uniform(-5, 5, G)[comp], rng.uniform(0.3, 3))
    x = x.astype(float)
    theta0 = homogeneous_mle(fam, x).theta
    if kind == "normal":
        xi = np.column_stack([rng.uniform(x.min(), x.max(), G), np.full(G, max(theta0[1], 0.1))])
    else:
        xi = np.tile(theta0, (G, 1)) * np.exp(0.5 * rng.standard_normal((G, 1)))
    xi = np.clip(xi, fam.lower, fam.upper)
    return fam, x, MixtureState(xi, rng.dirichlet(np.ones(G))), float(10 ** rng.uniform(-6, 0)), int(rng.integers(5, 80))


def test_c01_em_monotonicity(report):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(100):
        fam, x, state, lam, K = _random_em_instance(k)
        xu, cnt = compress(x)
        _, trace, _ = run_em(fam, xu, cnt, state, lam, K, 0.0)
        drops = -np.diff(trace) / np.maximum(np.abs(trace[:-1]), 1e-300)
        worst = max(worst, float(drops.max(initial=0.0)))
    dt = time.perf_counter() - t0
    report(1, worst <= 1e-8 and dt < 30, f"100 EM runs, worst relative drop {worst:.2e}, {dt:.1f} s")


def test_c02_derivative_oracle(report):
    t0 = time.perf_counter()
    worst = {}
    for kind in ("poisson", "negbin", "normal"):
        fam = make_family(kind)
        rng = make_rng(901, fam.code)
        w = 0.0
        for _ in range(200):
            if kind == "poisson":
                theta, x = [rng.uniform(0.2, 30)], int(rng.integers(0, 60))
            elif kind == "negbin":
                theta, x = [rng.uniform(0.2, 30), rng.uniform(0.2, 50)], int(rng.integers(0, 60))
            else:
                theta = [rng.uniform(-10, 10), rng.uniform(0.2, 10)]
                x = float(rng.normal(theta[0], 2 * np.sqrt(theta[1])))
            y, b2 = deriv_bundle(fam, theta, x)
            fy, fb = fd_bundle(kind, theta, x)
            got, ref = np.concatenate([y, b2]), np.concatenate([fy, fb])
            w = max(w, float(np.max(np.abs(got - ref)) / max(1.0, np.abs(ref).max())))
        worst[kind] = w
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-5 and dt < 10
    report(2, ok, "max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {dt:.1f} s")


def test_c03_weighted_mle_oracle(report):
    t0 = time.perf_counter()
    nb = make_family("negbin")
    worst = 0.0
    for k in range(20):
        rng = make_rng(902, k)
        n = int(rng.integers(100, 1000))
        mu, r = rng.uniform(1, 20), rng.uniform(0.5, 20)
        x = rng.poisson(rng.gamma(r, mu / r, n)).astype(float)
        w = rng.uniform(0.05, 1, n)
        fit = weighted_mle(nb, x, w).theta
        gm, gr = nb_grid_mle(x, w)
        worst = max(worst, abs(fit[0] - gm), abs(fit[1] - gr) / max(1.0, gr))
    dt = time.perf_counter() - t0
    report(3, worst < 1e-3 and dt < 60, f"20 instances, max deviation {worst:.2e}, {dt:.1f} s")


def test_c04_cone_oracle(report):
    rng = make_rng(903)
    d1 = 0.0
    for _ in range(50):
        w, b = rng.normal(0, 2), rng.uniform(0.05, 5)
        d1 = max(d1, abs(cone_sup([w], [[b]], 1) - max(w, 0) ** 2 / b))
    d2 = 0.0
    for _ in range(50):
        L = rng.standard_normal((3, 3))
        B = L @ L.T + 0.05 * np.eye(3)
        w = 2 * rng.standard_normal(3)
        d2 = max(d2, abs(cone_sup(w, B, 2) - cone_eigen_2d(w, B)), abs(cone_sup(w, B, 1) - cone_polar_2d(w, B)))
    report(4, d1 <= 1e-9 and d2 <= 1e-3, f"d=1 closed form error {d1:.1e}; d=2 brute force error {d2:.1e}")


def test_c05_limit_law_d1(report):
    t0 = time.perf_counter()
    smp = sample_limit_dist(np.array([[1.7]]), 1, 10_000, seed=905)
    ks = stats.kstest(smp.draws[smp.draws > 0], stats.chi2(1).cdf).statistic
    dt = time.perf_counter() - t0
    ok = 0.47 <= smp.zero_fraction <= 0.53 and ks < 0.03 and dt < 30
    report(5, ok, f"zero mass {smp.zero_fraction:.4f}, KS {ks:.4f}, {dt:.1f} s")


def test_c06_null_calibration(report):
    t0 = time.perf_counter()
    X = make_rng(906).poisson(3.0, (500, 2000)).astype(float)
    _, pval, _ = feature_statistics(X, make_family("poisson"), EmConfig(), "chisq", threads=THREADS)
    rate = float(np.mean(pval < 0.05))
    dt = time.perf_counter() - t0
    report(6, 0.0 <= rate <= 0.06 and dt < 180, f"rejection at 0.05 = {rate:.4f}, {dt:.1f} s")


_BENCH = {}


def _bench(case):
    if case not in _BENCH:
        t0 = time.perf_counter()
        _, summ = bench_case(scenario(case, p=500, n=1000, seed=2024), EmConfig(), reps=20, threads=THREADS)
        _BENCH[case] = (summ, time.perf_counter() - t0)
    return _BENCH[case]


@pytest.mark.slow
def test_c07_table1_min_model_size(report):
    summ, dt = _bench("case1")
    s, sd = summ["S:EM"]
    report(7, s <= 22, f"Case 1 mean S = {s:.2f} (sd {sd:.2f}), 20 reps, {dt:.0f} s")


@pytest.mark.slow
def test_c08_table2_retained(report):
    summ, dt = _bench("case4")
    ra, fa = summ["R:EM-adjust"][0], summ["F:EM-adjust"][0]
    rt, ft = summ["R:EM-0.35"][0], summ["F:EM-0.35"][0]
    ok = ra >= 19 and fa <= 1 and rt >= 19.5 and ft <= 4
    report(8, ok, f"Case 4 EM-adjust R {ra:.2f} F {fa:.2f}; EM-0.35 R {rt:.2f} F {ft:.2f}; {dt:.0f} s")


@pytest.mark.slow
def test_c09_table3_ari(report):
    summ, _ = _bench("case4")
    em, none, oracle = summ["ARI:EM-0.35"][0], summ["ARI:No-Screening"][0], summ["ARI:Oracle"][0]
    total = sum(v[1] for v in _BENCH.values())
    ok = em >= 0.85 and none <= 0.85 and oracle >= 0.85 and total < 1800
    report(9, ok, f"Case 4 ARI EM-0.35 {em:.3f}, No-Screening {none:.3f}, Oracle {oracle:.3f}; "
                  f"criteria 7-9 took {total:.0f} s on {THREADS} worker(s)")


@pytest.mark.slow
def test_c10_throughput(report):
    ds = generate(scenario("case4", p=5000, n=1000, seed=2025))
    t0 = time.perf_counter()
    rep = screen(ds.data, make_family("negbin"), EmConfig(), threads=THREADS)
    dt = time.perf_counter() - t0
    report(10, dt < 600, f"p=5000, n=1000 screened in {dt:.0f} s on {THREADS} worker(s); "
                         f"{len(rep.selected_fdr)} selected")


def test_c11_determinism(report, tmp_path):
    same = []
    sim = ["simulate", "--case", "case4", "--p", "60", "--n", "200", "--seed", "11"]
    for d in ("a", "b"):
        assert main([*sim, "--outdir", str(tmp_path / d)]) == 0
    same += [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
             for f in ("sim_data.csv", "sim_labels.csv", "sim_truth.json")]
    data = str(tmp_path / "a" / "sim_data.csv")
    outs = []
    for t in ("1", "2", "3"):
        out = tmp_path / f"s{t}.json"
        assert main(["screen", data, "-o", str(out), "--K", "30", "--threads", t, "--seed", "5"]) == 0
        outs.append(out.read_bytes())
    same.append(outs[0] == outs[1] == outs[2])
    benches = []
    for t in ("1", "2"):
        out = tmp_path / f"b{t}.csv"
        assert main(["bench", "--case", "case1", "--p", "40", "--n", "150", "--reps", "2", "--K", "10",
                     "--threads", t, "-o", str(out)]) == 0
        benches.append((out.read_bytes(), (tmp_path / f"b{t}.json").read_bytes()))
    same.append(benches[0] == benches[1])
    report(11, all(same), f"{sum(same)}/{len(same)} output sets byte-identical across repeats and thread counts")
