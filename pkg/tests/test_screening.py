import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from emscreen.emtest import EmConfig
from emscreen.families import make_family
from emscreen.rng import make_rng
from emscreen.screening import (DataMatrix, IngestError, bh_adjust, chisq_gof_screen, combine_batches,
                                downsample_counts, feature_statistics, pearson_gof, screen, threshold)

POIS, NB, NORM = make_family("poisson"), make_family("negbin"), make_family("normal")
FAST = EmConfig(G=3, K=20)


def _mixed_counts(n=300, p=8, seed=0):
    rng = make_rng(seed)
    X = rng.poisson(3.0, (n, p)).astype(float)
    z = rng.random(n) < 0.3
    X[z, :2] = rng.poisson(15.0, (z.sum(), 2))
    return X


def test_threshold_example():
    assert threshold(1000, 0.35) == pytest.approx(11.2202, abs=1e-4)


def test_bh_examples():
    assert np.allclose(bh_adjust([0.01, 0.02, 0.03]), [0.03] * 3)
    assert np.allclose(bh_adjust([1.0] * 5), 1.0)
    assert np.allclose(bh_adjust([0.001, 0.8, 0.9, 1.0]), [0.004, 1.0, 1.0, 1.0])
    assert bh_adjust([]).shape == (0,)
    with pytest.raises(ValueError):
        bh_adjust([0.5, 1.2])
    with pytest.raises(ValueError):
        bh_adjust([np.nan])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_bh_properties(p):
    q = bh_adjust(p)
    assert np.all(q >= np.asarray(p) - 1e-15) and np.all(q <= 1)
    assert np.all(bh_adjust(q) >= q - 1e-15)
    srt = bh_adjust(sorted(p))
    assert np.all(np.diff(srt) >= 0)
    # definition: q_i = min over p_k >= p_i of p_k m / rank_k, with ties sharing the largest rank
    m = len(p)
    a = np.asarray(p)
    rank = np.array([np.sum(a <= v) for v in a])
    ref = np.array([min(1.0, np.min(a[a >= v] * m / rank[a >= v])) for v in a])
    assert np.allclose(q, ref, rtol=1e-12)


def test_bh_not_idempotent():
    # a second pass re-scales by rank again, so adjusted values can keep growing
    q = bh_adjust([1.0, 0.25])
    assert np.allclose(q, [1.0, 0.5])
    assert np.allclose(bh_adjust(q), [1.0, 1.0])


def test_combine_batches_examples():
    assert np.allclose(combine_batches([[0.2, 0.7]]), [0.2, 0.7])
    P = [[0.001, 0.5], [0.2, 0.9], [0.3, 0.6]]
    assert np.allclose(combine_batches(P), [0.003, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 10_000))
def test_combine_batches_bounds(B, p, seed):
    P = make_rng(seed).random((B, p))
    c = combine_batches(P)
    assert np.all(c >= P.min(axis=0)) and np.all(c <= 1)


def test_constant_matrix_selects_nothing():
    data = DataMatrix(np.full((30, 4), 5.0))
    rep = screen(data, NB, EmConfig())
    assert rep.selected_threshold == [] and rep.selected_fdr == []
    assert np.all(rep.boundary_flag) and np.all(rep.statistic == 0) and np.all(rep.pvalue == 1)


def test_selection_invariants():
    data = DataMatrix(_mixed_counts())
    rep = screen(data, POIS, FAST, vartheta=0.35, fdr=0.05)
    t_n = threshold(data.n, 0.35)
    assert rep.threshold == t_n
    assert rep.selected_threshold == [j for j in range(data.p) if rep.statistic[j] >= t_n]
    assert rep.selected_fdr == [j for j in range(data.p) if rep.pvalue_adjusted[j] < 0.05]
    assert np.all(rep.pvalue_adjusted >= rep.pvalue)
    assert {0, 1} <= set(rep.selected_threshold) and {0, 1} <= set(rep.selected_fdr)
    assert np.allclose(rep.pvalue, stats.chi2(1).sf(rep.statistic), rtol=1e-10, atol=1e-300)
    assert rep.config["seed"] == FAST.seed and rep.config["G"] == 3


def test_threads_do_not_change_results():
    X = _mixed_counts(n=200, p=6, seed=3)
    a = feature_statistics(X, POIS, FAST, threads=1)
    b = feature_statistics(X, POIS, FAST, threads=3)
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


def test_vartheta_monotone():
    data = DataMatrix(_mixed_counts(seed=4))
    rep = screen(data, POIS, FAST)
    prev = None
    for v in np.linspace(0.05, 0.95, 10):
        t_n = threshold(data.n, v)
        sel = set(np.flatnonzero(rep.statistic >= t_n))
        if prev is not None:
            assert sel <= prev
        prev = sel


def test_screen_validates_arguments():
    data = DataMatrix(_mixed_counts(n=30, p=2))
    with pytest.raises(ValueError):
        screen(data, POIS, FAST, vartheta=1.0)
    with pytest.raises(ValueError):
        screen(data, POIS, FAST, fdr=0.0)
    with pytest.raises(ValueError):
        screen(DataMatrix(np.ones((5, 2))), POIS, FAST)
    with pytest.raises(IngestError):
        screen(DataMatrix(np.ones((40, 2)) * 0.5, kind="continuous"), POIS, FAST)
    with pytest.raises(ValueError):
        feature_statistics(np.ones((40, 2)), NORM, FAST, pvalue_method="montecarlo")


def test_montecarlo_pvalues_deterministic():
    X = _mixed_counts(n=200, p=3, seed=5)
    a = feature_statistics(X, POIS, FAST, pvalue_method="montecarlo", n_mc=1000)
    b = feature_statistics(X, POIS, FAST, pvalue_method="montecarlo", n_mc=1000, threads=2)
    assert np.array_equal(a[1], b[1])
    assert np.all(a[1] >= 1 / 1001)
    # the sampled law is stochastically smaller than the bound, so MC p <= chi2 p up to MC noise
    assert np.all(a[1] <= stats.chi2(1).sf(a[0]) + 0.05)


def test_batch_mode():
    X = _mixed_counts(n=240, p=4, seed=6)
    batches = np.repeat(["a", "b"], 120)
    rep = screen(DataMatrix(X), POIS, FAST, batches=batches)
    pa = feature_statistics(X[:120], POIS, FAST)[1]
    pb = feature_statistics(X[120:], POIS, FAST)[1]
    assert np.allclose(rep.pvalue, np.minimum(2 * np.minimum(pa, pb), 1.0))
    assert rep.selected_threshold is None and rep.threshold is None
    assert rep.config["batches"] == 2
    with pytest.raises(IngestError):
        screen(DataMatrix(X), POIS, FAST, batches=batches[:10])


def test_data_matrix_errors():
    with pytest.raises(IngestError, match="feature c"):
        DataMatrix(np.array([[1.0, 2.0, np.nan]]), ["a", "b", "c"])
    with pytest.raises(IngestError, match="sample 1, feature 0"):
        DataMatrix(np.array([[1.0], [-1.0]]))
    with pytest.raises(IngestError):
        DataMatrix(np.array([[1.5]]))
    with pytest.raises(IngestError):
        DataMatrix(np.ones(3))
    assert DataMatrix(np.array([[1.5, -2.0]]), kind="continuous").p == 2
    assert DataMatrix(np.ones((2, 2))).names() == ["f1", "f2"]


def test_pearson_gof_exact_fit():
    probs = np.array([0.2, 0.3, 0.25, 0.25])
    x2, df, p = pearson_gof(400 * probs, probs, 1)
    assert x2 == 0.0 and df == 2 and p == 1.0


def test_pearson_gof_merges_small_bins():
    probs = np.array([0.01, 0.49, 0.49, 0.01])
    x2, df, _ = pearson_gof([1, 50, 48, 1], probs, 1)
    # both edge bins (expected 1) fold into neighbours: two bins remain, df floored at one
    assert df == 1
    assert x2 == pytest.approx((51 - 50) ** 2 / 50 + (49 - 50) ** 2 / 50)


def test_gof_screen():
    rng = make_rng(7)
    X = np.column_stack([rng.poisson(4, 500), np.full(500, 3.0),
                         np.concatenate([rng.poisson(1, 250), rng.poisson(20, 250)])])
    rep = chisq_gof_screen(DataMatrix(X.astype(float)), POIS, fdr=0.01)
    assert rep.boundary_flag[1] and rep.pvalue[1] == 1.0
    assert rep.selected_fdr == [2]
    with pytest.raises(ValueError):
        chisq_gof_screen(DataMatrix(X[:20]), POIS)


def test_gof_null_uniformish():
    rng = make_rng(8)
    X = rng.poisson(6.0, (600, 200)).astype(float)
    rep = chisq_gof_screen(DataMatrix(X), POIS)
    assert np.mean(rep.pvalue < 0.05) <= 0.1


def test_downsample_examples():
    d = DataMatrix(np.array([[10.0, 0.0], [3.0, 2.0]]))
    out = downsample_counts(d, 5, seed=1).values
    assert np.array_equal(out[0], [5, 0])
    assert np.array_equal(out[1], [3, 2])
    firsts = []
    base = DataMatrix(np.tile([6.0, 6.0], (10_000, 1)))
    res = downsample_counts(base, 6, seed=2).values
    assert np.all(res.sum(axis=1) == 6)
    firsts = res[:, 0]
    se = firsts.std() / np.sqrt(firsts.size)
    assert abs(firsts.mean() - 3) < 3 * se
    with pytest.raises(IngestError, match=r"\[1\]"):
        downsample_counts(d, 6, seed=0)
    with pytest.raises(IngestError):
        downsample_counts(DataMatrix(np.ones((2, 2)), kind="continuous"), 1, seed=0)
