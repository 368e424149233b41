"""Per-feature EM-test screening and selection rules."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import asymptotics
from .emtest import EmConfig, em_test_statistic
from .families import Family, homogeneous_mle
from .rng import DOWNSAMPLE, FEATURE, make_rng

PVALUE_METHODS = ("chisq", "montecarlo")


class IngestError(ValueError):
    """Input matrix failed validation; the message names the offending cell."""


@dataclass
class DataMatrix:
    values: np.ndarray  # n x p, samples by features
    feature_names: list | None = None
    kind: str = "count"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise IngestError("data matrix must be two-dimensional")
        self.values = v
        if self.kind not in ("count", "continuous"):
            raise IngestError(f"unknown data kind {self.kind!r}")
        bad = np.argwhere(~np.isfinite(v))
        if bad.size:
            i, j = bad[0]
            raise IngestError(f"missing or non-finite value at sample {i}, feature {self._name(j)}")
        if self.kind == "count":
            bad = np.argwhere((v < 0) | (v != np.floor(v)))
            if bad.size:
                i, j = bad[0]
                raise IngestError(f"value {v[i, j]!r} at sample {i}, feature {self._name(j)} "
                                  "is not a nonnegative integer count")
        if self.feature_names is not None and len(self.feature_names) != v.shape[1]:
            raise IngestError("feature_names length does not match the number of columns")

    def _name(self, j):
        return self.feature_names[j] if self.feature_names is not None else str(j)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def names(self) -> list:
        if self.feature_names is not None:
            return list(self.feature_names)
        return [f"f{j + 1}" for j in range(self.p)]


@dataclass
class ScreenReport:
    statistic: np.ndarray
    pvalue: np.ndarray
    pvalue_adjusted: np.ndarray
    boundary_flag: np.ndarray
    selected_threshold: list | None
    selected_fdr: list
    threshold: float | None
    config: dict = field(default_factory=dict)


def threshold(n: int, vartheta: float) -> float:
    return float(n) ** vartheta


def bh_adjust(pvalues) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values."""
    p = np.asarray(pvalues, dtype=float).reshape(-1)
    if np.any(~(p >= 0) | ~(p <= 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.shape[0]
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    q = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    out = np.empty(m)
    out[order] = q
    return out


def combine_batches(pvalue_matrix) -> np.ndarray:
    """Bonferroni-type combination B * min_b p_b, capped at one."""
    P = np.atleast_2d(np.asarray(pvalue_matrix, dtype=float))
    return np.minimum(P.shape[0] * P.min(axis=0), 1.0)


def _check_family_data(data: DataMatrix, family: Family):
    if family.discrete and data.kind != "count":
        raise IngestError(f"{family.kind} family needs count data")


def _feature_pvalue(family, x, res, cfg, method, n_mc, j):
    if res.degenerate:
        return 1.0
    if method == "chisq":
        return asymptotics.pvalue_chisq(res.statistic, family.m)
    B = asymptotics.estimate_b_matrices(family, res.theta0_hat, x)
    sample = asymptotics.sample_limit_dist(B.B22_tilde, asymptotics.rank_cap(cfg.G, family.d),
                                           n_mc, seed=(cfg.seed, j))
    return asymptotics.pvalue_montecarlo(res.statistic, sample)


def _run_chunk(args):
    family, block, offset, cfg, method, n_mc = args
    out = []
    for k in range(block.shape[1]):
        j = offset + k
        x = block[:, k]
        res = em_test_statistic(family, x, cfg, key=(cfg.seed, FEATURE, j))
        out.append((res.statistic, _feature_pvalue(family, x, res, cfg, method, n_mc, j),
                    res.boundary_flag))
    return out


def _chunks(values, family, cfg, method, n_mc, workers):
    p = values.shape[1]
    size = max(1, math.ceil(p / (workers * 4)))
    for s in range(0, p, size):
        yield (family, np.ascontiguousarray(values[:, s:s + size]), s, cfg, method, n_mc)


def feature_statistics(values, family: Family, cfg: EmConfig, pvalue_method="chisq",
                       n_mc=2000, threads=1):
    """(statistic, pvalue, flag) arrays over the columns of ``values``.

    Each feature draws from its own (seed, feature index) stream, so results
    do not depend on ``threads``.
    """
    if pvalue_method not in PVALUE_METHODS:
        raise ValueError(f"pvalue_method must be one of {PVALUE_METHODS}")
    if pvalue_method == "montecarlo" and family.kind == "normal":
        raise ValueError("the normal family supports only the chi-square p-value bound")
    values = np.asarray(values, dtype=float)
    threads = max(1, int(threads))
    tasks = list(_chunks(values, family, cfg, pvalue_method, n_mc, threads))
    if threads == 1 or len(tasks) == 1:
        results = [_run_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_run_chunk, tasks))
    rows = [r for chunk in results for r in chunk]
    stat = np.array([r[0] for r in rows], dtype=float)
    pval = np.array([r[1] for r in rows], dtype=float)
    flag = np.array([r[2] for r in rows], dtype=bool)
    return stat, pval, flag


def screen(data: DataMatrix, family: Family, cfg: EmConfig | None = None, vartheta=0.35,
           fdr=0.01, pvalue_method="chisq", n_mc=2000, threads=1, batches=None) -> ScreenReport:
    """EM-test every feature and apply the threshold and FDR rules.

    With ``batches`` (one label per sample) each batch is tested separately,
    p-values are Bonferroni-combined, and the threshold rule is not applied.
    """
    cfg = cfg or EmConfig()
    if not 0 < vartheta < 1:
        raise ValueError("vartheta must lie in (0, 1)")
    if not 0 < fdr < 1:
        raise ValueError("fdr must lie in (0, 1)")
    _check_family_data(data, family)
    config = dict(family=family.kind, G=cfg.G, K=cfg.K, lam=cfg.lam, n_initials=cfg.n_initials,
                  inner_starts=cfg.inner_starts, tol=cfg.tol, seed=cfg.seed, vartheta=vartheta,
                  fdr=fdr, pvalue_method=pvalue_method,
                  n_mc=n_mc if pvalue_method == "montecarlo" else None)
    if batches is None:
        if data.n < 2 * cfg.G:
            raise ValueError(f"need at least {2 * cfg.G} samples")
        stat, pval, flag = feature_statistics(data.values, family, cfg, pvalue_method, n_mc, threads)
        t_n = threshold(data.n, vartheta)
        sel_t = [int(j) for j in np.flatnonzero(stat >= t_n)]
    else:
        batches = np.asarray(batches)
        if batches.shape[0] != data.n:
            raise IngestError("batch labels must have one entry per sample")
        stats_b, pvals_b, flags_b = [], [], []
        for b in sorted(set(batches.tolist()), key=str):
            rows = batches == b
            if rows.sum() < 2 * cfg.G:
                raise ValueError(f"batch {b!r} has fewer than {2 * cfg.G} samples")
            s, p, f = feature_statistics(data.values[rows], family, cfg, pvalue_method, n_mc, threads)
            stats_b.append(s)
            pvals_b.append(p)
            flags_b.append(f)
        stat = np.max(stats_b, axis=0)
        pval = combine_batches(pvals_b)
        flag = np.any(flags_b, axis=0)
        t_n, sel_t = None, None
        config["batches"] = len(stats_b)
    padj = bh_adjust(pval)
    sel_f = [int(j) for j in np.flatnonzero(padj < fdr)]
    return ScreenReport(stat, pval, padj, flag, sel_t, sel_f, t_n, config)


def _bin_probs(family, theta, cuts):
    if family.kind == "poisson":
        cdf = stats.poisson(theta[0]).cdf(np.floor(cuts))
    elif family.kind == "negbin":
        mu, r = theta
        cdf = stats.nbinom(r, r / (r + mu)).cdf(np.floor(cuts))
    else:
        cdf = stats.norm(theta[0], math.sqrt(theta[1])).cdf(cuts)
    edges = np.concatenate(([0.0], cdf, [1.0]))
    return np.diff(edges)


def pearson_gof(observed, probs, n_params: int):
    """Pearson X^2 after merging bins with expected count < 5 rightward.

    Returns (X2, df, pvalue); df = bins - 1 - n_params, floored at one.
    """
    obs = list(np.asarray(observed, dtype=float))
    n = float(sum(obs))
    exp = list(n * np.asarray(probs, dtype=float))
    i = 0
    while i < len(exp) and len(exp) > 1:
        if exp[i] < 5:
            j = i + 1 if i + 1 < len(exp) else i - 1
            exp[j] += exp[i]
            obs[j] += obs[i]
            del exp[i], obs[i]
            i = 0
        else:
            i += 1
    if len(exp) < 2:
        return 0.0, 1, 1.0
    o, e = np.array(obs), np.array(exp)
    x2 = float(np.sum((o - e) ** 2 / e))
    df = max(len(e) - 1 - n_params, 1)
    return x2, df, float(stats.chi2.sf(x2, df))


def chisq_gof_screen(data: DataMatrix, family: Family, fdr=0.01) -> ScreenReport:
    """Quartile-binned chi-square goodness-of-fit baseline."""
    _check_family_data(data, family)
    if data.n < 40:
        raise ValueError("chi-square screening needs at least 40 samples")
    p = data.p
    x2s, pvals, flags = np.zeros(p), np.ones(p), np.zeros(p, dtype=bool)
    for j in range(p):
        x = data.values[:, j]
        if np.all(x == x[0]):
            flags[j] = True
            continue
        fit = homogeneous_mle(family, x)
        flags[j] = fit.at_bound
        cuts = np.unique(np.quantile(x, [0.25, 0.5, 0.75]))
        idx = np.searchsorted(cuts, x, side="left")  # bin k holds cuts[k-1] < x <= cuts[k]
        observed = np.bincount(idx, minlength=cuts.size + 1)
        x2s[j], _, pvals[j] = pearson_gof(observed, _bin_probs(family, fit.theta, cuts), family.d)
    padj = bh_adjust(pvals)
    sel = [int(j) for j in np.flatnonzero(padj < fdr)]
    return ScreenReport(x2s, pvals, padj, flags, None, sel, None,
                        dict(family=family.kind, fdr=fdr, method="chisq-gof"))


def downsample_counts(data: DataMatrix, target: int, seed: int) -> DataMatrix:
    """Thin every sample to ``target`` total counts without replacement."""
    if data.kind != "count":
        raise IngestError("down-sampling needs count data")
    counts = data.values.astype(np.int64)
    totals = counts.sum(axis=1)
    short = np.flatnonzero(totals < target)
    if short.size:
        raise IngestError(f"samples with total below {target}: {short.tolist()}")
    rng = make_rng(seed, DOWNSAMPLE)
    out = np.empty_like(counts)
    for i in range(counts.shape[0]):
        out[i] = rng.multivariate_hypergeometric(counts[i], int(target))
    return DataMatrix(out.astype(float), data.feature_names, "count")


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("EMSCREEN_THREADS", "1")))
    except ValueError:
        return 1
