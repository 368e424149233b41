"""Screening and clustering quality: S, (R, F), k-means and ARI."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .emtest import EmConfig
from .families import make_family
from .rng import KMEANS, REPLICATION, as_key, make_rng
from .screening import chisq_gof_screen, screen
from .simulate import SimScenario, generate

SCREEN_METHODS = ("EM-adjust", "EM-0.35", "Chi-square")
ARI_METHODS = ("No-Screening", "Oracle", "EM-adjust", "EM-0.35", "Chi-square")


@dataclass
class Clustering:
    labels: np.ndarray  # 1..G
    objective: float = float("nan")
    trace: list = dataclasses.field(default_factory=list)


def rank_features(statistic) -> np.ndarray:
    """0-based feature order by decreasing statistic, ties by ascending index."""
    s = np.asarray(statistic, dtype=float)
    return np.lexsort((np.arange(s.shape[0]), -s))


def min_model_size(order, relevant) -> int:
    """Shortest prefix of ``order`` that contains every relevant feature."""
    relevant = set(int(j) for j in relevant)
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    pos = {int(j): k for k, j in enumerate(order)}
    missing = relevant - pos.keys()
    if missing:
        raise ValueError(f"relevant features not in ranking: {sorted(missing)}")
    return max(pos[j] for j in relevant) + 1


def retained_counts(selected, relevant):
    sel, rel = set(int(j) for j in selected), set(int(j) for j in relevant)
    return len(sel & rel), len(sel - rel)


def _sqdist(X, C):
    d = (X * X).sum(axis=1)[:, None] - 2.0 * X @ C.T + (C * C).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _plusplus(X, G, rng):
    n = X.shape[0]
    C = np.empty((G, X.shape[1]))
    C[0] = X[rng.integers(n)]
    d2 = _sqdist(X, C[:1])[:, 0]
    for g in range(1, G):
        tot = d2.sum()
        i = rng.choice(n, p=d2 / tot) if tot > 0 else rng.integers(n)
        C[g] = X[i]
        d2 = np.minimum(d2, _sqdist(X, C[g:g + 1])[:, 0])
    return C


def _lloyd(X, C, max_iter):
    G = C.shape[0]
    labels = None
    trace = []
    for _ in range(max_iter):
        D = _sqdist(X, C)
        new = D.argmin(axis=1)
        trace.append(float(D[np.arange(X.shape[0]), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        cost = D[np.arange(X.shape[0]), labels]
        for g in range(G):
            members = labels == g
            if members.any():
                C[g] = X[members].mean(axis=0)
            else:
                far = int(cost.argmax())
                C[g] = X[far]
                cost[far] = 0.0
    return labels, trace


def kmeans(points, G: int, seed=0, restarts: int = 10, max_iter: int = 100,
           standardize: bool = False) -> Clustering:
    """Lloyd's algorithm from k-means++ starts; best of ``restarts`` by objective.

    ``trace`` holds the objective after each assignment step of the winning
    restart and is non-increasing.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] < 1 or X.shape[0] < G:
        raise ValueError("kmeans needs q >= 1 and n >= G")
    if standardize:
        sd = X.std(axis=0)
        X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    rng = make_rng(*as_key(seed), KMEANS)
    best = None
    for _ in range(restarts):
        labels, trace = _lloyd(X, _plusplus(X, G, rng), max_iter)
        if best is None or trace[-1] < best.objective:
            best = Clustering(labels + 1, trace[-1], trace)
    return best


def _pairs(v):
    v = np.asarray(v, dtype=float)
    return float((v * (v - 1) / 2).sum())


def ari(a, b) -> float:
    """Hubert-Arabie adjusted Rand index; 0 when the denominator vanishes."""
    a = np.asarray(getattr(a, "labels", a)).reshape(-1)
    b = np.asarray(getattr(b, "labels", b)).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("partitions must have equal length")
    n = a.shape[0]
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1)
    index = _pairs(table)
    sa, sb = _pairs(table.sum(axis=1)), _pairs(table.sum(axis=0))
    expected = sa * sb / (n * (n - 1) / 2) if n > 1 else 0.0
    denom = 0.5 * (sa + sb) - expected
    if denom == 0:
        return 0.0
    return (index - expected) / denom


def _cluster_ari(values, cols, labels, G, seed, standardize):
    if len(cols) == 0:
        return 0.0
    fit = kmeans(values[:, cols], G, seed=seed, standardize=standardize)
    return ari(fit, labels)


def bench_replication(sc: SimScenario, cfg: EmConfig, vartheta=0.35, fdr=0.01, rep=0,
                      standardize=True) -> dict:
    """One replication: simulate, screen both ways, cluster, score."""
    key = (*as_key(sc.seed), REPLICATION, rep)
    ds = generate(dataclasses.replace(sc, seed=key))
    family = make_family(sc.family_kind)
    em = screen(ds.data, family, cfg, vartheta=vartheta, fdr=fdr)
    gof = chisq_gof_screen(ds.data, family, fdr=fdr)
    X = ds.data.values
    out = {"S:EM": min_model_size(rank_features(em.statistic), ds.relevant),
           "S:Chi-square": min_model_size(rank_features(gof.statistic), ds.relevant)}
    chosen = {"EM-adjust": em.selected_fdr, "EM-0.35": em.selected_threshold,
              "Chi-square": gof.selected_fdr}
    for name, sel in chosen.items():
        out[f"R:{name}"], out[f"F:{name}"] = retained_counts(sel, ds.relevant)
    cols = {"No-Screening": list(range(X.shape[1])), "Oracle": ds.relevant, **chosen}
    for name in ARI_METHODS:
        out[f"ARI:{name}"] = _cluster_ari(X, cols[name], ds.labels, sc.G, key, standardize)
    return out


def _rep_task(args):
    return bench_replication(*args)


def summarize(rows):
    """Mean and sample standard deviation per metric key."""
    out = {}
    for k in rows[0]:
        v = np.array([r[k] for r in rows], dtype=float)
        out[k] = (float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0)
    return out


def bench_case(sc: SimScenario, cfg: EmConfig | None = None, vartheta=0.35, fdr=0.01, reps=1,
               threads=1, standardize=True):
    """Replicate ``bench_replication``; returns (per-rep rows, summary).

    The benchmark standardizes the columns handed to k-means. On raw counts
    a multi-restart k-means already recovers the clusters from all features
    at p = 500, which hides the cost of keeping irrelevant features.

    Replication ``rep`` uses the key (scenario seed, REPLICATION, rep), so the
    result does not depend on ``threads``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    cfg = cfg or EmConfig()
    tasks = [(sc, cfg, vartheta, fdr, rep, standardize) for rep in range(reps)]
    if threads > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(_rep_task, tasks))
    else:
        rows = [_rep_task(t) for t in tasks]
    return rows, summarize(rows)


def summary_table(summary) -> list:
    """Rows (method, S, S_sd, R, R_sd, F, F_sd, ARI, ARI_sd); blank where undefined."""
    table = []
    for method in ("EM-adjust", "EM-0.35", "Chi-square", "No-Screening", "Oracle"):
        row = {"method": method}
        s_key = "S:EM" if method.startswith("EM") else f"S:{method}"
        for metric, key in (("S", s_key), ("R", f"R:{method}"), ("F", f"F:{method}"),
                            ("ARI", f"ARI:{method}")):
            mean, sd = summary.get(key, (None, None))
            row[metric], row[f"{metric}_sd"] = mean, sd
        table.append(row)
    return table
