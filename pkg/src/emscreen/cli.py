"""Command-line entry point: screen, simulate, bench, null-calibrate.

Exit codes: 0 success, 2 input or flag error, 3 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
import traceback

import numpy as np

from .emtest import EmConfig
from .evalmetrics import bench_case, summary_table
from .families import DomainError, make_family, sample
from .rng import DATASET, make_rng
from .screening import (PVALUE_METHODS, DataMatrix, IngestError, default_threads,
                        downsample_counts, feature_statistics, screen)
from .simulate import generate, scenario

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3
LEVELS = (0.10, 0.05, 0.01)


class InputError(Exception):
    """Bad flags or unreadable input; maps to exit code 2."""


# ---------------------------------------------------------------- ingestion

def _parse_cell(text, line, col, kind):
    try:
        v = float(text)
    except ValueError:
        raise IngestError(f"line {line}, column {col}: cannot parse {text!r} as a number") from None
    if not math.isfinite(v):
        raise IngestError(f"line {line}, column {col}: missing or non-finite value {text!r}")
    if kind == "count" and (v < 0 or v != math.floor(v)):
        raise IngestError(f"line {line}, column {col}: {text!r} is not a nonnegative integer count")
    return v


def read_csv(path, kind="count", transpose=False, batch_column=None):
    """CSV with a header row; samples as rows unless ``transpose``.

    Transposed files hold one feature per row with its name in the first
    column; the header row then names the samples and is not used.
    Returns (DataMatrix, batch labels or None).
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [(k + 2, r) for k, r in enumerate(rows[1:]) if r]
    if transpose:
        if batch_column is not None:
            raise IngestError("--batch-column needs samples as rows")
        names, cols = [], []
        for line, r in body:
            if len(r) != len(header):
                raise IngestError(f"line {line}: expected {len(header)} fields, got {len(r)}")
            names.append(r[0].strip())
            cols.append([_parse_cell(c, line, header[k + 1], kind) for k, c in enumerate(r[1:])])
        values = np.array(cols, dtype=float).T if cols else np.zeros((len(header) - 1, 0))
        return DataMatrix(values, names, kind), None
    batch_idx = None
    if batch_column is not None:
        if batch_column not in header:
            raise IngestError(f"batch column {batch_column!r} not in header")
        batch_idx = header.index(batch_column)
    keep = [k for k in range(len(header)) if k != batch_idx]
    values, batches = [], []
    for line, r in body:
        if len(r) != len(header):
            raise IngestError(f"line {line}: expected {len(header)} fields, got {len(r)}")
        values.append([_parse_cell(r[k], line, header[k], kind) for k in keep])
        if batch_idx is not None:
            batches.append(r[batch_idx].strip())
    values = np.array(values, dtype=float).reshape(len(values), len(keep))
    return DataMatrix(values, [header[k] for k in keep], kind), (batches if batch_idx is not None else None)


def read_mtx(path, kind="count", transpose=False):
    """MatrixMarket coordinate file; rows are features unless ``transpose``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].lower().startswith("%%matrixmarket"):
        raise IngestError(f"{path}: line 1: missing %%MatrixMarket banner")
    banner = lines[0].lower().split()
    if len(banner) < 5 or banner[1] != "matrix" or banner[2] != "coordinate":
        raise IngestError(f"{path}: line 1: only 'matrix coordinate' files are supported")
    if banner[3] not in ("integer", "real") or banner[4] != "general":
        raise IngestError(f"{path}: line 1: field must be integer or real with general symmetry")
    k = 1
    while k < len(lines) and (not lines[k].strip() or lines[k].lstrip().startswith("%")):
        k += 1
    try:
        nr, nc, nnz = (int(t) for t in lines[k].split())
    except (IndexError, ValueError):
        raise IngestError(f"{path}: line {k + 1}: bad size line") from None
    M = np.zeros((nr, nc))
    seen = 0
    for ln in range(k + 1, len(lines)):
        parts = lines[ln].split()
        if not parts or parts[0].startswith("%"):
            continue
        if len(parts) != 3:
            raise IngestError(f"{path}: line {ln + 1}: expected 'row col value'")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise IngestError(f"{path}: line {ln + 1}: bad coordinates") from None
        if not (1 <= i <= nr and 1 <= j <= nc):
            raise IngestError(f"{path}: line {ln + 1}: entry ({i}, {j}) outside {nr} x {nc}")
        M[i - 1, j - 1] += _parse_cell(parts[2], ln + 1, j, kind)
        seen += 1
    if seen != nnz:
        raise IngestError(f"{path}: header declares {nnz} entries, found {seen}")
    values = M if transpose else M.T
    return DataMatrix(values, None, kind)


def ingest(path, fmt=None, transpose=False, kind="count", batch_column=None):
    fmt = fmt or ("mtx" if str(path).endswith(".mtx") else "csv")
    if not os.path.exists(path):
        raise InputError(f"input file not found: {path}")
    if fmt == "csv":
        return read_csv(path, kind, transpose, batch_column)
    if batch_column is not None:
        raise InputError("--batch-column is only available for CSV input")
    return read_mtx(path, kind, transpose), None


# ---------------------------------------------------------------- output

def canonical_json(obj) -> str:
    """Sorted keys, shortest round-trip floats; re-serializing is byte-identical."""
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n"


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else repr(_num(v)) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------- commands

def _em_config(a) -> EmConfig:
    return EmConfig(G=a.G, K=a.K, lam=a.lam, n_initials=a.initials, inner_starts=a.inner_starts,
                    seed=a.seed)


def _validate(a):
    for name in ("G", "K", "initials", "inner_starts"):
        if getattr(a, name, 1) < 1:
            raise InputError(f"--{name.replace('_', '-')} must be positive")
    if getattr(a, "G", 2) < 2:
        raise InputError("--G must be at least 2")
    if getattr(a, "lam", 1.0) <= 0:
        raise InputError("--lambda must be positive")
    if not 0 < getattr(a, "vartheta", 0.5) < 1:
        raise InputError("--vartheta must lie in (0, 1)")
    if not 0 < getattr(a, "fdr", 0.5) < 1:
        raise InputError("--fdr must lie in (0, 1)")
    if getattr(a, "seed", 0) < 0:
        raise InputError("--seed must be nonnegative")
    if getattr(a, "threads", 1) < 1:
        raise InputError("--threads must be positive")
    if getattr(a, "pvalue_method", "chisq") == "montecarlo":
        if a.n_mc < 1000:
            raise InputError("--n-mc must be at least 1000")
        if getattr(a, "family", None) == "normal":
            raise InputError("the normal family supports only --pvalue-method chisq")


def cmd_screen(a):
    _validate(a)
    if a.downsample is not None and a.downsample < 1:
        raise InputError("--downsample must be positive")
    family = make_family(a.family)
    kind = "continuous" if a.family == "normal" else "count"
    a.format = a.format or ("mtx" if a.input.endswith(".mtx") else "csv")
    data, batches = ingest(a.input, a.format, a.transpose, kind, a.batch_column)
    if a.downsample is not None:
        data = downsample_counts(data, a.downsample, a.seed)
    cfg = _em_config(a)
    if data.n < 2 * cfg.G:
        raise InputError(f"need at least {2 * cfg.G} samples, found {data.n}")
    t0 = time.perf_counter()
    rep = screen(data, family, cfg, vartheta=a.vartheta, fdr=a.fdr, pvalue_method=a.pvalue_method,
                 n_mc=a.n_mc, threads=a.threads, batches=batches)
    elapsed = time.perf_counter() - t0
    names = data.names()
    config = dict(rep.config, command="screen", input=a.input, format=a.format, transpose=a.transpose,
                  downsample=a.downsample, batch_column=a.batch_column, n=data.n, p=data.p)
    report = {
        "per_feature": [
            {"index": j, "name": names[j], "statistic": float(rep.statistic[j]),
             "pvalue": float(rep.pvalue[j]), "pvalue_adjusted": float(rep.pvalue_adjusted[j]),
             "flag": bool(rep.boundary_flag[j])}
            for j in range(data.p)
        ],
        "selected_threshold": rep.selected_threshold,
        "selected_fdr": rep.selected_fdr,
        "threshold": rep.threshold,
        "config": config,
        "wallclock": elapsed if a.timing else None,
    }
    atomic_write(a.output, canonical_json(report))
    print(f"screened {data.p} features: {len(rep.selected_fdr)} selected at FDR {a.fdr}"
          + ("" if rep.threshold is None else
             f", {len(rep.selected_threshold)} with statistic >= {rep.threshold:.4g}"))


def cmd_simulate(a):
    if a.p < 1 or a.n < 1 or a.seed < 0:
        raise InputError("--p, --n must be positive and --seed nonnegative")
    try:
        sc = scenario(a.case, p=a.p, n=a.n, seed=a.seed, s=min(a.s, a.p))
    except ValueError as e:
        raise InputError(str(e)) from None
    ds = generate(sc)
    X = ds.data.values
    if ds.data.kind == "count":
        rows = X.astype(np.int64).tolist()
    else:
        rows = [[repr(float(v)) for v in r] for r in X]
    prefix = os.path.join(a.outdir, a.prefix)
    atomic_write(prefix + "_data.csv", _csv_text(ds.data.names(), rows))
    atomic_write(prefix + "_labels.csv", _csv_text(["label"], [[int(v)] for v in ds.labels]))
    truth = {
        "config": {"command": "simulate", "case": sc.case_id, "family": sc.family_kind, "p": sc.p,
                   "n": sc.n, "s": sc.s, "G": sc.G, "seed": a.seed},
        "alpha": list(sc.alpha_true),
        "relevant": ds.relevant,
        "params": {k: np.asarray(v).tolist() for k, v in ds.truth_params.items()},
    }
    atomic_write(prefix + "_truth.json", canonical_json(truth))
    print(f"wrote {prefix}_data.csv ({sc.n} x {sc.p}), labels and truth")


def cmd_bench(a):
    _validate(a)
    if a.reps < 1:
        raise InputError("--reps must be at least 1")
    try:
        sc = scenario(a.case, p=a.p, n=a.n, seed=a.seed)
    except ValueError as e:
        raise InputError(str(e)) from None
    cfg = _em_config(a)
    rows, summary = bench_case(sc, cfg, vartheta=a.vartheta, fdr=a.fdr, reps=a.reps,
                               threads=a.threads, standardize=not a.raw_kmeans)
    table = summary_table(summary)
    cols = ["method", "S", "S_sd", "R", "R_sd", "F", "F_sd", "ARI", "ARI_sd"]
    atomic_write(a.output, _csv_text(cols, [[r[c] for c in cols] for r in table]))
    side = os.path.splitext(a.output)[0] + ".json"
    config = {"command": "bench", "case": sc.case_id, "p": sc.p, "n": sc.n, "reps": a.reps,
              "seed": a.seed, "G": cfg.G, "K": cfg.K, "lam": cfg.lam, "n_initials": cfg.n_initials,
              "inner_starts": cfg.inner_starts, "vartheta": a.vartheta, "fdr": a.fdr,
              "kmeans_standardize": not a.raw_kmeans}
    atomic_write(side, canonical_json({"config": config, "summary": table,
                                       "replications": [{k: _num(v) for k, v in r.items()} for r in rows]}))
    for r in table:
        print(",".join("" if r[c] is None else (f"{r[c]:.3f}" if isinstance(r[c], float) else r[c])
                       for c in cols))


def cmd_null(a):
    _validate(a)
    if a.features < 1 or a.n < 2 * a.G:
        raise InputError("--features must be positive and --n at least 2G")
    family = make_family(a.family)
    try:
        theta = np.array(a.theta, dtype=float)
        sample(family, theta, 1, make_rng(0))
    except DomainError as e:
        raise InputError(str(e)) from None
    rng = make_rng(a.seed, DATASET)
    X = sample(family, theta, (a.n, a.features), rng)
    cfg = _em_config(a)
    stat, pval, _ = feature_statistics(X, family, cfg, a.pvalue_method, a.n_mc, a.threads)
    table = [{"level": lv, "rejected": int(np.sum(pval < lv)), "rate": float(np.mean(pval < lv))}
             for lv in LEVELS]
    config = {"command": "null-calibrate", "family": a.family, "theta": theta.tolist(), "n": a.n,
              "features": a.features, "seed": a.seed, "G": cfg.G, "K": cfg.K, "lam": cfg.lam,
              "n_initials": cfg.n_initials, "inner_starts": cfg.inner_starts,
              "pvalue_method": a.pvalue_method,
              "n_mc": a.n_mc if a.pvalue_method == "montecarlo" else None}
    out = {"config": config, "type1": table, "zero_fraction": float(np.mean(stat <= 1e-9))}
    atomic_write(a.output, canonical_json(out))
    for r in table:
        print(f"level {r['level']:.2f}: rejection rate {r['rate']:.4f} ({r['rejected']}/{a.features})")


# ---------------------------------------------------------------- parser

def _em_flags(p):
    p.add_argument("--G", type=int, default=5, help="number of mixture components")
    p.add_argument("--K", type=int, default=100, help="EM iterations after initialization")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-5, help="penalty weight")
    p.add_argument("--initials", type=int, default=3, help="number of initial proportion vectors")
    p.add_argument("--inner-starts", type=int, default=3)
    p.add_argument("--vartheta", type=float, default=0.35, help="threshold exponent, t_n = n**vartheta")
    p.add_argument("--fdr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=default_threads(),
                   help="worker processes (default: $EMSCREEN_THREADS or 1)")


def build_parser():
    ap = argparse.ArgumentParser(prog="emscreen", description="EM-test screening of mixture features")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("screen", help="screen the features of a data matrix")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True, help="JSON report path")
    p.add_argument("--format", choices=("csv", "mtx"), default=None)
    p.add_argument("--transpose", action="store_true", help="flip the file's default orientation")
    p.add_argument("--family", choices=("poisson", "negbin", "normal"), default="negbin")
    p.add_argument("--pvalue-method", choices=PVALUE_METHODS, default="chisq")
    p.add_argument("--n-mc", type=int, default=2000)
    p.add_argument("--downsample", type=int, default=None, help="thin each sample to this total")
    p.add_argument("--batch-column", default=None, help="CSV column holding batch labels")
    p.add_argument("--timing", action="store_true", help="record wallclock in the report")
    _em_flags(p)
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("simulate", help="write a benchmark dataset")
    p.add_argument("--case", required=True, help="nb-<signal>-<noise>, case1..case6, normal-<balanced|unbalanced>")
    p.add_argument("--p", type=int, default=500)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--s", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", default=".")
    p.add_argument("--prefix", default="sim")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="replicated screening and clustering benchmark")
    p.add_argument("--case", required=True)
    p.add_argument("--p", type=int, default=500)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--raw-kmeans", action="store_true", help="cluster unstandardized features")
    p.add_argument("-o", "--output", required=True, help="summary CSV path (config goes to .json)")
    _em_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("null-calibrate", help="type-I error on homogeneous features")
    p.add_argument("--family", choices=("poisson", "negbin", "normal"), default="poisson")
    p.add_argument("--theta", type=float, nargs="+", default=[3.0])
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--features", type=int, default=2000)
    p.add_argument("--pvalue-method", choices=PVALUE_METHODS, default="chisq")
    p.add_argument("--n-mc", type=int, default=2000)
    p.add_argument("-o", "--output", required=True, help="JSON table path")
    _em_flags(p)
    p.set_defaults(func=cmd_null)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT
    try:
        a.func(a)
    except (InputError, IngestError, DomainError, OSError) as e:
        print(f"emscreen: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
