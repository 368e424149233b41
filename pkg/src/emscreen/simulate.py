"""Benchmark data generators with known clusters and relevant features.

Draw order is fixed so that a scenario and seed give bit-identical data:
cluster labels, then per-feature parameters (one row of three uniforms per
feature, in index order), then the matrix entries in row-major order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import DATASET, as_key, make_rng
from .screening import DataMatrix

UNBALANCED = (0.5, 0.125, 0.125, 0.125, 0.125)

NB_NOISE = {"low": (10.0, 11.0), "high": (5.0, 6.0)}
NB_SIGNAL = {"low": (5.0, 6.0), "med": (7.0, 8.0), "high": (9.0, 10.0)}
NORMAL_CASES = {
    # sigma range, shift range, proportions
    "balanced": ((1.0, 1.5), (10.0, 11.0), (0.2,) * 5),
    "unbalanced": ((1.0, 2.0), (3.0, 4.0), UNBALANCED),
}
# numbered cases of the negative-binomial study
CASE_ALIASES = {
    "case1": "nb-high-low", "case2": "nb-high-high", "case3": "nb-med-low",
    "case4": "nb-med-high", "case5": "nb-low-low", "case6": "nb-low-high",
}


@dataclass(frozen=True)
class SimScenario:
    family_kind: str
    case_id: str
    p: int = 500
    n: int = 1000
    s: int = 20
    G: int = 5
    alpha_true: tuple = UNBALANCED
    seed: int | tuple = 0  # int or key tuple

    def __post_init__(self):
        if len(self.alpha_true) != self.G or abs(sum(self.alpha_true) - 1) > 1e-12:
            raise ValueError("alpha_true must be a probability vector of length G")
        if not 1 <= self.s <= self.p:
            raise ValueError("need 1 <= s <= p")


@dataclass
class SimDataset:
    data: DataMatrix
    labels: np.ndarray  # 1..G
    relevant: list  # 0-based feature indices
    truth_params: dict = field(default_factory=dict)


def scenario(case: str, p=500, n=1000, seed=0, s=20) -> SimScenario:
    """Build a scenario from a name like ``nb-med-high``, ``case4`` or ``normal-balanced``."""
    case = CASE_ALIASES.get(case, case)
    parts = case.split("-")
    if parts[0] == "nb" and len(parts) == 3 and parts[1] in NB_SIGNAL and parts[2] in NB_NOISE:
        return SimScenario("negbin", case, p, n, s, 5, UNBALANCED, seed)
    if parts[0] == "normal" and len(parts) == 2 and parts[1] in NORMAL_CASES:
        return SimScenario("normal", case, p, n, s, 5, NORMAL_CASES[parts[1]][2], seed)
    raise ValueError(f"unknown simulation case {case!r}")


def elevated_cluster(j: int, G: int) -> int:
    """0-based cluster whose mean is raised for relevant feature j (blocks of five)."""
    return (j // 5) % (G - 1) + 1


def _labels(sc, rng):
    return rng.choice(sc.G, size=sc.n, p=np.asarray(sc.alpha_true)) + 1


def gen_nb_case(sc: SimScenario) -> SimDataset:
    if sc.family_kind != "negbin":
        raise ValueError("scenario is not a negative-binomial case")
    _, signal, noise = sc.case_id.split("-")
    rng = make_rng(*as_key(sc.seed), DATASET)
    labels = _labels(sc, rng)
    U = rng.random((sc.p, 3))
    r_lo, r_hi = NB_NOISE[noise]
    d_lo, d_hi = NB_SIGNAL[signal]
    r = r_lo + (r_hi - r_lo) * U[:, 0]
    base = np.exp(math.log(2.0) + (math.log(5.0) - math.log(2.0)) * U[:, 1])
    shift = d_lo + (d_hi - d_lo) * U[:, 2]
    mu = np.tile(base, (sc.G, 1))
    for j in range(sc.s):
        mu[elevated_cluster(j, sc.G), j] += shift[j]
    means = mu[labels - 1]
    x = rng.poisson(rng.gamma(r, means / r))
    return SimDataset(DataMatrix(x.astype(float), [f"f{j + 1}" for j in range(sc.p)], "count"),
                      labels, list(range(sc.s)), {"mu": mu, "r": r})


def gen_normal_case(sc: SimScenario) -> SimDataset:
    if sc.family_kind != "normal":
        raise ValueError("scenario is not a normal case")
    (s_lo, s_hi), (d_lo, d_hi), _ = NORMAL_CASES[sc.case_id.split("-")[1]]
    rng = make_rng(*as_key(sc.seed), DATASET)
    labels = _labels(sc, rng)
    U = rng.random((sc.p, 3))
    sigma = s_lo + (s_hi - s_lo) * U[:, 0]
    base = -5.0 + 10.0 * U[:, 1]
    shift = d_lo + (d_hi - d_lo) * U[:, 2]
    mu = np.tile(base, (sc.G, 1))
    for j in range(sc.s):
        mu[elevated_cluster(j, sc.G), j] += shift[j]
    x = mu[labels - 1] + sigma * rng.standard_normal((sc.n, sc.p))
    return SimDataset(DataMatrix(x, [f"f{j + 1}" for j in range(sc.p)], "continuous"),
                      labels, list(range(sc.s)), {"mu": mu, "sigma": sigma})


def generate(sc: SimScenario) -> SimDataset:
    return gen_nb_case(sc) if sc.family_kind == "negbin" else gen_normal_case(sc)
