"""Penalized EM and the EM-test homogeneity statistic for one feature."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .families import (Family, check_support, compress, homogeneous_mle, logpdf_rows,
                       weighted_mle)
from .rng import FEATURE, INITIALS, make_rng


@dataclass(frozen=True)
class MixtureState:
    xi: np.ndarray  # (G, d) component parameters
    alpha: np.ndarray  # (G,) mixing proportions

    @property
    def G(self) -> int:
        return self.alpha.shape[0]


@dataclass(frozen=True)
class EmConfig:
    """Settings for the EM-test.

    ``initials`` overrides the default set of starting proportions; the
    uniform vector is always added when missing.
    """

    G: int = 5
    K: int = 100
    lam: float = 1e-5
    n_initials: int = 3
    initials: tuple | None = None
    inner_starts: int = 3
    init_iter: int = 50
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.G < 2:
            raise ValueError("G must be at least 2")
        if self.K < 1 or self.inner_starts < 1 or self.n_initials < 1:
            raise ValueError("K, inner_starts and n_initials must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def initial_alphas(self) -> list[np.ndarray]:
        uniform = np.full(self.G, 1.0 / self.G)
        if self.initials is not None:
            out = [np.asarray(a, dtype=float) for a in self.initials]
            for a in out:
                if a.shape != (self.G,) or abs(a.sum() - 1.0) > 1e-9 or a.min() < 1e-4:
                    raise ValueError(f"invalid initial proportions {a.tolist()}")
            if not any(np.allclose(a, uniform, rtol=0, atol=1e-12) for a in out):
                out.insert(0, uniform)
            return out
        out = [uniform]
        rng = make_rng(self.seed, INITIALS)
        for _ in range(self.n_initials - 1):
            a = np.maximum(rng.dirichlet(np.ones(self.G)), 0.05)
            out.append(a / a.sum())
        return out


@dataclass
class EmTestResult:
    statistic: float
    theta0_hat: np.ndarray
    best_state: MixtureState
    per_initial_stats: np.ndarray
    iterations_used: list = field(default_factory=list)
    boundary_flag: bool = False
    degenerate: bool = False


def penalty(alpha, lam: float) -> float:
    """lam * (sum log alpha_g + G log G); zero at the uniform vector."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ValueError("mixing proportions must be nonnegative")
    if np.any(alpha == 0):
        return -math.inf
    G = alpha.shape[0]
    return lam * (float(np.log(alpha).sum()) + G * math.log(G))


def _logf(family, xs, xi):
    return logpdf_rows(family, xs, xi)


def _log_mix(family, xs, state):
    z = np.log(state.alpha)[:, None] + _logf(family, xs, state.xi)
    m = z.max(axis=0)
    return z, m + np.log(np.exp(z - m).sum(axis=0))


def penalized_loglik(family: Family, xs, state: MixtureState, lam: float) -> float:
    xs = check_support(family, xs).reshape(-1)
    pen = penalty(state.alpha, lam)
    if xs.size == 0:
        return pen
    return float(_log_mix(family, xs, state)[1].sum()) + pen


def e_step(family: Family, xs, state: MixtureState) -> np.ndarray:
    """Posterior membership weights, one row per observation."""
    xs = check_support(family, xs).reshape(-1)
    z, lse = _log_mix(family, xs, state)
    return np.exp(z - lse).T


def m_step_alpha(weights, lam: float) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    n, G = weights.shape
    return (weights.sum(axis=0) + lam) / (n + G * lam)


def m_step_theta(family: Family, xs, weights, prev=None) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    xi = np.empty((weights.shape[1], family.d))
    for g in range(weights.shape[1]):
        p = None if prev is None else prev[g]
        xi[g] = weighted_mle(family, xs, weights[:, g], prev=p).theta
    return xi


def run_em(family: Family, xu, cnt, state: MixtureState, lam: float, max_iter: int,
           tol: float, update_alpha: bool = True):
    """Iterate penalized EM on compressed data.

    Returns (final_state, trace, boundary_hit) where ``trace[k]`` is the
    penalized log-likelihood after k updates.
    """
    xi = np.array(state.xi, dtype=float, order="C")
    alpha = np.array(state.alpha, dtype=float)
    trace = np.empty(max_iter + 1)
    k, flag = _backend.em_run(family.code, xu, cnt, xi, alpha, lam, max_iter, tol,
                              update_alpha, family.lower, family.upper, trace)
    return MixtureState(xi, alpha), trace[: k + 1], flag


def _start_points(family, xs, theta0, G, n_starts, rng):
    """Quantile-seeded component parameters; start 0 is unjittered."""
    q = np.quantile(xs, np.arange(1, G + 1) / (G + 1))
    starts = []
    for s in range(n_starts):
        z = rng.standard_normal(G) if s > 0 else np.zeros(G)
        xi = np.empty((G, family.d))
        if family.kind == "normal":
            sd = math.sqrt(theta0[1])
            xi[:, 0] = q + 0.25 * sd * z
            xi[:, 1] = theta0[1]
        else:
            floor = 0.1 * max(theta0[0], 1e-3)
            xi[:, 0] = np.maximum(q, floor) * np.exp(0.25 * z)
            if family.d == 2:
                xi[:, 1] = theta0[1]
        starts.append(np.clip(xi, family.lower, family.upper))
    starts.append(np.tile(theta0, (G, 1)))
    return starts


def em_init(family: Family, xs, alpha0, cfg: EmConfig, rng=None, theta0=None):
    """Best of several fits with the proportions frozen at ``alpha0``.

    Candidates are quantile-seeded starts plus the homogeneous fit; the
    winner has the largest penalized log-likelihood (first index on ties).
    Returns (state, boundary_hit).
    """
    xs = check_support(family, xs).reshape(-1)
    if rng is None:
        rng = make_rng(cfg.seed, FEATURE)
    if theta0 is None:
        theta0 = homogeneous_mle(family, xs).theta
    alpha0 = np.asarray(alpha0, dtype=float)
    xu, cnt = compress(xs)
    best, best_pl, hit = None, -math.inf, False
    for xi in _start_points(family, xs, theta0, alpha0.shape[0], cfg.inner_starts, rng):
        state, trace, flag = run_em(family, xu, cnt, MixtureState(xi, alpha0.copy()),
                                    cfg.lam, cfg.init_iter, cfg.tol, update_alpha=False)
        hit |= flag
        if trace[-1] > best_pl:
            best, best_pl = state, trace[-1]
    return best, hit


def em_test_statistic(family: Family, xs, cfg: EmConfig, key=None) -> EmTestResult:
    """EM-test statistic max_t 2{pl(xi^(K), alpha^(K)) - pl(theta0_hat..., uniform)}.

    ``key`` selects the random stream for start jitter (defaults to the
    config seed); screening passes (seed, feature index).
    """
    xs = check_support(family, xs).reshape(-1)
    n = xs.shape[0]
    if n < 2 * cfg.G:
        raise ValueError(f"need at least {2 * cfg.G} observations, got {n}")
    alphas = cfg.initial_alphas()
    uniform = np.full(cfg.G, 1.0 / cfg.G)
    fit0 = homogeneous_mle(family, xs)
    theta0 = fit0.theta
    if np.all(xs == xs[0]):
        state = MixtureState(np.tile(theta0, (cfg.G, 1)), uniform)
        return EmTestResult(0.0, theta0, state, np.zeros(len(alphas)),
                            [0] * len(alphas), True, True)

    xu, cnt = compress(xs)
    base = MixtureState(np.tile(theta0, (cfg.G, 1)), uniform)
    pl0 = float(np.dot(cnt, _logf(family, xu, theta0[None, :])[0]))
    rng = make_rng(*(key if key is not None else (cfg.seed, FEATURE)))
    stats, iters = [], []
    best_state, best_stat = base, -math.inf
    for alpha_t in alphas:
        start, _ = em_init(family, xs, alpha_t, cfg, rng=rng, theta0=theta0)
        state, trace, _ = run_em(family, xu, cnt, start, cfg.lam, cfg.K, cfg.tol)
        stat = 2.0 * (trace[-1] - pl0)
        stats.append(stat)
        iters.append(len(trace) - 1)
        if stat > best_stat:
            best_state, best_stat = state, stat
    return EmTestResult(float(best_stat), theta0, best_state, np.array(stats), iters,
                        bool(fit0.at_bound))
