"""Parametric families used for the per-feature mixture models.

Three families are supported:

``poisson``  theta = (mean,)
``negbin``   theta = (mean mu, size r); Var = mu + mu**2 / r
``normal``   theta = (mean, variance)

Parameters live in a closed box; fits are clamped to it and report when the
clamp was active instead of raising, so that a single pathological feature
never stops a screening run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import digamma, polygamma

from . import _backend

KIND_CODES = {"poisson": 0, "negbin": 1, "normal": 2}
DIMENSION = {"poisson": 1, "negbin": 2, "normal": 2}
DEFAULT_BOUNDS = {
    "poisson": ((1e-6, 1e6),),
    "negbin": ((1e-6, 1e6), (1e-3, 1e4)),
    "normal": ((-1e6, 1e6), (1e-8, 1e6)),
}


class DomainError(ValueError):
    """An observation or parameter lies outside the family's domain."""


@dataclass(frozen=True)
class Family:
    kind: str
    bounds: tuple

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ValueError(f"unknown family {self.kind!r}")
        if len(self.bounds) != DIMENSION[self.kind]:
            raise ValueError(f"{self.kind} needs {DIMENSION[self.kind]} bound pairs")
        for lo, hi in self.bounds:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"invalid bound pair ({lo}, {hi})")
        if self.kind in ("poisson", "negbin") and any(lo <= 0 for lo, _ in self.bounds):
            raise ValueError(f"{self.kind} bounds must be strictly positive")

    @property
    def d(self) -> int:
        return DIMENSION[self.kind]

    @property
    def m(self) -> int:
        """Length of the second-order part of the derivative bundle."""
        return self.d * (self.d + 1) // 2

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def lower(self) -> np.ndarray:
        return np.array([b[0] for b in self.bounds], dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.array([b[1] for b in self.bounds], dtype=float)

    @property
    def discrete(self) -> bool:
        return self.kind != "normal"


def make_family(kind: str, bounds=None) -> Family:
    if kind not in KIND_CODES:
        raise ValueError(f"unknown family {kind!r}")
    return Family(kind, tuple(tuple(map(float, b)) for b in (bounds or DEFAULT_BOUNDS[kind])))


class Fit(NamedTuple):
    theta: np.ndarray
    at_bound: bool


class DerivBundle(NamedTuple):
    b1: np.ndarray  # (..., d)   score ratios Y_h
    b2: np.ndarray  # (..., m)   Z_h then U_hl (h < l)


def check_theta(family: Family, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != family.d:
        raise DomainError(f"{family.kind} parameter must have length {family.d}")
    if np.any(theta < family.lower) or np.any(theta > family.upper) or not np.all(np.isfinite(theta)):
        raise DomainError(f"parameter {theta.tolist()} outside {family.kind} bounds")
    return theta


def check_support(family: Family, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("observations must be finite")
    if family.discrete and (np.any(x < 0) or np.any(x != np.floor(x))):
        raise DomainError(f"{family.kind} observations must be nonnegative integers")
    return x


def compress(xs, ws=None):
    """Collapse a sample to sorted unique values with summed weights."""
    xs = np.asarray(xs, dtype=float).reshape(-1)
    if ws is None:
        xu, cnt = np.unique(xs, return_counts=True)
        return xu, cnt.astype(float)
    ws = np.asarray(ws, dtype=float).reshape(-1)
    xu, inv = np.unique(xs, return_inverse=True)
    return xu, np.bincount(inv, weights=ws, minlength=xu.shape[0])


def logpdf_rows(family: Family, xs, xi) -> np.ndarray:
    """log f(xs; xi_g) as a (G, n) array for arbitrary (unsorted) xs.

    The kernels expect sorted unique support points, so evaluate there and
    scatter back.
    """
    xu, inv = np.unique(np.asarray(xs, dtype=float).ravel(), return_inverse=True)
    out = _backend.logpdf_matrix(family.code, xu, np.ascontiguousarray(xi, dtype=float))
    return out[:, inv]


def log_pdf(family: Family, theta, x):
    """log f(x; theta); vectorized over ``x``."""
    theta = check_theta(family, theta)
    x = check_support(family, x)
    out = logpdf_rows(family, np.atleast_1d(x), theta[None, :])[0]
    return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])


def _log_derivs(family, theta, x):
    """First and second partials of log f at theta.

    Returns (g, H) with g[..., h] = d log f / d theta_h and
    H[..., h, l] = d^2 log f / d theta_h d theta_l.
    """
    d = family.d
    g = np.empty(x.shape + (d,))
    H = np.empty(x.shape + (d, d))
    if family.kind == "poisson":
        (mu,) = theta
        g[..., 0] = x / mu - 1.0
        H[..., 0, 0] = -x / mu**2
    elif family.kind == "negbin":
        mu, r = theta
        s = r + mu
        g[..., 0] = x / mu - (r + x) / s
        g[..., 1] = digamma(r + x) - digamma(r) + math.log(r / s) + 1.0 - (r + x) / s
        H[..., 0, 0] = -x / mu**2 + (r + x) / s**2
        H[..., 1, 1] = (polygamma(1, r + x) - polygamma(1, r) + 1.0 / r - 1.0 / s
                        - (mu - x) / s**2)
        H[..., 0, 1] = H[..., 1, 0] = (x - mu) / s**2
    else:
        mu, v = theta
        e = x - mu
        g[..., 0] = e / v
        g[..., 1] = -0.5 / v + 0.5 * e**2 / v**2
        H[..., 0, 0] = -1.0 / v
        H[..., 1, 1] = 0.5 / v**2 - e**2 / v**3
        H[..., 0, 1] = H[..., 1, 0] = -e / v**2
    return g, H


def deriv_bundle(family: Family, theta0, x) -> DerivBundle:
    """Density-derivative ratios at ``theta0`` for each observation.

    b1 = (f_h / f), b2 = (f_hh / 2f for each h, then f_hl / f for h < l),
    obtained from the log-density partials via f_hl / f = H_hl + g_h g_l.
    """
    theta0 = check_theta(family, theta0)
    x = check_support(family, x)
    g, H = _log_derivs(family, theta0, x)
    d = family.d
    second = H + g[..., :, None] * g[..., None, :]
    cols = [0.5 * second[..., h, h] for h in range(d)]
    cols += [second[..., h, l] for h in range(d) for l in range(h + 1, d)]
    return DerivBundle(g, np.stack(cols, axis=-1))


def weighted_mle(family: Family, xs, ws, prev=None) -> Fit:
    """Maximize sum_i w_i log f(x_i; theta) over the parameter box.

    Poisson and normal use closed forms; negbin profiles mu at the weighted
    mean and searches log r by golden section. ``at_bound`` reports that the
    optimum was clamped to the box (e.g. zero variance).
    """
    xs = check_support(family, xs).reshape(-1)
    ws = np.asarray(ws, dtype=float).reshape(-1)
    if ws.shape != xs.shape:
        raise ValueError("xs and ws must have equal length")
    if np.any(ws < 0) or not ws.sum() > 0:
        raise ValueError("weights must be nonnegative with positive sum")
    # normalized weights keep the r-search objective on one scale
    xu, wu = compress(xs, ws / ws.sum())
    theta, flag = _backend.fit_theta(family.code, xu, wu, family.lower, family.upper, prev)
    return Fit(theta, flag)


def homogeneous_mle(family: Family, xs) -> Fit:
    xs = np.asarray(xs, dtype=float).reshape(-1)
    return weighted_mle(family, xs, np.ones_like(xs))


def weighted_loglik(family: Family, theta, xs, ws) -> float:
    return float(np.dot(ws, log_pdf(family, theta, np.asarray(xs, dtype=float).reshape(-1))))


def sample(family: Family, theta, size, rng):
    """Draw observations; negbin uses the gamma-Poisson representation."""
    theta = check_theta(family, theta)
    if family.kind == "poisson":
        return rng.poisson(theta[0], size=size).astype(float)
    if family.kind == "negbin":
        mu, r = theta
        return rng.poisson(rng.gamma(r, mu / r, size=size)).astype(float)
    return rng.normal(theta[0], math.sqrt(theta[1]), size=size)


__all__ = [
    "DomainError", "Family", "Fit", "DerivBundle", "make_family", "log_pdf",
    "deriv_bundle", "weighted_mle", "homogeneous_mle", "weighted_loglik",
    "compress", "check_theta", "check_support", "sample",
]
