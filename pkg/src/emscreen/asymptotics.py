"""Null distribution of the EM-test statistic.

The limiting law is sup_{v in V} 2 v'w - v'Bv with w ~ N(0, B), where B is
the residual covariance of the second-order derivative bundle and V the
vech of PSD d x d matrices of rank <= r. A chi-square(d(d+1)/2) bound on it
is always available and is the default p-value route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .families import Family, check_support, check_theta, deriv_bundle
from .rng import CONE, LIMIT_LAW, as_key, make_rng


@dataclass(frozen=True)
class BMatrices:
    B11: np.ndarray
    B12: np.ndarray
    B22: np.ndarray
    B22_tilde: np.ndarray
    singular: bool = False


@dataclass(frozen=True)
class LimitSample:
    draws: np.ndarray  # sorted ascending
    r: int
    n_mc: int

    @property
    def zero_fraction(self) -> float:
        return float(np.mean(self.draws == 0.0))


def dim_from_m(m: int) -> int:
    d = int(round((math.sqrt(8 * m + 1) - 1) / 2))
    if d * (d + 1) // 2 != m:
        raise ValueError(f"{m} is not a triangular number")
    return d


def vech(V: np.ndarray) -> np.ndarray:
    """Diagonal first, then upper off-diagonals row by row."""
    d = V.shape[-1]
    iu = np.triu_indices(d, 1)
    return np.concatenate([np.diagonal(V, axis1=-2, axis2=-1), V[..., iu[0], iu[1]]], axis=-1)


def unvech(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    d = dim_from_m(v.shape[-1])
    V = np.zeros(v.shape[:-1] + (d, d))
    idx = np.arange(d)
    V[..., idx, idx] = v[..., :d]
    iu = np.triu_indices(d, 1)
    V[..., iu[0], iu[1]] = v[..., d:]
    V[..., iu[1], iu[0]] = v[..., d:]
    return V


def estimate_b_matrices(family: Family, theta0_hat, xs) -> BMatrices:
    """Empirical covariance blocks of the derivative bundle at the null fit."""
    theta0_hat = check_theta(family, theta0_hat)
    xs = check_support(family, xs).reshape(-1)
    b1, b2 = deriv_bundle(family, theta0_hat, xs)
    d = family.d
    b = np.concatenate([b1, b2], axis=1)
    b = b - b[0]  # shift first so identical rows cancel exactly
    b = b - b.mean(axis=0)
    B = b.T @ b / b.shape[0]
    B = 0.5 * (B + B.T)
    B11, B12, B22 = B[:d, :d], B[:d, d:], B[d:, d:]
    singular = False
    if not np.linalg.cond(B11) <= 1e12:
        B11_inv_src = B11 + 1e-10 * np.eye(d)
        singular = True
    else:
        B11_inv_src = B11
    tilde = B22 - B12.T @ np.linalg.solve(B11_inv_src, B12)
    tilde = 0.5 * (tilde + tilde.T)
    return BMatrices(B11, B12, B22, tilde, singular)


def _quad(v, w, B):
    return 2.0 * v @ w - v @ B @ v


def _unconstrained(W, B, r):
    """Value of the unconstrained maximizer where it lies in the cone, else -inf."""
    Binv = np.linalg.pinv(B, hermitian=True)
    V = W @ Binv
    vals = np.einsum("ij,ij->i", V, W)
    eig = np.linalg.eigvalsh(unvech(V))
    scale = np.maximum(np.abs(eig).max(axis=1), 1e-300)
    ok = eig.min(axis=1) >= -1e-10 * scale
    ok &= (eig > 1e-10 * scale[:, None]).sum(axis=1) <= r
    # W outside the range of a singular B gives no finite maximizer here
    ok &= np.abs(W - V @ B).max(axis=1) <= 1e-8 * (1.0 + np.abs(W).max(axis=1))
    return np.where(ok, vals, -np.inf)


def _rank1_profile_2d(W, B):
    """max over unit u of (e'w)_+^2 / e'Be with e = vech(uu'), d = 2.

    Scaling along a ray is solved in closed form, leaving one angle, which
    is scanned on a grid and refined by vectorized golden section.
    """
    tiny = 1e-14 * max(float(np.trace(B)), 1e-300)

    def h(phi):
        E = np.stack([np.cos(phi) ** 2, np.sin(phi) ** 2, np.cos(phi) * np.sin(phi)], axis=-1)
        Wb = W if phi.ndim == 1 else W[:, None, :]
        num = np.maximum((E * Wb).sum(axis=-1), 0.0)
        den = np.einsum("...k,kl,...l->...", E, B, E)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den > tiny, num * num / den, 0.0)

    grid = np.linspace(0.0, math.pi, 721)[:-1]
    step = grid[1] - grid[0]
    vals = h(np.broadcast_to(grid, (W.shape[0], grid.size)))
    k = vals.argmax(axis=1)
    best = vals[np.arange(W.shape[0]), k]
    a = grid[k] - step
    b = grid[k] + step
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    dd = a + invphi * (b - a)
    fc, fd = h(c), h(dd)
    for _ in range(60):
        left = fc >= fd
        b = np.where(left, dd, b)
        a = np.where(left, a, c)
        c_new = np.where(left, b - invphi * (b - a), dd)
        d_new = np.where(left, c, a + invphi * (b - a))
        fc, fd = np.where(left, h(c_new), fd), np.where(left, fc, h(d_new))
        c, dd = c_new, d_new
    return np.maximum(best, np.maximum(fc, fd))


def _closed_form_batch(W, B, r):
    """Exact supremum for d <= 2 over a batch of w rows."""
    m = B.shape[0]
    if m == 1:
        b = B[0, 0]
        w = np.maximum(W[:, 0], 0.0)
        if b <= 0:
            return np.where(w > 0, np.inf, 0.0)
        return w * w / b
    vals = np.maximum(_unconstrained(W, B, r), 0.0)
    return np.maximum(vals, _rank1_profile_2d(W, B))


def _qn_search(w, B, d, r, starts, rng):
    """Multi-start BFGS over V = AA' with A of shape d x r."""
    iu = np.triu_indices(d, 1)

    def negq(a):
        A = a.reshape(d, r)
        V = A @ A.T
        v = vech(V)
        g = 2.0 * w - 2.0 * B @ v
        M = np.diag(g[:d])
        M[iu] = 0.5 * g[d:]
        M[(iu[1], iu[0])] = 0.5 * g[d:]
        return -_quad(v, w, B), -(2.0 * M @ A).ravel()

    best = 0.0
    scale = math.sqrt(max(np.abs(w).max(), 1e-12) / max(np.abs(np.diag(B)).max(), 1e-12))
    for _ in range(starts):
        a0 = rng.standard_normal(d * r) * scale
        res = optimize.minimize(negq, a0, jac=True, method="BFGS",
                                options={"gtol": 1e-10, "maxiter": 500})
        best = max(best, -float(res.fun))
    return best


def cone_sup(w, B22_tilde, r: int, starts: int = 10, seed: int = 0) -> float:
    """sup over PSD V with rank <= r of 2 vech(V)'w - vech(V)' B vech(V).

    Candidates: v = 0, the unconstrained maximizer when it is feasible, the
    exact rank-one/closed-form solution for d <= 2, and ``starts`` seeded
    quasi-Newton runs over the factor A of V = AA'.
    """
    w = np.asarray(w, dtype=float).reshape(-1)
    B = np.asarray(B22_tilde, dtype=float)
    d = dim_from_m(w.shape[0])
    if r < 1:
        raise ValueError("rank cap must be at least 1")
    r = min(r, d)
    if d <= 2:
        best = float(_closed_form_batch(w[None, :], B, r)[0])
        if d == 1 or starts == 0:
            return best
    else:
        best = max(0.0, float(np.maximum(_unconstrained(w[None, :], B, r), 0.0)[0]))
    if starts > 0:
        best = max(best, _qn_search(w, B, d, r, starts, make_rng(*as_key(seed), CONE)))
    return best


def _normal_draws(B, n_mc, rng):
    m = B.shape[0]
    z = rng.standard_normal((n_mc, m))
    try:
        L = np.linalg.cholesky(B)
    except np.linalg.LinAlgError:
        lam, Q = np.linalg.eigh(B)
        L = Q * np.sqrt(np.maximum(lam, 0.0))
    return z @ L.T


def limit_draws(B22_tilde, r: int, n_mc: int, seed: int, starts: int = 10):
    """Unsorted (w, value) pairs from the limiting law."""
    B = np.asarray(B22_tilde, dtype=float)
    m = B.shape[0]
    d = dim_from_m(m)
    W = _normal_draws(B, n_mc, make_rng(*as_key(seed), LIMIT_LAW))
    if not np.any(B):
        return W, np.zeros(n_mc)
    if d <= 2:
        # candidates are exact here; the factor search adds nothing
        vals = _closed_form_batch(W, B, min(r, d))
    else:
        vals = np.array([cone_sup(w, B, r, starts=starts, seed=seed) for w in W])
    return W, np.maximum(vals, 0.0)


def sample_limit_dist(B22_tilde, r: int, n_mc: int, seed: int) -> LimitSample:
    if n_mc < 1000:
        raise ValueError("n_mc must be at least 1000")
    _, vals = limit_draws(B22_tilde, r, n_mc, seed)
    return LimitSample(np.sort(vals), int(r), int(n_mc))


def pvalue_chisq(stat: float, df: int) -> float:
    """Upper tail of chi-square(df) via the regularized incomplete gamma."""
    if df < 1:
        raise ValueError("df must be at least 1")
    return float(special.gammaincc(0.5 * df, 0.5 * max(float(stat), 0.0)))


def pvalue_montecarlo(stat: float, sample: LimitSample) -> float:
    stat = max(float(stat), 0.0)
    exceed = sample.draws.shape[0] - np.searchsorted(sample.draws, stat, side="left")
    return float((1 + exceed) / (sample.n_mc + 1))


def chi2_bound(w, B22_tilde) -> float:
    """w' B^- w, the per-draw upper bound on the cone supremum."""
    w = np.asarray(w, dtype=float)
    return float(w @ np.linalg.pinv(np.asarray(B22_tilde, dtype=float), hermitian=True) @ w)


def rank_cap(G: int, d: int) -> int:
    return min(G - 1, d)
