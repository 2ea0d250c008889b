"""Weighted least squares on accumulated cross-products, with collinearity
handling and robust or cluster-robust covariance. Internal helper module."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

#: Relative pivot threshold below which a design column counts as collinear.
RANK_TOL = 1e-9


@dataclass
class OlsFit:
    beta: np.ndarray            # full length, zeros on dropped columns
    kept: np.ndarray            # indices of retained columns
    dropped: list               # names of dropped columns
    cov: Optional[np.ndarray]   # full k x k, zero rows/cols on dropped
    r2: float
    n: int
    rss: float
    tss: float
    colnames: list

    def se(self) -> np.ndarray:
        if self.cov is None:
            return np.full(len(self.beta), np.nan)
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


def drop_collinear(gram: np.ndarray, colnames: Sequence[str], tol: float = RANK_TOL):
    """Indices of a maximal well-conditioned column subset of the gram matrix.

    Pivoted QR on the gram; pivots whose R diagonal falls below
    tol * |R[0,0]| are collinear with earlier pivots and get dropped.
    """
    k = gram.shape[0]
    if k == 0:
        return np.array([], dtype=int), []
    _, r, piv = scipy.linalg.qr(gram, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    scale = diag[0] if diag[0] > 0 else 1.0
    keep_mask = diag > tol * scale
    kept = np.sort(piv[keep_mask])
    dropped = [colnames[i] for i in np.sort(piv[~keep_mask])]
    return kept, dropped


def ols(
    x: np.ndarray,
    y: np.ndarray,
    weights: Optional[np.ndarray] = None,
    colnames: Optional[Sequence[str]] = None,
    cluster: Optional[np.ndarray] = None,
    robust: bool = True,
) -> OlsFit:
    """Weighted OLS via the normal equations.

    ``cluster`` gives group labels for cluster-robust (CR1) covariance;
    without it, ``robust`` selects HC1, else the classical estimator.
    Collinear columns are dropped deterministically and reported by name.
    """
    n, k = x.shape
    colnames = list(colnames) if colnames is not None else [f"x{i}" for i in range(k)]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    xw = x * w[:, None]
    gram = x.T @ xw
    xty = xw.T @ y

    kept, dropped = drop_collinear(gram, colnames)
    beta = np.zeros(k)
    gk = gram[np.ix_(kept, kept)]
    try:
        cho = scipy.linalg.cho_factor(gk)
        beta_k = scipy.linalg.cho_solve(cho, xty[kept])
        bread = scipy.linalg.cho_solve(cho, np.eye(len(kept)))
    except scipy.linalg.LinAlgError:
        beta_k, *_ = np.linalg.lstsq(gk, xty[kept], rcond=None)
        bread = np.linalg.pinv(gk)
    beta[kept] = beta_k

    fitted = x[:, kept] @ beta_k
    resid = y - fitted
    rss = float(np.sum(w * resid**2))
    wmean = float(np.sum(w * y) / np.sum(w))
    tss = float(np.sum(w * (y - wmean) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else (1.0 if rss <= 1e-300 else 0.0)

    cov = np.zeros((k, k))
    kk = len(kept)
    u = x[:, kept] * (w * resid)[:, None]
    if cluster is not None:
        labels, idx = np.unique(cluster, return_inverse=True)
        g = len(labels)
        sums = np.zeros((g, kk))
        for j in range(kk):
            sums[:, j] = np.bincount(idx, weights=u[:, j], minlength=g)
        meat = sums.T @ sums
        dof = (g / max(g - 1, 1)) * ((n - 1) / max(n - kk, 1))
    elif robust:
        meat = u.T @ u
        dof = n / max(n - kk, 1)
    else:
        sigma2 = rss / max(n - kk, 1)
        cov[np.ix_(kept, kept)] = bread * sigma2
        return OlsFit(beta, kept, dropped, cov, r2, n, rss, tss, colnames)
    cov[np.ix_(kept, kept)] = dof * bread @ meat @ bread
    return OlsFit(beta, kept, dropped, cov, r2, n, rss, tss, colnames)


def ols_gram(
    gram: np.ndarray,
    xty: np.ndarray,
    colnames: Sequence[str],
):
    """Solve the normal equations from pre-accumulated cross-products.

    Returns (beta, kept, dropped, bread) where bread is the inverse gram on
    the kept columns, for callers that accumulate their own meat matrix.
    """
    k = gram.shape[0]
    kept, dropped = drop_collinear(gram, colnames)
    beta = np.zeros(k)
    gk = gram[np.ix_(kept, kept)]
    try:
        cho = scipy.linalg.cho_factor(gk)
        beta[kept] = scipy.linalg.cho_solve(cho, xty[kept])
        bread = scipy.linalg.cho_solve(cho, np.eye(len(kept)))
    except scipy.linalg.LinAlgError:
        beta[kept], *_ = np.linalg.lstsq(gk, xty[kept], rcond=None)
        bread = np.linalg.pinv(gk)
    return beta, kept, dropped, bread
