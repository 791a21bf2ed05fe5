"""Numerical primitives: Gaussian densities, Mahalanobis distances, robust
location/scatter, trailing moving averages.

All densities are evaluated in log space through a Cholesky factor of the
covariance; no covariance matrix is ever inverted explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from .errors import EstimationError

LOG_2PI = math.log(2.0 * math.pi)
RIDGE_EPS = 1e-8
SYMMETRY_RTOL = 1e-12


def safe_cholesky(cov: np.ndarray, ridge: bool = True) -> np.ndarray:
    """Lower Cholesky factor of ``cov``.

    If the first factorization fails and ``ridge`` is set, a ridge of
    ``RIDGE_EPS * trace(cov) / p`` is added to the diagonal and the
    factorization is retried once.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        if not ridge:
            raise EstimationError("matrix is not positive definite") from None
    p = cov.shape[0]
    tau = RIDGE_EPS * float(np.trace(cov)) / p
    if not np.isfinite(tau) or tau <= 0:
        raise EstimationError("matrix is not positive definite (non-positive trace)")
    try:
        return np.linalg.cholesky(cov + tau * np.eye(p))
    except np.linalg.LinAlgError:
        raise EstimationError("matrix is not positive definite after ridge") from None


def check_symmetric(cov: np.ndarray) -> None:
    scale = max(float(np.max(np.abs(cov))), np.finfo(float).tiny)
    if np.max(np.abs(cov - cov.T)) > SYMMETRY_RTOL * scale:
        raise EstimationError("covariance is not symmetric")


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Mean vector and SPD covariance of a multivariate normal."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"shape mismatch: mean {mean.shape}, covariance {cov.shape}")
        check_symmetric(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        _ = self.chol  # fail fast on non-SPD input

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def chol(self) -> np.ndarray:
        return safe_cholesky(self.covariance)


def _whiten(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    diff = np.asarray(x, dtype=float) - mean
    if diff.ndim == 1:
        return linalg.solve_triangular(chol, diff, lower=True, check_finite=False)
    return linalg.solve_triangular(chol, diff.T, lower=True, check_finite=False).T


def log_det_from_chol(chol: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def gaussian_logpdf(x, g: GaussianParams):
    """Log density of ``N(g.mean, g.covariance)`` at ``x``.

    ``x`` may be a single vector of length p or an (n, p) array; in the
    latter case a length-n array is returned.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != g.dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]}, model has {g.dim}")
    z = _whiten(x, g.mean, g.chol)
    quad = np.sum(z * z, axis=-1)
    out = -0.5 * (g.dim * LOG_2PI + log_det_from_chol(g.chol) + quad)
    return float(out) if np.ndim(out) == 0 else out


def mahalanobis_sq(x, g: GaussianParams):
    """Squared Mahalanobis distance ``(x - mean)' cov^{-1} (x - mean)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != g.dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]}, model has {g.dim}")
    z = _whiten(x, g.mean, g.chol)
    out = np.sum(z * z, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class RobustEstimate:
    location: np.ndarray
    scatter: np.ndarray
    weights: np.ndarray = field(repr=False)

    def as_gaussian(self) -> GaussianParams:
        return GaussianParams(self.location, self.scatter)


def trimming_consistency_factor(p: int, keep: float) -> float:
    """Scale correction for the covariance of the ``keep`` fraction of a
    p-variate normal sample closest to its centre."""
    q = chi2.ppf(keep, p)
    return keep / chi2.cdf(q, p + 2)


def robust_location_scatter(X, keep: float = 0.75, max_iter: int = 50,
                            reweight: float | None = 0.975) -> RobustEstimate:
    """Trimmed location/scatter resistant to a minority of outlying rows.

    Starts from coordinatewise medians and a diagonal scatter of squared
    normalized MADs, then repeatedly keeps the ``ceil(keep * n)`` rows with
    the smallest Mahalanobis distance and recomputes their mean and
    covariance until the kept set no longer changes. The scatter is
    rescaled by the normal-consistency factor for the trimming level.

    With ``reweight`` set, one more pass keeps every row whose squared
    distance is below the chi-square ``reweight`` quantile and recomputes
    mean and (consistency-corrected) covariance from them. This recovers
    most of the efficiency lost by hard trimming without giving up its
    resistance to outliers.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array")
    n, p = X.shape
    if n <= p + 1:
        raise ValueError(f"need n > p + 1 rows, got n={n}, p={p}")
    h = int(math.ceil(keep * n))

    loc = np.median(X, axis=0)
    mad = 1.4826 * np.median(np.abs(X - loc), axis=0)
    sd = X.std(axis=0)
    scale = np.where(mad > 0, mad, sd)
    if np.any(scale <= 0):
        raise EstimationError("degenerate data: a coordinate has zero spread")
    cov = np.diag(scale**2)

    kept = None
    for _ in range(max_iter):
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise EstimationError("rank-deficient scatter among kept rows") from None
        d2 = np.sum(_whiten(X, loc, chol) ** 2, axis=1)
        order = np.argsort(d2, kind="stable")[:h]
        new_kept = np.zeros(n, dtype=bool)
        new_kept[order] = True
        if kept is not None and np.array_equal(new_kept, kept):
            break
        kept = new_kept
        sub = X[kept]
        loc = sub.mean(axis=0)
        centred = sub - loc
        cov = centred.T @ centred / h

    scatter = trimming_consistency_factor(p, h / n) * cov
    if reweight is not None:
        d2 = np.sum(_whiten(X, loc, _strict_chol(scatter)) ** 2, axis=1)
        inl = d2 <= chi2.ppf(reweight, p)
        if np.count_nonzero(inl) > p + 1:
            kept = inl
            sub = X[kept]
            loc = sub.mean(axis=0)
            centred = sub - loc
            cov = centred.T @ centred / sub.shape[0]
            scatter = trimming_consistency_factor(p, reweight) * cov
    scatter = 0.5 * (scatter + scatter.T)
    _strict_chol(scatter)
    return RobustEstimate(loc, scatter, kept.astype(float))


def _strict_chol(S: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise EstimationError("rank-deficient scatter among kept rows") from None


def moving_average(X, k: int) -> np.ndarray:
    """Trailing moving average; row t averages rows max(0, t-k+1)..t."""
    X = np.asarray(X, dtype=float)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    T = X.shape[0]
    if not 1 <= k <= T:
        raise ValueError(f"window k must satisfy 1 <= k <= T={T}, got {k}")
    # oldest-first accumulation keeps results identical to a plain running sum
    acc = np.zeros_like(X)
    for lag in range(k - 1, -1, -1):
        acc[lag:] += X[: T - lag]
    counts = np.minimum(np.arange(1, T + 1), k)[:, None]
    out = acc / counts
    return out[:, 0] if squeeze else out
