"""Deterministic numerical primitives: normal distribution, least squares, correlations.

Everything here is a pure function of its arguments; results are plain
dataclasses safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special

from .errors import CollinearityError, DegenerateInputError, DomainError

# Relative pivot magnitude below which a design column is declared collinear.
PIVOT_RTOL = 1e-10

_SQRT2 = math.sqrt(2.0)


def normal_cdf(z: float) -> float:
    """Standard normal CDF Phi(z).

    Accurate to well under 1e-10 everywhere; the extreme lower tail
    underflows to 0.0 below z ~ -38.5 (documented, not an error).
    """
    z = float(z)
    if not math.isfinite(z):
        raise DomainError(f"normal_cdf requires a finite argument, got {z!r}")
    return 0.5 * math.erfc(-z / _SQRT2)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF for p in (0, 1)."""
    p = float(p)
    if not (0.0 < p < 1.0):
        raise DomainError(f"normal_quantile requires 0 < p < 1, got {p!r}")
    return float(scipy.special.ndtri(p))


@dataclass(frozen=True)
class OlsFit:
    """Least-squares fit with classical (and optionally HC1) standard errors."""

    coefficients: np.ndarray
    standard_errors: np.ndarray
    residual_variance: float
    rss: float
    residuals: np.ndarray
    n: int
    rank: int
    robust_standard_errors: np.ndarray | None = None


@dataclass(frozen=True)
class CorrelationResult:
    """Correlation together with its implied asymptotic variance reduction r^2."""

    r: float
    n: int
    vr_asymptotic: float


def _as_design(design) -> np.ndarray:
    X = np.asarray(design, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise DomainError("design must be a 2-D matrix with at least one row and column")
    if not np.all(np.isfinite(X)):
        raise DomainError("design matrix contains non-finite values")
    return X


def ols_fit(design, response, *, robust: bool = False) -> OlsFit:
    """Ordinary least squares via column-pivoted QR.

    The pivoted factorization keeps correlated covariates numerically stable
    and lets a rank deficiency be traced back to the offending column, which
    is raised as :class:`CollinearityError` when a pivot falls below
    ``PIVOT_RTOL`` relative to the leading pivot.
    """
    X = _as_design(design)
    y = np.asarray(response, dtype=float)
    n, p = X.shape
    if y.ndim != 1 or y.shape[0] != n:
        raise DomainError("response length must equal the number of design rows")
    if not np.all(np.isfinite(y)):
        raise DomainError("response contains non-finite values")
    if n <= p:
        raise DomainError(f"need more rows than columns, got {n} rows for {p} columns")

    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0:
        raise CollinearityError(int(piv[0]), "design matrix is identically zero")
    deficient = np.nonzero(diag <= PIVOT_RTOL * diag[0])[0]
    if deficient.size:
        raise CollinearityError(int(piv[deficient[0]]))

    beta_piv = scipy.linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(p)
    beta[piv] = beta_piv

    resid = y - X @ beta
    rss = float(resid @ resid)
    dof = n - p
    s2 = rss / dof

    r_inv = scipy.linalg.solve_triangular(R, np.eye(p))
    xtx_inv_piv = r_inv @ r_inv.T
    xtx_inv = np.empty((p, p))
    xtx_inv[np.ix_(piv, piv)] = xtx_inv_piv
    se = np.sqrt(s2 * np.diag(xtx_inv))

    robust_se = None
    if robust:
        # HC1: sandwich estimator with the n/(n-p) small-sample factor.
        meat = X.T @ (X * (resid**2)[:, None])
        cov = xtx_inv @ meat @ xtx_inv * (n / dof)
        robust_se = np.sqrt(np.diag(cov))

    return OlsFit(
        coefficients=beta,
        standard_errors=se,
        residual_variance=s2,
        rss=rss,
        residuals=resid,
        n=n,
        rank=p,
        robust_standard_errors=robust_se,
    )


def _centered(v, name: str) -> tuple[np.ndarray, float]:
    x = np.asarray(v, dtype=float)
    if x.ndim != 1:
        raise DomainError(f"{name} must be a 1-D vector")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} contains non-finite values")
    xc = x - x.mean()
    return xc, float(xc @ xc)


def pearson(x, y) -> CorrelationResult:
    """Pearson correlation with its squared value as the asymptotic VR."""
    xc, ssx = _centered(x, "x")
    yc, ssy = _centered(y, "y")
    if xc.shape[0] != yc.shape[0]:
        raise DomainError("x and y must have equal length")
    n = xc.shape[0]
    if n < 3:
        raise DomainError(f"need at least 3 observations, got {n}")
    if ssx == 0.0 or ssy == 0.0:
        raise DegenerateInputError("correlation is undefined for a zero-variance input")
    r = float(xc @ yc / math.sqrt(ssx * ssy))
    r = max(-1.0, min(1.0, r))
    return CorrelationResult(r=r, n=n, vr_asymptotic=r * r)


def partial_correlation(x, y, controls) -> CorrelationResult:
    """Correlation of x and y after residualizing both on the control matrix.

    ``controls`` must be full rank and include an intercept column. A vector
    that lies in the span of the controls has no residual variation left and
    raises :class:`DegenerateInputError`.
    """
    C = _as_design(controls)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rx = ols_fit(C, x).residuals
    ry = ols_fit(C, y).residuals
    for resid, orig, name in ((rx, x, "x"), (ry, y, "y")):
        base = float(np.var(orig)) * orig.shape[0]
        if float(resid @ resid) <= 1e-20 * max(base, np.finfo(float).tiny):
            raise DegenerateInputError(
                f"{name} has no residual variance after adjusting for the controls"
            )
    return pearson(rx, ry)
