"""Median autoregression and the CUSUM-type statistic SQ_0.5.

Two summands are available for the partial-sum process:

``"psi"``
    ``psi_0.5(residual) = 1/2 - 1{residual <= 0}``, the usual quantile
    CUSUM score. Invariant to rescaling the series.
``"as-printed"``
    ``|residual|``, the absolute residual. Not scale invariant, and its
    mean does not exist under Cauchy innovations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from heavytail_cpt.moments import SingularMatrixError, nonpositive_residuals
from heavytail_cpt.series_gen import Series

SQ_VARIANTS = ("psi", "as-printed")
_ALIASES = {"psi": "psi", "psi_centered": "psi", "psi-centered": "psi",
            "as-printed": "as-printed", "as_printed": "as-printed"}


@dataclass(frozen=True)
class L1Fit:
    beta_hat: np.ndarray
    objective: float
    exact: bool


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Lower weighted median: smallest value whose cumulative weight reaches half."""
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cw = np.cumsum(w)
    j = int(np.searchsorted(cw, 0.5 * cw[-1], side="left"))
    return float(v[min(j, v.size - 1)])


def normalize_variant(variant: str) -> str:
    """Canonical SQ variant name (``psi_centered`` and ``as_printed`` are accepted)."""
    try:
        return _ALIASES[variant.strip().lower()]
    except KeyError:
        raise ValueError(f"variant must be one of {SQ_VARIANTS}, got {variant!r}") from None


def l1_fit_arrays(y: np.ndarray, X: np.ndarray, n_iter: int = 200, eps: float = 1e-8) -> L1Fit:
    y = np.asarray(y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != y.size:
        X = X.T
    p = X.shape[1]
    if not np.any(X):
        warnings.warn("all regressors are zero; returning beta = 0", RuntimeWarning, stacklevel=2)
        return L1Fit(np.zeros(p), float(np.sum(np.abs(y))), p == 1)

    if p == 1:
        x = X[:, 0]
        nz = x != 0
        beta = np.array([weighted_median(y[nz] / x[nz], np.abs(x[nz]))])
        return L1Fit(beta, float(np.sum(np.abs(y - X @ beta))), True)

    # iteratively reweighted least squares from the OLS start
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    for _ in range(n_iter):
        w = 1.0 / np.maximum(np.abs(y - X @ beta), eps)
        Xw = X * w[:, None]
        new = np.linalg.solve(X.T @ Xw, Xw.T @ y)
        if np.max(np.abs(new - beta)) <= 1e-12 * max(1.0, np.max(np.abs(beta))):
            beta = new
            break
        beta = new
    return L1Fit(beta, float(np.sum(np.abs(y - X @ beta))), False)


def l1_fit(series: Series) -> L1Fit:
    """Minimise ``sum_t |y_t - X_{t-1}' beta|``.

    For ``p = 1`` the objective equals ``sum |y_{t-1}| |y_t/y_{t-1} - beta|``
    (plus a constant), so the exact minimiser is a weighted median of the
    ratios. Larger ``p`` uses IRLS, which is approximate.
    """
    return l1_fit_arrays(series.y, series.lags)


def _inv_sqrt_psd(mat: np.ndarray, name: str, floor: float = 1e-12) -> np.ndarray:
    eig, vec = np.linalg.eigh(0.5 * (mat + mat.T))
    top = float(np.max(np.abs(eig))) if eig.size else 0.0
    if top == 0.0 or eig[0] <= floor * top:
        raise SingularMatrixError(name, float(eig[0]))
    return (vec / np.sqrt(np.maximum(eig, floor))) @ vec.T


def cusum_path(series: Series, variant: str = "psi", fit: L1Fit | None = None) -> np.ndarray:
    """``H_{t/n} - (t/n) H_1`` for ``t = 1..n`` as an ``(n, p)`` array."""
    variant = normalize_variant(variant)
    y, X = series.y, series.lags
    n = y.size
    fit = fit or l1_fit(series)
    fitted = X @ fit.beta_hat
    if variant == "psi":
        score = 0.5 - nonpositive_residuals(y, fitted)
    else:
        score = np.abs(y - fitted)
    root = _inv_sqrt_psd(X.T @ X, "regressor Gram matrix")
    H = np.cumsum(score[:, None] * X, axis=0) @ root
    frac = np.arange(1, n + 1) / n
    return H - frac[:, None] * H[-1]


def sq_statistic(series: Series, variant: str = "psi", fit: L1Fit | None = None) -> float:
    """``max_t || H_{t/n} - (t/n) H_1 ||_inf`` over ``t = 1..n``."""
    return float(np.max(np.abs(cusum_path(series, variant, fit))))
