"""Self-weighted quantile moment functions.

For each ``t = 1..n`` the moment vector is

    g_t(beta) = psi_tau(y_t - X_{t-1}' beta) * a*(X_{t-1}),
    psi_tau(u) = tau - 1{u <= 0},
    a*(X) = w(X) * a(X),

where ``w`` down-weights observations whose lagged values exceed a sample
quantile ``c``. Because ``psi_tau`` only takes the values ``tau`` and
``tau - 1``, each ``g_t`` has exactly two possible values.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from heavytail_cpt.series_gen import Series


class SingularMatrixError(np.linalg.LinAlgError):
    """A matrix that must be inverted is (numerically) singular."""

    def __init__(self, name: str, min_eigenvalue: float):
        self.name = name
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"{name} is singular (smallest eigenvalue {min_eigenvalue:.3e})")


@dataclass(frozen=True)
class MomentConfig:
    """Choice of quantile level, weight cutoff and instrument.

    Parameters
    ----------
    tau : float
        Quantile level of the check score, 0.5 for the median.
    weight_cutoff_q : float
        Sample quantile level defining the weight cutoff ``c``.
    phi : callable, optional
        Extra instruments; ``a(x) = (x, phi(x))``. ``phi`` maps an ``(n, p)``
        array of lag vectors to an ``(n, q)`` array. ``None`` gives
        ``a(x) = x``.
    abs_cutoff : bool
        Take ``c`` from ``|y|`` instead of the raw values.
    """

    tau: float = 0.5
    weight_cutoff_q: float = 0.95
    phi: Callable[[np.ndarray], np.ndarray] | None = None
    abs_cutoff: bool = False

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0.0 < self.weight_cutoff_q < 1.0:
            raise ValueError(f"weight_cutoff_q must lie in (0, 1), got {self.weight_cutoff_q}")

    @property
    def identity(self) -> bool:
        return self.phi is None

    def instrument(self, lags: np.ndarray) -> np.ndarray:
        lags = np.atleast_2d(lags)
        if self.phi is None:
            return lags.copy()
        extra = np.asarray(self.phi(lags), dtype=float).reshape(lags.shape[0], -1)
        return np.hstack([lags, extra])


def weight_cutoff(values: np.ndarray, q_level: float = 0.95) -> float:
    """Order statistic ``ceil(q * N)`` (1-based) of the ascending sample."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("empty sample")
    if not 0.0 < q_level < 1.0:
        raise ValueError(f"q_level must lie in (0, 1), got {q_level}")
    N = values.size
    # round() guards against products such as 0.07 * 100 = 7.000000000000001
    idx = max(1, math.ceil(round(q_level * N, 9)))
    return float(np.sort(values)[idx - 1])


def self_weight(x_lag, c: float) -> float:
    """Weight ``(c/d)^3`` with ``d = max|x| * 1{max|x| > c}``, and 1 if ``d = 0``."""
    if not c > 0:
        raise ValueError(f"weight cutoff must be positive, got {c}")
    d = float(np.max(np.abs(x_lag)))
    if d <= c:
        return 1.0
    return (c / d) ** 3


def self_weights(lags: np.ndarray, c: float) -> np.ndarray:
    """Vectorised :func:`self_weight` over the rows of ``lags``."""
    if not c > 0:
        raise ValueError(f"weight cutoff must be positive, got {c}")
    d = np.max(np.abs(np.atleast_2d(lags)), axis=1)
    w = np.ones_like(d)
    big = d > c
    w[big] = (c / d[big]) ** 3
    return w


def check_score(u, tau: float = 0.5):
    """``psi_tau(u) = tau - 1{u <= 0}``."""
    return tau - (np.asarray(u) <= 0)


def nonpositive_residuals(y, fitted) -> np.ndarray:
    """``1{y - fitted <= 0}``, counting rounding-level residuals as zero.

    At a breakpoint ``beta = y_t / x_t`` the residual is zero in exact
    arithmetic but may round to either sign; without the tolerance its
    indicator would depend on the scale of the data.
    """
    y = np.asarray(y, dtype=float)
    fitted = np.asarray(fitted, dtype=float)
    tol = 8 * np.finfo(float).eps * (np.abs(y) + np.abs(fitted))
    return (y - fitted) <= tol


@dataclass(frozen=True)
class MomentPanel:
    """Immutable per-observation ingredients of the moment vectors.

    Row ``i`` (0-based) corresponds to time ``t = i + 1``.
    """

    y: np.ndarray = field(repr=False)
    lags: np.ndarray = field(repr=False)
    a_star: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    c: float
    tau: float = 0.5
    identity: bool = True

    def __post_init__(self):
        for name in ("y", "lags", "a_star", "weights"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not np.all(np.isfinite(self.a_star)):
            raise ValueError("instrument a* has non-finite entries")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.lags.shape[1]

    @property
    def m(self) -> int:
        return self.a_star.shape[1]

    def residuals(self, beta) -> np.ndarray:
        return self.y - self.lags @ np.atleast_1d(np.asarray(beta, dtype=float))

    def scores(self, beta) -> np.ndarray:
        """``psi_tau`` of every residual at ``beta``."""
        fitted = self.lags @ np.atleast_1d(np.asarray(beta, dtype=float))
        return self.tau - nonpositive_residuals(self.y, fitted)

    def moments(self, beta) -> np.ndarray:
        """``(n, m)`` array whose row ``t-1`` is ``g_t(beta)``."""
        return self.scores(beta)[:, None] * self.a_star


def build_panel(series: Series, config: MomentConfig | None = None) -> MomentPanel:
    """Compute weights and instruments for ``series``.

    The cutoff ``c`` is taken from ``y_0, ..., y_n``.
    """
    config = config or MomentConfig()
    sample = series.values[series.p - 1:]
    if config.abs_cutoff:
        sample = np.abs(sample)
    c = weight_cutoff(sample, config.weight_cutoff_q)
    if not c > 0:
        raise ValueError(
            f"weight cutoff c={c:g} is not positive; use abs_cutoff=True for this series"
        )
    lags = series.lags
    w = self_weights(lags, c)
    a_star = w[:, None] * config.instrument(lags)
    return MomentPanel(series.y, lags, a_star, w, c, config.tau, config.identity)


def moment_vector(panel: MomentPanel, t: int, beta) -> np.ndarray:
    """``g_t(beta)`` for a 1-based time index ``t``."""
    if not 1 <= t <= panel.n:
        raise IndexError(f"t={t} outside 1..{panel.n}")
    i = t - 1
    fitted = panel.lags[i] @ np.atleast_1d(np.asarray(beta, dtype=float))
    return (panel.tau - nonpositive_residuals(panel.y[i], fitted)) * panel.a_star[i]


def omega_hat(panel: MomentPanel, index_range=None, check: bool = False) -> np.ndarray:
    """Sample second-moment matrix ``tau(1-tau)/|R| * sum_{t in R} a* a*'``.

    ``index_range`` holds 1-based times (default: all of ``1..n``). With
    ``check=True`` a singular result raises :class:`SingularMatrixError`.
    """
    if index_range is None:
        rows = panel.a_star
    else:
        idx = np.asarray(list(index_range), dtype=int) - 1
        if idx.size == 0:
            raise ValueError("empty index range")
        rows = panel.a_star[idx]
    omega = panel.tau * (1.0 - panel.tau) * (rows.T @ rows) / rows.shape[0]
    omega = 0.5 * (omega + omega.T)
    if check:
        assert_nonsingular(omega, "Omega-hat")
    return omega


def assert_nonsingular(mat: np.ndarray, name: str, rtol: float = 1e-12) -> None:
    eig = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    scale = float(np.max(np.abs(eig))) if eig.size else 0.0
    if scale == 0.0 or eig[0] <= rtol * scale:
        raise SingularMatrixError(name, float(eig[0]) if eig.size else 0.0)
