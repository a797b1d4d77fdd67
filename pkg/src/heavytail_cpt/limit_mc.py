"""Null limit of the change-point statistic and its Monte-Carlo quantiles.

Under no break the statistic converges to

    sup_{r1 <= r <= r2}  h(r)/phi(r) ||B(r) - r B(1)||^2 + h(r) B(1)' Q B(1),

with ``B`` an ``m``-dimensional standard Brownian motion, ``phi(r) = r(1-r)``
and ``Q = I - Omega^{-1/2} G Sigma G' Omega^{-1/2}``,
``Sigma = (G' Omega^{-1} G)^{-1}``.  When the instrument is the lag vector
itself (``m = p``) the projection is the identity and ``Q = 0``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from heavytail_cpt.moments import MomentPanel, assert_nonsingular, omega_hat

H_KINDS = ("bridge", "flat")
DEFAULT_LEVELS = tuple(
    [0.0] + [round(0.01 * i, 2) for i in range(1, 100)] + [0.995, 0.999]
)
CHUNK_PATHS = 2000
EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class QEstimate:
    """Plug-in matrices of the limit law.

    ``g_mat``, ``sigma_mat`` and ``f0`` are ``None`` for identity
    instruments, where ``Q`` is zero without any density estimate.
    """

    omega: np.ndarray
    g_mat: np.ndarray | None
    sigma_mat: np.ndarray | None
    q_mat: np.ndarray
    f0: float | None = None


def sym_sqrt(mat: np.ndarray, inverse: bool = False, floor: float = EIG_FLOOR) -> np.ndarray:
    """Symmetric (inverse) square root via ``eigh``, eigenvalues clipped at ``floor``."""
    eig, vec = np.linalg.eigh(0.5 * (mat + mat.T))
    eig = np.maximum(eig, floor)
    root = np.sqrt(eig)
    if inverse:
        root = 1.0 / root
    return (vec * root) @ vec.T


def projection_complement(omega: np.ndarray, g_mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(Q, Sigma)`` for ``Q = I - Omega^{-1/2} G Sigma G' Omega^{-1/2}``.

    A zero ``G`` gives ``Q = I`` (nothing is projected out) and an all-NaN
    ``Sigma``.  Otherwise a singular ``Omega`` or ``G' Omega^{-1} G``
    raises :class:`SingularMatrixError`.
    """
    omega = np.asarray(omega, dtype=float)
    g_mat = np.atleast_2d(np.asarray(g_mat, dtype=float))
    m, p = g_mat.shape
    if omega.shape != (m, m):
        raise ValueError(f"Omega must be {m}x{m}, got {omega.shape}")
    assert_nonsingular(omega, "Omega-hat")
    if not np.any(g_mat):
        return np.eye(m), np.full((p, p), np.nan)
    inv_root = sym_sqrt(omega, inverse=True)
    A = inv_root @ g_mat  # Omega^{-1/2} G
    info = A.T @ A
    assert_nonsingular(info, "G' Omega^-1 G")
    sigma = np.linalg.inv(info)
    sigma = 0.5 * (sigma + sigma.T)
    q = np.eye(m) - A @ sigma @ A.T
    return 0.5 * (q + q.T), sigma


def silverman_bandwidth(x: np.ndarray, central: float = 0.9) -> float:
    """Silverman's rule on the central ``central`` fraction of ``x``."""
    x = np.asarray(x, dtype=float)
    lo, hi = np.quantile(x, [(1 - central) / 2, (1 + central) / 2])
    core = x[(x >= lo) & (x <= hi)]
    sd = float(np.std(core, ddof=1)) if core.size > 1 else 0.0
    q75, q25 = np.quantile(core, [0.75, 0.25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    if not spread > 0:
        raise FloatingPointError("residuals are degenerate; no bandwidth available")
    return 0.9 * spread * core.size ** (-0.2)


def density_at_zero(resid: np.ndarray, bandwidth: float | None = None) -> float:
    """Gaussian-kernel density estimate of the residuals at 0."""
    resid = np.asarray(resid, dtype=float)
    h = silverman_bandwidth(resid) if bandwidth is None else float(bandwidth)
    z = resid / h
    return float(np.mean(np.exp(-0.5 * z * z)) / (h * math.sqrt(2 * math.pi)))


def estimate_q(panel: MomentPanel, beta_hat, bandwidth_rule: str = "silverman") -> QEstimate:
    """Estimate ``Omega``, ``G``, ``Sigma`` and ``Q`` at ``beta_hat``.

    ``G = -f(0) / n * sum a*(X_{t-1}) X_{t-1}'`` with ``f(0)`` from
    :func:`density_at_zero`.  ``bandwidth_rule`` is ``"silverman"`` or a
    positive number used as the bandwidth.
    """
    omega = omega_hat(panel, check=True)
    m = panel.m
    if panel.identity:
        return QEstimate(omega, None, None, np.zeros((m, m)))
    resid = panel.residuals(beta_hat)
    if bandwidth_rule == "silverman":
        f0 = density_at_zero(resid)
    else:
        bw = float(bandwidth_rule)
        if not bw > 0:
            raise ValueError(f"bandwidth must be positive, got {bandwidth_rule!r}")
        f0 = density_at_zero(resid, bw)
    g_mat = -f0 * (panel.a_star.T @ panel.lags) / panel.n
    q, sigma = projection_complement(omega, g_mat)
    return QEstimate(omega, g_mat, sigma, q, f0)


def h_over_phi(r: np.ndarray, h_kind: str) -> np.ndarray:
    if h_kind == "bridge":
        return np.ones_like(r)
    return 1.0 / (r * (1.0 - r))


def h_weight(r, h_kind: str):
    """``h(r)``: ``r(1-r)`` for ``bridge``, 1 for ``flat``."""
    if h_kind not in H_KINDS:
        raise ValueError(f"h_kind must be one of {H_KINDS}, got {h_kind!r}")
    r = np.asarray(r, dtype=float)
    return r * (1.0 - r) if h_kind == "bridge" else np.ones_like(r)


def grid_indices(grid_points: int, r1: float, r2: float) -> np.ndarray:
    """Indices ``i`` with ``r1 <= i/grid_points <= r2`` (nearest one if none)."""
    lo = math.ceil(r1 * grid_points - 1e-9)
    hi = math.floor(r2 * grid_points + 1e-9)
    lo, hi = max(lo, 1), min(hi, grid_points - 1)
    if lo > hi:
        i = min(max(round(0.5 * (r1 + r2) * grid_points), 1), grid_points - 1)
        return np.array([i])
    return np.arange(lo, hi + 1)


def sup_functional(B: np.ndarray, h_kind: str, r1: float, r2: float,
                   q_mat: np.ndarray | None = None) -> np.ndarray:
    """Evaluate the limit functional on discretised paths.

    ``B`` has shape ``(paths, G + 1, m)`` with ``B[:, i]`` the value at
    ``i / G`` (so ``B[:, 0] = 0``).  Returns one supremum per path.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim == 2:
        B = B[:, :, None]
    G = B.shape[1] - 1
    idx = grid_indices(G, r1, r2)
    r = idx / G
    B1 = B[:, -1, :]
    bridge = B[:, idx, :] - r[None, :, None] * B1[:, None, :]
    vals = h_over_phi(r, h_kind)[None, :] * np.einsum("pkm,pkm->pk", bridge, bridge)
    if q_mat is not None and np.any(q_mat):
        quad = np.einsum("pm,mn,pn->p", B1, q_mat, B1)
        vals = vals + h_weight(r, h_kind)[None, :] * quad[:, None]
    return vals.max(axis=1)


def brownian_paths(rng: np.random.Generator, paths: int, grid_points: int, m: int) -> np.ndarray:
    """``(paths, grid_points + 1, m)`` standard Brownian motion on ``i/grid_points``."""
    inc = rng.standard_normal((paths, grid_points, m)) / math.sqrt(grid_points)
    B = np.zeros((paths, grid_points + 1, m))
    np.cumsum(inc, axis=1, out=B[:, 1:, :])
    return B


def worker_count(requested: int | None = None) -> int:
    """Workers to use: ``requested``, capped by ``HEAVYTAIL_CPT_THREADS``."""
    cap = os.environ.get("HEAVYTAIL_CPT_THREADS")
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError:
            raise ValueError(f"HEAVYTAIL_CPT_THREADS must be an integer, got {cap!r}") from None
    return max(1, n)


@dataclass(frozen=True)
class CriticalValueTable:
    """Monte-Carlo quantiles of the limit functional.

    ``quantiles`` maps a probability level to the empirical quantile; level
    0 maps to 0, the lower end of the functional's support.
    """

    m: int
    h_kind: str
    r1: float
    r2: float
    q_mat: np.ndarray
    paths: int
    grid_points: int
    quantiles: dict
    master_seed: int
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_csv(self, path: str | Path | None = None) -> str:
        lines = [
            f"# m = {self.m}",
            f"# h = {self.h_kind}",
            f"# r1 = {self.r1!r}",
            f"# r2 = {self.r2!r}",
            f"# paths = {self.paths}",
            f"# grid_points = {self.grid_points}",
            f"# seed = {self.master_seed}",
            f"# q_mat = {';'.join(','.join(repr(float(v)) for v in row) for row in self.q_mat)}",
            "level,value",
        ]
        lines += [f"{lvl!r},{val!r}" for lvl, val in sorted(self.quantiles.items())]
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "CriticalValueTable":
        meta, quantiles = {}, {}
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                meta[key.strip()] = val.strip()
                continue
            if line == "level,value":
                continue
            lvl, val = line.split(",")
            quantiles[float(lvl)] = float(val)
        m = int(meta.get("m", 1))
        if meta.get("q_mat"):
            q = np.array([[float(v) for v in row.split(",")] for row in meta["q_mat"].split(";")])
        else:
            q = np.zeros((m, m))
        return cls(m, meta.get("h", "bridge"), float(meta.get("r1", "nan")),
                   float(meta.get("r2", "nan")), q, int(meta.get("paths", 0)),
                   int(meta.get("grid_points", 0)), quantiles, int(meta.get("seed", 0)))


def _chunk_sups(seed, chunk, size, grid_points, m, h_kind, r1, r2, q_mat):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chunk)])))
    return sup_functional(brownian_paths(rng, size, grid_points, m), h_kind, r1, r2, q_mat)


def simulate_limit_samples(m: int, h_kind: str, r1: float, r2: float, q_mat=None,
                           paths: int = 100_000, grid_points: int = 1000, seed: int = 0,
                           workers: int | None = None) -> np.ndarray:
    """Draws of the limit functional, ``paths`` of them.

    Paths come in chunks of :data:`CHUNK_PATHS`, each with its own
    generator keyed by ``(seed, chunk)``, so the draws do not depend on the
    number of workers.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if h_kind not in H_KINDS:
        raise ValueError(f"h_kind must be one of {H_KINDS}, got {h_kind!r}")
    if not 0.0 < r1 <= r2 < 1.0:
        raise ValueError(f"need 0 < r1 <= r2 < 1, got r1={r1}, r2={r2}")
    if paths < 100 or grid_points < 100:
        raise ValueError("paths and grid_points must both be at least 100")
    q = np.zeros((m, m)) if q_mat is None else np.asarray(q_mat, dtype=float)
    if q.shape != (m, m):
        raise ValueError(f"q_mat must be {m}x{m}")
    sizes = [min(CHUNK_PATHS, paths - s) for s in range(0, paths, CHUNK_PATHS)]
    args = [(seed, c, size, grid_points, m, h_kind, r1, r2, q) for c, size in enumerate(sizes)]
    nw = worker_count(workers)
    if nw == 1 or len(args) == 1:
        parts = [_chunk_sups(*a) for a in args]
    else:
        with ThreadPoolExecutor(nw) as pool:
            parts = list(pool.map(lambda a: _chunk_sups(*a), args))
    return np.concatenate(parts)


def simulate_limit(m: int, h_kind: str = "bridge", r1: float = 0.1, r2: float = 0.9,
                   q_mat=None, paths: int = 100_000, grid_points: int = 1000, seed: int = 0,
                   levels=DEFAULT_LEVELS, workers: int | None = None,
                   keep_samples: bool = False) -> CriticalValueTable:
    """Monte-Carlo quantile table of the limit functional."""
    sups = simulate_limit_samples(m, h_kind, r1, r2, q_mat, paths, grid_points, seed, workers)
    levels = sorted(set(float(v) for v in levels) | {0.0})
    if levels[0] < 0 or levels[-1] >= 1:
        raise ValueError("quantile levels must lie in [0, 1)")
    qs = np.quantile(sups, levels[1:])
    quantiles = {0.0: 0.0}
    quantiles.update({lvl: float(v) for lvl, v in zip(levels[1:], qs)})
    q = np.zeros((m, m)) if q_mat is None else np.array(q_mat, dtype=float)
    return CriticalValueTable(m, h_kind, float(r1), float(r2), q, int(paths), int(grid_points),
                              quantiles, int(seed), sups if keep_samples else None)


@lru_cache(maxsize=32)
def _cached_table(m, h_kind, r1, r2, q_bytes, paths, grid_points, seed):
    q = np.frombuffer(q_bytes).reshape(m, m) if q_bytes else None
    return simulate_limit(m, h_kind, r1, r2, q, paths, grid_points, seed)


def cached_limit_table(m: int, h_kind: str, r1: float, r2: float, q_mat=None,
                       paths: int = 20_000, grid_points: int = 1000,
                       seed: int = 0) -> CriticalValueTable:
    """:func:`simulate_limit` memoised on its arguments within the process."""
    q_bytes = b"" if q_mat is None or not np.any(q_mat) else np.ascontiguousarray(q_mat, float).tobytes()
    return _cached_table(int(m), h_kind, float(r1), float(r2), q_bytes, int(paths),
                         int(grid_points), int(seed))


def critical_value(table: CriticalValueTable, alpha: float) -> float:
    """Quantile of level ``1 - alpha``, linearly interpolated between tabulated levels."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    levels = np.array(sorted(table.quantiles))
    values = np.array([table.quantiles[lvl] for lvl in levels])
    target = 1.0 - alpha
    hit = np.flatnonzero(np.isclose(levels, target, rtol=0, atol=1e-12))
    if hit.size:
        return float(values[hit[0]])
    if target < levels[0] or target > levels[-1]:
        raise ValueError(f"level {target} is outside the tabulated range "
                         f"[{levels[0]}, {levels[-1]}]")
    return float(np.interp(target, levels, values))
