"""Trimmed, weighted EL-ratio statistic for a single change in AR coefficients.

The statistic is

    T = 2 max_{k1 <= k <= k2} h(k/n) P_k,

with ``P_k`` the profile EL ratio of :mod:`heavytail_cpt.el_profile`,
``k1 = round(r1 n)``, ``k2 = round(r2 n)`` and ``h(r) = r(1-r)`` (``bridge``)
or ``h = 1`` (``flat``).  The null is rejected when ``T`` exceeds the
``1 - alpha`` quantile of the limit functional.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from heavytail_cpt.cusum_baseline import sq_statistic
from heavytail_cpt.el_inner import LOG_EL, GELRho
from heavytail_cpt.el_profile import profile_splits
from heavytail_cpt.limit_mc import (
    H_KINDS,
    CriticalValueTable,
    QEstimate,
    cached_limit_table,
    critical_value,
    estimate_q,
    h_weight,
    worker_count,
)
from heavytail_cpt.moments import MomentConfig, build_panel
from heavytail_cpt.series_gen import (
    ARChangeSpec,
    InnovationKind,
    Series,
    SimulationError,
    round_half_up,
    simulate,
)


class AllSplitsFailed(RuntimeError):
    """No split in the trimmed range produced a profile value."""


@dataclass(frozen=True)
class TestConfig:
    """Trimming, weight function and level of the test."""

    __test__ = False  # not a pytest class

    r1: float = 0.1
    r2: float = 0.9
    h_kind: str = "bridge"
    alpha: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.r1 < self.r2 < 1.0:
            raise ValueError(f"need 0 < r1 < r2 < 1, got r1={self.r1}, r2={self.r2}")
        if self.h_kind not in H_KINDS:
            raise ValueError(f"h_kind must be one of {H_KINDS}, got {self.h_kind!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")

    def h(self, r):
        return h_weight(r, self.h_kind)


@dataclass(frozen=True)
class MonteCarloCritical:
    """Critical value simulated from the limit law.

    For identity instruments ``Q = 0``; otherwise ``Q`` is estimated at
    the coefficient of the maximising split.
    """

    paths: int = 20_000
    grid_points: int = 1000
    seed: int = 0
    bandwidth_rule: str = "silverman"


@dataclass(frozen=True)
class ChangePointTestResult:
    statistic: float
    k_hat: int
    beta_hat_at_khat: np.ndarray
    critical_value: float
    reject: bool
    per_k_profile: np.ndarray = field(repr=False)
    failed_splits: tuple = ()
    h_kind: str = "bridge"
    q_estimate: QEstimate | None = field(default=None, repr=False)

    @property
    def profile_values(self) -> np.ndarray:
        """Unweighted ``P_k`` for the rows of :attr:`per_k_profile`."""
        return self.per_k_profile[:, 2]


def trimmed_range(n: int, r1: float, r2: float) -> np.ndarray:
    """Splits ``round(r1 n) .. round(r2 n)``, clamped to ``1 .. n-1``."""
    k1 = min(max(round_half_up(r1 * n), 1), n - 1)
    k2 = min(max(round_half_up(r2 * n), 1), n - 1)
    if k1 > k2:
        raise ValueError(f"empty trimmed range for n={n}, r1={r1}, r2={r2}")
    return np.arange(k1, k2 + 1)


@dataclass(frozen=True)
class ProfilePath:
    """``P_k`` over the trimmed splits, plus which splits failed."""

    n: int
    ks: np.ndarray
    values: np.ndarray
    betas: np.ndarray
    failed: tuple

    def weighted(self, h_kind: str) -> np.ndarray:
        return h_weight(self.ks / self.n, h_kind) * self.values

    def statistic(self, h_kind: str) -> tuple[float, int]:
        """``(2 max_k h(k/n) P_k, argmax)``; ties go to the smallest ``k``."""
        w = self.weighted(h_kind)
        top = np.flatnonzero(w == np.max(w))
        i = int(top[np.argmin(self.ks[top])])
        return 2.0 * float(w[i]), i


def profile_path(series: Series, moment_cfg: MomentConfig | None = None,
                 r1: float = 0.1, r2: float = 0.9, rho: GELRho = LOG_EL,
                 method: str = "auto", beta_box=None, panel=None) -> ProfilePath:
    panel = panel if panel is not None else build_panel(series, moment_cfg)
    ks = trimmed_range(panel.n, r1, r2)
    profs = profile_splits(panel, ks, rho, method, beta_box=beta_box, on_failure="skip")
    if not profs:
        raise AllSplitsFailed(f"every split in {ks[0]}..{ks[-1]} failed")
    got = np.array([pr.k for pr in profs])
    failed = tuple(int(k) for k in np.setdiff1d(ks, got))
    values = np.array([pr.value for pr in profs])
    betas = np.array([pr.beta_hat for pr in profs])
    return ProfilePath(panel.n, got, values, betas, failed)


def resolve_critical(critical_source, m: int, test_cfg: TestConfig, panel=None,
                     beta_hat=None) -> tuple[float, QEstimate | None]:
    """Turn a number, a table or a :class:`MonteCarloCritical` into a value."""
    if critical_source is None:
        critical_source = MonteCarloCritical()
    if isinstance(critical_source, (int, float)):
        return float(critical_source), None
    if isinstance(critical_source, CriticalValueTable):
        return critical_value(critical_source, test_cfg.alpha), None
    if isinstance(critical_source, MonteCarloCritical):
        qe = None
        q = None
        if panel is not None and not panel.identity:
            qe = estimate_q(panel, beta_hat, critical_source.bandwidth_rule)
            q = qe.q_mat
        table = cached_limit_table(m, test_cfg.h_kind, test_cfg.r1, test_cfg.r2, q,
                                   critical_source.paths, critical_source.grid_points,
                                   critical_source.seed)
        return critical_value(table, test_cfg.alpha), qe
    raise TypeError(f"unsupported critical source {type(critical_source).__name__}")


def run_test(series: Series, moment_cfg: MomentConfig | None = None,
             test_cfg: TestConfig | None = None, critical_source=None,
             rho: GELRho = LOG_EL, method: str = "auto", beta_box=None) -> ChangePointTestResult:
    """Test for a single break in the AR coefficients of ``series``.

    Parameters
    ----------
    series : Series
    moment_cfg : MomentConfig, optional
        Quantile level, weight cutoff and instruments.
    test_cfg : TestConfig, optional
        Trimming, weight function and level.
    critical_source : float, CriticalValueTable or MonteCarloCritical, optional
        Where the critical value comes from; defaults to a simulated table.
    rho : GELRho
        Divergence of the inner problem; plain EL by default.
    method : {'auto', 'exact', 'exhaustive', 'coordinate'}
        Search over the common coefficient, see :func:`profile_splits`.
    beta_box : (float, float), optional
        Restrict each coefficient to an interval.

    Returns
    -------
    ChangePointTestResult
        ``per_k_profile`` has columns ``k``, ``h(k/n) P_k`` and ``P_k``.
        Splits whose inner problems all failed are listed in
        ``failed_splits`` and left out of the maximum.
    """
    test_cfg = test_cfg or TestConfig()
    panel = build_panel(series, moment_cfg)
    path = profile_path(series, moment_cfg, test_cfg.r1, test_cfg.r2, rho, method,
                        beta_box, panel=panel)
    stat, i = path.statistic(test_cfg.h_kind)
    beta_k = path.betas[i]
    crit, qe = resolve_critical(critical_source, panel.m, test_cfg, panel, beta_k)
    table = np.column_stack([path.ks, path.weighted(test_cfg.h_kind), path.values])
    return ChangePointTestResult(stat, int(path.ks[i]), beta_k.copy(), crit, bool(stat > crit),
                                 table, path.failed, test_cfg.h_kind, qe)


# ---------------------------------------------------------------------------
# rejection-rate studies

VARIANTS = ("Tn", "Ttilde", "SQ")


@dataclass(frozen=True)
class ReplicateOutcome:
    stat_tn: float = math.nan
    stat_ttilde: float = math.nan
    stat_sq: float = math.nan
    generation_failed: bool = False
    test_failed: bool = False


def replicate_statistics(spec: ARChangeSpec, innov: InnovationKind, replicate: int,
                         test_cfg: TestConfig, moment_cfg: MomentConfig | None = None,
                         with_sq: bool = True, sq_variant: str = "psi",
                         with_elr: bool = True) -> ReplicateOutcome:
    """Both ELR statistics (one profile pass) and SQ for one simulated series."""
    try:
        series = simulate(spec, innov, replicate)
    except SimulationError:
        return ReplicateOutcome(generation_failed=True)
    try:
        tn = tt = math.nan
        if with_elr:
            path = profile_path(series, moment_cfg, test_cfg.r1, test_cfg.r2)
            tn = path.statistic("flat")[0]
            tt = path.statistic("bridge")[0]
        sq = sq_statistic(series, sq_variant) if with_sq else math.nan
    except (AllSplitsFailed, np.linalg.LinAlgError, FloatingPointError, ValueError):
        return ReplicateOutcome(test_failed=True)
    return ReplicateOutcome(tn, tt, sq)


def map_replicates(fn, items, workers: int | None = None) -> list:
    """``[fn(x) for x in items]``, on a thread pool when more than one worker is allowed."""
    nw = worker_count(workers)
    if nw == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(nw) as pool:
        return list(pool.map(fn, items))


def sq_critical_value(theta1, n: int, innov: InnovationKind, alpha: float = 0.05,
                      replications: int = 500, seed: int = 0, variant: str = "psi",
                      workers: int | None = None) -> float:
    """``1 - alpha`` quantile of SQ over simulated no-break series."""
    spec = ARChangeSpec(tuple(np.atleast_1d(theta1)), n, seed=null_seed(seed))
    cfg = TestConfig(alpha=alpha)
    outs = map_replicates(
        lambda j: replicate_statistics(spec, innov, j, cfg, with_sq=True, sq_variant=variant,
                                       with_elr=False),
        range(replications), workers)
    vals = np.array([o.stat_sq for o in outs if not (o.generation_failed or o.test_failed)])
    if vals.size == 0:
        raise RuntimeError("every null replicate failed")
    return float(np.quantile(vals, 1.0 - alpha))


def null_seed(seed: int) -> int:
    """Seed for null simulations, distinct from the study seed."""
    return int(np.random.SeedSequence([int(seed), 0x5E11]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class PowerCurve:
    """Rejection rates over a grid of post-break coefficients.

    ``rates[v][i]`` is the rejection rate of variant ``v`` at
    ``theta2_grid[i]``, over ``valid[i]`` replicates (generation failures
    are excluded and counted in ``generation_failures``).
    """

    theta2_grid: np.ndarray
    rates: dict
    valid: np.ndarray
    generation_failures: np.ndarray
    test_failures: np.ndarray
    replications: int
    critical_values: dict


def power_curve(theta2_grid, theta1, n: int, r: float, innov: InnovationKind,
                replications: int, test_cfg: TestConfig | None = None,
                moment_cfg: MomentConfig | None = None, seed: int = 0,
                variants=("Ttilde",), critical_source=None, sq_critical: float | None = None,
                sq_variant: str = "psi", sq_null_reps: int = 500,
                workers: int | None = None) -> PowerCurve:
    """Fraction of replicates rejecting at each ``theta2``.

    For ``p > 1`` the grid value replaces the first coefficient only.
    Replicate ``j`` uses the innovation stream keyed by ``(seed, j)`` for
    every ``theta2``, so curves are smooth in ``theta2`` and the result does
    not depend on the number of workers.  The ELR critical values come from
    ``critical_source`` (flat and bridge separately); the SQ critical value
    is ``sq_critical`` or, if ``None``, simulated under ``theta1`` with
    :func:`sq_critical_value`.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    test_cfg = test_cfg or TestConfig()
    variants = tuple(variants)
    bad = set(variants) - set(VARIANTS)
    if bad:
        raise ValueError(f"unknown variants {sorted(bad)}; choose from {VARIANTS}")
    theta1 = tuple(np.atleast_1d(theta1).astype(float))
    grid = np.atleast_1d(np.asarray(theta2_grid, dtype=float))
    p = len(theta1)
    m = p if moment_cfg is None or moment_cfg.identity else None

    crits = {}
    for v, h in (("Tn", "flat"), ("Ttilde", "bridge")):
        if v in variants:
            cfg = TestConfig(test_cfg.r1, test_cfg.r2, h, test_cfg.alpha)
            if m is None:
                raise ValueError("power studies need identity instruments (Q = 0)")
            crits[v] = resolve_critical(critical_source, m, cfg)[0]
    if "SQ" in variants:
        crits["SQ"] = sq_critical if sq_critical is not None else sq_critical_value(
            theta1, n, innov, test_cfg.alpha, sq_null_reps, seed, sq_variant, workers)

    with_elr = "Tn" in variants or "Ttilde" in variants
    rates = {v: np.zeros(grid.size) for v in variants}
    valid = np.zeros(grid.size, dtype=int)
    gen_fail = np.zeros(grid.size, dtype=int)
    test_fail = np.zeros(grid.size, dtype=int)
    for i, th2 in enumerate(grid):
        theta2 = (float(th2),) + theta1[1:]
        spec = ARChangeSpec(theta1, n, theta2, r, seed=seed)
        outs = map_replicates(
            lambda j: replicate_statistics(spec, innov, j, test_cfg, moment_cfg,
                                           "SQ" in variants, sq_variant, with_elr),
            range(replications), workers)
        ok = [o for o in outs if not (o.generation_failed or o.test_failed)]
        gen_fail[i] = sum(o.generation_failed for o in outs)
        test_fail[i] = sum(o.test_failed for o in outs)
        valid[i] = len(ok)
        if not ok:
            for v in variants:
                rates[v][i] = math.nan
            continue
        stats = {"Tn": [o.stat_tn for o in ok], "Ttilde": [o.stat_ttilde for o in ok],
                 "SQ": [o.stat_sq for o in ok]}
        for v in variants:
            rates[v][i] = float(np.mean(np.asarray(stats[v]) > crits[v]))
    return PowerCurve(grid, rates, valid, gen_fail, test_fail, replications, crits)
