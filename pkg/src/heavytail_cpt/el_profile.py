"""Profile empirical likelihood over the common coefficient ``beta``.

For a split ``k`` the EL ratio at a common coefficient is

    l_k(beta) = sup_lam sum_{t<=k} log(1 - lam' g_t(beta))
              + sup_eta sum_{t>k} log(1 - eta' g_t(beta)),

and the profile value is ``P_k = inf_beta l_k(beta) >= 0``.

``g_t(beta)`` depends on ``beta`` only through the residual signs, so
``l_k`` is piecewise constant.  For ``p = 1`` the sign of ``y_t - beta
y_{t-1}`` flips only at ``beta = y_t / y_{t-1}``; evaluating at those
breakpoints, their midpoints and two outer points visits every attainable
sign configuration, which makes the minimisation exact.

Evaluating every configuration for every split is wasteful.  With scalar
moments each block value has a cheap lower bound: fixing ``lam`` at a
multiple of ``-sign(A) |A| / B`` (``A = sum g_i``, ``B = sum g_i^2``) and
bounding ``log(1 - x)`` by its second-order expansion, with the terms whose
``lam g_i`` is positive kept apart so their ``1/(1 - x)^2`` factor can be
controlled by ``max|g_i|``.  All of these sums come from cumulative sums,
so candidates are visited in order of the bound and the search for a split
stops once the bound exceeds the best exact value.  A candidate is also
skipped when its objective at the current best multipliers (feasible, hence
another lower bound) is already too large.  The result is the same minimum
as exhaustive evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from heavytail_cpt import _kernels
from heavytail_cpt.el_inner import (
    LOG_EL,
    MAX_ITER,
    SLACK_FLOOR,
    TOL_GRAD,
    GELRho,
    solve_multiplier,
    solve_multiplier_batch,
)
from heavytail_cpt.moments import MomentPanel, nonpositive_residuals


class InnerSolveError(RuntimeError):
    def __init__(self, k: int, block: str):
        self.k, self.block = k, block
        super().__init__(f"inner multiplier problem did not converge (split k={k}, {block} block)")


class SplitFailure(RuntimeError):
    """Every candidate coefficient failed for a split."""


@dataclass(frozen=True)
class SplitProfile:
    k: int
    beta_hat: np.ndarray
    value: float
    lambda_hat: np.ndarray
    eta_hat: np.ndarray
    candidates_evaluated: int

    @property
    def p_value_nk(self) -> float:
        return self.value


def el_ratio_at(panel: MomentPanel, k: int, beta, rho: GELRho = LOG_EL):
    """``l_k(beta)`` with the two block multipliers.

    Returns ``(value, lam, eta)``.  The value is ``inf`` when no reweighting
    of a block can balance its moments.
    """
    n = panel.n
    if not 1 <= k <= n - 1:
        raise ValueError(f"split k={k} outside 1..{n - 1}")
    G = panel.moments(beta)
    s1 = solve_multiplier(G[:k], rho)
    if not s1.converged:
        raise InnerSolveError(k, "pre-break")
    s2 = solve_multiplier(G[k:], rho)
    if not s2.converged:
        raise InnerSolveError(k, "post-break")
    return s1.value + s2.value, s1.lam, s2.lam


def line_candidates(target: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Representative points of ``b -> 1{target_t - b x_t <= 0}``.

    Breakpoints ``target_t / x_t`` (rows with ``x_t = 0`` never flip), the
    midpoints between consecutive breakpoints and one point beyond each end.
    """
    nz = x != 0
    if not np.any(nz):
        return np.zeros(1)
    bp = np.unique(target[nz] / x[nz])
    bp = bp[np.isfinite(bp)]
    if bp.size == 0:
        return np.zeros(1)
    pad = max(1.0, bp[-1] - bp[0])
    mids = 0.5 * (bp[:-1] + bp[1:])
    return np.sort(np.concatenate([[bp[0] - pad], bp, mids, [bp[-1] + pad]]))


def beta_candidates(series_or_panel) -> np.ndarray:
    """Candidate coefficients covering every sign configuration (``p = 1``)."""
    y, lags = series_or_panel.y, series_or_panel.lags
    if lags.shape[1] != 1:
        raise ValueError("exact enumeration is only available for p = 1; "
                         "use profile_split(method='coordinate')")
    return line_candidates(y, lags[:, 0])


def _beta_key(beta: np.ndarray):
    return (float(np.linalg.norm(beta)), tuple(np.atleast_1d(beta).tolist()))


def _taylor_lower_bound(A, B_pos, B_neg, M_pos, M_neg):
    """Lower bound on the scalar EL block value (see module docstring).

    With ``lam = -sign(A) t`` only the terms whose sign is opposite to
    ``A`` have ``lam g_i > 0``; the others satisfy
    ``log(1 - x) >= -x - x^2/2`` exactly.
    """
    absA = np.abs(A)
    opp_neg = A > 0
    B_opp = np.where(opp_neg, B_neg, B_pos)
    B_same = np.where(opp_neg, B_pos, B_neg)
    M_opp = np.where(opp_neg, M_neg, M_pos)
    B = B_opp + B_same
    best = np.zeros_like(absA)
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.where(B > 0, absA / B, 0.0)
        for s in (1.0, 0.8, 0.6, 0.45, 0.3, 0.2, 0.1):
            t = s * t0
            tm = t * M_opp
            ok = tm < 1.0
            shrink = (1.0 - np.where(ok, tm, 0.0)) ** 2
            val = t * absA - 0.5 * t * t * (B_same + B_opp / shrink)
            best = np.maximum(best, np.where(ok, val, 0.0))
    return best


def _unique_configs(panel: MomentPanel, betas: np.ndarray):
    """Drop candidates that repeat a sign configuration.

    ``betas`` is ``(C, p)``.  Among duplicates the smallest ``||beta||``
    (then lexicographic) is kept.  Returns betas and ``(C', n)`` scores.
    """
    order = sorted(range(len(betas)), key=lambda i: _beta_key(betas[i]))
    betas = betas[order]
    ind = nonpositive_residuals(panel.y[None, :], betas @ panel.lags.T)
    packed = np.packbits(ind, axis=1)
    _, first = np.unique(packed, axis=0, return_index=True)
    first.sort()
    betas = betas[first]
    return betas, panel.tau - ind[first]


def _row_moments(panel: MomentPanel, scores: np.ndarray) -> np.ndarray:
    if panel.m == 1:
        return scores * panel.a_star[:, 0][None, :]
    return scores[:, :, None] * panel.a_star[None, :, :]


def _split_rows(G: np.ndarray, j_idx: np.ndarray, ks: np.ndarray):
    """Zero-padded pre-/post-break blocks for the (k, candidate) pairs."""
    n = G.shape[1]
    pre = np.arange(n)[None, :] < ks[:, None]
    rows = G[j_idx]
    if rows.ndim == 3:
        pre = pre[:, :, None]
    return rows * pre, rows * ~pre


def _profile_enumerate(panel: MomentPanel, ks: np.ndarray, rho: GELRho, betas: np.ndarray,
                       prune: bool = True, skip_failed: bool = False):
    betas, scores = _unique_configs(panel, betas)
    G = _row_moments(panel, scores)
    C, n = scores.shape
    K = ks.size
    if prune and panel.m == 1 and rho.kind == "log_el":
        return _branch_and_bound(G, betas, ks, skip_failed)

    results = []
    for k in ks:
        kk = np.full(C, k)
        r1, r2 = _split_rows(G, np.arange(C), kk)
        s1 = solve_multiplier_batch(r1, rho)
        s2 = solve_multiplier_batch(r2, rho)
        ok = s1.converged & s2.converged
        if not np.any(ok):
            if skip_failed:
                continue
            raise SplitFailure(f"all {C} candidates failed for k={k}")
        vals = np.where(ok, s1.value + s2.value, np.inf)
        j = _argmin_tiebreak(vals, betas)
        results.append(SplitProfile(int(k), betas[j].copy(), float(vals[j]),
                                    np.atleast_1d(s1.lam[j]), np.atleast_1d(s2.lam[j]), C))
    return results


def _argmin_tiebreak(vals: np.ndarray, betas: np.ndarray) -> int:
    best = np.min(vals)
    tol = 1e-12 * max(1.0, abs(best)) if np.isfinite(best) else 0.0
    tied = np.flatnonzero(vals <= best + tol)
    return int(min(tied, key=lambda j: _beta_key(betas[j])))


def _branch_and_bound(G: np.ndarray, betas: np.ndarray, ks: np.ndarray,
                      skip_failed: bool = False):
    """Exact ``min_j l_k(beta_j)`` for scalar EL moments, all ``k`` at once."""
    C, n = G.shape
    zero = np.zeros((C, 1))
    gpos = np.maximum(G, 0.0)
    gneg = np.maximum(-G, 0.0)

    def prefix(x):
        return np.hstack([zero, np.cumsum(x, axis=1)])

    def prefix_max(x):
        return np.hstack([zero, np.maximum.accumulate(x, axis=1)])

    def suffix_max(x):
        return np.hstack([np.maximum.accumulate(x[:, ::-1], axis=1)[:, ::-1], zero])

    A = prefix(G)
    Bp = prefix(gpos * gpos)
    Bn = prefix(gneg * gneg)
    npos = prefix(G > 0)
    nneg = prefix(G < 0)
    pre_max, pre_neg = prefix_max(gpos), prefix_max(gneg)
    post_max, post_neg = suffix_max(gpos), suffix_max(gneg)

    lo = np.zeros_like(ks)
    hi = np.full_like(ks, n)

    def span(arr, a, b):
        return (arr[:, b] - arr[:, a]).T

    fin = ((span(npos, lo, ks) > 0) == (span(nneg, lo, ks) > 0)) & \
          ((span(npos, ks, hi) > 0) == (span(nneg, ks, hi) > 0))
    lb = (_taylor_lower_bound(span(A, lo, ks), span(Bp, lo, ks), span(Bn, lo, ks),
                              pre_max[:, ks].T, pre_neg[:, ks].T)
          + _taylor_lower_bound(span(A, ks, hi), span(Bp, ks, hi), span(Bn, ks, hi),
                                post_max[:, ks].T, post_neg[:, ks].T))
    lb[~fin] = np.inf
    order = np.argsort(lb, axis=1, kind="stable")
    lb_sorted = np.take_along_axis(lb, order, axis=1)

    best, best_j, lam, eta, evaluated, failed = _kernels.branch_and_bound(
        np.ascontiguousarray(G), ks.astype(np.int64), order.astype(np.int64), lb_sorted,
        pre_max, -pre_neg, post_max, -post_neg, TOL_GRAD, MAX_ITER, SLACK_FLOOR)

    results = []
    for r, k in enumerate(ks):
        if best_j[r] < 0:
            if failed[r]:
                if skip_failed:
                    continue
                raise SplitFailure(f"all evaluated candidates failed for k={k}")
            # no candidate balances both blocks
            results.append(SplitProfile(int(k), betas[0].copy(), np.inf,
                                        np.array([np.nan]), np.array([np.nan]), 0))
            continue
        j = best_j[r]
        results.append(SplitProfile(int(k), betas[j].copy(), float(best[r]),
                                    np.array([lam[r]]), np.array([eta[r]]),
                                    int(evaluated[r])))
    return results


def _coordinate_search(panel: MomentPanel, k: int, rho: GELRho, starts: list[np.ndarray],
                       max_sweeps: int = 50, beta_box=None) -> SplitProfile:
    p = panel.p
    if beta_box is not None:
        starts = [np.clip(b, *beta_box) for b in starts]
    total = 0
    best_overall = None
    for beta0 in starts:
        beta = np.array(beta0, dtype=float)
        val, lam, eta = _safe_ratio(panel, k, beta, rho)
        total += 1
        for _ in range(max_sweeps):
            improved = False
            for j in range(p):
                others = np.delete(np.arange(p), j)
                target = panel.y - panel.lags[:, others] @ beta[others]
                line = line_candidates(target, panel.lags[:, j])
                if beta_box is not None:
                    line = np.unique(np.clip(line, *beta_box))
                cands = np.repeat(beta[None, :], line.size, axis=0)
                cands[:, j] = line
                cands, scores = _unique_configs(panel, cands)
                G = _row_moments(panel, scores)
                s1 = solve_multiplier_batch(G[:, :k], rho)
                s2 = solve_multiplier_batch(G[:, k:], rho)
                total += len(cands)
                ok = s1.converged & s2.converged
                if not np.any(ok):
                    continue
                vals = np.where(ok, s1.value + s2.value, np.inf)
                i = _argmin_tiebreak(vals, cands)
                tol = 1e-12 * max(1.0, abs(val)) if np.isfinite(val) else 0.0
                if vals[i] < val - tol:
                    beta, val = cands[i].copy(), float(vals[i])
                    lam, eta = np.atleast_1d(s1.lam[i]), np.atleast_1d(s2.lam[i])
                    improved = True
            if not improved:
                break
        cand = (val, _beta_key(beta), beta, lam, eta)
        if best_overall is None or (cand[0], cand[1]) < (best_overall[0], best_overall[1]):
            best_overall = cand
    val, _, beta, lam, eta = best_overall
    if lam is None:
        raise SplitFailure(f"all coordinate-search starts failed for k={k}")
    return SplitProfile(int(k), beta, float(val), lam, eta, total)


def _safe_ratio(panel, k, beta, rho):
    try:
        return el_ratio_at(panel, k, beta, rho)
    except InnerSolveError:
        return np.inf, None, None


def default_starts(panel: MomentPanel, n_starts: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Median-regression fit plus ``n_starts - 1`` random perturbations of it."""
    from heavytail_cpt.cusum_baseline import l1_fit_arrays

    base = l1_fit_arrays(panel.y, panel.lags).beta_hat
    rng = np.random.default_rng(seed)
    spread = max(0.5, float(np.max(np.abs(base))))
    return [base] + [base + spread * rng.standard_normal(panel.p) for _ in range(n_starts - 1)]


def profile_splits(panel: MomentPanel, ks, rho: GELRho = LOG_EL, method: str = "auto",
                   starts: list[np.ndarray] | None = None,
                   beta_box: tuple[float, float] | None = None,
                   on_failure: str = "raise") -> list[SplitProfile]:
    """Profile values ``P_k`` for every split in ``ks``.

    ``method='exact'`` (default for ``p = 1``) enumerates sign
    configurations, pruned by lower bounds when the moments are scalar;
    ``'exhaustive'`` solves every configuration at every split (slow, for
    cross-checks); ``'coordinate'`` (default for ``p >= 2``) runs a
    multi-start coordinate search over per-coordinate breakpoints.

    ``beta_box = (lo, hi)`` restricts every coordinate of ``beta`` to
    ``[lo, hi]``.  With ``on_failure='skip'`` a split whose candidates all
    fail is left out of the result instead of raising
    :class:`SplitFailure`.
    """
    if on_failure not in ("raise", "skip"):
        raise ValueError(f"on_failure must be 'raise' or 'skip', got {on_failure!r}")
    skip = on_failure == "skip"
    if beta_box is not None:
        lo, hi = map(float, beta_box)
        if not lo <= hi:
            raise ValueError(f"empty beta box [{lo}, {hi}]")
    ks = np.atleast_1d(np.asarray(ks, dtype=int))
    n = panel.n
    if ks.size == 0:
        raise ValueError("no splits requested")
    if np.any(ks < 1) or np.any(ks > n - 1):
        raise ValueError(f"splits must lie in 1..{n - 1}")
    if method == "auto":
        method = "exact" if panel.p == 1 else "coordinate"
    if method in ("exact", "exhaustive"):
        betas = beta_candidates(panel)
        if beta_box is not None:
            # clipping maps the configurations outside the box onto its ends
            betas = np.unique(np.clip(betas, lo, hi))
        return _profile_enumerate(panel, ks, rho, betas[:, None],
                                  prune=method == "exact", skip_failed=skip)
    if method == "coordinate":
        starts = starts if starts is not None else default_starts(panel)
        out = []
        for k in ks:
            try:
                out.append(_coordinate_search(panel, int(k), rho, starts, beta_box=beta_box))
            except SplitFailure:
                if not skip:
                    raise
        return out
    raise ValueError(f"unknown method {method!r}")


def profile_split(panel: MomentPanel, k: int, rho: GELRho = LOG_EL, method: str = "auto",
                  starts: list[np.ndarray] | None = None,
                  beta_box: tuple[float, float] | None = None) -> SplitProfile:
    return profile_splits(panel, [k], rho, method, starts, beta_box)[0]
