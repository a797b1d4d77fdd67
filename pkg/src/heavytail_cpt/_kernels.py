"""Compiled loops for scalar-moment EL profiling.

A block is the contiguous slice ``g[lo:hi]`` of one candidate's moment row.
Feasibility of ``lam`` only depends on the block extremes, so each Newton
step costs a single pass over the block.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _feasible(lam, gmax, gmin, floor):
    if lam > 0.0:
        return 1.0 - lam * gmax >= floor
    if lam < 0.0:
        return 1.0 - lam * gmin >= floor
    return True


@njit(cache=True, nogil=True)
def block_objective(g, lo, hi, lam):
    """``sum log(1 - lam g_i)`` over the block; ``-inf`` if infeasible."""
    s = 0.0
    for i in range(lo, hi):
        z = 1.0 - lam * g[i]
        if z <= 0.0:
            return -np.inf
        s += math.log(z)
    return s


@njit(cache=True, nogil=True)
def solve_block(g, lo, hi, gmax, gmin, lam0, tol, max_iter, floor):
    """Damped Newton for ``sup_lam sum log(1 - lam g_i)``, bounded case.

    Returns ``(value, lam, iterations, converged)``.
    """
    lam = lam0 if _feasible(lam0, gmax, gmin, floor) else 0.0
    converged = False
    it = 0
    f = 0.0
    while it < max_iter:
        f = 0.0
        grad = 0.0
        J = 0.0
        for i in range(lo, hi):
            gi = g[i]
            z = 1.0 - lam * gi
            f += math.log(z)
            q = gi / z
            grad -= q
            J += q * q
        if abs(grad) <= tol:
            converged = True
            break
        d = grad / J if J > 0.0 else grad
        dec = grad * d
        scale = max(1.0, abs(f))
        if dec <= 1e-26 * scale:
            converged = True
            break
        # below this the ascent test only sees rounding noise in f
        polish = dec <= 1e-10 * scale
        s = 1.0
        accepted = False
        for _ in range(60):
            trial = lam + s * d
            if _feasible(trial, gmax, gmin, floor):
                ft = block_objective(g, lo, hi, trial)
                if ft >= f or polish:
                    lam = trial
                    accepted = True
                    break
            s *= 0.5
        it += 1
        if not accepted:
            break
    return block_objective(g, lo, hi, lam), lam, it, converged


@njit(cache=True, nogil=True)
def branch_and_bound(G, ks, order, lb_sorted, pre_max, pre_min, post_max, post_min,
                     tol, max_iter, floor):
    """Exact ``min_j l_k(beta_j)`` for every split in ``ks``.

    ``order[r]`` lists candidates by ascending lower bound ``lb_sorted[r]``
    for split ``ks[r]``.  Candidate index doubles as tie-break rank.
    A candidate is skipped without a Newton solve when its objective at
    the incumbent's multipliers (a feasible point, hence a lower bound on
    its value) already exceeds the incumbent.
    """
    K = ks.size
    C, n = G.shape
    best = np.full(K, np.inf)
    best_j = np.full(K, -1)
    best_lam = np.zeros(K)
    best_eta = np.zeros(K)
    evaluated = np.zeros(K, dtype=np.int64)
    failed = np.zeros(K, dtype=np.int64)
    for r in range(K):
        k = ks[r]
        b = np.inf
        bj = -1
        bl = 0.0
        be = 0.0
        for pos in range(C):
            bound = lb_sorted[r, pos]
            if not np.isfinite(bound):
                break
            thr = b + 1e-12 * max(1.0, abs(b))
            if bound > thr:
                break
            j = order[r, pos]
            g = G[j]
            if bj >= 0:
                q = block_objective(g, 0, k, bl)
                if q > -np.inf:
                    q += block_objective(g, k, n, be)
                if q > thr:
                    continue
            v1, l1, _, c1 = solve_block(g, 0, k, pre_max[j, k], pre_min[j, k], bl,
                                        tol, max_iter, floor)
            v2, l2, _, c2 = solve_block(g, k, n, post_max[j, k], post_min[j, k], be,
                                        tol, max_iter, floor)
            evaluated[r] += 1
            if not (c1 and c2):
                failed[r] += 1
                continue
            v = v1 + v2
            t = 1e-12 * max(1.0, abs(b)) if bj >= 0 else 0.0
            if bj < 0 or v < b - t or (abs(v - b) <= t and j < bj):
                b = v
                bj = j
                bl = l1
                be = l2
        best[r] = b
        best_j[r] = bj
        best_lam[r] = bl
        best_eta[r] = be
    return best, best_j, best_lam, best_eta, evaluated, failed
