"""Inner Lagrange-multiplier problem of (generalised) empirical likelihood.

For a block of moment vectors ``g_1..g_N`` the inner problem is

    sup_lambda  sum_i -rho(lambda' g_i)

over the open set where ``1 + c * lambda' g_i > 0`` for all ``i``.  With
``rho(v) = -log(1 - v)`` (``c = -1``) this is the EL dual
``sup_lambda sum_i log(1 - lambda' g_i)``, whose value is ``-log`` of the
empirical likelihood ratio of the block.  The objective is concave and the
value is nonnegative because ``lambda = 0`` is feasible with value 0.

When ``0`` is not in the relative interior of the convex hull of the block
the EL supremum is ``+inf``; this is detected up front and reported with
``bounded=False``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

SLACK_FLOOR = 1e-10
TOL_GRAD = 1e-9
MAX_ITER = 100
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class GELRho:
    """Divergence generating the GEL objective.

    ``log_el`` is ``rho(v) = -log(1 - v)``; ``cressie_read`` is
    ``rho(v) = ((1 + c v)^((c+1)/c) - 1) / (c + 1)``.  Both satisfy
    ``rho(0) = 0`` and ``rho'(0) = rho''(0) = 1``; the objective
    ``-rho`` is concave where ``1 + c v > 0``.
    """

    kind: str = "log_el"
    c: float = -1.0

    def __post_init__(self):
        if self.kind == "log_el":
            object.__setattr__(self, "c", -1.0)
        elif self.kind == "cressie_read":
            if self.c == 0 or self.c == -1:
                raise ValueError("Cressie-Read index must differ from 0 and -1 (use log_el for -1)")
        else:
            raise ValueError(f"unknown rho kind {self.kind!r}")

    @classmethod
    def cressie_read(cls, c: float) -> "GELRho":
        return cls("cressie_read", float(c))

    def slack(self, v):
        return 1.0 + self.c * v

    def value(self, v):
        if self.kind == "log_el":
            return -np.log1p(-v)
        c = self.c
        return (np.power(1.0 + c * v, (c + 1.0) / c) - 1.0) / (c + 1.0)

    def d1(self, v):
        if self.kind == "log_el":
            return 1.0 / (1.0 - v)
        return np.power(1.0 + self.c * v, 1.0 / self.c)

    def d2(self, v):
        if self.kind == "log_el":
            return 1.0 / (1.0 - v) ** 2
        return np.power(1.0 + self.c * v, 1.0 / self.c - 1.0)


LOG_EL = GELRho()


@dataclass(frozen=True)
class ELSolution:
    lam: np.ndarray
    value: float
    iterations: int
    converged: bool
    min_slack: float
    bounded: bool = True
    history: tuple = field(default=(), repr=False)


@dataclass(frozen=True)
class BatchSolution:
    """Row-wise results of :func:`solve_multiplier_batch`."""

    lam: np.ndarray
    value: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    min_slack: np.ndarray
    bounded: np.ndarray


@dataclass(frozen=True)
class FeasibleRegion:
    """Feasible multipliers of the EL problem.

    For ``m = 1`` the exact open interval ``(lower, upper)``; for ``m > 1``
    a ball of guaranteed-feasible radius around 0.
    """

    kind: str
    lower: float = -np.inf
    upper: float = np.inf
    radius: float = np.inf

    @property
    def unbounded(self) -> bool:
        return self.kind == "unbounded"


def feasible_box(g_block) -> FeasibleRegion:
    g = _as_block(g_block)
    if g.shape[0] == 0:
        raise ValueError("empty block")
    if not np.any(g):
        return FeasibleRegion("unbounded")
    if g.shape[1] == 1:
        v = g[:, 0]
        pos, neg = v[v > 0], v[v < 0]
        upper = 1.0 / pos.max() if pos.size else np.inf
        lower = 1.0 / neg.min() if neg.size else -np.inf
        return FeasibleRegion("interval", lower=lower, upper=upper)
    return FeasibleRegion("ball", radius=1.0 / np.max(np.linalg.norm(g, axis=1)))


def _as_block(g_block) -> np.ndarray:
    g = np.asarray(g_block, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if g.ndim != 2:
        raise ValueError("moment block must be 1-D or 2-D")
    return g


def _recession_direction(g: np.ndarray) -> np.ndarray | None:
    """Direction ``u`` with ``u'g_i >= 0`` for all i and ``> 0`` for some i.

    Its existence means the EL objective is unbounded along ``-u``.
    """
    m = g.shape[1]
    scale = float(np.max(np.abs(g)))
    if m == 1:
        v = g[:, 0]
        has_pos, has_neg = bool(np.any(v > 0)), bool(np.any(v < 0))
        if has_pos and not has_neg:
            return np.ones(1)
        if has_neg and not has_pos:
            return -np.ones(1)
        return None
    res = linprog(-g.sum(axis=0) / scale, A_ub=-g / scale, b_ub=np.zeros(g.shape[0]),
                  bounds=[(-1.0, 1.0)] * m, method="highs")
    if res.status == 0 and -res.fun > 1e-9:
        return res.x
    return None


def solve_multiplier(g_block, rho: GELRho = LOG_EL, tol: float = TOL_GRAD,
                     max_iter: int = MAX_ITER, slack_floor: float = SLACK_FLOOR) -> ELSolution:
    """Maximise ``sum_i -rho(lambda' g_i)`` over feasible ``lambda``.

    Damped Newton from ``lambda = 0``: the Newton direction uses a Cholesky
    factor of ``sum rho''(v_i) g_i g_i'`` (a gradient step when that fails)
    and the step is halved until every slack is at least ``slack_floor``
    and the objective does not decrease.

    Examples
    --------
    >>> sol = solve_multiplier([1.0, 1.0, -1.0])
    >>> round(float(sol.lam[0]), 12), round(sol.value, 6)
    (-0.333333333333, 0.169899)
    """
    g = _as_block(g_block)
    if g.shape[0] == 0:
        raise ValueError("empty block")
    if not np.all(np.isfinite(g)):
        raise ValueError("moment block has non-finite entries")
    m = g.shape[1]
    if not np.any(g):
        return ELSolution(np.zeros(m), 0.0, 0, True, 1.0, True, (0.0,))
    if rho.kind == "log_el":
        direction = _recession_direction(g)
        if direction is not None:
            return ELSolution(-np.inf * direction, np.inf, 0, True, np.nan, False, ())
    out = _newton(g[None], rho, tol, max_iter, slack_floor, keep_history=True)
    lam, value, iters, conv, slack, hist = out
    return ELSolution(lam[0], float(value[0]), int(iters[0]), bool(conv[0]),
                      float(slack[0]), True, tuple(hist))


def solve_el(g_block, tol: float = TOL_GRAD) -> ELSolution:
    """Plain empirical likelihood, ``rho(v) = -log(1 - v)``."""
    return solve_multiplier(g_block, LOG_EL, tol)


def solve_multiplier_batch(G, rho: GELRho = LOG_EL, tol: float = TOL_GRAD,
                           max_iter: int = MAX_ITER,
                           slack_floor: float = SLACK_FLOOR) -> BatchSolution:
    """Solve many independent inner problems at once.

    ``G`` has shape ``(R, N)`` (scalar moments) or ``(R, N, m)``.  Zero
    entries contribute nothing, so blocks of unequal length can be padded
    with zeros.
    """
    G = np.asarray(G, dtype=float)
    squeeze = G.ndim == 2
    if squeeze:
        G = G[:, :, None]
    R, _, m = G.shape
    lam = np.zeros((R, m))
    value = np.zeros(R)
    iters = np.zeros(R, dtype=int)
    conv = np.ones(R, dtype=bool)
    slack = np.ones(R)
    bounded = np.ones(R, dtype=bool)

    nonzero = np.any(G != 0, axis=(1, 2))
    todo = nonzero.copy()
    if rho.kind == "log_el":
        if m == 1:
            has_pos = np.any(G[:, :, 0] > 0, axis=1)
            has_neg = np.any(G[:, :, 0] < 0, axis=1)
            unb = nonzero & (has_pos != has_neg)
            lam[unb, 0] = np.where(has_pos[unb], -np.inf, np.inf)
        else:
            # A genuine stationary point satisfies sum 1/(1 - lam'g_i) = N and
            # certifies a finite maximum.  On an unbounded block the gradient
            # also fades far out along the recession ray, but the identity
            # fails there, so only those rows need the linear program.
            unb = np.zeros(R, dtype=bool)
            idx = np.flatnonzero(nonzero)
            if idx.size:
                l, v, it, c, s, _ = _newton(G[idx], rho, tol, max_iter, slack_floor)
                lam[idx], value[idx], iters[idx], conv[idx], slack[idx] = l, v, it, c, s
                todo[idx] = False
                N = G.shape[1]
                inv = np.sum(1.0 / (1.0 - np.einsum("rnm,rm->rn", G[idx], l)), axis=1)
                certified = c & (np.abs(inv - N) <= 1e-6 * N)
                for r in idx[~certified]:
                    d = _recession_direction(G[r])
                    if d is not None:
                        unb[r] = True
                        lam[r] = -np.inf * d
                        conv[r] = True
        value[unb] = np.inf
        slack[unb] = np.nan
        bounded[unb] = False
        todo &= ~unb

    idx = np.flatnonzero(todo)
    if idx.size:
        l, v, it, c, s, _ = _newton(G[idx], rho, tol, max_iter, slack_floor)
        lam[idx], value[idx], iters[idx], conv[idx], slack[idx] = l, v, it, c, s
    return BatchSolution(lam[:, 0] if squeeze else lam, value, iters, conv, slack, bounded)


def _newton(G, rho, tol, max_iter, slack_floor, keep_history=False):
    """Damped Newton on a stack of bounded problems, ``G`` of shape (R, N, m)."""
    R, _, m = G.shape
    lam = np.zeros((R, m))
    value = np.zeros(R)
    iters = np.zeros(R, dtype=int)
    conv = np.zeros(R, dtype=bool)
    history = [0.0]
    scalar = m == 1
    Gs = G[:, :, 0] if scalar else G

    def project(g, l):
        return g * l[:, :1] if scalar else np.einsum("rnm,rm->rn", g, l)

    active = np.arange(R)
    for it in range(max_iter):
        if active.size == 0:
            break
        g = Gs[active]
        l = lam[active]
        v = project(g, l)
        f = -np.sum(rho.value(v), axis=1)
        d1 = rho.d1(v)
        d2 = rho.d2(v)
        if rho.kind != "log_el" and np.any(d2 <= 0):
            raise FloatingPointError("objective lost concavity on the visited domain")
        if scalar:
            grad = -np.sum(d1 * g, axis=1)[:, None]
            J = np.sum(d2 * g * g, axis=1)[:, None, None]
        else:
            grad = -np.einsum("rn,rnm->rm", d1, g)
            J = np.einsum("rn,rnm,rnk->rmk", d2, g, g)
        value[active] = f
        iters[active] = it
        done = np.linalg.norm(grad, axis=1) <= tol
        step = _newton_direction(J, grad)
        decrement = np.einsum("rm,rm->r", grad, step)
        scale = np.maximum(1.0, np.abs(f))
        done |= decrement <= 1e-26 * scale
        conv[active[done]] = True
        keep = ~done
        active, g, l, f, step = active[keep], g[keep], l[keep], f[keep], step[keep]
        # below this the ascent test only sees rounding noise in f
        polish = (decrement <= 1e-10 * scale)[keep]
        if active.size == 0:
            break

        s = np.ones(active.size)
        accepted = np.zeros(active.size, dtype=bool)
        new_l = l.copy()
        new_f = f.copy()
        for _ in range(_MAX_HALVINGS):
            pend = np.flatnonzero(~accepted)
            if pend.size == 0:
                break
            trial = l[pend] + s[pend, None] * step[pend]
            vt = project(g[pend], trial)
            sl = rho.slack(vt)
            feas = np.all(sl >= slack_floor, axis=1)
            ft = np.full(pend.size, -np.inf)
            if np.any(feas):
                ft[feas] = -np.sum(rho.value(vt[feas]), axis=1)
            ok = feas & ((ft >= f[pend]) | polish[pend])
            hit = pend[ok]
            accepted[hit] = True
            new_l[hit] = trial[ok]
            new_f[hit] = ft[ok]
            s[pend[~ok]] *= 0.5
        lam[active] = new_l
        value[active] = new_f
        if keep_history:
            history.append(float(new_f[0]))
        # stalled rows: no ascent step found
        stalled = ~accepted
        iters[active] = it + 1
        active = active[~stalled]
    else:
        iters[active] = max_iter

    v = project(Gs, lam)
    value = -np.sum(rho.value(v), axis=1)
    min_slack = np.min(rho.slack(v), axis=1)
    return lam, value, iters, conv, min_slack, history


def _newton_direction(J, grad):
    """Solve ``J d = grad`` row-wise; gradient step where ``J`` is not PD."""
    if J.shape[1] == 1:
        j = J[:, 0, 0]
        out = np.empty_like(grad)
        good = j > 0
        out[good, 0] = grad[good, 0] / j[good]
        out[~good, 0] = grad[~good, 0]
        return out
    out = np.empty_like(grad)
    try:
        L = np.linalg.cholesky(J)
        z = np.linalg.solve(L, grad[:, :, None])
        return np.linalg.solve(np.swapaxes(L, 1, 2), z)[:, :, 0]
    except np.linalg.LinAlgError:
        pass
    for r in range(J.shape[0]):
        try:
            L = np.linalg.cholesky(J[r])
            out[r] = np.linalg.solve(L.T, np.linalg.solve(L, grad[r]))
        except np.linalg.LinAlgError:
            tr = np.trace(J[r])
            out[r] = grad[r] / tr if tr > 0 else grad[r]
    return out
