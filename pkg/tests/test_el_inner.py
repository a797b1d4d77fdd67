import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import grid_max_scalar

from heavytail_cpt.el_inner import (
    LOG_EL,
    GELRho,
    feasible_box,
    solve_el,
    solve_multiplier,
    solve_multiplier_batch,
)


def test_closed_form_three_points():
    sol = solve_multiplier([1.0, 1.0, -1.0])
    assert sol.converged
    assert sol.lam[0] == pytest.approx(-1 / 3, abs=1e-8)
    assert sol.value == pytest.approx(2 * math.log(4 / 3) + math.log(2 / 3), abs=1e-8)
    assert sol.min_slack > 0


@pytest.mark.parametrize("block", [[0.0, 0.0, 0.0], [1.0, -1.0], [2.0, -2.0, 0.5, -0.5]])
def test_balanced_blocks_have_zero_value(block):
    sol = solve_multiplier(block)
    assert sol.lam[0] == 0.0
    assert sol.value == 0.0
    assert sol.converged


def test_one_sided_block_is_unbounded():
    sol = solve_multiplier([1.0, 2.0])
    assert not sol.bounded and sol.value == math.inf
    sol = solve_multiplier([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert not sol.bounded


def test_two_dimensional_symmetric_block():
    g = [[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]]
    sol = solve_multiplier(g)
    np.testing.assert_allclose(sol.lam, 0.0, atol=1e-12)
    assert sol.value == pytest.approx(0.0, abs=1e-15)


def test_feasible_box_examples():
    box = feasible_box([2.0, -1.0])
    assert (box.lower, box.upper) == (-1.0, 0.5)
    assert feasible_box([0.0]).unbounded
    ball = feasible_box([[4.0, 0.0], [0.0, -1.0]])
    assert ball.radius == pytest.approx(0.25)


def test_matches_grid_search_on_random_blocks(rng):
    for _ in range(60):
        size = rng.integers(2, 9)
        g = rng.uniform(-1, 1, size)
        if not (np.any(g > 0) and np.any(g < 0)):
            continue
        sol = solve_multiplier(g)
        ref, _ = grid_max_scalar(g)
        assert sol.value == pytest.approx(ref, abs=1e-6)


@pytest.mark.parametrize("c", [-0.5, 0.5, 1.0, -2.0])
def test_cressie_read_matches_grid_search(c, rng):
    rho = GELRho.cressie_read(c)
    for _ in range(15):
        g = rng.uniform(-1, 1, rng.integers(3, 9))
        if not (np.any(g > 0) and np.any(g < 0)):
            continue

        def objective(lam):
            v = np.outer(lam, g)
            slack = 1 + c * v
            with np.errstate(invalid="ignore"):
                out = -rho.value(v).sum(axis=1)
            return np.where(np.all(slack > 0, axis=1), out, -np.inf)

        sol = solve_multiplier(g, rho)
        ref, _ = grid_max_scalar(g, objective)
        # for c > 0 the supremum can sit on the edge 1 + c v = 0 of the
        # domain, where it is approached but never attained
        assert sol.converged or sol.min_slack < 1e-8
        assert sol.value >= ref - 1e-9
        assert sol.value == pytest.approx(ref, abs=1e-6)


def test_cressie_read_close_to_log_el_near_minus_one():
    g = [1.0, 1.0, -1.0, 0.3]
    base = solve_el(g).value
    near = solve_multiplier(g, GELRho.cressie_read(-1.0 + 1e-6)).value
    assert near == pytest.approx(base, rel=1e-4)


def test_rho_normalisation():
    for rho in (LOG_EL, GELRho.cressie_read(-0.5), GELRho.cressie_read(2.0)):
        assert rho.value(0.0) == pytest.approx(0.0, abs=1e-15)
        assert rho.d1(0.0) == pytest.approx(1.0)
        assert rho.d2(0.0) == pytest.approx(1.0)
        h = 1e-4
        assert (rho.value(h) - rho.value(-h)) / (2 * h) == pytest.approx(1.0, rel=1e-6)
    with pytest.raises(ValueError):
        GELRho.cressie_read(0.0)


def test_log_el_path_identical():
    g = np.array([0.4, -1.2, 0.9, 0.1, -0.3])
    a, b = solve_multiplier(g, LOG_EL), solve_el(g)
    assert a.value == b.value and np.array_equal(a.lam, b.lam)


blocks = st.lists(st.floats(-5, 5, allow_nan=False).filter(lambda v: abs(v) > 1e-3),
                  min_size=2, max_size=12).filter(lambda v: min(v) < 0 < max(v))


@given(blocks, st.floats(0.01, 100))
def test_scale_invariance(vals, alpha):
    g = np.array(vals)
    a, b = solve_multiplier(g), solve_multiplier(alpha * g)
    assert b.value == pytest.approx(a.value, abs=1e-9, rel=1e-9)
    assert b.lam[0] == pytest.approx(a.lam[0] / alpha, rel=1e-6, abs=1e-9)


@given(blocks)
def test_solution_properties(vals):
    sol = solve_multiplier(np.array(vals))
    assert sol.converged and sol.value >= 0 and sol.min_slack > 0
    grad = np.sum(np.array(vals) / (1 - sol.lam[0] * np.array(vals)))
    assert abs(grad) <= 1e-9 or sol.iterations > 0
    hist = np.array(sol.history)
    # nondecreasing up to rounding of the objective sum
    assert np.all(np.diff(hist) >= -1e-12 * np.maximum(1.0, np.abs(hist[1:])))


def test_batch_agrees_with_single(rng):
    G = rng.uniform(-1, 1, (40, 7))
    G[3] = np.abs(G[3])
    G[5] = 0.0
    batch = solve_multiplier_batch(G)
    for r in range(G.shape[0]):
        single = solve_multiplier(G[r])
        assert batch.bounded[r] == single.bounded
        if single.bounded:
            assert batch.value[r] == pytest.approx(single.value, abs=1e-12)
    assert not batch.bounded[3] and batch.value[5] == 0


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_multiplier([])
    with pytest.raises(ValueError):
        solve_multiplier([1.0, np.inf])


def test_iteration_cap_reports_non_convergence():
    sol = solve_multiplier([1.0, 1.0, -1.0], max_iter=1)
    assert not sol.converged
    assert sol.iterations == 1


def test_batch_agrees_with_single_two_dimensional(rng):
    G = rng.normal(size=(25, 9, 2))
    G[2] = np.abs(G[2])  # every g in the positive quadrant
    G[4, :, 1] = np.abs(G[4, :, 0])  # one coordinate one-sided
    G[6] = 0.0
    batch = solve_multiplier_batch(G)
    for r in range(G.shape[0]):
        single = solve_multiplier(G[r])
        assert batch.bounded[r] == single.bounded
        if single.bounded:
            assert batch.value[r] == pytest.approx(single.value, abs=1e-10)
    assert not batch.bounded[2] and not batch.bounded[4]
    assert np.all(batch.converged)
