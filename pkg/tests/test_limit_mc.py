import numpy as np
import pytest
from scipy import stats

from heavytail_cpt.limit_mc import (
    CriticalValueTable,
    brownian_paths,
    critical_value,
    density_at_zero,
    estimate_q,
    grid_indices,
    projection_complement,
    simulate_limit,
    simulate_limit_samples,
    sup_functional,
    sym_sqrt,
)
from heavytail_cpt.moments import MomentConfig, SingularMatrixError, build_panel
from heavytail_cpt.series_gen import ARChangeSpec, InnovationKind, simulate


def _random_spd(rng, m):
    A = rng.normal(size=(m, m))
    return A @ A.T + 0.1 * np.eye(m)


def test_identity_instruments_give_zero_q():
    s = simulate(ARChangeSpec((0.3,), 100, seed=1), InnovationKind.cauchy())
    qe = estimate_q(build_panel(s), [0.3])
    assert np.array_equal(qe.q_mat, np.zeros((1, 1)))
    assert qe.f0 is None and qe.g_mat is None


def test_zero_g_gives_identity():
    q, _ = projection_complement(np.diag([1.0, 2.0, 3.0]), np.zeros((3, 1)))
    np.testing.assert_array_equal(q, np.eye(3))


@pytest.mark.parametrize("m,p", [(2, 1), (3, 1), (3, 2), (4, 1), (4, 3)])
def test_q_is_orthogonal_complement_projection(m, p, rng):
    for _ in range(20):
        q, sigma = projection_complement(_random_spd(rng, m), rng.normal(size=(m, p)))
        np.testing.assert_allclose(q, q.T, atol=1e-12)
        np.testing.assert_allclose(q @ q, q, atol=1e-10)
        eig = np.linalg.eigvalsh(q)
        assert np.all(np.minimum(np.abs(eig), np.abs(eig - 1)) < 1e-6)
        assert np.trace(q) == pytest.approx(m - p, abs=1e-8)
        assert np.all(np.linalg.eigvalsh(sigma) > 0)


def test_square_invertible_g_gives_zero(rng):
    for m in (1, 2, 3):
        q, _ = projection_complement(_random_spd(rng, m), rng.normal(size=(m, m)))
        assert np.linalg.norm(q) <= 1e-8


def test_singular_inputs_are_named():
    with pytest.raises(SingularMatrixError, match="Omega"):
        projection_complement(np.zeros((2, 2)), np.ones((2, 1)))
    with pytest.raises(SingularMatrixError, match="G' Omega"):
        projection_complement(np.eye(2), np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_sym_sqrt(rng):
    a = _random_spd(rng, 3)
    r = sym_sqrt(a)
    np.testing.assert_allclose(r @ r, a, rtol=1e-10)
    np.testing.assert_allclose(sym_sqrt(a, inverse=True) @ r, np.eye(3), atol=1e-10)


def test_extended_instruments_q():
    s = simulate(ARChangeSpec((0.3,), 300, seed=5), InnovationKind.student_t(2.0))
    phi = lambda x: np.sign(x) * np.sqrt(np.abs(x))
    qe = estimate_q(build_panel(s, MomentConfig(phi=phi)), [0.3])
    assert qe.f0 > 0
    assert qe.q_mat.shape == (2, 2)
    np.testing.assert_allclose(qe.q_mat @ qe.q_mat, qe.q_mat, atol=1e-8)
    assert np.trace(qe.q_mat) == pytest.approx(1.0, abs=1e-8)


def test_density_at_zero_gaussian(rng):
    x = rng.standard_normal(50_000)
    assert density_at_zero(x) == pytest.approx(stats.norm.pdf(0), abs=0.01)
    # heavy tails do not blow up the bandwidth
    c = rng.standard_cauchy(50_000)
    assert density_at_zero(c) == pytest.approx(1 / np.pi, abs=0.02)


def test_single_point_functional_is_scaled_chi2():
    tab = simulate_limit(1, "bridge", 0.5, 0.5, paths=20_000, seed=3)
    assert critical_value(tab, 0.05) == pytest.approx(0.25 * stats.chi2.ppf(0.95, 1), abs=0.06)


def test_restricted_quantile_below_full_sup_bound():
    tab = simulate_limit(1, "bridge", 0.1, 0.9, paths=20_000, seed=4)
    assert critical_value(tab, 0.05) < 1.3581 ** 2


def test_flat_weight_matches_manual_evaluation(rng):
    B = brownian_paths(rng, 50, 200, 1)
    r = np.arange(20, 181) / 200
    bridge = B[:, 20:181, 0] - r * B[:, -1:, 0]
    manual = np.max(bridge ** 2 / (r * (1 - r)), axis=1)
    np.testing.assert_allclose(sup_functional(B, "flat", 0.1, 0.9), manual, rtol=1e-12)


def test_q_term_mean(rng):
    m, paths = 3, 20_000
    B = brownian_paths(rng, paths, 100, m)
    b1 = B[:, -1, :]
    mean = np.mean(np.sum(b1 * b1, axis=1))
    assert abs(mean - m) < 3 * np.sqrt(2 * m / paths)
    with_q = sup_functional(B, "bridge", 0.5, 0.5, np.eye(m))
    without = sup_functional(B, "bridge", 0.5, 0.5)
    np.testing.assert_allclose(with_q - without, 0.25 * np.sum(b1 * b1, axis=1), rtol=1e-10)


def test_grid_refinement_never_lowers_quantiles(rng):
    fine = brownian_paths(rng, 4000, 400, 1)
    coarse = fine[:, ::2, :]
    s_f = sup_functional(fine, "bridge", 0.1, 0.9)
    s_c = sup_functional(coarse, "bridge", 0.1, 0.9)
    assert np.all(s_f >= s_c - 1e-15)
    levels = [0.5, 0.9, 0.95, 0.99]
    assert np.all(np.quantile(s_f, levels) >= np.quantile(s_c, levels))


def test_grid_indices():
    np.testing.assert_array_equal(grid_indices(10, 0.5, 0.5), [5])
    np.testing.assert_array_equal(grid_indices(10, 0.1, 0.3), [1, 2, 3])
    assert grid_indices(1000, 1 / 3, 1 / 3).size == 1


def test_reproducible_across_workers(monkeypatch):
    a = simulate_limit_samples(1, "bridge", 0.1, 0.9, paths=5000, grid_points=200, seed=9,
                               workers=1)
    b = simulate_limit_samples(1, "bridge", 0.1, 0.9, paths=5000, grid_points=200, seed=9,
                               workers=3)
    np.testing.assert_array_equal(a, b)
    monkeypatch.setenv("HEAVYTAIL_CPT_THREADS", "1")
    c = simulate_limit_samples(1, "bridge", 0.1, 0.9, paths=5000, grid_points=200, seed=9,
                               workers=4)
    np.testing.assert_array_equal(a, c)


def test_table_properties_and_lookup():
    tab = simulate_limit(1, "bridge", 0.1, 0.9, paths=2000, grid_points=200, seed=1)
    levels = sorted(tab.quantiles)
    vals = [tab.quantiles[lv] for lv in levels]
    assert levels[0] == 0.0 and vals[0] == 0.0
    assert np.all(np.diff(vals) >= 0)
    assert critical_value(tab, 0.05) == tab.quantiles[0.95]
    assert critical_value(tab, 0.01) >= critical_value(tab, 0.10)
    mid = critical_value(tab, 0.045)
    assert tab.quantiles[0.95] <= mid <= tab.quantiles[0.96]
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            critical_value(tab, bad)
    with pytest.raises(ValueError):
        critical_value(tab, 1e-5)


def test_table_csv_round_trip(tmp_path):
    tab = simulate_limit(2, "flat", 0.2, 0.8, q_mat=np.diag([0.0, 1.0]), paths=500,
                         grid_points=100, seed=2)
    f = tmp_path / "t.csv"
    text = tab.to_csv(f)
    assert text.startswith("# m = 2")
    assert "level,value" in text
    back = CriticalValueTable.from_csv(f)
    assert back.quantiles == tab.quantiles
    assert (back.m, back.h_kind, back.r1, back.r2) == (2, "flat", 0.2, 0.8)
    np.testing.assert_array_equal(back.q_mat, tab.q_mat)


@pytest.mark.parametrize("kwargs", [dict(paths=50), dict(grid_points=10), dict(r1=0.6, r2=0.4),
                                    dict(h_kind="tent"), dict(m=0)])
def test_parameter_validation(kwargs):
    base = dict(m=1, h_kind="bridge", r1=0.1, r2=0.9, paths=200, grid_points=100)
    base.update(kwargs)
    with pytest.raises(ValueError):
        simulate_limit(**base)
