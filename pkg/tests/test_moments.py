import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heavytail_cpt.moments import (
    MomentConfig,
    SingularMatrixError,
    build_panel,
    check_score,
    moment_vector,
    omega_hat,
    self_weight,
    self_weights,
    weight_cutoff,
)
from heavytail_cpt.series_gen import ARChangeSpec, InnovationKind, Series, simulate


def test_weight_cutoff_examples():
    assert weight_cutoff(np.arange(1, 101), 0.95) == 95
    assert weight_cutoff(np.full(17, 2.5), 0.95) == 2.5
    assert weight_cutoff(np.arange(1, 101)[::-1], 0.07) == 7
    with pytest.raises(ValueError):
        weight_cutoff(np.arange(5), 1.0)
    with pytest.raises(ValueError):
        weight_cutoff(np.array([]), 0.5)


def test_self_weight_examples():
    c = 2.0
    assert self_weight([c / 2], c) == 1.0
    assert self_weight([2 * c], c) == pytest.approx(0.125)
    assert self_weight([0.0, 3 * c], c) == pytest.approx(1 / 27)
    assert self_weight([-3 * c], c) == pytest.approx(1 / 27)
    with pytest.raises(ValueError):
        self_weight([1.0], 0.0)


@given(st.lists(st.floats(-1e8, 1e8, allow_nan=False), min_size=1, max_size=30),
       st.floats(1e-3, 1e3))
def test_weights_in_unit_interval(xs, c):
    w = self_weights(np.array(xs)[:, None], c)
    assert np.all(w > 0) and np.all(w <= 1)
    np.testing.assert_allclose(w, [self_weight([x], c) for x in xs], rtol=1e-14)


def test_moment_vector_examples():
    s = Series(1, np.array([0.5, 1.0, 0.5]))
    panel = build_panel(s, MomentConfig(weight_cutoff_q=0.99))
    assert panel.weights[0] == 1.0
    np.testing.assert_allclose(moment_vector(panel, 1, [0.4]), [0.25])
    # residual exactly zero counts as <= 0
    np.testing.assert_allclose(moment_vector(panel, 1, [2.0]), [-0.25])
    assert check_score(-1.0, 0.25) == pytest.approx(-0.75)
    with pytest.raises(IndexError):
        moment_vector(panel, 3, [0.0])


def _panel(seed=0, n=60, cfg=None):
    s = simulate(ARChangeSpec((0.3,), n, seed=seed), InnovationKind.cauchy())
    return build_panel(s, cfg)


def test_two_values_per_time(rng):
    panel = _panel(cfg=MomentConfig(tau=0.3))
    for beta in rng.normal(size=5):
        g = panel.moments([beta])[:, 0]
        a = panel.a_star[:, 0]
        assert np.all(np.isclose(g, 0.3 * a) | np.isclose(g, -0.7 * a))


def test_omega_examples():
    s = Series(1, np.ones(6))
    panel = build_panel(s)
    assert omega_hat(panel)[0, 0] == pytest.approx(0.25)
    assert omega_hat(panel, range(2, 4))[0, 0] == pytest.approx(0.25)
    zero = Series(1, np.array([0.0, 0.0, 1.0, 0.0]))
    zpanel = build_panel(zero, MomentConfig(abs_cutoff=True))
    sub = omega_hat(zpanel, [1])
    assert sub[0, 0] == 0
    with pytest.raises(SingularMatrixError):
        omega_hat(zpanel, [1], check=True)


def test_omega_matches_direct_sum(rng):
    phi = lambda x: np.column_stack([np.sin(x[:, 0]), x[:, 0] ** 2 / (1 + x[:, 0] ** 2)])
    panel = _panel(seed=3, cfg=MomentConfig(phi=phi))
    assert panel.m == 3
    om = omega_hat(panel)
    for beta in rng.normal(size=5):
        g = panel.moments([beta])
        np.testing.assert_allclose(om, g.T @ g / panel.n, rtol=1e-12, atol=1e-15)


def test_scale_equivariance():
    s = simulate(ARChangeSpec((0.3,), 80, seed=8), InnovationKind.cauchy())
    p1, p2 = build_panel(s), build_panel(s.scaled(3.0))
    np.testing.assert_allclose(p2.weights, p1.weights, rtol=1e-12)
    np.testing.assert_allclose(p2.a_star, 3.0 * p1.a_star, rtol=1e-12)
    assert p2.c == pytest.approx(3.0 * p1.c)


def test_most_weights_are_one():
    s = simulate(ARChangeSpec((0.3,), 400, seed=2), InnovationKind.cauchy())
    panel = build_panel(s, MomentConfig(abs_cutoff=True))
    # lags y_0..y_{n-1} are all but one of the sample defining c
    assert np.sum(panel.weights == 1.0) >= np.floor(0.95 * (panel.n + 1)) - 1
    # with the raw-value cutoff the lower tail is also down-weighted
    raw = build_panel(s)
    below = np.sum(np.abs(raw.lags[:, 0]) <= raw.c)
    assert np.sum(raw.weights == 1.0) == below


def test_nonpositive_cutoff_is_reported():
    s = Series(1, -np.abs(np.arange(1.0, 20.0)))
    with pytest.raises(ValueError, match="abs_cutoff"):
        build_panel(s)
    assert build_panel(s, MomentConfig(abs_cutoff=True)).c > 0


def test_config_validation():
    with pytest.raises(ValueError):
        MomentConfig(tau=1.0)
    with pytest.raises(ValueError):
        MomentConfig(weight_cutoff_q=0.0)
