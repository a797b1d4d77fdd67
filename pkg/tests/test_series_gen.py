import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from heavytail_cpt.series_gen import (
    ARChangeSpec,
    InnovationKind,
    Series,
    SeriesFormatError,
    SimulationError,
    innovation_stream,
    load_series,
    round_half_up,
    save_series,
    simulate,
)


def test_zero_coefficients_reproduce_innovations():
    spec = ARChangeSpec((0.0,), 5, (0.0,), 0.5, seed=11)
    innov = InnovationKind.gaussian(1.0)
    s = simulate(spec, innov)
    e = innovation_stream(spec, innov)
    np.testing.assert_array_equal(s.y, e[-5:])


def test_regime_switch_after_break_index():
    spec = ARChangeSpec((0.3,), 100, (-0.5,), 0.5, seed=3)
    innov = InnovationKind.cauchy()
    s = simulate(spec, innov)
    e = innovation_stream(spec, innov)[spec.burn_in:]
    assert spec.break_index == 50
    vals = s.values  # y_0 .. y_n
    for t in (1, 50):
        assert vals[t] == pytest.approx(0.3 * vals[t - 1] + e[t - 1], abs=1e-12)
    for t in (51, 100):
        assert vals[t] == pytest.approx(-0.5 * vals[t - 1] + e[t - 1], abs=1e-12)


def test_ar2_residuals_match_stream():
    spec = ARChangeSpec((0.5, -0.2), 200, seed=5)
    innov = InnovationKind.student_t(3.0)
    s = simulate(spec, innov)
    again = simulate(spec, innov)
    np.testing.assert_array_equal(s.values, again.values)
    e = innovation_stream(spec, innov)[spec.burn_in:]
    v = s.values
    resid = v[2:] - 0.5 * v[1:-1] + 0.2 * v[:-2]
    np.testing.assert_allclose(resid, e, rtol=0, atol=1e-12)


def test_no_break_uses_theta1():
    a = simulate(ARChangeSpec((0.3,), 50, seed=9), InnovationKind.gaussian())
    b = simulate(ARChangeSpec((0.3,), 50, (0.3,), 0.5, seed=9), InnovationKind.gaussian())
    np.testing.assert_array_equal(a.values, b.values)


def test_replicates_are_independent_streams():
    spec = ARChangeSpec((0.3,), 50, seed=1)
    a = simulate(spec, InnovationKind.gaussian(), replicate=0)
    b = simulate(spec, InnovationKind.gaussian(), replicate=1)
    assert not np.array_equal(a.values, b.values)


def test_explosive_path_reports_index():
    spec = ARChangeSpec((0.3,), 400, (1e200,), 0.5, burn_in=10, seed=0)
    with pytest.raises(SimulationError) as info:
        simulate(spec, InnovationKind.gaussian())
    assert info.value.index > 200


def test_break_index_bounds():
    with pytest.raises(ValueError):
        ARChangeSpec((0.3,), 10, (0.1,), 0.01)
    assert round_half_up(2.5) == 3
    assert ARChangeSpec((0.3,), 5, (0.1,), 0.5).break_index == 3


@pytest.mark.parametrize("bad", [("gaussian", 0.0), ("cauchy", -1.0), ("laplace", 1.0)])
def test_innovation_validation(bad):
    with pytest.raises(ValueError):
        InnovationKind(*bad)


def test_innovation_parse():
    assert InnovationKind.parse("t2") == InnovationKind.student_t(2.0)
    assert InnovationKind.parse("normal") == InnovationKind.gaussian()
    assert InnovationKind.parse("student_t:3.5").param == 3.5
    assert InnovationKind.parse("cauchy").label() == "cauchy"


@pytest.mark.parametrize("kind", ["gaussian", "student_t", "cauchy"])
def test_innovations_have_median_zero(kind):
    from heavytail_cpt.series_gen import replicate_rng
    draws = InnovationKind(kind, 2.0 if kind == "student_t" else 1.0).draw(replicate_rng(0), 40_000)
    assert abs(np.median(draws)) < 0.03


@pytest.mark.parametrize("innov", [InnovationKind.gaussian(), InnovationKind.student_t(4.0)])
def test_long_path_autocorrelation(innov):
    s = simulate(ARChangeSpec((0.3,), 100_000, seed=2), innov)
    y = s.values - s.values.mean()
    rho1 = np.dot(y[1:], y[:-1]) / np.dot(y, y)
    assert abs(rho1 - 0.3) < 0.05


def test_cauchy_paths_have_extremes():
    hits = [np.max(np.abs(simulate(ARChangeSpec((0.3,), 10_000, seed=s),
                                   InnovationKind.cauchy()).y)) > 100 for s in range(20)]
    assert all(hits)


def test_load_plain_file(tmp_path):
    f = tmp_path / "y.csv"
    f.write_text("1.0\n2.0\n3.0")
    s = load_series(f, 1)
    np.testing.assert_array_equal(s.values, [1.0, 2.0, 3.0])
    assert s.n == 2


def test_load_header_and_round_trip(tmp_path):
    s = simulate(ARChangeSpec((0.3,), 30, seed=4), InnovationKind.cauchy())
    f = tmp_path / "y.csv"
    save_series(s, f)
    assert f.read_text().splitlines()[0] == "y"
    back = load_series(f, 1)
    np.testing.assert_array_equal(back.values, s.values)
    g = tmp_path / "z.csv"
    save_series(back, g)
    assert g.read_text() == f.read_text()


def test_load_errors(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("y\n1.0\nabc\n2.0\n")
    with pytest.raises(SeriesFormatError, match="line 3"):
        load_series(f, 1)
    f.write_text("1.0\n2.0\n")
    with pytest.raises(SeriesFormatError, match="p\\+2"):
        load_series(f, 1)


def test_series_invariants():
    with pytest.raises(ValueError):
        Series(1, np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        Series(1, np.array([1.0, np.nan, 2.0]))
    s = Series(2, np.arange(6.0))
    np.testing.assert_array_equal(s.lags, [[1, 0], [2, 1], [3, 2], [4, 3]])
    assert not s.values.flags.writeable


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=3, max_size=40))
def test_save_load_round_trip_property(tmp_path_factory, vals):
    f = tmp_path_factory.mktemp("rt") / "y.csv"
    s = Series(1, np.array(vals))
    save_series(s, f)
    np.testing.assert_array_equal(load_series(f, 1).values, s.values)
