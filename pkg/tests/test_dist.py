import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from netload.dist import (DomainError, ForecastSeries, GpdParams, QuantileCurve,
                          SplicedForecast, gpd_cdf, gpd_logpdf, gpd_quantile, gpd_sf,
                          spliced_cdf, spliced_quantile)


def make_forecast(levels=(0.05, 0.25, 0.5, 0.75, 0.95), values=(-2.0, -0.7, 0.0, 0.6, 1.9),
                  lo=(0.5, 0.2), hi=(0.7, 0.1)):
    return SplicedForecast(QuantileCurve(tuple(levels), tuple(values)),
                           GpdParams(*lo), GpdParams(*hi))


# -- GPD primitives --------------------------------------------------------------

def test_gpd_cdf_examples():
    assert gpd_cdf(0.0, GpdParams(1.0, 0.1)) == 0.0
    assert gpd_cdf(1.0, GpdParams(1.0, 1.0)) == pytest.approx(0.5, abs=1e-15)
    assert gpd_cdf(2 * np.log(2), GpdParams(2.0, 0.0)) == pytest.approx(0.5, abs=1e-15)


def test_gpd_quantile_examples():
    for p in (GpdParams(1.0, 0.3), GpdParams(3.0, -0.2), GpdParams(0.5, 0.0)):
        assert gpd_quantile(0.0, p) == 0.0
    assert gpd_quantile(0.5, GpdParams(1.0, 1.0)) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("scale", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("shape", [-0.4, 0.0, 0.4])
def test_gpd_round_trip_against_scipy(scale, shape):
    p = GpdParams(scale, shape)
    probs = np.arange(1, 100) / 100
    for prob in probs:
        y = gpd_quantile(prob, p)
        assert abs(gpd_cdf(y, p) - prob) < 1e-10
        # independent oracle: scipy's genpareto uses the same parameterisation
        assert y == pytest.approx(stats.genpareto.ppf(prob, shape, scale=scale), rel=1e-10)
        assert gpd_cdf(y, p) == pytest.approx(stats.genpareto.cdf(y, shape, scale=scale),
                                              abs=1e-12)


def test_gpd_logpdf_matches_scipy():
    for shape in (-0.3, 0.0, 0.25):
        p = GpdParams(1.7, shape)
        for y in (0.0, 0.3, 1.2, 3.0):
            assert gpd_logpdf(y, p) == pytest.approx(stats.genpareto.logpdf(y, shape, scale=1.7),
                                                     rel=1e-12)


def test_gpd_small_shape_continuity():
    y = np.linspace(0, 10, 101)
    for eps in (1e-8, -1e-8):
        for v in y:
            a = gpd_cdf(v, GpdParams(1.0, eps))
            b = gpd_cdf(v, GpdParams(1.0, 0.0))
            assert abs(a - b) < 1e-6
    # just above the switch threshold the power form must agree too
    for v in y:
        assert abs(gpd_cdf(v, GpdParams(1.0, 2e-7)) - (1 - np.exp(-v))) < 1e-6


def test_gpd_domain_errors():
    with pytest.raises(DomainError):
        gpd_cdf(-0.1, GpdParams(1.0, 0.1))
    with pytest.raises(DomainError):
        gpd_cdf(3.0, GpdParams(1.0, -0.5))  # support ends at 2
    with pytest.raises(DomainError):
        gpd_quantile(1.0, GpdParams(1.0, 0.0))
    with pytest.raises(DomainError):
        GpdParams(0.0, 0.1)
    with pytest.raises(DomainError):
        GpdParams(1.0, np.nan)
    assert gpd_quantile(1.0, GpdParams(1.0, -0.5)) == pytest.approx(2.0)


def test_gpd_sf_complements_cdf():
    p = GpdParams(0.8, 0.2)
    for y in (0.0, 0.5, 4.0):
        assert gpd_sf(y, p) + gpd_cdf(y, p) == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(scale=st.floats(0.01, 50), shape=st.floats(-0.45, 0.9),
       prob=st.floats(1e-9, 1 - 1e-9))
def test_gpd_round_trip_property(scale, shape, prob):
    p = GpdParams(scale, shape)
    y = gpd_quantile(prob, p)
    assert y >= 0
    assert abs(gpd_cdf(y, p) - prob) < 1e-9


@settings(max_examples=100, deadline=None)
@given(scale=st.floats(0.01, 50), shape=st.floats(-0.45, 0.9),
       a=st.floats(0, 100), b=st.floats(0, 100))
def test_gpd_cdf_monotone(scale, shape, a, b):
    p = GpdParams(scale, shape)
    lo, hi = sorted((a, b))
    hi = min(hi, p.upper_bound)
    lo = min(lo, hi)
    assert gpd_cdf(lo, p) <= gpd_cdf(hi, p)


# -- quantile curve ---------------------------------------------------------------

def test_quantile_curve_validation():
    with pytest.raises(ValueError):
        QuantileCurve((0.5,), (0.0,))
    with pytest.raises(ValueError):
        QuantileCurve((0.2, 0.1), (0.0, 1.0))
    with pytest.raises(ValueError):
        QuantileCurve((0.1, 0.2), (1.0, 0.0))
    with pytest.raises(ValueError):
        QuantileCurve((0.0, 0.2), (0.0, 1.0))
    c = QuantileCurve((0.1, 0.5, 0.9), (-1.0, 0.0, 2.0))
    assert c.value_at(0.7) == pytest.approx(1.0)


# -- spliced forecast -----------------------------------------------------------------

def test_spliced_examples():
    f = make_forecast()
    assert spliced_cdf(0.0, f) == 0.5
    assert spliced_cdf(f.q_lo, f) == f.alpha_lo
    assert spliced_cdf(f.q_hi, f) == f.alpha_hi
    for lv, v in zip(f.central.levels, f.central.values):
        assert spliced_quantile(lv, f) == pytest.approx(v, abs=1e-15)
    assert spliced_quantile(f.alpha_lo, f) == f.q_lo


def test_spliced_lower_tail_branch_formula():
    f = make_forecast()
    for y in (-2.5, -4.0, -10.0):
        expected = f.alpha_lo * (1 - gpd_cdf(f.q_lo - y, f.tail_lo))
        assert spliced_cdf(y, f) == pytest.approx(expected, rel=1e-12)


def test_spliced_upper_tail_branch_formula():
    f = make_forecast()
    for y in (2.0, 3.5, 9.0):
        expected = f.alpha_hi + (1 - f.alpha_hi) * gpd_cdf(y - f.q_hi, f.tail_hi)
        assert spliced_cdf(y, f) == pytest.approx(expected, rel=1e-12)


def test_spliced_deep_quantile_matches_inversion_and_bisection():
    f = make_forecast()
    q = spliced_quantile(0.0005, f)
    expected = f.q_lo - gpd_quantile(1 - 0.0005 / f.alpha_lo, f.tail_lo)
    assert q == pytest.approx(expected, rel=1e-12)
    root = optimize.brentq(lambda y: spliced_cdf(y, f) - 0.0005, -100, f.q_lo, xtol=1e-14)
    assert q == pytest.approx(root, abs=1e-9)


def test_spliced_validation():
    with pytest.raises(ValueError):
        make_forecast(levels=(0.5, 0.6, 0.7, 0.8, 0.9))
    with pytest.raises(DomainError):
        spliced_quantile(1.0, make_forecast())


def test_spliced_junction_continuity():
    f = make_forecast()
    for q, a in ((f.q_lo, f.alpha_lo), (f.q_hi, f.alpha_hi)):
        for s in (-1, 1):
            assert abs(spliced_cdf(q + s * 1e-8, f) - a) < 1e-6


def test_record_round_trip():
    f = make_forecast()
    assert SplicedForecast.from_record(f.to_record()) == f


def random_forecasts(rng, n, flats=False):
    out = []
    for _ in range(n):
        k = rng.integers(3, 12)
        inner = np.sort(rng.uniform(0.06, 0.94, k - 2))
        a_lo, a_hi = rng.uniform(0.001, 0.05), rng.uniform(0.95, 0.999)
        levels = np.unique(np.r_[a_lo, inner, 0.5, a_hi])
        vals = np.cumsum(np.r_[0, rng.exponential(0.3, levels.size - 1)])
        if flats:
            # tied quantiles put an atom in the CDF
            tie = rng.random(levels.size) < 0.2
            vals = np.maximum.accumulate(np.where(tie, np.roll(vals, 1), vals))
        vals = vals - vals.mean()
        out.append(SplicedForecast(QuantileCurve(tuple(levels), tuple(vals)),
                                   GpdParams(rng.uniform(0.05, 2), rng.uniform(0, 0.49)),
                                   GpdParams(rng.uniform(0.05, 2), rng.uniform(0, 0.49))))
    return out


def test_series_matches_scalar_api():
    rng = np.random.default_rng(1)
    levels = (0.02, 0.3, 0.5, 0.8, 0.97)
    fs = [SplicedForecast(QuantileCurve(levels, tuple(np.sort(rng.normal(size=5)))),
                          GpdParams(rng.uniform(0.1, 1), 0.1), GpdParams(0.4, rng.uniform(0, .3)))
          for _ in range(30)]
    s = ForecastSeries.from_forecasts(fs)
    y = rng.normal(scale=3, size=30)
    np.testing.assert_allclose(s.cdf(y), [spliced_cdf(v, f) for v, f in zip(y, fs)], rtol=0,
                               atol=1e-15)
    np.testing.assert_allclose(s.quantile(0.001), [spliced_quantile(0.001, f) for f in fs])
    assert s[3] == fs[3]
    assert len(s.take([1, 4])) == 2


def test_series_validation():
    with pytest.raises(ValueError):
        ForecastSeries(np.array([0.1, 0.9]), np.array([[1.0, 0.0]]), 1, 0, 1, 0)
    with pytest.raises(ValueError):
        ForecastSeries(np.array([0.1, 0.9]), np.array([[0.0, 1.0]]), 0.0, 0, 1, 0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_spliced_bijection_property(seed):
    rng = np.random.default_rng(seed)
    f = random_forecasts(rng, 1)[0]
    probs = np.r_[1e-6, 1e-4, np.linspace(0.001, 0.999, 57), 1 - 1e-4, 1 - 1e-6]
    s = ForecastSeries.from_forecasts([f] * probs.size)
    q = s.quantile(probs)
    assert np.all(np.diff(q) >= 0)
    assert np.max(np.abs(s.cdf(q) - probs)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_spliced_cdf_monotone_property(seed):
    rng = np.random.default_rng(seed)
    f = random_forecasts(rng, 1, flats=True)[0]
    y = np.linspace(f.q_lo - 20, f.q_hi + 20, 10_000)
    c = ForecastSeries.from_forecasts([f] * y.size).cdf(y)
    assert np.all(np.diff(c) >= 0)
    assert np.all((c >= 0) & (c <= 1))
