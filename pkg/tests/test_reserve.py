import dataclasses

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from netload import reserve as rs
from netload import tailfit as tf
from netload.dist import ForecastSeries

NORMAL_LEVELS = np.array([0.005, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 0.995])


def symmetric_series(n=20, rng=None):
    rng = rng or np.random.default_rng(0)
    levels = np.array([0.02, 0.2, 0.5, 0.8, 0.98])
    half = np.array([-2.0, -0.8, 0.0, 0.8, 2.0])
    mu = rng.normal(size=n)
    s = rng.uniform(0.2, 1.0, n)
    return ForecastSeries(levels, mu[:, None] + half, s, 0.1, s, 0.1)


def test_symmetric_forecast_gives_equal_volumes():
    s = rs.reserve_volumes(symmetric_series(), 0.001)
    np.testing.assert_allclose(s.up, s.down, rtol=1e-12)
    assert np.all(s.up >= 0)


def test_standard_normal_deep_quantile():
    # normal tail beyond the 0.5% level fitted as a GPD from a large sample
    rng = np.random.default_rng(1)
    z = rng.standard_normal(4_000_000)
    q_lo = stats.norm.ppf(NORMAL_LEVELS[0])
    tail = tf.fit_gpd(tf.ExceedanceSet("lower", q_lo - z[z < q_lo], pd.DataFrame(
        index=np.arange(np.sum(z < q_lo)))), conditional=False)
    f = ForecastSeries(NORMAL_LEVELS, stats.norm.ppf(NORMAL_LEVELS)[None, :],
                       np.exp(tail.intercept), tail.shape, np.exp(tail.intercept), tail.shape)
    up = rs.reserve_volumes(f, 0.0005).up[0]
    # oracle 3.2905; the splice and MLE noise cost about 0.01
    assert up == pytest.approx(stats.norm.isf(0.0005), abs=0.02)


def test_alpha_at_branch_boundary_uses_curve():
    f = symmetric_series(5)
    s = rs.reserve_volumes(f, 0.02)
    np.testing.assert_allclose(s.up, f.values[:, 2] - f.values[:, 0], rtol=1e-14)


@settings(max_examples=40, deadline=None)
@given(a1=st.floats(1e-5, 0.49), a2=st.floats(1e-5, 0.49), seed=st.integers(0, 10**6))
def test_monotone_in_alpha(a1, a2, seed):
    f = symmetric_series(10, np.random.default_rng(seed))
    lo, hi = sorted((a1, a2))
    assert np.all(rs.reserve_volumes(f, lo).up >= rs.reserve_volumes(f, hi).up - 1e-12)
    assert np.all(rs.reserve_volumes(f, lo).down >= rs.reserve_volumes(f, hi).down - 1e-12)


def test_validation():
    with pytest.raises(ValueError):
        rs.reserve_volumes(symmetric_series(), 0.5)


# -- comparison --------------------------------------------------------------------------

def test_compare_identical():
    s = rs.reserve_volumes(symmetric_series(), 0.001)
    c = rs.compare_reserve(s, s)
    assert (c.volume_change, c.periods_lower, c.periods_tied) == (0.0, 0.0, 100.0)


def test_compare_scaled():
    b = rs.reserve_volumes(symmetric_series(), 0.001)
    a = rs.ReserveSchedule(b.alpha, 0.9 * b.up, 0.9 * b.down, b.median)
    c = rs.compare_reserve(a, b, "down")
    assert c.volume_change == pytest.approx(-10.0, abs=1e-12)
    assert c.periods_lower == 100.0


def test_compare_errors():
    b = rs.reserve_volumes(symmetric_series(), 0.001)
    zero = rs.ReserveSchedule(0.001, np.zeros(len(b)), np.zeros(len(b)), b.median)
    with pytest.raises(ValueError, match="zero"):
        rs.compare_reserve(b, zero)
    with pytest.raises(ValueError):
        rs.compare_reserve(b, rs.reserve_volumes(symmetric_series(), 0.002))
    with pytest.raises(ValueError):
        rs.compare_reserve(b, rs.reserve_volumes(symmetric_series(21), 0.001))


def test_table_layout():
    a = symmetric_series(30, np.random.default_rng(2))
    t = rs.comparison_table(a, a)
    assert t["level"].tolist() == ["0.01%", "0.05%", "0.10%", "0.25%",
                                   "99.75%", "99.90%", "99.95%", "99.99%"]
    assert t["direction"].tolist() == ["Upward"] * 4 + ["Downward"] * 4
    assert list(t.columns[2:]) == ["volume_change_pct", "periods_lower_pct", "periods_tied_pct"]


# -- audit -------------------------------------------------------------------------------

def hetero_truth(rng, n):
    """Heteroskedastic system whose lower and upper tails are exactly GPD.

    ``y = s * e`` with ``e`` spliced; the tail scale is ``s * 0.5``, so
    ``log(scale)`` is linear in ``log s`` and a conditional fit is correctly
    specified while a static one is not.
    """
    levels = np.array([0.05, 0.25, 0.5, 0.75, 0.95])
    base = np.array([-1.6, -0.6, 0.0, 0.6, 1.6])
    logs = rng.uniform(-1.0, 1.0, n)
    s = np.exp(logs)
    f = ForecastSeries(levels, s[:, None] * base, 0.5 * s, 0.1, 0.5 * s, 0.1)
    y = f.quantile(rng.uniform(size=n))
    return f, y, pd.DataFrame({"logs": logs})


def test_audit_calibrated_rate():
    rng = np.random.default_rng(3)
    f, y, _ = hetero_truth(rng, 100_000)
    a = rs.exceedance_audit(rs.reserve_volumes(f, 0.005), y)
    assert a.band_lo <= a.rate <= a.band_hi
    d = rs.exceedance_audit(rs.reserve_volumes(f, 0.005), y, "down")
    assert d.band_lo <= d.rate <= d.band_hi


def test_audit_trivial_cases():
    f = symmetric_series(2000, np.random.default_rng(4))
    s = rs.reserve_volumes(f, 0.01)
    assert rs.exceedance_audit(s, s.median).rate == 0.0
    zero = rs.ReserveSchedule(0.01, np.zeros(2000), np.zeros(2000), s.median)
    y = f.quantile(np.random.default_rng(5).uniform(size=2000))
    r = rs.exceedance_audit(zero, y).rate
    lo, hi = tf.coverage_band(0.5, 2000)
    assert lo <= r <= hi
    with pytest.raises(ValueError):
        rs.exceedance_audit(s, y, "sideways")


def test_conditional_beats_static_on_heteroskedastic_data():
    rng = np.random.default_rng(6)
    f, y, cov = hetero_truth(rng, 200_000)
    fy, yy, covy = hetero_truth(rng, 200_000)
    fits = {}
    for side in ("lower", "upper"):
        e = tf.extract_exceedances(y, f, side, cov)
        fits[side] = (tf.fit_gpd(e, conditional=False),
                      tf.fit_gpd(e, linear=("logs",), smooth=()))
    q = fy.values
    static = tf.attach_tails(fy.levels, q, fits["lower"][0], fits["upper"][0], covy)
    cond = tf.attach_tails(fy.levels, q, fits["lower"][1], fits["upper"][1], covy)
    for al in (0.0005, 0.001):
        sc, ss = rs.reserve_volumes(cond, al), rs.reserve_volumes(static, al)
        assert rs.compare_reserve(sc, ss, "up").volume_change < 0
        assert rs.compare_reserve(sc, ss, "down").volume_change < 0
        for sched in (sc, ss):
            assert rs.exceedance_audit(sched, yy).within
            assert rs.exceedance_audit(sched, yy, "down").within


# -- naive benchmark and output ----------------------------------------------------------

def test_naive_schedule_constant():
    e = np.random.default_rng(7).normal(size=10_000)
    s = rs.naive_schedule(e, 0.01, 48)
    assert np.all(s.up == s.up[0])
    assert s.up[0] == pytest.approx(np.median(e) - np.quantile(e, 0.01))


def test_in_mw_and_csv(tmp_path):
    f = dataclasses.replace(symmetric_series(4), index=pd.date_range(
        "2018-01-01", periods=4, freq="30min", tz="UTC"))
    s = rs.reserve_volumes(f, 0.01).in_mw(2000.0, 30_000.0)
    assert s.units == "MW"
    rs.write_schedule(s, tmp_path / "s.csv")
    back = pd.read_csv(tmp_path / "s.csv", index_col=0)
    np.testing.assert_allclose(back["up"], s.up, rtol=1e-15)
    assert back.index[0] == "2018-01-01T00:00:00Z"
