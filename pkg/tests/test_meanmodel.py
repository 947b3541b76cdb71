import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netload import features as fe
from netload import meanmodel as mm


def make_table(n, seed=0, **extra):
    rng = np.random.default_rng(seed)
    idx = pd.date_range("2018-01-01", periods=n, freq="30min", tz="UTC")
    x = rng.uniform(0, 10, n)
    z = rng.uniform(-1, 1, n)
    g = rng.integers(0, 9, n).astype(float)
    cols = {"x": x, "z": z, "g": g, "netload": rng.normal(size=n)}
    cols.update(extra)
    return fe.TimeTable(pd.DataFrame(cols, index=idx))


def cox_de_boor(x, knots, j, p=3):
    """Direct recursion oracle for one cubic B-spline, right end included."""
    if p == 0:
        left, right = knots[j], knots[j + 1]
        if left <= x < right:
            return 1.0
        last = x == knots[-1] and right == knots[-1] and left < right
        return 1.0 if last else 0.0
    out = 0.0
    d1 = knots[j + p] - knots[j]
    if d1 > 0:
        out += (x - knots[j]) / d1 * cox_de_boor(x, knots, j, p - 1)
    d2 = knots[j + p + 1] - knots[j + 1]
    if d2 > 0:
        out += (knots[j + p + 1] - x) / d2 * cox_de_boor(x, knots, j + 1, p - 1)
    return out


# -- design ------------------------------------------------------------------------

def test_spline_block_partition_of_unity():
    t = make_table(500)
    d, _ = mm.build_design(t, mm.BasisSpec((mm.spline("x", 12),)))
    B = d.block_matrix("spline(x,12)").toarray()
    assert B.shape == (500, 12)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-10)


def test_bispline_partition_of_unity():
    t = make_table(300)
    d, _ = mm.build_design(t, mm.BasisSpec((mm.bispline("x", "z", 6),)))
    B = d.block_matrix("bispline(x,z,6)").toarray()
    assert B.shape == (300, 36)
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-10)


def test_dummy_reference_coding():
    t = make_table(400)
    d, _ = mm.build_design(t, mm.BasisSpec((mm.dummy("g"),)))
    B = d.block_matrix("dummy(g)").toarray()
    assert B.shape[1] == 8
    g = t.column("g")
    np.testing.assert_array_equal(B.sum(axis=1), (g != 0).astype(float))
    assert set(np.unique(B)) <= {0.0, 1.0}


def test_basis_values_match_recursion_at_knots():
    t = make_table(200)
    _, basis = mm.build_design(t, mm.BasisSpec((mm.spline("x", 9),)))
    knots = np.asarray(basis.state[0]["knots"])
    pts = np.r_[np.unique(knots), 0.37 * knots[4] + 0.63 * knots[5]]
    probe = fe.TimeTable(pd.DataFrame({"x": pts, "netload": 0.0}, index=pd.date_range(
        "2018-01-01", periods=pts.size, freq="30min", tz="UTC")))
    B = basis.design(probe).block_matrix("spline(x,9)").toarray()
    oracle = np.array([[cox_de_boor(v, knots, j) for j in range(9)] for v in pts])
    np.testing.assert_allclose(B, oracle, atol=1e-12)


def test_out_of_range_is_clamped_and_counted():
    t = make_table(200)
    _, basis = mm.build_design(t, mm.BasisSpec((mm.spline("x", 6),)))
    probe = t.with_columns(x=np.r_[-5.0, 20.0, t.column("x")[2:]])
    d = basis.design(probe)
    assert d.clamped == {"x": 2}
    B = d.block_matrix("spline(x,6)").toarray()
    assert B[0, 0] == pytest.approx(1.0) and B[1, -1] == pytest.approx(1.0)


def test_difference_penalty_null_space_is_affine():
    knots = mm.spline_knots(np.random.default_rng(0).exponential(size=1000), 10)
    S = mm.difference_penalty(knots)
    g = mm.greville(knots)
    for coef in (np.ones(10), g, 3 - 2 * g):
        assert np.abs(S @ coef).max() < 1e-9
    w = np.linalg.eigvalsh(S)
    assert np.sum(w < 1e-9 * w.max()) == 2


def test_missing_inputs_flag_rows():
    t = make_table(50)
    x = t.column("x")
    x[3] = np.nan
    d, _ = mm.build_design(t.with_columns(x=x), mm.BasisSpec((mm.linear("x"), mm.spline("z", 5))))
    assert not d.valid[3] and d.valid.sum() == 49


def test_term_validation():
    with pytest.raises(ValueError):
        mm.spline("x", 3)
    with pytest.raises(ValueError):
        mm.Term("smooth", ("x",))
    with pytest.raises(KeyError):
        mm.build_design(make_table(10), mm.BasisSpec((mm.linear("nope"),)))


# -- fitting -----------------------------------------------------------------------

def test_zero_penalty_full_rank_is_ols():
    t = make_table(2000, seed=1)
    spec = mm.BasisSpec((mm.linear("x"), mm.polynomial("z", 2), mm.dummy("g"),
                         mm.spline("x", 8, label="sx")))
    d, basis = mm.build_design(t, spec)
    y = t.column("x") ** 1.5 + np.sin(3 * t.column("z")) + 0.1 * t.column("netload")
    m = mm.fit_mean(d, y, lambdas={"sx": 0.0}, basis=basis)
    X = d.X.toarray()
    # the spline block spans the intercept, so the oracle drops one spline column
    keep = np.r_[0:(X.shape[1] - 8), (X.shape[1] - 7):X.shape[1]]
    beta, *_ = np.linalg.lstsq(X[:, keep], y, rcond=None)
    np.testing.assert_allclose(X @ m.coefficients, X[:, keep] @ beta, rtol=1e-8, atol=1e-8)


def test_unpenalised_ols_matches_normal_equations():
    t = make_table(1000, seed=2)
    spec = mm.BasisSpec((mm.linear("x"), mm.polynomial("z", 3), mm.dummy("g")))
    d, basis = mm.build_design(t, spec)
    y = 2 + t.column("x") - t.column("z") ** 3 + t.column("netload")
    m = mm.fit_mean(d, y, basis=basis)
    X = d.X.toarray()
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    np.testing.assert_allclose(m.coefficients, beta, rtol=1e-8, atol=1e-10)
    assert m.multiplier is None


def test_huge_penalty_gives_affine_component():
    t = make_table(3000, seed=3)
    spec = mm.BasisSpec((mm.spline("x", 15, label="sx"),))
    d, basis = mm.build_design(t, spec)
    y = np.sin(t.column("x")) + 0.1 * t.column("netload")
    m = mm.fit_mean(d, y, lambdas={"sx": 1e12}, basis=basis)
    grid = np.linspace(0.01, 9.99, 200)
    probe = fe.TimeTable(pd.DataFrame({"x": grid, "netload": 0.0}, index=pd.date_range(
        "2018-01-01", periods=200, freq="30min", tz="UTC")))
    f = mm.predict_mean(m, probe)
    line = np.polyval(np.polyfit(grid, f, 1), grid)
    assert np.abs(f - line).max() < 1e-4


def test_smooth_recovery_beats_noise():
    t = make_table(5000, seed=4)
    spec = mm.BasisSpec((mm.spline("x", 20), mm.spline("z", 10)))
    d, basis = mm.build_design(t, spec)
    truth = np.sin(t.column("x")) + t.column("z") ** 2
    sd = 0.5
    y = truth + sd * np.random.default_rng(5).normal(size=5000)
    m = mm.fit_mean(d, y, basis=basis)
    fit = d.X @ m.coefficients
    rmse = np.sqrt(np.mean((fit - truth) ** 2))
    assert rmse < sd
    assert rmse < 0.1


def test_rank_deficiency_names_columns():
    t = make_table(200)
    t = t.with_columns(x2=2 * t.column("x"))
    d, basis = mm.build_design(t, mm.BasisSpec((mm.linear("x"), mm.linear("x2"))))
    with pytest.raises(mm.RankDeficiencyError, match="linear"):
        mm.fit_mean(d, t.y, basis=basis)


def test_residuals_orthogonal_to_unpenalised_columns():
    t = make_table(3000, seed=6)
    spec = mm.BasisSpec((mm.linear("z"), mm.dummy("g"), mm.spline("x", 12),
                         mm.bispline("x", "z", 5)))
    d, basis = mm.build_design(t, spec)
    y = np.cos(t.column("x")) * t.column("z") + t.column("g") / 3 + t.column("netload")
    m = mm.fit_mean(d, y, basis=basis)
    r = y - d.X @ m.coefficients
    u = d.unpenalized_columns()
    assert np.abs(d.X[:, u].T @ r).max() < 1e-6 * len(y)


def test_training_mse_monotone_in_multiplier():
    t = make_table(2000, seed=7)
    spec = mm.BasisSpec((mm.spline("x", 15), mm.spline("z", 8)))
    d, basis = mm.build_design(t, spec)
    y = np.sin(2 * t.column("x")) + t.column("z") + 0.3 * t.column("netload")
    mse = []
    for mult in np.logspace(-6, 4, 12):
        base = mm.fit_mean(d, y, multipliers=(mult,), basis=basis)
        mse.append(np.mean((y - d.X @ base.coefficients) ** 2))
    assert np.all(np.diff(mse) >= -1e-12)


def test_translation_consistency():
    t = make_table(2000, seed=8)
    spec = mm.BasisSpec((mm.spline("x", 10), mm.dummy("g")))
    raw = 1500 + 300 * (np.sin(t.column("x")) + 0.2 * t.column("netload"))
    traw = t.with_columns(netload=raw)
    s = fe.fit_standardizer(traw)
    tz = s.apply_table(traw)
    m_raw = mm.fit_mean_table(traw, spec)
    m_z = mm.fit_mean_table(tz, spec)
    assert m_raw.multiplier == m_z.multiplier
    np.testing.assert_allclose(s.invert(mm.predict_mean(m_z, t)), mm.predict_mean(m_raw, t),
                               rtol=1e-6)


def test_predict_permutation_and_hand_assembly():
    t = make_table(600, seed=9)
    spec = mm.BasisSpec((mm.linear("x"), mm.spline("z", 6)))
    m = mm.fit_mean_table(t.with_columns(netload=t.column("x") + t.column("z") ** 2), spec)
    p = mm.predict_mean(m, t)
    perm = np.random.default_rng(0).permutation(600)
    # a permuted table needs increasing timestamps, so move the inputs instead
    tp = t.with_columns(x=t.column("x")[perm], z=t.column("z")[perm])
    np.testing.assert_allclose(mm.predict_mean(m, tp), p[perm], rtol=0, atol=1e-12)
    d = m.basis.design(t.take([0, 1, 2]))
    np.testing.assert_allclose(d.X.toarray() @ m.coefficients, p[:3], atol=1e-12)


def test_model_record_round_trip():
    t = make_table(500)
    m = mm.fit_mean_table(t, mm.BasisSpec((mm.spline("x", 6), mm.dummy("g"))))
    m2 = mm.FittedMeanModel.from_record(m.to_record())
    np.testing.assert_array_equal(mm.predict_mean(m, t), mm.predict_mean(m2, t))


@settings(max_examples=20, deadline=None)
@given(k=st.integers(4, 25), seed=st.integers(0, 10**6))
def test_knots_property(k, seed):
    x = np.random.default_rng(seed).gamma(0.5, size=300)
    kn = mm.spline_knots(x, k)
    assert kn.size == k + 4
    assert np.all(np.diff(kn) >= 0)
    assert kn[0] == x.min() and kn[-1] == x.max()


def test_absent_factor_level_is_pinned(caplog):
    t = make_table(500, seed=10)
    y = t.column("x") + t.column("netload")
    y[t.column("g") == 4] = np.nan  # level 4 never reaches the fit
    d, basis = mm.build_design(t, mm.BasisSpec((mm.linear("x"), mm.dummy("g"))))
    with caplog.at_level("WARNING"):
        m = mm.fit_mean(d, y, basis=basis)
    assert "dummy(g)[4]" in caplog.text
    assert m.coefficients[d.columns.index("dummy(g)[4]")] == 0.0
    ok = np.isfinite(y)
    X = d.X.toarray()[ok]
    keep = [i for i, c in enumerate(d.columns) if c != "dummy(g)[4]"]
    ref, *_ = np.linalg.lstsq(X[:, keep], y[ok], rcond=None)
    np.testing.assert_allclose(m.coefficients[keep], ref, rtol=1e-8, atol=1e-10)
