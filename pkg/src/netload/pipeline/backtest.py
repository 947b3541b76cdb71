"""Expanding-window backtest.

The test range is cut into windows of length ``cadence``. For a window whose
first forecast day is ``D + 1`` the models are refitted on every row strictly
before the day-ahead issue time (``issue_hour`` UTC on day ``D``) and then
forecast each row of the window. The tail threshold is chosen once, by
blocked cross-validation on the data before ``test_start``.

Modelling happens in z-score units of the target; the standardizer is fitted
on ``[train_start, standardize_until)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .. import evaluation as ev
from .. import presets, records
from .. import reserve as rs
from ..dist import ForecastSeries
from ..features import STEP, TimeTable, fit_standardizer, read_dates
from ..meanmodel import Basis, FittedMeanModel, fit_mean_table, learn_basis, predict_mean
from ..quantreg import QuantileModel, fit_quantile_model, predict_quantile_matrix
from ..tailfit import (MIN_EXCEEDANCES, TailModel, TailWarning, attach_tails,
                       exponential_extension, extract_exceedances, fit_gpd, select_threshold)
from .config import ConfigError, RunConfig
from .data import load_dataset

log = logging.getLogger(__name__)
TS_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


class TrainingError(ValueError):
    """Not enough training data for a refit."""


# -- data preparation -------------------------------------------------------------------

@dataclass
class Prepared:
    table: TimeTable  # engineered, target in z units
    standardizer: object
    preset: presets.Preset
    qr_spec: object


def prepare(cfg: RunConfig, table: TimeTable | None = None) -> Prepared:
    """Load, standardise the target and engineer features."""
    t = table if table is not None else load_dataset(cfg.path(cfg.dataset), cfg.target)
    if cfg.target != t.target:
        t = TimeTable(t.frame, cfg.target)
    std_end = cfg.standardize_until or cfg.test_start
    st = fit_standardizer(t, cfg.target, cfg.train_start, std_end)
    z = TimeTable(t.frame, cfg.target)
    z = z.with_columns(**{cfg.target: st.apply(t.y)})
    hol = read_dates(cfg.path(cfg.holidays))
    sch = read_dates(cfg.path(cfg.school_holidays))
    eng = presets.engineer(z, hol, sch, cfg.timezone, cfg.issue_hour)
    preset = presets.get(cfg.preset)
    qr = presets.qr_spec(list(cfg.qr_features)) if cfg.qr_features else preset.qr
    need = preset.mean.columns_needed() | qr.columns_needed()
    if any(m != "none" for m in cfg.tail):
        need |= set(cfg.tail_linear)
    missing = sorted(need - set(eng.columns))
    if missing:
        raise ConfigError(f"dataset lacks column(s) needed by the run: {', '.join(missing)}")
    return Prepared(eng, st, preset, qr)


# -- one fit -------------------------------------------------------------------------------

@dataclass
class Fit:
    mean: FittedMeanModel
    qr_basis: object
    qr: QuantileModel
    alpha_lo: float
    alpha_hi: float
    tails: dict[str, tuple[TailModel, TailModel]] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"mean": self.mean.to_record(), "qr_basis": self.qr_basis.to_record(),
                "qr": self.qr.to_record(), "alpha_lo": self.alpha_lo, "alpha_hi": self.alpha_hi,
                "tails": {k: {"lower": lo.to_record(), "upper": hi.to_record()}
                          for k, (lo, hi) in self.tails.items()}}

    @classmethod
    def from_record(cls, rec: dict) -> "Fit":
        tails = {k: (TailModel.from_record(v["lower"]), TailModel.from_record(v["upper"]))
                 for k, v in rec["tails"].items()}
        return cls(FittedMeanModel.from_record(rec["mean"]), Basis.from_record(rec["qr_basis"]),
                   QuantileModel.from_record(rec["qr"]), float(rec["alpha_lo"]),
                   float(rec["alpha_hi"]), tails)


def _tail_covariates(t: TimeTable, yhat: np.ndarray, names) -> pd.DataFrame:
    cov = {c: t.column(c) for c in names}
    cov["yhat"] = yhat
    return pd.DataFrame(cov)


def _qr_inputs(basis, t: TimeTable):
    B, names, valid = presets.qr_matrix(basis, t)
    return B, names, valid


def fit_models(train: TimeTable, cfg: RunConfig, prep: Prepared, alpha_lo: float | None,
               alpha_hi: float | None, modes=()) -> Fit:
    """Fit mean model, quantile regressions and (optionally) tails on ``train``."""
    if len(train) < cfg.min_train_days * 48:
        raise TrainingError(f"training set has {len(train)} rows, need at least "
                            f"{cfg.min_train_days * 48}")
    mean = fit_mean_table(train, prep.preset.mean)
    yhat = predict_mean(mean, train)
    qb = learn_basis(train, prep.qr_spec)
    B, names, valid = _qr_inputs(qb, train)
    r = train.y - yhat
    r = np.where(valid, r, np.nan)
    levels = cfg.all_levels
    qr = fit_quantile_model(r, B, levels, names)
    fit = Fit(mean, qb, qr, alpha_lo or levels[0], alpha_hi or levels[-1])
    modes = [m for m in modes if m != "none"]
    if modes:
        q = predict_quantile_matrix(qr, yhat, B)
        ok = np.isfinite(yhat) & valid & np.isfinite(train.y)
        cov = _tail_covariates(train, yhat, cfg.tail_linear)
        i_lo = levels.index(fit.alpha_lo)
        i_hi = levels.index(fit.alpha_hi)
        rows = np.nonzero(ok)[0]
        cov_ok = cov.iloc[rows].reset_index(drop=True)
        y_ok = train.y[rows]
        smooth = (("yhat", cfg.tail_smooth_k),)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TailWarning)
            e_lo = extract_exceedances(y_ok, q[rows, i_lo], "lower", cov_ok)
            e_hi = extract_exceedances(y_ok, q[rows, i_hi], "upper", cov_ok)
        for m in modes:
            cond = m == "conditional"
            fit.tails[m] = (fit_gpd(e_lo, cond, cfg.tail_linear, smooth),
                            fit_gpd(e_hi, cond, cfg.tail_linear, smooth))
    return fit


@dataclass
class Prediction:
    index: pd.DatetimeIndex
    y: np.ndarray
    yhat: np.ndarray
    q: np.ndarray  # (T, all levels)
    cov: pd.DataFrame


def predict_rows(fit: Fit, t: TimeTable, cfg: RunConfig) -> Prediction:
    """Forecast rows of ``t`` with complete inputs."""
    yhat = predict_mean(fit.mean, t)
    B, _, valid = _qr_inputs(fit.qr_basis, t)
    ok = np.isfinite(yhat) & valid
    cov = _tail_covariates(t, yhat, cfg.tail_linear if any(m != "none" for m in cfg.tail) else ())
    ok &= np.all(np.isfinite(cov.to_numpy()), axis=1)
    rows = np.nonzero(ok)[0]
    q = predict_quantile_matrix(fit.qr, yhat[rows], B[rows])
    return Prediction(t.index[rows], t.y[rows], yhat[rows], q,
                      cov.iloc[rows].reset_index(drop=True))


def forecast_series(p: Prediction, fit_or_tails, cfg: RunConfig, mode: str,
                    alpha_lo: float, alpha_hi: float, rows=None) -> ForecastSeries:
    levels = np.asarray(cfg.all_levels)
    if mode == "none":
        return exponential_extension(levels, p.q, index=p.index)
    lo_m, hi_m = fit_or_tails
    keep = (levels >= alpha_lo - 1e-12) & (levels <= alpha_hi + 1e-12)
    return attach_tails(levels[keep], p.q[:, keep], lo_m, hi_m, p.cov, index=p.index)


# -- threshold selection -------------------------------------------------------------------

@dataclass
class ThresholdChoice:
    alpha_lo: float
    alpha_hi: float
    coverage: dict[float, float]
    n: int
    method: str
    notes: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {"alpha_lo": self.alpha_lo, "alpha_hi": self.alpha_hi, "method": self.method,
                "n": self.n, "coverage": {format(k, "g"): v for k, v in self.coverage.items()},
                "notes": self.notes}


def _limit_by_count(alpha: float, trial: list[float], n_train: int, notes: list[str]) -> float:
    """Move inward until the training set is expected to give enough exceedances."""
    i = trial.index(alpha)
    while i > 0 and n_train * min(alpha, 1 - alpha) < MIN_EXCEEDANCES:
        i -= 1
        notes.append(f"level {alpha:g} gives too few exceedances; using {trial[i]:g}")
        alpha = trial[i]
    return alpha


def cv_threshold(prep: Prepared, cfg: RunConfig, end=None) -> ThresholdChoice:
    """Blocked K-fold CV of extreme-quantile reliability on data before ``end``.

    The CV range is split into ``cv_folds`` contiguous folds; each is
    forecast by models fitted on the others. Per side, the chosen level is the
    most extreme trial level reached by walking outward while the pooled
    out-of-fold frequency stays inside its binomial 95% band.
    """
    cv = prep.table.select(cfg.train_start, end or cfg.test_start)
    n = len(cv)
    edges = np.linspace(0, n, cfg.cv_folds + 1).round().astype(int)
    ys, qs = [], []
    for k in range(cfg.cv_folds):
        hold = np.arange(edges[k], edges[k + 1])
        train_rows = np.r_[np.arange(0, edges[k]), np.arange(edges[k + 1], n)]
        fit = fit_models(cv.take(train_rows), cfg, prep, None, None)
        p = predict_rows(fit, cv.take(hold), cfg)
        ok = np.isfinite(p.y)
        ys.append(p.y[ok])
        qs.append(p.q[ok])
    y = np.concatenate(ys)
    q = np.concatenate(qs)
    levels = list(cfg.all_levels)
    cover = {a: float(np.mean(y <= q[:, j])) for j, a in enumerate(levels)}
    lower_trial = sorted(cfg.extreme_levels, reverse=True)  # least extreme first
    upper_trial = [levels[-len(cfg.extreme_levels) + i] for i in range(len(cfg.extreme_levels))]
    notes: list[str] = []
    lo = select_threshold(cover, y.size, lower_trial)
    hi = select_threshold(cover, y.size, upper_trial)
    if lo is None:
        lo = lower_trial[0]
        notes.append(f"no reliable lower trial level; using {lo:g}")
    if hi is None:
        hi = upper_trial[0]
        notes.append(f"no reliable upper trial level; using {hi:g}")
    n_train = int(n * (cfg.cv_folds - 1) / cfg.cv_folds)
    lo = _limit_by_count(lo, lower_trial, n_train, notes)
    hi = _limit_by_count(hi, upper_trial, n_train, notes)
    return ThresholdChoice(lo, hi, cover, int(y.size), "cv", notes)


def fixed_threshold(cfg: RunConfig) -> ThresholdChoice:
    a = float(cfg.threshold)
    levels = list(cfg.all_levels)
    hi = min(levels, key=lambda x: abs(x - (1 - a)))
    return ThresholdChoice(a, hi, {}, 0, "fixed")


# -- backtest ------------------------------------------------------------------------------

@dataclass
class BacktestResult:
    config: RunConfig
    thresholds: ThresholdChoice
    forecasts: dict[str, ForecastSeries]
    y: np.ndarray
    yhat: np.ndarray
    naive: dict[float, rs.ReserveSchedule]
    fits: list[Fit]
    windows: list[dict]
    standardizer: object
    skipped: int = 0


def window_starts(cfg: RunConfig, index: pd.DatetimeIndex) -> list[pd.Timestamp]:
    start = pd.Timestamp(cfg.test_start)
    start = start.tz_localize("UTC") if start.tzinfo is None else start.tz_convert("UTC")
    end = _test_end(cfg, index)
    out = []
    s = start
    while s < end:
        out.append(s)
        s = s + cfg.cadence_delta
    return out


def _test_end(cfg: RunConfig, index: pd.DatetimeIndex) -> pd.Timestamp:
    if cfg.test_end is None:
        return index[-1] + STEP
    e = pd.Timestamp(cfg.test_end)
    return e.tz_localize("UTC") if e.tzinfo is None else e.tz_convert("UTC")


def refit_cutoff(window_start: pd.Timestamp, issue_hour: float) -> pd.Timestamp:
    """Issue instant of the forecast covering ``window_start``'s day."""
    return window_start.normalize() - pd.Timedelta(days=1) + pd.Timedelta(hours=issue_hour)


def run_backtest(cfg: RunConfig, table: TimeTable | None = None, write: bool = True,
                 prep: Prepared | None = None) -> BacktestResult:
    """Walk the test range with expanding-window refits; optionally write artifacts."""
    prep = prep or prepare(cfg, table)
    t = prep.table
    modes = list(cfg.tail)
    th = fixed_threshold(cfg) if cfg.threshold != "cv" else cv_threshold(prep, cfg)
    log.info("tail thresholds %g / %g", th.alpha_lo, th.alpha_hi)
    starts = window_starts(cfg, t.index)
    end = _test_end(cfg, t.index)
    preds: list[Prediction] = []
    parts: dict[str, list[ForecastSeries]] = {m: [] for m in modes}
    naive_parts: dict[float, list[rs.ReserveSchedule]] = {a: [] for a in cfg.reserve_alphas}
    fits, windows = [], []
    skipped = 0
    for k, ws in enumerate(starts):
        we = min(ws + cfg.cadence_delta, end)
        cutoff = refit_cutoff(ws, cfg.issue_hour)
        train = t.select(cfg.train_start, cutoff)
        fit = fit_models(train, cfg, prep, th.alpha_lo, th.alpha_hi, modes)
        test = t.select(ws, we)
        p = predict_rows(fit, test, cfg)
        skipped += len(test) - len(p.index)
        preds.append(p)
        for m in modes:
            parts[m].append(forecast_series(p, fit.tails.get(m), cfg, m, th.alpha_lo, th.alpha_hi))
        err = train.y - predict_mean(fit.mean, train)
        for a in cfg.reserve_alphas:
            naive_parts[a].append(rs.naive_schedule(err, a, len(p.index), p.index))
        fits.append(fit)
        windows.append({"window": k, "start": ws.strftime(TS_FORMAT), "end": we.strftime(TS_FORMAT),
                        "train_cutoff": cutoff.strftime(TS_FORMAT), "train_rows": len(train),
                        "test_rows": len(p.index)})
    forecasts = {m: _concat_series(parts[m]) for m in modes}
    y = np.concatenate([p.y for p in preds]) if preds else np.empty(0)
    yhat = np.concatenate([p.yhat for p in preds]) if preds else np.empty(0)
    naive = {a: _concat_schedules(v, yhat) for a, v in naive_parts.items()}
    res = BacktestResult(cfg, th, forecasts, y, yhat, naive, fits, windows, prep.standardizer,
                         skipped)
    if write:
        write_artifacts(res)
    return res


def _concat_series(parts: list[ForecastSeries]) -> ForecastSeries:
    levels = parts[0].levels
    idx = parts[0].index
    for p in parts[1:]:
        idx = idx.append(p.index)
    return ForecastSeries(levels, np.vstack([p.values for p in parts]),
                          np.concatenate([p.lo_scale for p in parts]),
                          np.concatenate([p.lo_shape for p in parts]),
                          np.concatenate([p.hi_scale for p in parts]),
                          np.concatenate([p.hi_shape for p in parts]), index=idx)


def _concat_schedules(parts: list[rs.ReserveSchedule], yhat) -> rs.ReserveSchedule:
    idx = parts[0].index
    for p in parts[1:]:
        idx = idx.append(p.index)
    med = np.concatenate([p.median for p in parts]) + yhat
    return rs.ReserveSchedule(parts[0].alpha, np.concatenate([p.up for p in parts]),
                              np.concatenate([p.down for p in parts]), med, idx)


# -- artifacts ----------------------------------------------------------------------------------

def forecast_frame(f: ForecastSeries, y, yhat) -> pd.DataFrame:
    cols = {"y": y, "yhat": yhat}
    for j, a in enumerate(f.levels):
        cols[f"q{a:g}"] = f.values[:, j]
    cols.update(lo_scale=f.lo_scale, lo_shape=f.lo_shape, hi_scale=f.hi_scale,
                hi_shape=f.hi_shape)
    df = pd.DataFrame(cols, index=f.index.strftime(TS_FORMAT))
    df.index.name = "timestamp"
    return df


def read_forecasts(path) -> tuple[ForecastSeries, np.ndarray, np.ndarray]:
    """Inverse of the ``forecasts_<mode>.csv`` writer: series, y and yhat."""
    df = pd.read_csv(path, keep_default_na=False, na_values=[""], float_precision="round_trip")
    idx = pd.DatetimeIndex(pd.to_datetime(df["timestamp"], utc=True, format="ISO8601"))
    qcols = [c for c in df.columns if c.startswith("q") and c[1:2].isdigit()]
    levels = np.array([float(c[1:]) for c in qcols])
    f = ForecastSeries(levels, df[qcols].to_numpy(float), df["lo_scale"].to_numpy(float),
                       df["lo_shape"].to_numpy(float), df["hi_scale"].to_numpy(float),
                       df["hi_shape"].to_numpy(float), index=idx)
    return f, df["y"].to_numpy(float), df["yhat"].to_numpy(float)


def schedule_frame(schedules: dict[float, rs.ReserveSchedule], sd: float, mean: float) -> pd.DataFrame:
    first = next(iter(schedules.values()))
    cols = {"median_z": first.median, "median_mw": first.median * sd + mean}
    for a, s in schedules.items():
        cols[f"up_z@{a:g}"] = s.up
        cols[f"down_z@{a:g}"] = s.down
        cols[f"up_mw@{a:g}"] = s.up * sd
        cols[f"down_mw@{a:g}"] = s.down * sd
    df = pd.DataFrame(cols, index=first.index.strftime(TS_FORMAT))
    df.index.name = "timestamp"
    return df


def report_for(res: BacktestResult, mode: str) -> ev.EvalReport:
    cfg = res.config
    f = res.forecasts[mode]
    rep = ev.evaluate(f, res.y, levels=cfg.central_levels, pinball_levels=cfg.central_levels,
                      sharpness_levels=(0.0025, 0.001, 0.0005), seed=cfg.seed, n_boot=cfg.n_boot,
                      n_sim=cfg.n_sim)
    return rep


def dm_pairs(res: BacktestResult) -> dict[str, ev.DMResult]:
    levels = res.config.central_levels
    losses = {m: ev.pinball_series(f, res.y, levels) for m, f in res.forecasts.items()}
    out = {}
    modes = list(losses)
    for i, a in enumerate(modes):
        for b in modes[i + 1:]:
            if np.any(losses[a] != losses[b]):
                out[f"{a}-vs-{b}"] = ev.dm_test(losses[a], losses[b], h=1)
    return out


def reserve_schedules(f: ForecastSeries, alphas) -> dict[float, rs.ReserveSchedule]:
    return {a: rs.reserve_volumes(f, a) for a in alphas}


def write_artifacts(res: BacktestResult) -> None:
    cfg = res.config
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    st = res.standardizer
    records.write(out / "standardizer.json", st.to_record())
    records.write(out / "thresholds.json", res.thresholds.to_record())
    records.write(out / "windows.json", {"windows": res.windows, "skipped_rows": res.skipped})
    mdir = out / "models"
    mdir.mkdir(exist_ok=True)
    for k, fit in enumerate(res.fits):
        records.write(mdir / f"window_{k:03d}.json", fit.to_record())
    dms = dm_pairs(res)
    scheds = {}
    for m, f in res.forecasts.items():
        forecast_frame(f, res.y, res.yhat).to_csv(out / f"forecasts_{m}.csv", float_format="%.17g")
        rep = report_for(res, m)
        rep.dm = {k: v for k, v in dms.items() if k.startswith(m + "-")}
        ev.write_report(rep, out, prefix=f"{m}_")
        scheds[m] = reserve_schedules(f, cfg.reserve_alphas)
        schedule_frame(scheds[m], st.sd, st.mean).to_csv(out / f"reserve_{m}.csv",
                                                          float_format="%.17g")
    schedule_frame(res.naive, st.sd, st.mean).to_csv(out / "reserve_naive.csv",
                                                      float_format="%.17g")
    records.write(out / "dm.json", {k: {"statistic": v.statistic, "pvalue": v.pvalue,
                                        "mean_diff": v.mean_diff, "n": v.n, "h": v.h}
                                    for k, v in dms.items()})
    if "conditional" in scheds:
        for ref in ("static", "naive"):
            b = scheds.get(ref) if ref != "naive" else res.naive
            if b is None:
                continue
            tab = rs.comparison_table(scheds["conditional"], b, cfg.reserve_alphas)
            rs.write_table(tab, out / f"reserve_conditional_vs_{ref}.csv")
    audits = {}
    for m, sch in list(scheds.items()) + [("naive", res.naive)]:
        for a, s in sch.items():
            for side in ("up", "down"):
                au = rs.exceedance_audit(s, res.y, side)
                audits[f"{m}@{a:g}:{side}"] = {"rate": au.rate, "nominal": au.nominal,
                                               "band_lo": au.band_lo, "band_hi": au.band_hi,
                                               "n": au.n, "within": au.within}
    records.write(out / "reserve_audit.json", audits)
