"""Reserve requirements from predictive distributions.

Upward reserve at risk level ``alpha`` is the distance from the median down
to the ``alpha`` quantile; downward reserve mirrors it at ``1 - alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .dist import ForecastSeries
from .tailfit import coverage_band

#: risk levels of the comparison table; upward rows use alpha, downward rows 1 - alpha
TABLE_ALPHAS = (0.0001, 0.0005, 0.001, 0.0025)


@dataclass(frozen=True)
class ReserveSchedule:
    alpha: float
    up: np.ndarray
    down: np.ndarray
    median: np.ndarray
    index: pd.DatetimeIndex | None = None
    units: str = "z"

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must be in (0, 0.5)")
        up, down = np.asarray(self.up, float), np.asarray(self.down, float)
        if up.shape != down.shape:
            raise ValueError("up and down must align")
        object.__setattr__(self, "up", up)
        object.__setattr__(self, "down", down)
        object.__setattr__(self, "median", np.asarray(self.median, float))

    def __len__(self) -> int:
        return self.up.size

    def to_frame(self) -> pd.DataFrame:
        idx = self.index if self.index is not None else pd.RangeIndex(len(self), name="period")
        return pd.DataFrame({"alpha": self.alpha, "median": self.median,
                             "up": self.up, "down": self.down}, index=idx)

    def in_mw(self, sd: float, mean: float = 0.0) -> "ReserveSchedule":
        """Convert z-unit volumes to MW with a standardizer's ``sd`` and ``mean``."""
        return ReserveSchedule(self.alpha, self.up * sd, self.down * sd,
                               self.median * sd + mean, self.index, "MW")


def reserve_volumes(forecasts: ForecastSeries, alpha: float) -> ReserveSchedule:
    """Per-period upward ``q(0.5) - q(alpha)`` and downward ``q(1-alpha) - q(0.5)``."""
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must be in (0, 0.5)")
    q = forecasts.quantiles([alpha, 0.5, 1 - alpha])
    return ReserveSchedule(alpha, q[:, 1] - q[:, 0], q[:, 2] - q[:, 1], q[:, 1], forecasts.index)


@dataclass(frozen=True)
class Comparison:
    """``a`` relative to ``b``: volume change and share of periods lower/tied (all %)."""

    volume_change: float
    periods_lower: float
    periods_tied: float
    side: str

    def as_row(self) -> dict:
        return {"volume_change_pct": self.volume_change, "periods_lower_pct": self.periods_lower,
                "periods_tied_pct": self.periods_tied}


def compare_volumes(a, b, side: str = "up") -> Comparison:
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError("schedules are not aligned")
    tot = b.sum()
    if tot == 0:
        raise ValueError("reference schedule has zero total volume")
    return Comparison(float(100 * (a.sum() - tot) / tot), float(100 * np.mean(a < b)),
                      float(100 * np.mean(a == b)), side)


def compare_reserve(a: ReserveSchedule, b: ReserveSchedule, side: str = "up") -> Comparison:
    """Compare schedule ``a`` against reference ``b`` on one side."""
    if a.alpha != b.alpha:
        raise ValueError("schedules have different alpha")
    if len(a) != len(b) or (a.index is not None and b.index is not None
                            and not a.index.equals(b.index)):
        raise ValueError("schedules are not aligned")
    if side not in ("up", "down"):
        raise ValueError("side must be 'up' or 'down'")
    return compare_volumes(getattr(a, side), getattr(b, side), side)


@dataclass(frozen=True)
class Audit:
    rate: float
    nominal: float
    band_lo: float
    band_hi: float
    n: int
    side: str

    @property
    def within(self) -> bool:
        """Realised rate does not exceed the nominal rate beyond its binomial band."""
        return self.rate <= self.band_hi


def exceedance_audit(schedule: ReserveSchedule, y, side: str = "up") -> Audit:
    """Share of periods where the reserve would have been insufficient.

    Upward: ``y_t < median_t - up_t``; downward: ``y_t > median_t + down_t``.
    The nominal rate is ``alpha`` with a binomial 95% band.
    """
    y = np.asarray(y, float)
    ok = np.isfinite(y)
    if side == "up":
        short = y[ok] < (schedule.median - schedule.up)[ok]
    elif side == "down":
        short = y[ok] > (schedule.median + schedule.down)[ok]
    else:
        raise ValueError("side must be 'up' or 'down'")
    n = int(ok.sum())
    lo, hi = coverage_band(schedule.alpha, n)
    return Audit(float(short.mean()), schedule.alpha, lo, hi, n, side)


def naive_schedule(errors, alpha: float, n_periods: int, index=None) -> ReserveSchedule:
    """Constant schedule from empirical quantiles of historical forecast errors.

    ``errors`` are ``y - yhat`` over the training window. The median is
    expressed relative to the deterministic forecast, so ``median`` is the
    error median and callers add their point forecast if needed.
    """
    e = np.asarray(errors, float)
    e = e[np.isfinite(e)]
    lo, med, hi = np.quantile(e, [alpha, 0.5, 1 - alpha])
    ones = np.ones(n_periods)
    return ReserveSchedule(alpha, (med - lo) * ones, (hi - med) * ones, med * ones, index)


def comparison_table(a: Mapping[float, ReserveSchedule] | ForecastSeries,
                     b: Mapping[float, ReserveSchedule] | ForecastSeries,
                     alphas: Sequence[float] = TABLE_ALPHAS) -> pd.DataFrame:
    """Table of ``a`` vs ``b`` by reserve level.

    Rows are the upward levels ``alpha`` followed by the downward levels
    ``1 - alpha`` in increasing order, labelled as percentages.
    """
    def sched(x, al):
        return x[al] if isinstance(x, Mapping) else reserve_volumes(x, al)

    rows = []
    for al in alphas:
        c = compare_reserve(sched(a, al), sched(b, al), "up")
        rows.append({"direction": "Upward", "level": _pct(al), **c.as_row()})
    for al in sorted(alphas, reverse=True):
        c = compare_reserve(sched(a, al), sched(b, al), "down")
        rows.append({"direction": "Downward", "level": _pct(1 - al), **c.as_row()})
    return pd.DataFrame(rows)


def _pct(p: float) -> str:
    return f"{100 * p:.2f}%"


def write_schedule(s: ReserveSchedule, path: str | Path) -> None:
    f = s.to_frame()
    if isinstance(f.index, pd.DatetimeIndex):
        f.index = f.index.strftime("%Y-%m-%dT%H:%M:%SZ")
        f.index.name = "timestamp"
    f["units"] = s.units
    f.to_csv(path, float_format="%.17g")


def write_table(table: pd.DataFrame, path: str | Path) -> None:
    table.to_csv(path, index=False, float_format="%.17g")
