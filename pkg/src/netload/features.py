"""Feature engineering on half-hourly time tables.

All transforms are causal: a value at time ``t`` depends only on inputs at
times ``<= t``. Rolling windows are trailing and exclude the current instant.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

import numpy as np
import pandas as pd

STEP = pd.Timedelta(minutes=30)
TREND_ORIGIN = pd.Timestamp("2014-01-01T00:00:00Z")
HOLIDAY_CODE = 7
DAYTYPE_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun", "Hol")


class SchemaError(ValueError):
    """Input data violates the TimeTable schema."""


class TimeTable:
    """Timestamped target plus covariate columns.

    Timestamps are tz-aware, strictly increasing and on a 30-minute grid
    (gaps are allowed and reported by :meth:`gaps`). Missing values are NaN
    and are never filled silently. Transforms return new tables.
    """

    def __init__(self, frame: pd.DataFrame, target: str = "netload"):
        if not isinstance(frame.index, pd.DatetimeIndex):
            raise SchemaError("TimeTable needs a DatetimeIndex")
        if frame.index.tz is None:
            raise SchemaError("timestamps must be time-zone aware")
        idx = frame.index
        if len(idx) > 1:
            d = np.diff(idx.asi8)
            if np.any(d <= 0):
                bad = idx[1:][d <= 0][0]
                raise SchemaError(f"timestamps not strictly increasing at {bad}")
            if np.any(d % STEP.value):
                bad = idx[1:][(d % STEP.value) != 0][0]
                raise SchemaError(f"timestamp {bad} is off the 30-minute grid")
        if target not in frame.columns:
            raise SchemaError(f"target column {target!r} missing")
        self._frame = frame.copy()
        self._frame.index = self._frame.index.tz_convert("UTC")
        self._frame.index.name = "timestamp"
        self.target = target

    # -- access ---------------------------------------------------------------
    @property
    def frame(self) -> pd.DataFrame:
        """The underlying frame (a copy; the table itself never changes)."""
        return self._frame.copy()

    @property
    def index(self) -> pd.DatetimeIndex:
        return self._frame.index

    @property
    def columns(self) -> list[str]:
        return list(self._frame.columns)

    def __len__(self) -> int:
        return len(self._frame)

    def __contains__(self, name: str) -> bool:
        return name in self._frame.columns

    def column(self, name: str) -> np.ndarray:
        if name not in self._frame.columns:
            raise KeyError(f"unknown column {name!r}")
        return self._frame[name].to_numpy(dtype=float)

    @property
    def y(self) -> np.ndarray:
        return self.column(self.target)

    def gaps(self) -> int:
        """Number of missing 30-minute steps between first and last timestamp."""
        if len(self) < 2:
            return 0
        span = (self.index[-1] - self.index[0]) // STEP + 1
        return int(span - len(self))

    def missing(self) -> dict[str, int]:
        return {c: int(n) for c, n in self._frame.isna().sum().items()}

    # -- derivation -----------------------------------------------------------
    def with_columns(self, **cols) -> "TimeTable":
        f = self._frame.copy()
        for k, v in cols.items():
            f[k] = np.asarray(v)
        return TimeTable(f, self.target)

    def select(self, start=None, end=None) -> "TimeTable":
        """Rows with ``start <= timestamp < end``."""
        mask = np.ones(len(self), bool)
        if start is not None:
            mask &= self.index >= _utc(start)
        if end is not None:
            mask &= self.index < _utc(end)
        return TimeTable(self._frame[mask], self.target)

    def take(self, rows) -> "TimeTable":
        return TimeTable(self._frame.iloc[np.asarray(rows)], self.target)


def _utc(ts) -> pd.Timestamp:
    ts = pd.Timestamp(ts)
    return ts.tz_localize("UTC") if ts.tzinfo is None else ts.tz_convert("UTC")


def read_csv(path: str | Path, target: str = "netload") -> TimeTable:
    """Load a CSV with an ISO-8601 UTC ``timestamp`` column; empty cells are missing."""
    df = pd.read_csv(path, keep_default_na=False, na_values=[""], float_precision="round_trip")
    if "timestamp" not in df.columns:
        raise SchemaError("CSV has no 'timestamp' column")
    try:
        idx = pd.to_datetime(df.pop("timestamp"), utc=True, format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"unparseable timestamp: {exc}") from exc
    df.index = pd.DatetimeIndex(idx, name="timestamp")
    for c in df.columns:
        df[c] = pd.to_numeric(df[c], errors="raise").astype(float)
    return TimeTable(df, target)


def write_csv(t: TimeTable, path: str | Path) -> None:
    f = t.frame
    f.index = f.index.strftime("%Y-%m-%dT%H:%M:%SZ")
    f.to_csv(path, float_format="%.17g", na_rep="")


def read_dates(path: str | Path | None) -> set[dt.date]:
    """Read a holiday list: one ISO date per line, or a CSV with a ``date`` column."""
    if path is None:
        return set()
    out = set()
    for line in Path(path).read_text().splitlines():
        tok = line.split("#", 1)[0].strip().split(",")[0].strip()
        if not tok or tok.lower() == "date":
            continue
        out.add(dt.date.fromisoformat(tok))
    return out


# -- calendar -------------------------------------------------------------------

def _zone(tz: str) -> ZoneInfo:
    try:
        return ZoneInfo(tz)
    except (ZoneInfoNotFoundError, ValueError) as exc:
        raise SchemaError(f"unresolvable time zone {tz!r}") from exc


def calendar_features(t: TimeTable, holidays: Iterable[dt.date] = (),
                      school_holidays: Iterable[dt.date] = (),
                      tz: str = "Europe/London") -> TimeTable:
    """Add calendar columns in local clock time.

    Adds ``clock`` (decimal hour), ``period`` (half-hour of day 0-47),
    ``daytype`` (0-6 Mon-Sun, 7 public holiday; holidays override weekdays),
    ``school`` (0/1), ``month`` (1-12), annual Fourier pairs
    ``fourier_s1, fourier_c1, fourier_s2, fourier_c2`` (phase zero at local
    Jan 1 00:00) and ``trend`` (years since 2014-01-01 UTC).
    """
    zone = _zone(tz)
    local = t.index.tz_convert(zone)
    clock = local.hour + local.minute / 60.0
    dates = local.date
    hol = set(holidays)
    sch = set(school_holidays)
    daytype = np.where([d in hol for d in dates], HOLIDAY_CODE, local.weekday)
    school = np.array([d in sch for d in dates], dtype=float)

    days_in_year = np.where(local.is_leap_year, 366.0, 365.0)
    frac = (local.dayofyear - 1 + clock / 24.0) / days_in_year
    ang = 2 * np.pi * np.asarray(frac)
    trend = (t.index - TREND_ORIGIN) / pd.Timedelta(days=365.25)

    return t.with_columns(
        clock=np.asarray(clock, float),
        period=np.floor(np.asarray(clock) * 2).astype(float),
        daytype=np.asarray(daytype, float),
        school=school,
        month=np.asarray(local.month, float),
        fourier_s1=np.sin(ang), fourier_c1=np.cos(ang),
        fourier_s2=np.sin(2 * ang), fourier_c2=np.cos(2 * ang),
        trend=np.asarray(trend, float),
    )


# -- rolling statistics -----------------------------------------------------------------

def _steps(window) -> int:
    w = pd.Timedelta(window)
    if w <= pd.Timedelta(0) or w.value % STEP.value:
        raise ValueError(f"window {window!r} is not a positive multiple of 30 minutes")
    return int(w // STEP)


def _trailing_mean(t: TimeTable, column: str, n: int) -> pd.Series:
    s = pd.Series(t.column(column), index=t.index)
    if len(s) == 0:
        return s
    grid = pd.date_range(s.index[0], s.index[-1], freq=STEP)
    full = s.reindex(grid)
    # shift(1): the window is [t - w, t), never including t itself
    return full.shift(1).rolling(n, min_periods=n).mean()


def rolling_mean(t: TimeTable, column: str, window="48h", name: str | None = None) -> TimeTable:
    """Trailing mean over ``[t - window, t)``.

    Rows without a complete window of observed values are NaN.
    """
    if column not in t:
        raise KeyError(f"unknown column {column!r}")
    n = _steps(window)
    r = _trailing_mean(t, column, n).reindex(t.index)
    return t.with_columns(**{name or f"{column}_roll": r.to_numpy()})


def issue_times(index: pd.DatetimeIndex, issue_hour: float = 6.0) -> pd.DatetimeIndex:
    """Issue instant of a day-ahead forecast for each target time.

    A forecast for any time on day ``D+1`` (UTC) is issued at ``issue_hour``
    UTC on day ``D``.
    """
    day = index.normalize()
    return day - pd.Timedelta(days=1) + pd.Timedelta(hours=issue_hour)


def rolling_mean_as_of_issue(t: TimeTable, column: str, window="14D", name: str | None = None,
                             issue_hour: float = 6.0) -> TimeTable:
    """Trailing mean of ``column`` as known at each row's day-ahead issue time."""
    if column not in t:
        raise KeyError(f"unknown column {column!r}")
    n = _steps(window)
    r = _trailing_mean(t, column, n)
    at = issue_times(t.index, issue_hour)
    vals = r.reindex(at).to_numpy()
    return t.with_columns(**{name or f"{column}_roll": vals})


def capacity_scale(t: TimeTable, column: str, capacity: str, name: str | None = None) -> TimeTable:
    """Multiply a weather column by an installed-capacity column."""
    cap = t.column(capacity)
    bad = np.isfinite(cap) & (cap <= 0)
    if np.any(bad):
        raise ValueError(f"capacity column {capacity!r} has {int(bad.sum())} nonpositive entries")
    return t.with_columns(**{name or f"{column}_cap": t.column(column) * cap})


# -- standardisation -------------------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    """z-score transform; ``sd`` is the sample standard deviation (n - 1)."""

    mean: float
    sd: float
    start: pd.Timestamp
    end: pd.Timestamp

    def __post_init__(self) -> None:
        if not (self.sd > 0):
            raise ValueError("standard deviation must be positive")

    def apply(self, x):
        return (np.asarray(x, float) - self.mean) / self.sd

    def invert(self, z):
        return np.asarray(z, float) * self.sd + self.mean

    def apply_table(self, t: TimeTable, column: str | None = None) -> TimeTable:
        column = column or t.target
        if len(t) and t.index[0] < self.start:
            raise ValueError("standardizer applies only to data at or after its fit start")
        return t.with_columns(**{column: self.apply(t.column(column))})

    def to_record(self) -> dict:
        return {"mean": self.mean, "sd": self.sd,
                "start": self.start.isoformat(), "end": self.end.isoformat()}

    @classmethod
    def from_record(cls, rec: dict) -> "Standardizer":
        return cls(float(rec["mean"]), float(rec["sd"]), pd.Timestamp(rec["start"]),
                   pd.Timestamp(rec["end"]))


def fit_standardizer(t: TimeTable, column: str | None = None, start=None, end=None) -> Standardizer:
    column = column or t.target
    sub = t.select(start, end)
    x = sub.column(column)
    x = x[np.isfinite(x)]
    if np.unique(x).size < 2:
        raise ValueError(f"column {column!r} has zero variance on the fit range")
    s = _utc(start) if start is not None else sub.index[0]
    e = _utc(end) if end is not None else sub.index[-1] + STEP
    return Standardizer(float(np.mean(x)), float(np.std(x, ddof=1)), s, e)
