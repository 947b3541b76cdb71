"""Named model presets.

Each preset is a mean-model :class:`BasisSpec` plus the reduced feature set
``B`` used by quantile regression. Terms follow the model/feature tables
row by row. Where a row is ambiguous the reading used here is:

* "Clock-time" as a dummy is the half-hour ``period`` factor (48 levels);
  as a smooth it is the decimal ``clock`` hour.
* "Trend" P(2) is a quadratic polynomial in ``trend``.
* "X by Y" with a factor ``Y`` is one smooth per non-reference level of
  ``Y``; with a numeric ``Y`` (embedded wind capacity) it is the smooth of
  ``X`` multiplied by ``Y``. In ``B`` the latter is the linear product.
* Polynomial interactions "by clock-time" / "by month" use separate
  polynomial coefficients per level of ``period`` / ``month``.
* Bivariate smooths use ``K`` basis functions per margin.

Engineered column names are produced by :func:`engineer`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import features as fe
from .meanmodel import Basis, BasisSpec, bispline, dummy, linear, polynomial, spline

#: raw input columns (besides the target) that engineered features draw on
WEATHER_COLUMNS = ("temp_point", "temp_popw", "wind10_mean", "wind100_mean", "wind100_sd",
                   "irr_mean", "irr_max", "irr_sd", "cloud_max", "precip_mean", "precip_sd",
                   "price", "solar_capacity", "wind_capacity")
#: covariates of the conditional tail scale model
TAIL_LINEAR = ("wind100_mean", "irr_mean")
TAIL_SMOOTH = (("yhat", 4),)


@dataclass(frozen=True)
class Preset:
    name: str
    mean: BasisSpec
    qr: BasisSpec  # linear / dummy / polynomial terms only

    def columns_needed(self) -> set[str]:
        return self.mean.columns_needed() | self.qr.columns_needed()


def _vanilla(point: bool) -> tuple[tuple, tuple]:
    terms = [linear("trend"), dummy("period"), dummy("daytype"),
             polynomial("temp_point", 3),
             polynomial("temp_point", 3, by="period", label="poly(temp_point,3):period"),
             polynomial("temp_point", 3, by="month", label="poly(temp_point,3):month")]
    q = [dummy("period"), dummy("daytype"), polynomial("temp_point", 3)]
    if point:
        terms += [linear("irr_mean_cap"), linear("wind100_mean")]
        q += [linear("irr_mean_cap"), linear("wind100_mean")]
    return tuple(terms), tuple(q)


def _gam_t() -> list:
    return [dummy("daytype"), polynomial("trend", 2), linear("netload_roll2w"),
            linear("fourier_s1"), linear("fourier_c1"), linear("fourier_s2"),
            linear("fourier_c2"), dummy("school"),
            spline("clock", 35),
            spline("clock", 30, by="daytype", by_factor=True),
            spline("clock", 20, by="school", by_factor=True),
            spline("temp_point", 35), spline("temp_point_roll48", 35)]


def _gam_point() -> list:
    return _gam_t() + [
        spline("irr_mean_cap", 5), bispline("irr_mean", "wind10_mean", 17),
        linear("wind10_mean"),
        spline("wind100_mean", 20, by="wind_capacity"),
        bispline("price", "clock", 17),
        spline("precip_mean", 5), bispline("precip_mean", "clock", 17)]


def _gam_grid() -> list:
    return _gam_point() + [
        spline("temp_popw", 35), spline("temp_popw_roll48", 35),
        bispline("temp_popw", "clock", 17),
        spline("irr_max_cap", 5), spline("irr_sd_cap", 5), spline("cloud_max_cap", 5),
        linear("wind100_sd"), spline("precip_sd", 5)]


def _build() -> dict[str, Preset]:
    vt, vtq = _vanilla(False)
    vp, vpq = _vanilla(True)
    return {
        "vanilla-t": Preset("vanilla-t", BasisSpec(vt, "vanilla-t"), BasisSpec(vtq, "vanilla-t:qr")),
        "gam-t": Preset("gam-t", BasisSpec(tuple(_gam_t()), "gam-t"),
                        BasisSpec((dummy("daytype"),), "gam-t:qr")),
        "vanilla-point": Preset("vanilla-point", BasisSpec(vp, "vanilla-point"),
                                BasisSpec(vpq, "vanilla-point:qr")),
        "gam-point": Preset("gam-point", BasisSpec(tuple(_gam_point()), "gam-point"),
                            BasisSpec((dummy("daytype"), linear("wind100_cap")), "gam-point:qr")),
        "gam-grid": Preset("gam-grid", BasisSpec(tuple(_gam_grid()), "gam-grid"),
                           BasisSpec((dummy("daytype"), linear("temp_popw"), linear("irr_sd_cap"),
                                      linear("wind100_cap"), linear("wind100_sd")),
                                     "gam-grid:qr")),
    }


PRESETS = _build()
PRESET_NAMES = tuple(PRESETS)


def get(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}") from None


def qr_spec(features: list[str]) -> BasisSpec:
    """QR feature spec from explicit column names, all entering linearly."""
    return BasisSpec(tuple(linear(f) for f in features), "custom:qr")


def qr_matrix(basis: Basis, t: fe.TimeTable) -> tuple[np.ndarray, list[str], np.ndarray]:
    """Dense ``B`` (without intercept), its column names, and row validity."""
    d = basis.design(t)
    return d.X[:, 1:].toarray(), d.columns[1:], d.valid


# -- feature engineering ---------------------------------------------------------------

def engineer(t: fe.TimeTable, holidays=(), school_holidays=(), tz: str = "Europe/London",
             issue_hour: float = 6.0) -> fe.TimeTable:
    """Add every engineered column the presets use, where inputs allow.

    Calendar columns always; ``netload_roll2w`` (two-week target mean as of
    the day-ahead issue time); 48-hour trailing temperature means;
    capacity-scaled solar features; ``wind100_cap``.
    """
    out = fe.calendar_features(t, holidays, school_holidays, tz)
    out = fe.rolling_mean_as_of_issue(out, t.target, "14D", name="netload_roll2w",
                                      issue_hour=issue_hour)
    for c in ("temp_point", "temp_popw"):
        if c in out:
            out = fe.rolling_mean(out, c, "48h", name=f"{c}_roll48")
    if "solar_capacity" in out:
        for c in ("irr_mean", "irr_max", "irr_sd", "cloud_max"):
            if c in out:
                out = fe.capacity_scale(out, c, "solar_capacity", name=f"{c}_cap")
    if "wind_capacity" in out and "wind100_mean" in out:
        out = fe.capacity_scale(out, "wind100_mean", "wind_capacity", name="wind100_cap")
    return out


def raw_columns_for(name: str) -> set[str]:
    """Raw input columns a preset needs (before :func:`engineer`)."""
    derived = {"netload_roll2w": set(), "temp_point_roll48": {"temp_point"},
               "temp_popw_roll48": {"temp_popw"}, "wind100_cap": {"wind100_mean", "wind_capacity"}}
    for c in ("irr_mean", "irr_max", "irr_sd", "cloud_max"):
        derived[f"{c}_cap"] = {c, "solar_capacity"}
    calendar = {"clock", "period", "daytype", "school", "month", "trend", "fourier_s1",
                "fourier_c1", "fourier_s2", "fourier_c2"}
    out: set[str] = set()
    for c in get(name).columns_needed():
        if c in calendar:
            continue
        out |= derived.get(c, {c})
    return out
