"""Generalised Pareto primitives and the spliced predictive distribution.

A spliced forecast joins a piecewise-linear quantile function between the
levels ``alpha_lo`` and ``alpha_hi`` with two Generalised Pareto tails fitted
to exceedances beyond ``q(alpha_lo)`` and ``q(alpha_hi)``::

    F(y) = alpha_lo * S_lo(q_lo - y)                      y <  q_lo
           interpolated quantile curve                     q_lo <= y <= q_hi
           alpha_hi + (1 - alpha_hi) * F_hi(y - q_hi)      y >  q_hi

where ``S_lo`` is the GPD survival function of the lower tail. Every function
here is pure and works on immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

#: |shape| below this uses the exponential form of the GPD.
SHAPE_EPS = 1e-7


class DomainError(ValueError):
    """Argument outside the support or parameter space of a distribution."""


@dataclass(frozen=True)
class GpdParams:
    scale: float
    shape: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise DomainError(f"GPD scale must be positive, got {self.scale!r}")
        if not np.isfinite(self.shape):
            raise DomainError(f"GPD shape must be finite, got {self.shape!r}")

    @property
    def upper_bound(self) -> float:
        """Right endpoint of the support (``inf`` unless shape < 0)."""
        return -self.scale / self.shape if self.shape < 0 else np.inf


# -- vectorised GPD kernels --------------------------------------------------
# These accept broadcastable arrays and do no validation; the public scalar
# API below checks domains.

def _log1p_ratio(y, scale, shape):
    # log(1 + shape*y/scale) / shape, with the shape -> 0 limit y/scale
    y, scale, shape = np.broadcast_arrays(np.asarray(y, float), np.asarray(scale, float),
                                          np.asarray(shape, float))
    out = np.array(y / scale, dtype=float)
    big = np.abs(shape) >= SHAPE_EPS
    if np.any(big):
        z = shape[big] * y[big] / scale[big]
        with np.errstate(invalid="ignore", divide="ignore"):
            out[big] = np.log1p(z) / shape[big]
    return out


def gpd_sf_array(y, scale, shape) -> np.ndarray:
    """Survival function ``1 - F_GPD`` for arrays; 0 beyond a finite support."""
    y = np.asarray(y, float)
    shape = np.asarray(shape, float)
    scale = np.asarray(scale, float)
    ys = np.maximum(y, 0.0)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        inside = (shape >= 0) | (ys * -shape < scale)
        ys = np.where(inside, ys, 0.0)
        out = np.exp(-_log1p_ratio(ys, scale, shape))
    out = np.where(inside, out, 0.0)
    return np.where(y <= 0, 1.0, out)


def gpd_cdf_array(y, scale, shape) -> np.ndarray:
    y = np.asarray(y, float)
    shape = np.asarray(shape, float)
    scale = np.asarray(scale, float)
    ys = np.maximum(y, 0.0)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        inside = (shape >= 0) | (ys * -shape < scale)
        ys = np.where(inside, ys, 0.0)
        out = -np.expm1(-_log1p_ratio(ys, scale, shape))
    out = np.where(inside, out, 1.0)
    return np.where(y <= 0, 0.0, out)


def gpd_isf_array(s, scale, shape) -> np.ndarray:
    """Inverse survival: the exceedance ``m`` with ``S(m) = s``."""
    s, scale, shape = np.broadcast_arrays(np.asarray(s, float), np.asarray(scale, float),
                                          np.asarray(shape, float))
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.log(s)
        out = np.array(-scale * logs, dtype=float)
        big = np.abs(shape) >= SHAPE_EPS
        if np.any(big):
            out[big] = scale[big] * np.expm1(-shape[big] * logs[big]) / shape[big]
    return out


def gpd_logpdf_array(y, scale, shape) -> np.ndarray:
    y = np.asarray(y, float)
    scale = np.asarray(scale, float)
    shape = np.asarray(shape, float)
    with np.errstate(invalid="ignore", divide="ignore"):
        inside = (y >= 0) & ((shape >= 0) | (y * -shape < scale))
        ys = np.where(inside, y, 0.0)
        # log f = -log(scale) - (1 + 1/shape) * log(1 + shape*y/scale)
        lr = _log1p_ratio(ys, scale, shape)
        out = -np.log(scale) - lr - shape * lr
    return np.where(inside, out, -np.inf)


# -- scalar API ----------------------------------------------------------------

def _check_support(y: float, p: GpdParams) -> None:
    if not np.isfinite(y) and y != np.inf:
        raise DomainError(f"y must be a number, got {y!r}")
    if y < 0:
        raise DomainError(f"GPD support starts at 0, got y={y!r}")
    if y > p.upper_bound:
        raise DomainError(f"y={y!r} beyond the GPD upper bound {p.upper_bound!r}")


def gpd_cdf(y: float, p: GpdParams) -> float:
    """GPD distribution function of an exceedance ``y >= 0``.

    Uses the exponential form when ``|shape| < SHAPE_EPS``.

    Raises
    ------
    DomainError
        If ``y < 0`` or ``y`` lies past the finite upper endpoint.
    """
    _check_support(y, p)
    return float(gpd_cdf_array(y, p.scale, p.shape))


def gpd_sf(y: float, p: GpdParams) -> float:
    _check_support(y, p)
    return float(gpd_sf_array(y, p.scale, p.shape))


def gpd_quantile(prob: float, p: GpdParams) -> float:
    """Inverse of :func:`gpd_cdf` on ``[0, 1)``.

    ``prob = 1`` is allowed only for a negative shape (finite support), where
    it returns the upper endpoint.
    """
    if not (0.0 <= prob <= 1.0):
        raise DomainError(f"probability must be in [0, 1], got {prob!r}")
    if prob == 1.0:
        if p.shape >= 0:
            raise DomainError("prob = 1 has no finite quantile when shape >= 0")
        return p.upper_bound
    return float(gpd_isf_array(1.0 - prob, p.scale, p.shape)) if prob > 0.5 else float(
        _gpd_ppf_small(prob, p.scale, p.shape))


def _gpd_ppf_small(prob, scale, shape):
    # accurate for small prob: log(1 - prob) via log1p
    l1p = np.log1p(-np.asarray(prob, float))
    if abs(shape) < SHAPE_EPS:
        return -scale * l1p
    return scale * np.expm1(-shape * l1p) / shape


def gpd_logpdf(y: float, p: GpdParams) -> float:
    _check_support(y, p)
    return float(gpd_logpdf_array(y, p.scale, p.shape))


# -- quantile curve & spliced forecast ----------------------------------------

@dataclass(frozen=True)
class QuantileCurve:
    levels: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        lv = np.asarray(self.levels, float)
        vv = np.asarray(self.values, float)
        if lv.ndim != 1 or lv.shape != vv.shape or lv.size < 2:
            raise ValueError("levels and values must be 1-d of equal length >= 2")
        if np.any(lv <= 0) or np.any(lv >= 1) or np.any(np.diff(lv) <= 0):
            raise ValueError("levels must be strictly increasing in (0, 1)")
        if not np.all(np.isfinite(vv)) or np.any(np.diff(vv) < 0):
            raise ValueError("values must be finite and non-decreasing")
        object.__setattr__(self, "levels", tuple(float(x) for x in lv))
        object.__setattr__(self, "values", tuple(float(x) for x in vv))

    def value_at(self, level: float) -> float:
        return float(np.interp(level, self.levels, self.values))


@dataclass(frozen=True)
class SplicedForecast:
    """One time step's full predictive distribution."""

    central: QuantileCurve
    tail_lo: GpdParams
    tail_hi: GpdParams

    def __post_init__(self) -> None:
        if not (0 < self.alpha_lo < 0.5 < self.alpha_hi < 1):
            raise ValueError(
                f"need 0 < alpha_lo < 0.5 < alpha_hi < 1, got {self.alpha_lo}, {self.alpha_hi}")

    @property
    def alpha_lo(self) -> float:
        return self.central.levels[0]

    @property
    def alpha_hi(self) -> float:
        return self.central.levels[-1]

    @property
    def q_lo(self) -> float:
        return self.central.values[0]

    @property
    def q_hi(self) -> float:
        return self.central.values[-1]

    def cdf(self, y: float) -> float:
        return spliced_cdf(y, self)

    def quantile(self, prob: float) -> float:
        return spliced_quantile(prob, self)

    def to_record(self) -> dict[str, Any]:
        return {
            "levels": list(self.central.levels),
            "values": list(self.central.values),
            "tail_lo": {"scale": self.tail_lo.scale, "shape": self.tail_lo.shape},
            "tail_hi": {"scale": self.tail_hi.scale, "shape": self.tail_hi.shape},
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "SplicedForecast":
        return cls(
            QuantileCurve(tuple(rec["levels"]), tuple(rec["values"])),
            GpdParams(float(rec["tail_lo"]["scale"]), float(rec["tail_lo"]["shape"])),
            GpdParams(float(rec["tail_hi"]["scale"]), float(rec["tail_hi"]["shape"])),
        )


def spliced_cdf(y: float, f: SplicedForecast) -> float:
    """Predictive CDF of a spliced forecast at ``y``."""
    batch = ForecastSeries.from_forecasts([f])
    return float(batch.cdf(np.array([y]))[0])


def spliced_quantile(prob: float, f: SplicedForecast) -> float:
    """Inverse of :func:`spliced_cdf` for ``prob`` in (0, 1)."""
    if not (0.0 < prob < 1.0):
        raise DomainError(f"probability must be in (0, 1), got {prob!r}")
    batch = ForecastSeries.from_forecasts([f])
    return float(batch.quantile(prob)[0])


@dataclass(frozen=True)
class ForecastSeries:
    """A time series of spliced forecasts sharing one level grid.

    This is the vectorised container used throughout fitting and evaluation;
    indexing with an integer returns the :class:`SplicedForecast` for that step.

    Attributes
    ----------
    levels : (L,) array
        Central probability levels; first and last are the splice points.
    values : (T, L) array
        Central quantiles per time step, non-decreasing along axis 1.
    lo_scale, lo_shape, hi_scale, hi_shape : (T,) arrays
        GPD parameters of the lower and upper tails.
    """

    levels: np.ndarray
    values: np.ndarray
    lo_scale: np.ndarray
    lo_shape: np.ndarray
    hi_scale: np.ndarray
    hi_shape: np.ndarray
    index: Any = field(default=None, compare=False)

    def __post_init__(self) -> None:
        levels = np.asarray(self.levels, float)
        values = np.atleast_2d(np.asarray(self.values, float))
        t = values.shape[0]
        arrs = {}
        for name in ("lo_scale", "lo_shape", "hi_scale", "hi_shape"):
            a = np.broadcast_to(np.asarray(getattr(self, name), float), (t,)).copy()
            arrs[name] = a
        if values.shape[1] != levels.size or levels.size < 2:
            raise ValueError("values must have one column per level")
        if np.any(np.diff(levels) <= 0) or not (0 < levels[0] < 0.5 < levels[-1] < 1):
            raise ValueError("levels must be increasing with alpha_lo < 0.5 < alpha_hi")
        if np.any(np.diff(values, axis=1) < 0):
            raise ValueError("central quantiles must be non-decreasing")
        if np.any(arrs["lo_scale"] <= 0) or np.any(arrs["hi_scale"] <= 0):
            raise ValueError("tail scales must be positive")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "values", values)
        for name, a in arrs.items():
            object.__setattr__(self, name, a)

    # construction / access ---------------------------------------------------
    @classmethod
    def from_forecasts(cls, forecasts: Sequence[SplicedForecast], index=None) -> "ForecastSeries":
        levels = np.asarray(forecasts[0].central.levels)
        for f in forecasts:
            if f.central.levels != forecasts[0].central.levels:
                raise ValueError("all forecasts must share one level grid")
        return cls(
            levels=levels,
            values=np.array([f.central.values for f in forecasts]),
            lo_scale=np.array([f.tail_lo.scale for f in forecasts]),
            lo_shape=np.array([f.tail_lo.shape for f in forecasts]),
            hi_scale=np.array([f.tail_hi.scale for f in forecasts]),
            hi_shape=np.array([f.tail_hi.shape for f in forecasts]),
            index=index,
        )

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i: int) -> SplicedForecast:
        return SplicedForecast(
            QuantileCurve(tuple(self.levels), tuple(self.values[i])),
            GpdParams(float(self.lo_scale[i]), float(self.lo_shape[i])),
            GpdParams(float(self.hi_scale[i]), float(self.hi_shape[i])),
        )

    def __iter__(self) -> Iterator[SplicedForecast]:
        for i in range(len(self)):
            yield self[i]

    def take(self, rows) -> "ForecastSeries":
        rows = np.asarray(rows)
        idx = None if self.index is None else self.index[rows]
        return ForecastSeries(self.levels, self.values[rows], self.lo_scale[rows],
                              self.lo_shape[rows], self.hi_scale[rows], self.hi_shape[rows],
                              index=idx)

    @property
    def alpha_lo(self) -> float:
        return float(self.levels[0])

    @property
    def alpha_hi(self) -> float:
        return float(self.levels[-1])

    @property
    def q_lo(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def q_hi(self) -> np.ndarray:
        return self.values[:, -1]

    # distribution ------------------------------------------------------------
    def cdf(self, y) -> np.ndarray:
        """Predictive CDF at ``y`` (one value per time step, or broadcast scalar)."""
        y = np.broadcast_to(np.asarray(y, float), (len(self),))
        a_lo, a_hi = self.alpha_lo, self.alpha_hi
        vals = self.values
        n_le = np.sum(vals <= y[:, None], axis=1)
        out = np.empty(len(self))

        lo = n_le == 0
        out[lo] = a_lo * gpd_sf_array(self.q_lo[lo] - y[lo], self.lo_scale[lo], self.lo_shape[lo])

        hi = n_le == vals.shape[1]
        out[hi] = a_hi + (1 - a_hi) * gpd_cdf_array(y[hi] - self.q_hi[hi], self.hi_scale[hi],
                                                    self.hi_shape[hi])

        mid = ~(lo | hi)
        if np.any(mid):
            rows = np.nonzero(mid)[0]
            k = n_le[mid] - 1
            v0 = vals[rows, k]
            v1 = vals[rows, k + 1]
            w = (y[mid] - v0) / (v1 - v0)
            out[mid] = self.levels[k] + w * (self.levels[k + 1] - self.levels[k])
        return out

    def quantile(self, prob) -> np.ndarray:
        """Predictive quantile at ``prob`` (scalar or one per time step)."""
        prob = np.broadcast_to(np.asarray(prob, float), (len(self),))
        if np.any((prob <= 0) | (prob >= 1)):
            raise DomainError("probabilities must lie in (0, 1)")
        a_lo, a_hi = self.alpha_lo, self.alpha_hi
        out = np.empty(len(self))

        lo = prob < a_lo
        out[lo] = self.q_lo[lo] - gpd_isf_array(prob[lo] / a_lo, self.lo_scale[lo],
                                                self.lo_shape[lo])
        hi = prob > a_hi
        out[hi] = self.q_hi[hi] + gpd_isf_array((1 - prob[hi]) / (1 - a_hi), self.hi_scale[hi],
                                                self.hi_shape[hi])
        mid = ~(lo | hi)
        if np.any(mid):
            p = prob[mid]
            k = np.clip(np.searchsorted(self.levels, p, side="right") - 1, 0,
                        self.levels.size - 2)
            rows = np.nonzero(mid)[0]
            l0, l1 = self.levels[k], self.levels[k + 1]
            w = (p - l0) / (l1 - l0)
            out[mid] = self.values[rows, k] + w * (self.values[rows, k + 1] - self.values[rows, k])
        return out

    def quantiles(self, probs: Sequence[float]) -> np.ndarray:
        """(T, len(probs)) matrix of predictive quantiles."""
        return np.column_stack([self.quantile(p) for p in probs])
