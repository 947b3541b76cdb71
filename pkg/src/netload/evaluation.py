"""Forecast verification.

Pinball score, reliability, worm plots with autocorrelation-aware
consistency bands, sharpness with moving-block bootstrap intervals, and the
Diebold-Mariano test. Simulation-based routines take an explicit seed and
seed every replicate from ``numpy.random.SeedSequence(seed).spawn``, so
results do not depend on how replicates are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import signal, stats

from . import records
from .dist import ForecastSeries
from .quantreg import pinball_loss
from .tailfit import coverage_band

BLOCK = 48
N_BOOT = 1000
N_SIM = 1000


def _as_matrix(forecasts, levels: Sequence[float]) -> np.ndarray:
    if isinstance(forecasts, ForecastSeries):
        return forecasts.quantiles(levels)
    q = np.atleast_2d(np.asarray(forecasts, float))
    if q.shape[1] != len(levels):
        raise ValueError("forecast matrix needs one column per level")
    return q


def pinball_by_level(forecasts, y, levels: Sequence[float]) -> np.ndarray:
    q = _as_matrix(forecasts, levels)
    y = np.asarray(y, float)
    return np.array([pinball_loss(q[:, j], y, a).mean() for j, a in enumerate(levels)])


def pinball(forecasts, y, levels: Sequence[float]) -> float:
    """Mean pinball loss over time steps and levels.

    ``forecasts`` is a :class:`ForecastSeries` or a ``(T, len(levels))``
    quantile matrix.
    """
    if len(np.atleast_1d(y)) == 0:
        raise ValueError("no observations")
    return float(np.mean(pinball_by_level(forecasts, y, levels)))


def pinball_series(forecasts, y, levels: Sequence[float]) -> np.ndarray:
    """Per-time pinball loss averaged over levels (input to the DM test)."""
    q = _as_matrix(forecasts, levels)
    y = np.asarray(y, float)
    return np.mean([pinball_loss(q[:, j], y, a) for j, a in enumerate(levels)], axis=0)


@dataclass
class Reliability:
    levels: np.ndarray
    observed: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    n: int

    @property
    def inside(self) -> np.ndarray:
        return (self.observed >= self.band_lo) & (self.observed <= self.band_hi)


def reliability(forecasts, y, levels: Sequence[float]) -> Reliability:
    """Observed frequency of ``y <= q_alpha`` for each level, with binomial 95% bands."""
    y = np.asarray(y, float)
    if y.size == 0:
        raise ValueError("reliability needs at least one observation")
    q = _as_matrix(forecasts, levels)
    obs = np.mean(y[:, None] <= q, axis=0)
    bands = np.array([coverage_band(a, y.size) for a in levels])
    return Reliability(np.asarray(levels, float), obs, bands[:, 0], bands[:, 1], y.size)


# -- worm plots ---------------------------------------------------------------------

def worm_positions(n: int, max_points: int = 2000) -> np.ndarray:
    """Ranks (0-based) at which worm ordinates are reported.

    All ranks when ``n <= max_points``; otherwise every rank in the outer
    tails and a thinned set in between, so tail behaviour is fully visible.
    """
    if n <= max_points:
        return np.arange(n)
    tail = max_points // 4
    inner = np.unique(np.linspace(tail, n - tail - 1, max_points - 2 * tail).round().astype(int))
    return np.unique(np.r_[np.arange(tail), inner, np.arange(n - tail, n)])


@dataclass
class WormData:
    """Worm-plot ordinates and consistency band at selected ranks.

    ``theoretical`` holds standard normal plotting positions
    ``Phi^-1((i + 0.5) / n)``; ``deviation`` is the ordered normalised PIT
    minus the theoretical value. ``band_lo``/``band_hi`` form the pointwise
    95% envelope of the same statistic under an AR(1) Gaussian copula with
    lag-1 coefficient ``rho``.
    """

    probs: np.ndarray
    theoretical: np.ndarray
    deviation: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    rho: float
    n: int
    n_sim: int
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def inside(self) -> np.ndarray:
        return (self.deviation >= self.band_lo) & (self.deviation <= self.band_hi)

    def fraction_inside(self, lo: float = 0.0, hi: float = 1.0) -> float:
        sel = (self.probs >= lo) & (self.probs <= hi)
        return float(np.mean(self.inside[sel])) if np.any(sel) else float("nan")

    def fraction_inside_tails(self, level: float) -> float:
        """Fraction inside the band for positions beyond ``level`` / ``1 - level``."""
        sel = (self.probs < level) | (self.probs > 1 - level)
        return float(np.mean(self.inside[sel])) if np.any(sel) else float("nan")


def lag1_autocorrelation(z: np.ndarray) -> float:
    z = np.asarray(z, float) - np.mean(z)
    den = z @ z
    return float(z[1:] @ z[:-1] / den) if den > 0 else 0.0


def _clip_pit(u: np.ndarray) -> np.ndarray:
    tiny = np.finfo(float).tiny
    return np.clip(u, tiny, 1 - np.finfo(float).epsneg)


def worm_from_pit(u, rho: float | None = None, n_sim: int = N_SIM, seed: int = 0,
                  conf: float = 0.95, max_points: int = 2000) -> WormData:
    """Worm data from PIT values ``u``.

    If ``rho`` is None it is estimated as the lag-1 autocorrelation of
    ``Phi^-1(u)``. Each of ``n_sim`` replicates draws an AR(1) Gaussian series
    with unit variance and coefficient ``rho``; the band is the pointwise
    ``(1 - conf) / 2`` and ``(1 + conf) / 2`` quantiles of the replicate
    deviations.
    """
    u = _clip_pit(np.asarray(u, float))
    n = u.size
    z = stats.norm.ppf(u)
    if rho is None:
        rho = lag1_autocorrelation(z)
    rho = float(np.clip(rho, -0.999, 0.999))
    pos = worm_positions(n, max_points)
    probs = (pos + 0.5) / n
    theo = stats.norm.ppf(probs)
    dev = np.sort(z)[pos] - theo

    sims = np.empty((n_sim, pos.size))
    innov_sd = np.sqrt(1 - rho ** 2)
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(n_sim)):
        rng = np.random.default_rng(ss)
        e = rng.standard_normal(n)
        e[1:] *= innov_sd
        x = signal.lfilter([1.0], [1.0, -rho], e)
        sims[i] = np.sort(x)[pos]
    sims -= theo
    a = (1 - conf) / 2
    lo, hi = np.quantile(sims, [a, 1 - a], axis=0)
    return WormData(probs, theo, dev, lo, hi, rho, n, n_sim, seed,
                    meta={"units": "standard normal deviation (ordered PIT z-score minus "
                                   "normal plotting position)",
                          "band": f"{conf:.0%} pointwise, AR(1) Gaussian copula"})


def pit(forecasts: ForecastSeries, y) -> np.ndarray:
    return forecasts.cdf(np.asarray(y, float))


def worm_data(forecasts: ForecastSeries, y, **kw) -> WormData:
    """Worm plot for full-support forecasts: PIT ``u_t = F_t(y_t)``."""
    y = np.asarray(y, float)
    ok = np.isfinite(y)
    return worm_from_pit(pit(forecasts.take(np.nonzero(ok)[0]), y[ok]), **kw)


def iid_envelope(n: int, positions: np.ndarray, conf: float = 0.95):
    """Exact pointwise envelope of worm deviations for i.i.d. uniform PIT.

    The ``i``-th order statistic of ``n`` uniforms is ``Beta(i+1, n-i)``.
    """
    a = (1 - conf) / 2
    i = np.asarray(positions)
    theo = stats.norm.ppf((i + 0.5) / n)
    lo = stats.norm.ppf(stats.beta.ppf(a, i + 1, n - i)) - theo
    hi = stats.norm.ppf(stats.beta.ppf(1 - a, i + 1, n - i)) - theo
    return lo, hi


# -- sharpness -------------------------------------------------------------------------

@dataclass
class Sharpness:
    level: float
    mean_width: float
    ci_lo: float
    ci_hi: float
    n_boot: int
    block: int
    seed: int


def block_bootstrap_means(x, block: int = BLOCK, n_boot: int = N_BOOT, seed: int = 0) -> np.ndarray:
    """Moving-block bootstrap replicates of the mean of ``x``.

    Each replicate concatenates ``ceil(n / block)`` blocks of length
    ``block`` with uniformly drawn start positions and truncates to ``n``.
    """
    x = np.asarray(x, float)
    n = x.size
    block = min(block, n)
    n_blocks = -(-n // block)
    last = n - (n_blocks - 1) * block  # length of the truncated final block
    cs = np.r_[0.0, np.cumsum(x)]
    starts_max = n - block + 1
    full_sums = cs[block:] - cs[:-block]            # sum of block starting at s
    part_sums = cs[last: last + starts_max] - cs[:starts_max]
    out = np.empty(n_boot)
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(n_boot)):
        s = np.random.default_rng(ss).integers(0, starts_max, n_blocks)
        out[i] = (full_sums[s[:-1]].sum() + part_sums[s[-1]]) / n
    return out


def sharpness(forecasts, lam: float, n_boot: int = N_BOOT, block: int = BLOCK, seed: int = 0,
              conf: float = 0.95) -> Sharpness:
    """Mean width of the central ``1 - 2*lam`` interval with a bootstrap CI."""
    if not 0 < lam < 0.5:
        raise ValueError("lam must be in (0, 0.5)")
    if isinstance(forecasts, ForecastSeries):
        width = forecasts.quantile(1 - lam) - forecasts.quantile(lam)
    else:
        width = np.asarray(forecasts, float)  # precomputed widths
    width = width[np.isfinite(width)]
    boots = block_bootstrap_means(width, block, n_boot, seed)
    a = (1 - conf) / 2
    lo, hi = np.quantile(boots, [a, 1 - a])
    return Sharpness(lam, float(width.mean()), float(lo), float(hi), n_boot, block, seed)


# -- Diebold-Mariano ---------------------------------------------------------------------

@dataclass
class DMResult:
    statistic: float
    pvalue: float
    mean_diff: float
    n: int
    h: int


def dm_test(loss1, loss2, h: int = 1) -> DMResult:
    """Diebold-Mariano test of equal expected loss.

    ``d = loss1 - loss2``; the statistic is ``mean(d) / sqrt(V / n)`` with
    ``V`` the autocovariance sum up to lag ``h - 1`` (rectangular kernel).
    Negative values favour model 1. Two-sided normal p-value.

    Raises
    ------
    ValueError
        Unequal lengths, fewer than 100 pairs, or zero variance of a
        non-zero loss differential.
    """
    l1 = np.asarray(loss1, float)
    l2 = np.asarray(loss2, float)
    if l1.shape != l2.shape:
        raise ValueError("loss series must have equal length")
    ok = np.isfinite(l1) & np.isfinite(l2)
    d = l1[ok] - l2[ok]
    n = d.size
    if n < 100:
        raise ValueError(f"DM test needs at least 100 pairs, have {n}")
    if np.all(d == 0):
        return DMResult(0.0, 1.0, 0.0, n, h)
    dm = d - d.mean()
    v = dm @ dm / n
    for k in range(1, h):
        v += 2 * (dm[k:] @ dm[:-k]) / n
    # rounding noise around a constant differential is not variance
    if not v > (1e-12 * np.abs(d).max()) ** 2:
        raise ValueError("loss differential has zero variance")
    stat = d.mean() / np.sqrt(v / n)
    p = 2 * stats.norm.sf(abs(stat))
    return DMResult(float(stat), float(p), float(d.mean()), n, h)


def skill_score(loss_method, loss_reference) -> float:
    return float(1 - np.nanmean(loss_method) / np.nanmean(loss_reference))


# -- report ----------------------------------------------------------------------------

@dataclass
class EvalReport:
    pinball_levels: list[float]
    pinball_by_level: list[float]
    pinball: float
    reliability: Reliability
    worm: WormData | None
    sharpness: list[Sharpness]
    dm: dict[str, DMResult] = field(default_factory=dict)

    def to_record(self) -> dict:
        r = self.reliability
        rec = {
            "pinball": {"levels": self.pinball_levels, "by_level": self.pinball_by_level,
                        "aggregate": self.pinball},
            "reliability": {"levels": r.levels.tolist(), "observed": r.observed.tolist(),
                            "band_lo": r.band_lo.tolist(), "band_hi": r.band_hi.tolist(),
                            "n": r.n},
            "sharpness": [{"interval": 1 - 2 * s.level, "lower_level": s.level,
                           "mean_width": s.mean_width, "ci_lo": s.ci_lo, "ci_hi": s.ci_hi,
                           "n_boot": s.n_boot, "block": s.block, "seed": s.seed}
                          for s in self.sharpness],
            "dm": {k: {"statistic": v.statistic, "pvalue": v.pvalue, "mean_diff": v.mean_diff,
                       "n": v.n, "h": v.h} for k, v in self.dm.items()},
        }
        if self.worm is not None:
            w = self.worm
            rec["worm"] = {"rho": w.rho, "n": w.n, "n_sim": w.n_sim, "seed": w.seed,
                           "fraction_inside": w.fraction_inside(),
                           "fraction_inside_tails_1pct": w.fraction_inside_tails(0.01),
                           **w.meta}
        return rec


def evaluate(forecasts: ForecastSeries, y, levels: Sequence[float] = tuple(np.arange(1, 20) / 20),
             pinball_levels: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
             sharpness_levels: Sequence[float] = (0.0025, 0.001, 0.0005), seed: int = 0,
             n_boot: int = N_BOOT, n_sim: int = N_SIM) -> EvalReport:
    y = np.asarray(y, float)
    ok = np.isfinite(y)
    f = forecasts.take(np.nonzero(ok)[0])
    yo = y[ok]
    pbl = pinball_by_level(f, yo, pinball_levels)
    return EvalReport(
        pinball_levels=list(pinball_levels), pinball_by_level=pbl.tolist(),
        pinball=float(pbl.mean()), reliability=reliability(f, yo, levels),
        worm=worm_data(f, yo, seed=seed, n_sim=n_sim),
        sharpness=[sharpness(f, lam, n_boot=n_boot, seed=seed) for lam in sharpness_levels],
    )


def write_report(report: EvalReport, outdir, prefix: str = "") -> None:
    """Write ``eval.json`` plus plot-ready ``worm.csv``, ``reliability.csv``, ``sharpness.csv``."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    records.write(out / f"{prefix}eval.json", report.to_record())
    r = report.reliability
    pd.DataFrame({"level": r.levels, "observed": r.observed, "band_lo": r.band_lo,
                  "band_hi": r.band_hi}).to_csv(out / f"{prefix}reliability.csv", index=False,
                                                float_format="%.17g")
    if report.worm is not None:
        w = report.worm
        pd.DataFrame({"prob": w.probs, "theoretical": w.theoretical, "deviation": w.deviation,
                      "band_lo": w.band_lo, "band_hi": w.band_hi}).to_csv(
            out / f"{prefix}worm.csv", index=False, float_format="%.17g")
    pd.DataFrame([{"interval": 1 - 2 * s.level, "mean_width": s.mean_width, "ci_lo": s.ci_lo,
                   "ci_hi": s.ci_hi} for s in report.sharpness]).to_csv(
        out / f"{prefix}sharpness.csv", index=False, float_format="%.17g")
