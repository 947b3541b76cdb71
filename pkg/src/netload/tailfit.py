"""Peaks-over-threshold GPD tails, static or with covariate-dependent scale.

Exceedances beyond the outermost central quantile are modelled as

    m_t ~ GPD(scale_t, shape),   log(scale_t) = C_t beta + f(x_t)

with a constant shape. The default covariates are linear 100 m wind speed
and solar irradiance plus a 4-function cubic B-spline smooth of the expected
net-load. A static tail uses the intercept only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import optimize, stats

from .dist import ForecastSeries
from .meanmodel import bspline_rows, difference_penalty, spline_knots
from .quantreg import ConvergenceError

SHAPE_BOUNDS = (-0.49, 0.49)
MIN_EXCEEDANCES = 50
SMOOTH_PENALTY = 1.0
DEFAULT_LINEAR = ("wind100_mean", "irr_mean")
DEFAULT_SMOOTH = (("yhat", 4),)


class TailWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ExceedanceSet:
    side: str
    magnitudes: np.ndarray
    covariates: pd.DataFrame
    timestamps: Any = None
    n_total: int = 0

    @property
    def count(self) -> int:
        return int(self.magnitudes.size)

    @property
    def fittable(self) -> bool:
        return self.count >= MIN_EXCEEDANCES


def _thresholds(curves, side: str) -> np.ndarray:
    if isinstance(curves, ForecastSeries):
        return curves.q_lo if side == "lower" else curves.q_hi
    if isinstance(curves, np.ndarray) and curves.ndim == 2:
        return curves[:, 0] if side == "lower" else curves[:, -1]
    if isinstance(curves, np.ndarray):
        return curves
    return np.array([c.values[0] if side == "lower" else c.values[-1] for c in curves])


def extract_exceedances(y, curves, side: str, covariates: pd.DataFrame | None = None,
                        timestamps=None) -> ExceedanceSet:
    """Observations beyond the outermost central quantile.

    ``curves`` is a :class:`ForecastSeries`, a ``(T, L)`` quantile matrix, a
    sequence of :class:`QuantileCurve`, or a 1-d array of thresholds. Lower
    exceedances are ``q_lo - y`` for ``y < q_lo``; upper are ``y - q_hi``.
    Fewer than ``MIN_EXCEEDANCES`` are returned but flagged unfittable.
    """
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    y = np.asarray(y, float)
    q = _thresholds(curves, side)
    if q.shape != y.shape:
        raise ValueError("curves and y are not aligned")
    ok = np.isfinite(y) & np.isfinite(q)
    hit = ok & ((y < q) if side == "lower" else (y > q))
    mags = (q - y)[hit] if side == "lower" else (y - q)[hit]
    cov = pd.DataFrame(index=np.arange(hit.sum())) if covariates is None else \
        pd.DataFrame(covariates).iloc[np.nonzero(hit)[0]].reset_index(drop=True)
    ts = None if timestamps is None else np.asarray(timestamps)[hit]
    e = ExceedanceSet(side, mags, cov, ts, int(ok.sum()))
    if not e.fittable:
        warnings.warn(f"only {e.count} {side} exceedances (< {MIN_EXCEEDANCES})", TailWarning)
    return e


# -- model --------------------------------------------------------------------------

@dataclass
class TailModel:
    """Log-link GPD scale model with constant shape.

    ``coef`` is ``[intercept, linear..., smooth basis...]`` with linear
    coefficients on the raw covariate scale.
    """

    side: str
    linear: tuple[str, ...]
    smooth: tuple[dict, ...]  # {"name", "knots"}
    coef: np.ndarray
    shape: float
    loglik: float = float("nan")
    n: int = 0
    n_iter: int = 0
    grad_norm: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def conditional(self) -> bool:
        return bool(self.linear or self.smooth)

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    def coefficient(self, name: str) -> float:
        return float(self.coef[1 + list(self.linear).index(name)])

    def log_scale(self, covariates) -> np.ndarray:
        n = _nrows(covariates)
        eta = np.full(n, self.coef[0])
        j = 1
        for name in self.linear:
            eta = eta + self.coef[j] * np.asarray(_get(covariates, name), float)
            j += 1
        for sm in self.smooth:
            knots = np.asarray(sm["knots"])
            x = np.clip(np.asarray(_get(covariates, sm["name"]), float), knots[0], knots[-1])
            ci, cv = bspline_rows(np.atleast_1d(x), knots)
            k = len(knots) - 4
            beta = self.coef[j:j + k]
            eta = eta + np.sum(cv * beta[ci], axis=1)
            j += k
        return eta

    def to_record(self) -> dict:
        return {"side": self.side, "linear": list(self.linear),
                "smooth": [{"name": s["name"], "knots": list(s["knots"])} for s in self.smooth],
                "coef": self.coef.tolist(), "shape": self.shape, "loglik": self.loglik,
                "n": self.n, "n_iter": self.n_iter, "grad_norm": self.grad_norm}

    @classmethod
    def from_record(cls, rec: dict) -> "TailModel":
        return cls(rec["side"], tuple(rec["linear"]),
                   tuple({"name": s["name"], "knots": s["knots"]} for s in rec["smooth"]),
                   np.asarray(rec["coef"], float), float(rec["shape"]),
                   float(rec["loglik"]) if rec.get("loglik") is not None else float("nan"),
                   int(rec.get("n", 0)), int(rec.get("n_iter", 0)),
                   float(rec["grad_norm"]) if rec.get("grad_norm") is not None else float("nan"))


def _nrows(cov) -> int:
    if isinstance(cov, pd.DataFrame):
        return len(cov)
    if isinstance(cov, Mapping):
        for v in cov.values():
            return np.atleast_1d(v).size
        return 1
    return 1


def _get(cov, name):
    if isinstance(cov, pd.DataFrame):
        return cov[name].to_numpy(float)
    return np.atleast_1d(cov[name])


def scale_at(m: TailModel, covariates) -> np.ndarray | float:
    """GPD scale ``exp(C beta + f)`` for a covariate row or table."""
    s = np.exp(m.log_scale(covariates))
    if isinstance(covariates, Mapping) and all(np.ndim(v) == 0 for v in covariates.values()):
        return float(s[0])
    return s


# -- likelihood -------------------------------------------------------------------

def gpd_nll_terms(m: np.ndarray, eta: np.ndarray, xi: float):
    """Per-observation negative log-likelihood and its derivatives.

    Returns ``(nll, d_eta, d_xi)`` with ``scale = exp(eta)``; ``nll`` is
    ``inf`` where ``m`` lies outside the support.
    """
    w = m * np.exp(-eta)
    if abs(xi) < 1e-5:
        nll = eta + w + xi * (w - w * w / 2)
        d_eta = 1 - (1 + xi) * w / (1 + xi * w)
        d_xi = w - w * w / 2 + xi * (2 * w ** 3 / 3 - w * w)
        return nll, d_eta, d_xi
    z = 1 + xi * w
    bad = z <= 0
    zs = np.where(bad, 1.0, z)
    L = np.log(zs)
    nll = eta + (1 + 1 / xi) * L
    d_eta = 1 - (1 + xi) * w / zs
    d_xi = -L / xi ** 2 + (1 + 1 / xi) * w / zs
    if np.any(bad):
        nll = np.where(bad, np.inf, nll)
    return nll, d_eta, d_xi


def gpd_loglik(m, scale, shape) -> float:
    m = np.asarray(m, float)
    eta = np.log(np.broadcast_to(np.asarray(scale, float), m.shape))
    return -float(np.sum(gpd_nll_terms(m, eta, float(shape))[0]))


def _design(e: ExceedanceSet, linear: Sequence[str], smooth: Sequence[tuple[str, int]]):
    """Standardised covariate design, its raw-scale transform and penalty."""
    n = e.count
    cols = [np.ones(n)]
    centers, scales = [], []
    for name in linear:
        x = e.covariates[name].to_numpy(float)
        mu, sd = x.mean(), x.std()
        sd = sd if sd > 0 else 1.0
        centers.append(mu)
        scales.append(sd)
        cols.append((x - mu) / sd)
    smooth_state = []
    pen_blocks = []
    for name, k in smooth:
        x = e.covariates[name].to_numpy(float)
        knots = spline_knots(x, k)
        ci, cv = bspline_rows(np.clip(x, knots[0], knots[-1]), knots)
        Bm = np.zeros((n, k))
        np.put_along_axis(Bm, ci, cv, axis=1)
        # sum-to-zero over the exceedances keeps the intercept identifiable
        c = Bm.sum(axis=0)
        qf, _ = np.linalg.qr(c[:, None], mode="complete")
        Z = qf[:, 1:]
        start = len(cols)
        for j in range(k - 1):
            cols.append(Bm @ Z[:, j])
        smooth_state.append({"name": name, "knots": knots.tolist(), "Z": Z})
        pen_blocks.append((start, Z.T @ difference_penalty(knots) @ Z))
    X = np.column_stack(cols)
    P = np.zeros((X.shape[1], X.shape[1]))
    for start, S in pen_blocks:
        k = S.shape[0]
        P[start:start + k, start:start + k] = SMOOTH_PENALTY * S
    return X, P, np.array(centers), np.array(scales), smooth_state


def fit_gpd(e: ExceedanceSet, conditional: bool = True, linear: Sequence[str] = DEFAULT_LINEAR,
            smooth: Sequence[tuple[str, int]] = DEFAULT_SMOOTH, max_iter: int = 5000,
            grad_tol: float = 1e-6) -> TailModel:
    """Maximum-likelihood GPD fit by L-BFGS-B with an analytic gradient.

    The shape is boxed to ``SHAPE_BOUNDS``. The static variant
    (``conditional=False``) fits an intercept-only log-scale. The objective is
    the mean negative log-likelihood plus a small fixed curvature penalty on
    smooth terms; ``grad_norm`` reports the projected gradient of that
    objective.

    Raises
    ------
    ValueError
        Fewer than ``MIN_EXCEEDANCES`` exceedances or missing covariates.
    ConvergenceError
        Optimiser stopped with projected gradient norm above ``grad_tol``.
    """
    if e.count < MIN_EXCEEDANCES:
        raise ValueError(f"need at least {MIN_EXCEEDANCES} exceedances, have {e.count}")
    if not conditional:
        linear, smooth = (), ()
    for name in list(linear) + [s[0] for s in smooth]:
        if name not in e.covariates.columns:
            raise ValueError(f"tail covariate {name!r} not available")
    m = e.magnitudes
    n = m.size
    X, P, centers, scales, smooth_state = _design(e, linear, smooth)
    p = X.shape[1]

    def objective(theta):
        beta, xi = theta[:p], theta[p]
        eta = X @ beta
        nll, d_eta, d_xi = gpd_nll_terms(m, eta, xi)
        if not np.all(np.isfinite(nll)):
            return 1e10, np.zeros(p + 1)
        pen = beta @ P @ beta
        f = (nll.sum() + pen) / n
        g = np.r_[(X.T @ d_eta + 2 * P @ beta) / n, d_xi.sum() / n]
        return f, g

    theta0 = np.zeros(p + 1)
    theta0[0] = np.log(m.mean())
    bounds = [(None, None)] * p + [SHAPE_BOUNDS]
    res = optimize.minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": max_iter, "maxfun": 4 * max_iter,
                                     "ftol": 1e-15, "gtol": 1e-10, "maxcor": 20})
    theta = res.x
    n_iter = int(res.nit)
    # polish with projected Newton steps using a numerical Hessian of the gradient
    for _ in range(20):
        _, g = objective(theta)
        gp = _projected(g, theta, p)
        if np.max(np.abs(gp)) < 1e-10:
            break
        H = _num_hessian(objective, theta)
        free = np.ones(p + 1, bool)
        free[p] = gp[p] != 0
        try:
            step = np.zeros(p + 1)
            step[free] = np.linalg.solve(H[np.ix_(free, free)], g[free])
        except np.linalg.LinAlgError:
            break
        f0 = objective(theta)[0]
        t = 1.0
        while t > 1e-8:
            cand = theta - t * step
            cand[p] = np.clip(cand[p], *SHAPE_BOUNDS)
            if objective(cand)[0] <= f0:
                theta = cand
                break
            t *= 0.5
        else:
            break
        n_iter += 1
    f, g = objective(theta)
    gnorm = float(np.linalg.norm(_projected(g, theta, p)))
    if not np.isfinite(f) or gnorm > grad_tol:
        raise ConvergenceError(f"GPD fit stopped with gradient norm {gnorm:.3g}: {res.message}")
    xi = float(theta[p])
    if min(abs(xi - SHAPE_BOUNDS[0]), abs(xi - SHAPE_BOUNDS[1])) < 1e-8:
        warnings.warn(f"GPD shape pinned at bound {xi:+.2f}", TailWarning)

    # back to raw covariate scale
    beta = theta[:p]
    coef = [beta[0] - np.sum(beta[1:1 + len(linear)] * centers / scales)]
    coef += list(beta[1:1 + len(linear)] / scales)
    j = 1 + len(linear)
    smooth_out = []
    for st in smooth_state:
        Z = st["Z"]
        k1 = Z.shape[1]
        coef += list(Z @ beta[j:j + k1])
        j += k1
        smooth_out.append({"name": st["name"], "knots": st["knots"]})
    eta = X @ beta
    ll = -float(gpd_nll_terms(m, eta, xi)[0].sum())
    return TailModel(e.side, tuple(linear), tuple(smooth_out), np.asarray(coef, float), xi,
                     loglik=ll, n=n, n_iter=n_iter, grad_norm=gnorm)


def _projected(g, theta, p):
    gp = g.copy()
    lo, hi = SHAPE_BOUNDS
    if (theta[p] <= lo + 1e-12 and g[p] > 0) or (theta[p] >= hi - 1e-12 and g[p] < 0):
        gp[p] = 0.0
    return gp


def _num_hessian(fun, theta, h=1e-6):
    k = theta.size
    H = np.empty((k, k))
    for i in range(k):
        e = np.zeros(k)
        e[i] = h
        H[i] = (fun(theta + e)[1] - fun(theta - e)[1]) / (2 * h)
    return (H + H.T) / 2


# -- forecasts ------------------------------------------------------------------------

def attach_tails(levels, q: np.ndarray, tail_lo: TailModel, tail_hi: TailModel,
                 covariates=None, index=None) -> ForecastSeries:
    """Combine central quantiles ``q`` (T, L) with GPD tails at each step."""
    q = np.atleast_2d(np.asarray(q, float))
    t = q.shape[0]
    cov = covariates if covariates is not None else pd.DataFrame(index=np.arange(t))
    lo = np.exp(tail_lo.log_scale(cov)) if tail_lo.conditional else np.full(t, np.exp(tail_lo.intercept))
    hi = np.exp(tail_hi.log_scale(cov)) if tail_hi.conditional else np.full(t, np.exp(tail_hi.intercept))
    return ForecastSeries(np.asarray(levels, float), q, lo, tail_lo.shape, hi, tail_hi.shape,
                          index=index)


def exponential_extension(levels, q: np.ndarray, floor: float = 1e-9, index=None) -> ForecastSeries:
    """Quantile-regression-only forecast given full support.

    Each tail is exponential with the scale that keeps the predictive density
    continuous at the outermost level, i.e. the density of the last
    interpolation segment continues and decays exponentially.
    """
    levels = np.asarray(levels, float)
    q = np.atleast_2d(np.asarray(q, float))
    d_lo = np.maximum(q[:, 1] - q[:, 0], floor)
    d_hi = np.maximum(q[:, -1] - q[:, -2], floor)
    s_lo = levels[0] * d_lo / (levels[1] - levels[0])
    s_hi = (1 - levels[-1]) * d_hi / (levels[-1] - levels[-2])
    return ForecastSeries(levels, q, s_lo, 0.0, s_hi, 0.0, index=index)


# -- threshold choice -------------------------------------------------------------------

def coverage_band(alpha: float, n: int, conf: float = 0.95) -> tuple[float, float]:
    """Central binomial interval for the observed frequency at level ``alpha``."""
    lo = stats.binom.ppf((1 - conf) / 2, n, alpha) / n
    hi = stats.binom.ppf(1 - (1 - conf) / 2, n, alpha) / n
    return float(lo), float(hi)


def select_threshold(coverage: Mapping[float, float], n: int,
                     trial: Sequence[float]) -> float | None:
    """Most extreme reliable level in ``trial`` (ordered least to most extreme).

    Walks outward from the least extreme level and stops at the first level
    whose observed frequency falls outside the binomial 95% band; returns the
    last passing level, or ``None`` if the first one already fails.
    """
    chosen = None
    for a in trial:
        lo, hi = coverage_band(a, n)
        if lo <= coverage[a] <= hi:
            chosen = a
        else:
            break
    return chosen
