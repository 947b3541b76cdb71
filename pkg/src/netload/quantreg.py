"""Linear quantile regression on mean-model residuals.

Each level is fitted by a primal-dual interior-point method (Mehrotra
predictor-corrector) on the bounded dual of the quantile-regression linear
programme, the Frisch-Newton approach of Portnoy and Koenker. Intercept-only
problems are solved exactly by the empirical quantile taking the smallest
minimiser (``inverted_cdf``).

Quantiles at one time step are made non-crossing by sorting them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .dist import ForecastSeries

CENTRAL_LEVELS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
#: trial levels for tail threshold selection, lower side (mirror for upper)
EXTREME_LEVELS = (0.05, 0.025, 0.01, 0.005, 0.0025, 0.001, 0.0005)
MAX_ITER = 200


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""


def pinball_loss(q, y, alpha) -> np.ndarray:
    """Elementwise pinball loss ``(q - y) * (1(y <= q) - alpha)``."""
    q = np.asarray(q, float)
    y = np.asarray(y, float)
    return (q - y) * ((y <= q).astype(float) - alpha)


def _ipm(X: np.ndarray, y: np.ndarray, tau: float, tol: float, max_iter: int) -> np.ndarray:
    # maximise y'a  s.t.  X'a = (1 - tau) X'1,  0 <= a <= 1
    # the equality multipliers are the regression coefficients
    n, p = X.shape
    b = (1 - tau) * X.sum(axis=0)
    x = np.full(n, 1 - tau)
    s = 1 - x
    lam = sla.lstsq(X, y, check_finite=False)[0]
    r = y - X @ lam
    delta = max(np.abs(r).mean(), 1e-8) * 0.1 + 1e-12
    z = np.maximum(-r, 0) + delta
    w = np.maximum(r, 0) + delta
    step_frac = 0.99995
    scale = 1.0 + np.abs(y).sum()

    def max_step(v, dv):
        neg = dv < 0
        return min(1.0, float(np.min(-v[neg] / dv[neg]))) if np.any(neg) else 1.0

    for it in range(max_iter):
        gap = x @ z + s @ w
        if gap < tol * scale:
            return lam
        rc = y - X @ lam + z - w  # dual residual, kept ~0
        rb = b - X.T @ x
        dinv = z / x + w / s
        d = 1.0 / dinv
        M = X.T @ (X * d[:, None])
        try:
            fac = sla.cho_factor(M, check_finite=False)
        except np.linalg.LinAlgError:
            fac = None

        def direction(mu, cx, cs):
            # complementarity targets: x z = mu - cx, s w = mu - cs
            rhat = rc + (mu - x * z - cx) / x - (mu - s * w - cs) / s
            rhs = X.T @ (d * rhat) - rb
            if fac is not None:
                dlam = sla.cho_solve(fac, rhs, check_finite=False)
            else:
                dlam = sla.lstsq(M, rhs, check_finite=False)[0]
            dx = d * (rhat - X @ dlam)
            ds = -dx
            dz = (mu - x * z - cx - z * dx) / x
            dw = (mu - s * w - cs - w * ds) / s
            return dx, ds, dlam, dz, dw

        # predictor
        dx, ds, dlam, dz, dw = direction(0.0, 0.0, 0.0)
        ap = min(max_step(x, dx), max_step(s, ds))
        ad = min(max_step(z, dz), max_step(w, dw))
        mu = gap / (2 * n)
        gap_aff = (x + ap * dx) @ (z + ad * dz) + (s + ap * ds) @ (w + ad * dw)
        sigma = (gap_aff / gap) ** 3
        # corrector
        dx, ds, dlam, dz, dw = direction(sigma * mu, dx * dz, ds * dw)
        ap = step_frac * min(max_step(x, dx), max_step(s, ds))
        ad = step_frac * min(max_step(z, dz), max_step(w, dw))
        x = x + ap * dx
        s = 1.0 - x
        s = np.maximum(s, 1e-300)
        lam = lam + ad * dlam
        z = z + ad * dz
        w = w + ad * dw
    raise ConvergenceError(f"quantile regression did not converge in {max_iter} iterations")


def fit_quantile(residuals, B, alpha: float, tol: float = 1e-11,
                 max_iter: int = MAX_ITER) -> np.ndarray:
    """Coefficients ``[intercept, beta...]`` minimising the pinball loss.

    Parameters
    ----------
    residuals : (n,) array
    B : (n, p) array or None
        Linear features; an intercept column is prepended.
    alpha : float in (0, 1)

    Raises
    ------
    ConvergenceError
        If the interior-point iteration cap is reached.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    r = np.asarray(residuals, float)
    n = r.size
    if B is None or np.size(B) == 0:
        return np.array([np.quantile(r, alpha, method="inverted_cdf")])
    B = np.atleast_2d(np.asarray(B, float))
    if B.shape[0] != n:
        B = B.T
    X = np.column_stack([np.ones(n), B])
    # column scaling improves conditioning; undone below
    cs = np.abs(X).max(axis=0)
    cs[cs == 0] = 1.0
    beta = _ipm(X / cs, r, alpha, tol, max_iter) / cs
    return beta


@dataclass(frozen=True)
class QuantileModel:
    levels: tuple[float, ...]
    coefficients: np.ndarray  # (L, p + 1)
    features: tuple[str, ...]

    def __post_init__(self) -> None:
        lv = np.asarray(self.levels)
        if np.any(lv <= 0) or np.any(lv >= 1) or np.any(np.diff(lv) <= 0):
            raise ValueError("levels must be strictly increasing in (0, 1)")
        c = np.atleast_2d(np.asarray(self.coefficients, float))
        if c.shape != (lv.size, len(self.features) + 1):
            raise ValueError("coefficient matrix must be (levels, features + 1)")
        object.__setattr__(self, "coefficients", c)

    def to_record(self) -> dict:
        return {"levels": list(self.levels), "features": list(self.features),
                "coefficients": self.coefficients.tolist()}

    @classmethod
    def from_record(cls, rec: dict) -> "QuantileModel":
        return cls(tuple(rec["levels"]), np.asarray(rec["coefficients"], float),
                   tuple(rec["features"]))


def fit_quantile_model(residuals, B, levels: Sequence[float],
                       features: Sequence[str] | None = None, **kw) -> QuantileModel:
    r = np.asarray(residuals, float)
    B = np.zeros((r.size, 0)) if B is None else np.atleast_2d(np.asarray(B, float))
    if B.shape[0] != r.size and B.size:
        B = B.T
    ok = np.isfinite(r) & np.all(np.isfinite(B), axis=1)
    coefs = np.array([fit_quantile(r[ok], B[ok], a, **kw) for a in levels])
    names = tuple(features) if features is not None else tuple(f"x{j}" for j in range(B.shape[1]))
    return QuantileModel(tuple(float(a) for a in levels), coefs, names)


def predict_quantile_matrix(m: QuantileModel, yhat, B) -> np.ndarray:
    """(T, L) quantiles ``yhat + [1, B] beta_alpha``, sorted along each row."""
    yhat = np.asarray(yhat, float)
    B = np.zeros((yhat.size, 0)) if B is None else np.atleast_2d(np.asarray(B, float))
    if B.shape[0] != yhat.size and B.size:
        B = B.T
    X = np.column_stack([np.ones(yhat.size), B])
    q = yhat[:, None] + X @ m.coefficients.T
    return np.sort(q, axis=1)


def predict_quantiles(m: QuantileModel, yhat, B) -> list:
    """Per-time :class:`QuantileCurve` values (see :func:`predict_quantile_matrix`)."""
    from .dist import QuantileCurve

    q = predict_quantile_matrix(m, yhat, B)
    return [QuantileCurve(m.levels, tuple(row)) for row in q]


def as_series(levels, q: np.ndarray, lo_scale, lo_shape, hi_scale, hi_shape,
              index=None) -> ForecastSeries:
    return ForecastSeries(np.asarray(levels, float), q, lo_scale, lo_shape, hi_scale, hi_shape,
                          index=index)
