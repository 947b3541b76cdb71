"""Penalised spline-basis regression for the deterministic forecast.

A :class:`BasisSpec` lists model terms (linear, dummy, polynomial, cubic
B-spline smooths and tensor-product smooths). :func:`learn_basis` freezes the
data-dependent parts (knots, factor levels, polynomial centring) on training
data; the resulting :class:`Basis` builds sparse design matrices for any
table. :func:`fit_mean` solves the penalised least-squares problem

    minimise ||y - X b||^2 + sum_j lam_j b_j' S_j b_j

with the penalty multiplier chosen by contiguous K-fold cross-validation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
import pandas as pd
import scipy.linalg as sla
from scipy import sparse
from scipy.interpolate import BSpline

from .features import TimeTable

log = logging.getLogger(__name__)

DEGREE = 3
DEFAULT_MULTIPLIERS = tuple(np.logspace(-6, 3, 10))
KINDS = ("linear", "dummy", "polynomial", "spline", "bispline")


class RankDeficiencyError(ValueError):
    """Unpenalised design columns are collinear."""


# -- basis specification ----------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    """One model term.

    ``k`` is the basis dimension for ``spline``/``bispline`` (per margin for
    tensor products) and the degree for ``polynomial``. ``by`` names a
    factor (``by_factor=True``) or a numeric multiplier column.
    """

    kind: str
    features: tuple[str, ...]
    k: int = 0
    by: str | None = None
    by_factor: bool = False
    label: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")
        n_feat = 2 if self.kind == "bispline" else 1
        if len(self.features) != n_feat:
            raise ValueError(f"{self.kind} term needs {n_feat} feature(s)")
        if self.kind in ("spline", "bispline") and self.k < 4:
            raise ValueError("cubic spline basis dimension must be >= 4")
        if self.kind == "polynomial" and self.k < 1:
            raise ValueError("polynomial degree must be >= 1")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        base = f"{self.kind}({','.join(self.features)}" + (f",{self.k})" if self.k else ")")
        return base + (f":{self.by}" if self.by else "")

    @property
    def penalized(self) -> bool:
        return self.kind in ("spline", "bispline")

    def columns_needed(self) -> set[str]:
        return set(self.features) | ({self.by} if self.by else set())


def linear(x, by=None, label=None):
    return Term("linear", (x,), by=by, label=label)


def dummy(x, label=None):
    return Term("dummy", (x,), label=label)


def polynomial(x, degree, by=None, label=None):
    return Term("polynomial", (x,), k=degree, by=by, by_factor=by is not None, label=label)


def spline(x, k, by=None, by_factor=False, label=None):
    return Term("spline", (x,), k=k, by=by, by_factor=by_factor, label=label)


def bispline(x, z, k, label=None):
    return Term("bispline", (x, z), k=k, label=label)


@dataclass(frozen=True)
class BasisSpec:
    terms: tuple[Term, ...]
    name: str = "custom"

    def columns_needed(self) -> set[str]:
        out: set[str] = set()
        for t in self.terms:
            out |= t.columns_needed()
        return out

    def to_record(self) -> dict:
        return {"name": self.name, "terms": [
            {"kind": t.kind, "features": list(t.features), "k": t.k, "by": t.by,
             "by_factor": t.by_factor, "label": t.label} for t in self.terms]}

    @classmethod
    def from_record(cls, rec: dict) -> "BasisSpec":
        return cls(tuple(Term(d["kind"], tuple(d["features"]), d["k"], d["by"], d["by_factor"],
                              d["label"]) for d in rec["terms"]), rec["name"])


# -- B-splines ------------------------------------------------------------------------

def spline_knots(x: np.ndarray, k: int) -> np.ndarray:
    """Clamped cubic knot vector for a ``k``-dimensional basis.

    Interior knots (``k - 4`` of them) sit at evenly spaced quantiles of the
    values strictly inside the data range; if those quantiles tie, evenly
    spaced knots over the range are used instead.
    """
    x = np.asarray(x, float)
    x = x[np.isfinite(x)]
    lo, hi = float(np.min(x)), float(np.max(x))
    if not hi > lo:
        raise ValueError("spline feature has no spread on the training data")
    n_int = k - DEGREE - 1
    inner_x = x[(x > lo) & (x < hi)]
    probs = np.linspace(0, 1, n_int + 2)[1:-1]
    interior = np.quantile(inner_x, probs) if inner_x.size >= n_int and n_int > 0 else np.array([])
    grid = np.r_[lo, interior, hi]
    if n_int > 0 and (interior.size != n_int or np.any(np.diff(grid) <= 1e-9 * (hi - lo))):
        interior = np.linspace(lo, hi, n_int + 2)[1:-1]
    return np.r_[[lo] * (DEGREE + 1), interior, [hi] * (DEGREE + 1)]


def greville(knots: np.ndarray) -> np.ndarray:
    k = len(knots) - DEGREE - 1
    return np.array([knots[j + 1:j + DEGREE + 1].mean() for j in range(k)])


def difference_penalty(knots: np.ndarray) -> np.ndarray:
    """Second divided-difference penalty on coefficients at the Greville abscissae.

    Its null space is exactly the coefficient vectors affine in the Greville
    abscissae, i.e. the spline functions affine in ``x``.
    """
    g = greville(knots)
    k = g.size
    h = np.diff(g)
    hbar = h.mean()
    d = np.zeros((k - 2, k))
    for j in range(k - 2):
        d[j, j] = 1.0 / h[j]
        d[j, j + 1] = -1.0 / h[j] - 1.0 / h[j + 1]
        d[j, j + 2] = 1.0 / h[j + 1]
    d *= hbar
    return d.T @ d


def bspline_rows(x: np.ndarray, knots: np.ndarray):
    """Column indices and values of the 4 non-zero cubic B-splines per row.

    ``x`` must already lie inside the knot range.
    """
    n = x.size
    k = len(knots) - DEGREE - 1
    m = BSpline.design_matrix(x, knots, DEGREE).tocsr()
    m.sort_indices()
    indptr = m.indptr
    # design_matrix emits exactly DEGREE+1 entries per row
    if np.any(np.diff(indptr) != DEGREE + 1):
        dense = m.toarray()
        start = np.clip(np.argmax(dense > 0, axis=1), 0, k - DEGREE - 1)
        cols = start[:, None] + np.arange(DEGREE + 1)
        vals = dense[np.arange(n)[:, None], cols]
        return cols, vals
    return m.indices.reshape(n, DEGREE + 1), m.data.reshape(n, DEGREE + 1)


# -- frozen basis -------------------------------------------------------------------------

@dataclass
class Block:
    name: str
    cols: slice
    penalty: np.ndarray | None = None  # penalized blocks only

    @property
    def penalized(self) -> bool:
        return self.penalty is not None


@dataclass
class Design:
    X: sparse.csr_matrix
    columns: list[str]
    blocks: list[Block]
    valid: np.ndarray
    clamped: dict[str, int] = field(default_factory=dict)

    @property
    def n_columns(self) -> int:
        return self.X.shape[1]

    def unpenalized_columns(self) -> np.ndarray:
        idx = [np.arange(b.cols.start, b.cols.stop) for b in self.blocks if not b.penalized]
        return np.concatenate(idx) if idx else np.array([], int)

    def block_matrix(self, name: str) -> sparse.csr_matrix:
        b = next(b for b in self.blocks if b.name == name)
        return self.X[:, b.cols]


@dataclass
class Basis:
    """Basis with knots, levels and scalings frozen from training data."""

    spec: BasisSpec
    state: list[dict[str, Any]]

    def to_record(self) -> dict:
        return {"spec": self.spec.to_record(), "state": self.state}

    @classmethod
    def from_record(cls, rec: dict) -> "Basis":
        return cls(BasisSpec.from_record(rec["spec"]), rec["state"])

    def design(self, t: TimeTable) -> Design:
        """Build the sparse design matrix for ``t``.

        Rows with a missing input are zero and flagged ``valid=False``.
        Spline inputs outside the training knot range are clamped to the
        boundary; counts are reported per feature in ``Design.clamped``.
        """
        n = len(t)
        valid = np.ones(n, bool)
        for c in self.spec.columns_needed():
            if c not in t:
                raise KeyError(f"feature {c!r} missing from table")
            valid &= np.isfinite(t.column(c))
        rows, cols, vals = [np.arange(n)], [np.zeros(n, int)], [np.ones(n)]
        names = ["(Intercept)"]
        blocks = [Block("(Intercept)", slice(0, 1))]
        clamped: dict[str, int] = {}
        p = 1

        def col(name):
            return np.where(valid, t.column(name), 0.0)

        def clamp(name, x, knots):
            lo, hi = knots[0], knots[-1]
            nout = int(np.sum(valid & ((x < lo) | (x > hi))))
            if nout:
                clamped[name] = clamped.get(name, 0) + nout
            return np.clip(x, lo, hi)

        def add(block_name, r, c, v, width, colnames, penalty=None):
            nonlocal p
            rows.append(r)
            cols.append(c + p)
            vals.append(v)
            names.extend(colnames)
            blocks.append(Block(block_name, slice(p, p + width), penalty))
            p += width

        allrows = np.arange(n)
        for term, st in zip(self.spec.terms, self.state):
            kind = term.kind
            if kind == "linear":
                x = col(term.features[0])
                if term.by:
                    x = x * col(term.by)
                add(term.name, allrows, np.zeros(n, int), x, 1, [term.name])
            elif kind == "dummy":
                x = col(term.features[0])
                levels = st["levels"]
                lut = {lv: i for i, lv in enumerate(levels[1:])}
                code = np.array([lut.get(v, -1) for v in x])
                keep = (code >= 0) & valid
                add(term.name, allrows[keep], code[keep], np.ones(keep.sum()), len(levels) - 1,
                    [f"{term.name}[{lv:g}]" for lv in levels[1:]])
            elif kind == "polynomial":
                z = (col(term.features[0]) - st["center"]) / st["scale"]
                powers = np.column_stack([z ** d for d in range(1, term.k + 1)])
                if term.by:
                    levels = st["by_levels"]
                    f = col(term.by)
                    for lv in levels[1:]:
                        ind = (f == lv) & valid
                        r = np.repeat(allrows[ind], term.k)
                        c = np.tile(np.arange(term.k), ind.sum())
                        add(f"{term.name}[{lv:g}]", r, c, powers[ind].ravel(), term.k,
                            [f"{term.name}[{lv:g}]^{d}" for d in range(1, term.k + 1)])
                else:
                    r = np.repeat(allrows, term.k)
                    c = np.tile(np.arange(term.k), n)
                    add(term.name, r, c, powers.ravel(), term.k,
                        [f"{term.name}^{d}" for d in range(1, term.k + 1)])
            elif kind == "spline":
                knots = np.asarray(st["knots"])
                x = clamp(term.features[0], col(term.features[0]), knots)
                ci, cv = bspline_rows(x, knots)
                S = difference_penalty(knots)
                if term.by and term.by_factor:
                    f = col(term.by)
                    for lv in st["by_levels"][1:]:
                        ind = (f == lv) & valid
                        add(f"{term.name}[{lv:g}]", np.repeat(allrows[ind], DEGREE + 1),
                            ci[ind].ravel(), cv[ind].ravel(), term.k,
                            [f"{term.name}[{lv:g}].{j}" for j in range(term.k)], S)
                else:
                    w = col(term.by)[:, None] if term.by else 1.0
                    v = cv * w * valid[:, None]
                    add(term.name, np.repeat(allrows, DEGREE + 1), ci.ravel(), v.ravel(), term.k,
                        [f"{term.name}.{j}" for j in range(term.k)], S)
            elif kind == "bispline":
                ka, kb = np.asarray(st["knots"][0]), np.asarray(st["knots"][1])
                xa = clamp(term.features[0], col(term.features[0]), ka)
                xb = clamp(term.features[1], col(term.features[1]), kb)
                ia, va = bspline_rows(xa, ka)
                ib, vb = bspline_rows(xb, kb)
                nb = len(kb) - DEGREE - 1
                na = len(ka) - DEGREE - 1
                c = (ia[:, :, None] * nb + ib[:, None, :]).reshape(n, -1)
                v = (va[:, :, None] * vb[:, None, :]).reshape(n, -1) * valid[:, None]
                Sa, Sb = difference_penalty(ka), difference_penalty(kb)
                S = np.kron(Sa, np.eye(nb)) + np.kron(np.eye(na), Sb)
                add(term.name, np.repeat(allrows, c.shape[1]), c.ravel(), v.ravel(), na * nb,
                    [f"{term.name}.{i}.{j}" for i in range(na) for j in range(nb)], S)
        X = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n, p))
        X.sum_duplicates()
        return Design(X, names, blocks, valid, clamped)


def learn_basis(t: TimeTable, spec: BasisSpec) -> Basis:
    """Freeze data-dependent basis settings from training table ``t``."""
    missing = spec.columns_needed() - set(t.columns)
    if missing:
        raise KeyError(f"features missing from table: {sorted(missing)}")
    state: list[dict[str, Any]] = []

    def finite(name):
        x = t.column(name)
        return x[np.isfinite(x)]

    for term in spec.terms:
        st: dict[str, Any] = {}
        if term.kind == "dummy":
            st["levels"] = [float(v) for v in np.unique(finite(term.features[0]))]
        elif term.kind == "polynomial":
            x = finite(term.features[0])
            st["center"] = float(np.mean(x))
            st["scale"] = float(np.std(x)) or 1.0
        elif term.kind == "spline":
            st["knots"] = spline_knots(finite(term.features[0]), term.k).tolist()
        elif term.kind == "bispline":
            st["knots"] = [spline_knots(finite(f), term.k).tolist() for f in term.features]
        if term.by and term.by_factor:
            st["by_levels"] = [float(v) for v in np.unique(finite(term.by))]
        state.append(st)
    return Basis(spec, state)


def build_design(t: TimeTable, spec: BasisSpec) -> tuple[Design, Basis]:
    basis = learn_basis(t, spec)
    return basis.design(t), basis


# -- fitting --------------------------------------------------------------------------------

@dataclass
class FittedMeanModel:
    basis: Basis
    coefficients: np.ndarray
    lambdas: dict[str, float]
    multiplier: float | None
    train_start: str | None = None
    train_end: str | None = None
    cv_scores: dict[str, float] | None = None
    standardizer: dict | None = None
    columns: list[str] | None = None

    def to_record(self) -> dict:
        return {"basis": self.basis.to_record(), "coefficients": self.coefficients.tolist(),
                "lambdas": self.lambdas, "multiplier": self.multiplier,
                "train_start": self.train_start, "train_end": self.train_end,
                "cv_scores": self.cv_scores, "standardizer": self.standardizer,
                "columns": self.columns}

    @classmethod
    def from_record(cls, rec: dict) -> "FittedMeanModel":
        return cls(Basis.from_record(rec["basis"]), np.asarray(rec["coefficients"], float),
                   {k: float(v) for k, v in rec["lambdas"].items()}, rec["multiplier"],
                   rec.get("train_start"), rec.get("train_end"), rec.get("cv_scores"),
                   rec.get("standardizer"), rec.get("columns"))


def _constraint_transform(design: Design, rows: np.ndarray) -> sparse.csr_matrix:
    """Map reduced coefficients to full ones, centring each penalised block.

    Each penalised block gets the identifiability constraint that its
    contribution sums to zero over the training rows.
    """
    p = design.n_columns
    colsum = np.asarray(design.X[rows].sum(axis=0)).ravel()
    pieces = []
    for b in design.blocks:
        k = b.cols.stop - b.cols.start
        if not b.penalized:
            pieces.append(sparse.identity(k, format="csr"))
            continue
        c = colsum[b.cols]
        if not np.any(c):
            pieces.append(sparse.identity(k, format="csr"))
            continue
        # columns 1..k-1 of a complete QR span the orthogonal complement of c
        qf, _ = np.linalg.qr(c[:, None], mode="complete")
        pieces.append(sparse.csr_matrix(qf[:, 1:]))
    T = sparse.block_diag(pieces, format="csr")
    assert T.shape[0] == p
    return T


def _check_rank(G: np.ndarray, idx: np.ndarray, names: Sequence[str]) -> np.ndarray:
    """Raise on collinear unpenalised columns; return those that are all zero.

    All-zero columns (a factor level absent from the fitting rows) are not
    identified; the caller pins their coefficients to zero.
    """
    if idx.size == 0:
        return idx
    g = G[np.ix_(idx, idx)]
    d = np.sqrt(np.diag(g))
    zero = d == 0
    if np.any(zero):
        log.warning("no training rows for %s; coefficients set to zero",
                    ", ".join(names[i] for i in idx[zero]))
    empty = idx[zero]
    idx, g, d = idx[~zero], g[np.ix_(~zero, ~zero)], d[~zero]
    if idx.size == 0:
        return empty
    g = g / np.outer(d, d)
    _, r, piv = sla.qr(g, pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    if rank < idx.size:
        bad = [names[idx[j]] for j in piv[rank:]]
        raise RankDeficiencyError(f"collinear unpenalised columns: {bad}")
    return empty


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.maximum(np.diag(A), 1e-300))
    As = A / np.outer(d, d)
    bs = b / d
    try:
        c = sla.cho_factor(As, lower=False, check_finite=False)
        x = sla.cho_solve(c, bs, check_finite=False)
    except np.linalg.LinAlgError:
        w, v = sla.eigh(As, check_finite=False)
        keep = w > 1e-12 * w.max()
        x = v[:, keep] @ ((v[:, keep].T @ bs) / w[keep])
    return x / d


class _GramSystem:
    """Reduced normal equations shared by CV folds and the final fit."""

    def __init__(self, design: Design, y: np.ndarray, rows: np.ndarray, folds: int):
        self.design = design
        self.T = _constraint_transform(design, rows)
        Xr = design.X[rows]
        yr = y[rows]
        self.n = rows.size
        self.fold_of = np.minimum((np.arange(self.n) * folds) // self.n, folds - 1)
        self.fold_stats = []
        T = self.T
        G_full = None
        for k in range(folds):
            m = self.fold_of == k
            Xk = Xr[m]
            Gk_full = Xk.T @ Xk
            G_full = Gk_full if G_full is None else G_full + Gk_full
            # the fold Gram is nearly dense, so reduce it with sparse @ dense products
            Gd = Gk_full.toarray()
            Gk = np.asarray(T.T @ np.asarray(T.T @ Gd).T).T
            bk = T.T @ (Xk.T @ yr[m])
            self.fold_stats.append((Gk, np.asarray(bk).ravel(), float(yr[m] @ yr[m]), int(m.sum())))
        self.G_full = G_full.toarray()
        self.G = sum(s[0] for s in self.fold_stats)
        self.b = sum(s[1] for s in self.fold_stats)
        self.yy = sum(s[2] for s in self.fold_stats)
        # penalties in reduced coordinates
        self.pens = []
        for blk in design.blocks:
            if not blk.penalized:
                continue
            Tb = self.T[blk.cols]
            cols = np.unique(Tb.nonzero()[1])
            Tbb = Tb[:, cols].toarray()
            Sr = Tbb.T @ blk.penalty @ Tbb
            Gb = self.G[np.ix_(cols, cols)]
            tr_s = np.trace(Sr)
            weight = np.trace(Gb) / tr_s if tr_s > 0 else 1.0
            self.pens.append((blk.name, cols, Sr, weight))

    def penalty_matrix(self, lambdas: dict[str, float], ridge: bool) -> np.ndarray:
        P = np.zeros_like(self.G)
        for name, cols, Sr, _ in self.pens:
            lam = lambdas.get(name, 0.0)
            if lam:
                P[np.ix_(cols, cols)] += lam * Sr
            if ridge:
                gb = np.diag(self.G)[cols]
                P[cols, cols] += 1e-10 * max(gb.mean(), 1e-300)
        return P

    def lambdas_for(self, multiplier: float) -> dict[str, float]:
        return {name: multiplier * w for name, _, _, w in self.pens}

    def solve(self, G, b, lambdas) -> np.ndarray:
        ridge = any(v > 0 for v in lambdas.values())
        return _solve(G + self.penalty_matrix(lambdas, ridge), b)

    def cv_mse(self, multiplier: float) -> float:
        lam = self.lambdas_for(multiplier)
        sse, cnt = 0.0, 0
        for Gk, bk, yyk, nk in self.fold_stats:
            g = self.solve(self.G - Gk, self.b - bk, lam)
            sse += yyk - 2 * bk @ g + g @ Gk @ g
            cnt += nk
        return sse / cnt


def fit_mean(design: Design, y: np.ndarray, multipliers: Sequence[float] = DEFAULT_MULTIPLIERS,
             folds: int = 3, lambdas: dict[str, float] | None = None,
             basis: Basis | None = None) -> FittedMeanModel:
    """Fit coefficients by penalised least squares.

    Parameters
    ----------
    design : Design
        Output of :meth:`Basis.design` on the training table.
    y : array
        Target; rows with missing ``y`` or invalid design rows are excluded.
    multipliers : sequence of float
        Shared penalty multipliers searched by contiguous ``folds``-fold CV.
        Block ``j`` gets ``lambda_j = multiplier * w_j`` where ``w_j`` makes
        the penalty commensurate with the block's Gram matrix.
    lambdas : dict, optional
        Explicit per-block penalties (by block name); skips CV.

    Raises
    ------
    RankDeficiencyError
        If unpenalised columns are collinear.
    """
    y = np.asarray(y, float)
    rows = np.nonzero(np.isfinite(y) & design.valid)[0]
    n_unpen = design.unpenalized_columns().size
    if rows.size <= n_unpen:
        raise ValueError(f"need more than {n_unpen} training rows, have {rows.size}")
    sysm = _GramSystem(design, y, rows, folds)
    empty = _check_rank(sysm.G_full, design.unpenalized_columns(), design.columns)
    if empty.size:
        # unpenalised blocks map one-to-one into reduced coordinates
        red = [sysm.T[c].indices[0] for c in empty]
        sysm.G[red, red] += 1.0
        for Gk, *_ in sysm.fold_stats:
            Gk[red, red] += 1.0 / folds

    cv_scores = None
    multiplier = None
    if lambdas is None:
        if sysm.pens:
            scores = [sysm.cv_mse(m) for m in multipliers]
            multiplier = float(multipliers[int(np.argmin(scores))])
            cv_scores = {format(m, ".6g"): s for m, s in zip(multipliers, scores)}
            log.debug("selected penalty multiplier %g", multiplier)
            lambdas = sysm.lambdas_for(multiplier)
        else:
            lambdas = {}
    gamma = sysm.solve(sysm.G, sysm.b, lambdas)
    beta = np.asarray(sysm.T @ gamma).ravel()
    return FittedMeanModel(basis=basis, coefficients=beta,
                           lambdas={k: float(v) for k, v in lambdas.items()},
                           multiplier=None if multiplier is None else float(multiplier),
                           cv_scores=cv_scores, columns=list(design.columns))


def fit_mean_table(t: TimeTable, spec: BasisSpec, **kwargs) -> FittedMeanModel:
    """Learn the basis on ``t``, build its design and fit on the target column."""
    basis = learn_basis(t, spec)
    design = basis.design(t)
    model = fit_mean(design, t.y, basis=basis, **kwargs)
    if len(t):
        model = replace(model, train_start=t.index[0].isoformat(),
                        train_end=t.index[-1].isoformat())
    return model


def predict_mean(m: FittedMeanModel, t: TimeTable) -> np.ndarray:
    """Deterministic forecast; NaN where an input feature is missing."""
    d = m.basis.design(t)
    yhat = d.X @ m.coefficients
    return np.where(d.valid, yhat, np.nan)
