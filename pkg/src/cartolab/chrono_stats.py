"""Time series and diffusion statistics.

Smoothing, lagged correlation, trend tests, Kolmogorov-Smirnov type
distances, spatial attention rasters, the yearly domestic share, and OLS on
dyads (pairs of cities or creators) with fixed effects and two-way
cluster-robust variance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import CoverageGeom
from .errors import (
    AllTies,
    EmptySample,
    InsufficientData,
    InsufficientOverlap,
    NegativeVarianceClamped,
    NonFiniteValue,
    RankDeficient,
)

__all__ = [
    "LagCorrelation", "MannKendall", "AttentionRaster", "ShareSeries", "DyadicDesign",
    "DyadicResult", "gaussian_kernel", "gaussian_smooth", "lagged_correlation", "mann_kendall",
    "ks_statistic", "ks_cumsum", "attention_raster", "domestic_share_series", "rank_transform",
    "minmax_scale", "dyadic_regression",
]


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------
def gaussian_kernel(sigma=2.5, radius=5) -> np.ndarray:
    """Discrete Gaussian on ``-radius..radius``, normalized to sum 1."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    k = np.arange(-radius, radius + 1, dtype=float)
    w = np.exp(-0.5 * (k / sigma) ** 2)
    return w / w.sum()


def gaussian_smooth(series, sigma=2.5, radius=5) -> np.ndarray:
    """Truncated Gaussian smoothing with reflective boundaries.

    The series is mirrored about its end samples (``d c b a | a b c d``).
    Missing values (NaN) stay missing and do not contribute: the kernel is
    renormalized over the available neighbours.
    """
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        return x.copy()
    w = gaussian_kernel(sigma, radius)
    valid = ~np.isnan(x)
    xp = np.pad(np.where(valid, x, 0.0), radius, mode="symmetric")
    vp = np.pad(valid.astype(float), radius, mode="symmetric")
    num = np.convolve(xp, w, mode="valid")
    den = np.convolve(vp, w, mode="valid")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    out[~valid] = np.nan
    return out


# ---------------------------------------------------------------------------
# lagged correlation
# ---------------------------------------------------------------------------
def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float((a * a).sum()) * float((b * b).sum()))
    if den == 0:
        return float("nan")
    return max(-1.0, min(1.0, float((a * b).sum()) / den))


@dataclass(frozen=True)
class LagCorrelation:
    """r at each lag.  Positive lag: ``a`` leads ``b`` by that many steps."""

    lags: np.ndarray
    r: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n: np.ndarray

    def argmax(self) -> int:
        return int(self.lags[int(np.nanargmax(self.r))])

    def peaks(self) -> list:
        """Lags of local maxima of r whose lower CI bound clears the upper
        CI bound of the lowest point on each side before the next maximum."""
        r = self.r
        out = []
        idx = [i for i in range(1, r.size - 1) if r[i] > r[i - 1] and r[i] >= r[i + 1]]
        for i in idx:
            left = r[:i][::-1]
            right = r[i + 1:]
            ok = True
            for side, off in ((left, -1), (right, 1)):
                j = i
                for v in side:
                    if v > r[j]:
                        break
                    j += off
                if j == i or not self.ci_lo[i] > self.ci_hi[j]:
                    ok = False
            if ok:
                out.append(int(self.lags[i]))
        return out


def lagged_correlation(a, b, max_offset, min_overlap=10, alpha=0.05) -> LagCorrelation:
    """Pearson correlation of ``a[t]`` with ``b[t + lag]`` for each lag.

    Lags run from ``-max_offset`` to ``max_offset``.  With ``b`` equal to
    ``a`` delayed by ``k`` steps the peak is at ``lag = +k`` (``a`` leads).
    Pairs with a NaN are dropped.  The interval is the Fisher-z one.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size != b.size:
        raise ValueError("series must have equal length")
    n = a.size
    lags = np.arange(-max_offset, max_offset + 1)
    r = np.empty(lags.size)
    lo, hi = np.empty_like(r), np.empty_like(r)
    cnt = np.empty(lags.size, dtype=int)
    zc = stats.norm.ppf(1 - alpha / 2)
    for k, tau in enumerate(lags):
        if tau >= 0:
            x, y = a[:n - tau], b[tau:]
        else:
            x, y = a[-tau:], b[:n + tau]
        keep = ~(np.isnan(x) | np.isnan(y))
        x, y = x[keep], y[keep]
        if x.size < min_overlap:
            raise InsufficientOverlap(f"lag {tau}: {x.size} overlapping points")
        rv = _pearson(x, y)
        r[k], cnt[k] = rv, x.size
        if abs(rv) >= 1 or x.size <= 3 or math.isnan(rv):
            lo[k] = hi[k] = rv
        else:
            z, se = math.atanh(rv), 1 / math.sqrt(x.size - 3)
            lo[k], hi[k] = math.tanh(z - zc * se), math.tanh(z + zc * se)
    return LagCorrelation(lags, r, lo, hi, cnt)


# ---------------------------------------------------------------------------
# trend test
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MannKendall:
    S: int
    var_s: float
    z: float
    p: float
    tau: float
    sen_slope: float
    n: int


def mann_kendall(series, times=None) -> MannKendall:
    """Mann-Kendall trend test with Theil-Sen slope.

    Tie-corrected variance, continuity-corrected normal approximation,
    two-sided p.  ``tau`` is ``S / (n (n - 1) / 2)``.  NaNs are dropped.
    """
    x = np.asarray(series, dtype=float)
    t = np.arange(x.size, dtype=float) if times is None else np.asarray(times, dtype=float)
    keep = ~np.isnan(x)
    x, t = x[keep], t[keep]
    n = x.size
    if n < 4:
        raise InsufficientData(f"trend test needs at least 4 values, got {n}")
    if np.ptp(x) == 0:
        raise AllTies("all values are equal")
    iu, ju = np.triu_indices(n, 1)
    S = int(np.sign(x[ju] - x[iu]).sum())
    _, ties = np.unique(x, return_counts=True)
    var = (n * (n - 1) * (2 * n + 5) - float((ties * (ties - 1) * (2 * ties + 5)).sum())) / 18.0
    if S > 0:
        z = (S - 1) / math.sqrt(var)
    elif S < 0:
        z = (S + 1) / math.sqrt(var)
    else:
        z = 0.0
    p = float(2 * stats.norm.sf(abs(z)))
    dt = t[ju] - t[iu]
    ok = dt != 0
    slope = float(np.median((x[ju] - x[iu])[ok] / dt[ok]))
    return MannKendall(S, float(var), float(z), p, S / (n * (n - 1) / 2), slope, n)


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov type distances
# ---------------------------------------------------------------------------
def ks_statistic(sample_f, sample_g) -> float:
    """Two-sample KS statistic: sup |F - G| of the empirical CDFs."""
    f = np.sort(np.asarray(sample_f, dtype=float).ravel())
    g = np.sort(np.asarray(sample_g, dtype=float).ravel())
    if f.size == 0 or g.size == 0:
        raise EmptySample("both samples must be non-empty")
    pts = np.concatenate([f, g])
    F = np.searchsorted(f, pts, side="right") / f.size
    G = np.searchsorted(g, pts, side="right") / g.size
    return float(np.abs(F - G).max())


def ks_cumsum(path_f, path_g, cumulative=False) -> float:
    """KS-type distance between two cumulative-sum paths on a common grid.

    Inputs are per-step masses (or, with ``cumulative=True``, their running
    sums); each path is normalized to end at 1.
    """
    f = np.asarray(path_f, dtype=float)
    g = np.asarray(path_g, dtype=float)
    if f.size == 0 or g.size == 0:
        raise EmptySample("both paths must be non-empty")
    if f.shape != g.shape:
        raise ValueError("paths must share the grid")
    F = f if cumulative else np.cumsum(f)
    G = g if cumulative else np.cumsum(g)
    if F[-1] == 0 or G[-1] == 0:
        raise EmptySample("a path has zero total mass")
    return float(np.abs(F / F[-1] - G / G[-1]).max())


# ---------------------------------------------------------------------------
# spatial attention
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class AttentionRaster:
    """Intensity on a lat/lon grid; row ``i`` spans ``lat_edges[i:i+2]``."""

    lat_edges: np.ndarray
    lon_edges: np.ndarray
    intensity: np.ndarray


def _overlap(edges, lo, hi):
    return np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)


def attention_raster(coverage_records, cell_deg=1.0, min_cell_deg=0.5,
                     bounds=(-90.0, 90.0, -180.0, 180.0)) -> AttentionRaster:
    """Deposit one unit of attention per footprint, spread over its area.

    A footprint is a square of side ``max(sqrt(area), min_cell_deg)``
    centered on the record, clipped to ``bounds``; each cell receives the
    share of the square it overlaps, so small footprints concentrate their
    mass.

    Parameters
    ----------
    coverage_records : iterable
        CoverageGeom objects, ``(lat, lon, area_deg2)`` tuples, or tuples of
        CoverageGeom (several footprints per map).
    """
    lat0, lat1, lon0, lon1 = bounds
    lat_edges = np.linspace(lat0, lat1, int(round((lat1 - lat0) / cell_deg)) + 1)
    lon_edges = np.linspace(lon0, lon1, int(round((lon1 - lon0) / cell_deg)) + 1)
    out = np.zeros((lat_edges.size - 1, lon_edges.size - 1))
    for rec in coverage_records:
        geoms = rec if isinstance(rec, tuple) and rec and isinstance(rec[0], CoverageGeom) else (rec,)
        for g in geoms:
            if isinstance(g, CoverageGeom):
                (lat, lon), area = g.center, g.area_deg2
            else:
                lat, lon, area = g
            half = max(math.sqrt(area), min_cell_deg) / 2
            a = _overlap(lat_edges, max(lat - half, lat0), min(lat + half, lat1))
            b = _overlap(lon_edges, max(lon - half, lon0), min(lon + half, lon1))
            tot = a.sum() * b.sum()
            if tot > 0:
                out += np.outer(a, b) / tot
    return AttentionRaster(lat_edges, lon_edges, out)


# ---------------------------------------------------------------------------
# domestic share
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ShareSeries:
    years: np.ndarray
    share: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n: np.ndarray


def _wilson(k, n, z=1.96):
    with np.errstate(invalid="ignore", divide="ignore"):
        p = k / n
        den = 1 + z * z / n
        mid = (p + z * z / (2 * n)) / den
        half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return mid - half, mid + half


def domestic_share_series(records_or_years, flags=None, window=3, sigma=2.5, radius=5,
                          year_range=None, smooth=True) -> ShareSeries:
    """Yearly share of domestic maps, window-averaged and smoothed.

    The share of each year is averaged with its neighbours over a centered
    ``window``; years without records stay missing (NaN) throughout.  The
    95% Wilson interval uses the pooled counts of the window.
    """
    if flags is None:
        recs = [r for r in records_or_years if r.domestic is not None and r.year is not None]
        yrs = np.array([r.year for r in recs], dtype=int)
        fl = np.array([bool(r.domestic) for r in recs])
    else:
        yrs = np.asarray(records_or_years, dtype=int)
        fl = np.asarray(flags, dtype=bool)
    if yrs.size == 0:
        raise EmptySample("no records with a domestic flag")
    lo, hi = (yrs.min(), yrs.max()) if year_range is None else year_range
    years = np.arange(lo, hi + 1)
    sel = (yrs >= lo) & (yrs <= hi)
    n = np.bincount(yrs[sel] - lo, minlength=years.size).astype(float)
    k = np.bincount(yrs[sel] - lo, weights=fl[sel].astype(float), minlength=years.size)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(n > 0, k / n, np.nan)
    half = window // 2
    win = np.full(years.size, np.nan)
    kw, nw = np.zeros(years.size), np.zeros(years.size)
    for i in range(years.size):
        if n[i] == 0:
            continue
        s = slice(max(i - half, 0), i + half + 1)
        win[i] = np.nanmean(share[s])
        kw[i], nw[i] = k[s].sum(), n[s].sum()
    out = gaussian_smooth(win, sigma, radius) if smooth else win
    clo, chi = _wilson(kw, nw)
    return ShareSeries(years, out, np.where(nw > 0, clo, np.nan), np.where(nw > 0, chi, np.nan), n)


# ---------------------------------------------------------------------------
# dyadic regression
# ---------------------------------------------------------------------------
def rank_transform(column) -> np.ndarray:
    """Average ranks (ties share their mean rank) scaled to [0, 1]."""
    x = np.asarray(column, dtype=float)
    if x.size <= 1:
        return np.full(x.size, 0.5)
    return (stats.rankdata(x, method="average") - 1) / (x.size - 1)


def minmax_scale(column) -> np.ndarray:
    """Affine map onto [0, 1]; a constant column maps to 0."""
    x = np.asarray(column, dtype=float)
    span = np.ptp(x) if x.size else 0.0
    return (x - x.min()) / span if span > 0 else np.zeros_like(x)


@dataclass(frozen=True)
class DyadicDesign:
    """Pairs ``(i, j)`` with predictors and a response.

    ``cluster_i`` / ``cluster_j`` default to the pair members.
    """

    i: tuple
    j: tuple
    names: tuple
    X: np.ndarray
    y: np.ndarray
    cluster_i: tuple | None = None
    cluster_j: tuple | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        n = len(self.i)
        if len(self.j) != n or X.shape[0] != n or self.y.size != n:
            raise ValueError("pair ids, predictors and response must have equal length")
        if X.shape[1] != len(self.names):
            raise ValueError("one name per predictor column")
        if not (np.isfinite(X).all() and np.isfinite(self.y).all()):
            raise NonFiniteValue("predictors and response must be finite")
        seen = set()
        for a, b in zip(self.i, self.j):
            key = (a, b) if str(a) <= str(b) else (b, a)
            if key in seen:
                raise ValueError(f"pair {key} appears twice")
            seen.add(key)

    @classmethod
    def from_columns(cls, i, j, columns, y, transforms=None, **kw):
        """Build a design, applying "minmax", "rank" or "minmax+rank" per column."""
        names, cols = [], []
        for name, col in columns.items():
            how = (transforms or {}).get(name, "minmax")
            c = np.asarray(col, dtype=float)
            if how in ("minmax", "minmax+rank"):
                c = minmax_scale(c)
            if how in ("rank", "minmax+rank"):
                c = rank_transform(c)
            names.append(name)
            cols.append(c)
        return cls(tuple(i), tuple(j), tuple(names), np.column_stack(cols), y, **kw)


@dataclass(frozen=True)
class DyadicResult:
    """Coefficients and variance decomposition.

    ``anova`` maps each predictor (and "fixed_effects" when used) to its
    type-II sum of squares; ``residual_ss`` is the full-model residual SS.
    """

    names: tuple
    beta: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    intercept: float
    anova: dict
    residual_ss: float
    n: int
    clamped: bool
    dropped: tuple = ()
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "predictors": [
                {"name": nm, "beta": float(b), "se": float(s), "t": float(t), "p": float(p),
                 "ss": float(self.anova[nm])}
                for nm, b, s, t, p in zip(self.names, self.beta, self.se, self.t, self.p)
            ],
            "intercept": self.intercept,
            "fixed_effects_ss": self.anova.get("fixed_effects"),
            "residual_ss": self.residual_ss,
            "n": self.n,
            "dropped": list(self.dropped),
            "clamped": self.clamped,
            "params": self.params,
        }


def _dummies(ids, exclude_first=True):
    levels = sorted(set(ids), key=str)
    idx = {v: k for k, v in enumerate(levels)}
    D = np.zeros((len(ids), len(levels)))
    D[np.arange(len(ids)), [idx[v] for v in ids]] = 1.0
    return D[:, 1:] if exclude_first else D


def _codes(ids):
    _, inv = np.unique(np.asarray([str(v) for v in ids]), return_inverse=True)
    return inv


def _meat(Z, e, groups):
    """Sum over clusters of (Z_g' e_g)(Z_g' e_g)'."""
    S = np.zeros((groups.max() + 1, Z.shape[1]))
    np.add.at(S, groups, Z * e[:, None])
    return S.T @ S


def _fit(Z, y):
    beta, _, rank, _ = np.linalg.lstsq(Z, y, rcond=None)
    if rank < Z.shape[1]:
        raise RankDeficient(f"design has rank {rank} < {Z.shape[1]} columns")
    e = y - Z @ beta
    return beta, e, float(e @ e)


def _design(X, fe_blocks):
    return np.column_stack([np.ones(X.shape[0]), X] + fe_blocks)


def _run(design, cols, fixed_effects, df_mode):
    X = design.X[:, cols]
    y = design.y
    fe = [_dummies(design.i), _dummies(design.j)] if fixed_effects else []
    fe = [b for b in fe if b.shape[1]]
    Z = _design(X, fe)
    beta, e, rss = _fit(Z, y)
    bread = np.linalg.inv(Z.T @ Z)
    gi = _codes(design.cluster_i if design.cluster_i is not None else design.i)
    gj = _codes(design.cluster_j if design.cluster_j is not None else design.j)
    gij = _codes([f"{a}\x1f{b}" for a, b in zip(gi, gj)])
    meat = _meat(Z, e, gi) + _meat(Z, e, gj) - _meat(Z, e, gij)
    V = bread @ meat @ bread
    V = (V + V.T) / 2
    w, Q = np.linalg.eigh(V)
    clamped = bool((w < 0).any())
    if clamped:
        warnings.warn("two-way cluster covariance was not positive semidefinite; "
                      "negative eigenvalues set to zero", NegativeVarianceClamped, stacklevel=3)
        V = (Q * np.maximum(w, 0)) @ Q.T
    k = len(cols)
    se = np.sqrt(np.maximum(np.diag(V)[1:k + 1], 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta[1:k + 1] / se
    if df_mode == "normal":
        p = 2 * stats.norm.sf(np.abs(t))
    else:
        df = max(min(gi.max() + 1, gj.max() + 1) - 1, 1)
        p = 2 * stats.t.sf(np.abs(t), df)
    anova = {}
    for m, c in enumerate(cols):
        keep = [cc for cc in cols if cc != c]
        anova[design.names[c]] = _fit(_design(design.X[:, keep], fe), y)[2] - rss
    if fe:
        anova["fixed_effects"] = _fit(_design(X, []), y)[2] - rss
    return beta, se, t, p, anova, rss, clamped


def dyadic_regression(design: DyadicDesign, fixed_effects=True, backward=False, keep_p=0.025,
                      df_mode="t") -> DyadicResult:
    """OLS on dyads with two-way cluster-robust standard errors.

    Model ``y = b0 + X b + iota_i + gamma_j + e``; the fixed effects are
    separate dummy sets for the first and second member of each pair, each
    with its first level (sorted) as reference.  The covariance is
    ``V_i + V_j - V_ij`` with sandwich meats summed over clusters of the
    first member, the second member and their intersection, without a
    small-sample factor (so singleton clusters give HC0).  p-values use a t
    distribution with ``min(G_i, G_j) - 1`` degrees of freedom, or the
    normal with ``df_mode="normal"``.

    ``backward=True`` repeatedly drops the predictor with the largest p
    while it is at or above ``keep_p``.
    """
    cols = list(range(design.X.shape[1]))
    dropped = []
    while True:
        beta, se, t, p, anova, rss, clamped = _run(design, cols, fixed_effects, df_mode)
        if not backward or not cols:
            break
        worst = int(np.argmax(p))
        if not p[worst] >= keep_p:
            break
        dropped.append(design.names[cols[worst]])
        cols.pop(worst)
        if not cols:
            beta, se, t, p, anova, rss, clamped = _run(design, cols, fixed_effects, df_mode)
            break
    k = len(cols)
    return DyadicResult(
        tuple(design.names[c] for c in cols), beta[1:k + 1], se, t, p, float(beta[0]), anova, rss,
        int(design.y.size), clamped, tuple(dropped),
        {"fixed_effects": fixed_effects, "backward": backward, "keep_p": keep_p, "df_mode": df_mode},
    )
