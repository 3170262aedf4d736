"""Cultural-evolution statistics over clustered signs.

The common substrate is the strata table: counts of items (signs or
mapels) per cluster and per stratum, normalized column-wise by saturating at
the 95th percentile.  On top of it sit characteristicity, the rupture
coefficient and its sliding curve, diversity and complexity series, sign
complexes from co-presence tests, univocity across semantic modes, the
geographic rupture matrix and the diachronic flow graph.

Cluster ids are integers ``0..M-1``.  Semantic modes are the integers 1..8
of :func:`cartolab.image_ops.semantic_mode`; univocity uses the first seven.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from ._graph import louvain, modularity
from .errors import (
    DimensionMismatch,
    EmptySubset,
    InsufficientData,
    NoActiveMode,
    TooFewGroups,
    ZeroMaps,
)

__all__ = [
    "StrataTable", "SignComplex", "ComplexResult", "RuptureCurve",
    "saturate", "build_strata_table", "characteristicity", "characteristic_exemplars",
    "rupture", "rupture_semantic", "rupture_curve", "diversity_series",
    "complexity_series", "presence_matrix", "fisher_exact_greater", "odds_ratio",
    "detect_complexes", "semantic_symbolic_counts", "univocity", "univocity_per_map",
    "geographic_rupture_matrix", "diachronic_flow", "louvain", "modularity",
]

N_UNIVOCITY_MODES = 7


# ---------------------------------------------------------------------------
# strata tables
# ---------------------------------------------------------------------------
def saturate(counts, q=95.0) -> np.ndarray:
    """Column-wise saturation: ``min(C / P95_column, 1)``.

    The percentile is taken over clusters with linear interpolation.  An
    all-zero column stays zero.  When a column has mass but its P95 is 0
    (fewer than 5% of clusters used), the ratio is taken in the limit:
    nonzero cells saturate to 1, zero cells stay 0.
    """
    C = np.asarray(counts, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    p = np.percentile(C, q, axis=0, method="linear")
    out = np.zeros_like(C)
    ok = p > 0
    out[:, ok] = np.minimum(C[:, ok] / p[ok], 1.0)
    # a column with mass but P95 == 0 (very sparse) saturates its nonzeros
    sparse = (~ok) & (C.sum(axis=0) > 0)
    out[:, sparse] = (C[:, sparse] > 0).astype(float)
    return out


@dataclass(frozen=True)
class StrataTable:
    """Clusters x strata counts with their saturated form.

    Attributes
    ----------
    counts : (M, S) int array
    normalized : (M, S) float array in [0, 1]
    strata_labels : tuple
    mode : int or None
        Semantic mode the table is restricted to.
    empty_strata : tuple
        Indices of strata that received no item.
    """

    counts: np.ndarray
    normalized: np.ndarray
    strata_labels: tuple = ()
    mode: int | None = None
    empty_strata: tuple = ()

    @classmethod
    def from_counts(cls, counts, strata_labels=None, mode=None):
        C = np.asarray(counts)
        if C.ndim == 1:
            C = C[:, None]
        labels = tuple(strata_labels) if strata_labels is not None else tuple(range(C.shape[1]))
        empty = tuple(int(s) for s in np.flatnonzero(C.sum(axis=0) == 0))
        return cls(C, saturate(C), labels, mode, empty)

    @property
    def n_clusters(self):
        return self.counts.shape[0]


def _stratum_index(values, edges):
    """Bin index per value for half-open bins (last bin closed); -1 if outside."""
    v = np.asarray(values, dtype=float)
    e = np.asarray(edges, dtype=float)
    if np.any(np.diff(e) <= 0):
        raise ValueError("strata_edges must be strictly increasing")
    idx = np.searchsorted(e, v, side="right") - 1
    idx[v == e[-1]] = e.size - 2
    idx[(v < e[0]) | (v > e[-1]) | np.isnan(v)] = -1
    return idx


def build_strata_table(assignments, strat_values, strata_edges=None, n_clusters=None,
                       mode_filter=None, modes=None) -> StrataTable:
    """Count items per (cluster, stratum).

    Parameters
    ----------
    assignments : (n,) int
        Cluster id per item.
    strat_values : (n,)
        Stratification value per item (year, log-scale, city...).
    strata_edges : sequence of float, optional
        Bin edges for a continuous variable; bins are ``[e_i, e_i+1)`` with
        the last bin closed.  Without edges the values are treated as
        categories, sorted.
    n_clusters : int, optional
        ``M``; defaults to ``max(assignments) + 1``.
    mode_filter : int, optional
        Keep only items whose semantic mode equals this value.
    modes : (n,) int, optional
        Semantic mode per item (required with ``mode_filter``).
    """
    a = np.asarray(assignments, dtype=np.int64)
    vals = np.asarray(strat_values)
    if a.shape[0] != vals.shape[0]:
        raise DimensionMismatch("assignments and strat_values differ in length")
    M = int(n_clusters if n_clusters is not None else (a.max() + 1 if a.size else 0))
    keep = np.ones(a.shape[0], bool)
    if mode_filter is not None:
        if modes is None:
            raise ValueError("mode_filter needs per-item modes")
        keep &= np.asarray(modes) == mode_filter
    if strata_edges is not None:
        s = _stratum_index(vals, strata_edges)
        e = list(strata_edges)
        labels = tuple((e[i], e[i + 1]) for i in range(len(e) - 1))
        S = len(labels)
    else:
        labels, s = np.unique(vals, return_inverse=True)
        labels = tuple(labels.tolist())
        S = len(labels)
    keep &= s >= 0
    C = np.zeros((M, S), dtype=np.int64)
    np.add.at(C, (a[keep], s[keep]), 1)
    return StrataTable.from_counts(C, labels, mode_filter)


def characteristicity(table) -> np.ndarray:
    """chi = ln(C~ / mu_s) with mu_s the column mean of the saturated table.

    Cells with C~ = 0 get ``-inf``.
    """
    N = table.normalized if isinstance(table, StrataTable) else np.asarray(table, float)
    mu = N.mean(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        chi = np.log(N / mu)
    chi[N == 0] = -np.inf
    return chi


def characteristic_exemplars(chi, top_n=10) -> list:
    """Top-chi cluster ids per stratum, never including ``-inf`` cells."""
    chi = np.asarray(chi)
    out = []
    for s in range(chi.shape[1]):
        col = chi[:, s]
        ok = np.flatnonzero(np.isfinite(col))
        order = ok[np.lexsort((ok, -col[ok]))]
        out.append(order[:top_n].tolist())
    return out


# ---------------------------------------------------------------------------
# rupture
# ---------------------------------------------------------------------------
def _norm_vec(t):
    if isinstance(t, StrataTable):
        return t.normalized
    return np.asarray(t, dtype=float)


def rupture(table_a, table_b) -> float:
    """Mean absolute difference between two saturated tables."""
    a, b = _norm_vec(table_a), _norm_vec(table_b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    if a.size == 0:
        raise DimensionMismatch("empty tables")
    return float(np.mean(np.abs(a - b)))


@dataclass(frozen=True)
class SemanticRupture:
    rho: float
    per_mode: tuple
    skipped: tuple


def rupture_semantic(tables_a, tables_b, counts_a=None, counts_b=None) -> SemanticRupture:
    """Average of per-mode rupture coefficients.

    Parameters
    ----------
    tables_a, tables_b : sequence of StrataTable or arrays, one per mode
    counts_a, counts_b : optional raw counts per mode, used to detect modes
        with no mass; by default the saturated tables themselves are used.

    Returns
    -------
    SemanticRupture
        ``rho`` is the mean over active modes; ``skipped`` lists modes with
        zero mass on both sides (their ``per_mode`` entry is NaN).
    """
    if len(tables_a) != len(tables_b):
        raise DimensionMismatch("both sides need the same number of modes")
    per, skipped = [], []
    for k, (ta, tb) in enumerate(zip(tables_a, tables_b)):
        ma = np.asarray(counts_a[k] if counts_a is not None else _norm_vec(ta)).sum()
        mb = np.asarray(counts_b[k] if counts_b is not None else _norm_vec(tb)).sum()
        if ma == 0 and mb == 0:
            skipped.append(k)
            per.append(float("nan"))
            continue
        per.append(rupture(ta, tb))
    active = [p for p in per if not math.isnan(p)]
    if not active:
        raise NoActiveMode("every mode is empty on both sides")
    return SemanticRupture(float(np.mean(active)), tuple(per), tuple(skipped))


@dataclass(frozen=True)
class RuptureCurve:
    """Sliding rupture curve.

    ``position`` is the value of the stratification variable at the window
    center; ``insufficient`` lists step indices where a stratum was empty.
    """

    position: np.ndarray
    rho: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    insufficient: tuple = ()
    params: dict = field(default_factory=dict)

    def peak(self):
        i = int(np.nanargmax(self.rho))
        return float(self.position[i]), float(self.rho[i])

    def to_records(self):
        return [
            {"position": float(p), "rho": _jsonable(r), "ci_lo": _jsonable(lo), "ci_hi": _jsonable(hi)}
            for p, r, lo, hi in zip(self.position, self.rho, self.ci_lo, self.ci_hi)
        ]


def _jsonable(x):
    x = float(x)
    return None if math.isnan(x) else x


def _mode_counts(a, modes, M, mode_list):
    """(K, M) counts of cluster ids, split by mode (or one row without modes)."""
    if modes is None:
        return np.bincount(a, minlength=M)[None, :].astype(float)
    out = np.zeros((len(mode_list), M))
    for r, m in enumerate(mode_list):
        sel = modes == m
        out[r] = np.bincount(a[sel], minlength=M)
    return out


def rupture_curve(assignments, strat_values, n_clusters=None, modes=None, window_steps=200,
                  stratum_frac=0.05, overlap_frac=0.5, bootstrap_n=1000, seed=0,
                  mode_list=tuple(range(1, 8))) -> RuptureCurve:
    """Rupture between a trailing and a leading stratum slid over the data.

    Items are ranked by the stratification variable.  Each stratum holds a
    fraction ``stratum_frac`` of the items and the two strata overlap by
    ``overlap_frac`` of their width, so the trailing stratum covers ranks
    ``[c - (1 - o/2) w, c + o/2 w)`` and the leading one
    ``[c - o/2 w, c + (1 - o/2) w)`` around the window center ``c``.
    ``window_steps`` centers are spread evenly over the admissible range.

    With ``modes`` the coefficient is the semantic-conditional one (mean of
    per-mode coefficients over modes in ``mode_list`` that have mass).

    The confidence band is a percentile bootstrap (2.5 / 97.5) over clusters
    of the per-cluster absolute differences; every step has its own seed
    derived from ``seed`` so the result does not depend on evaluation order.
    """
    a = np.asarray(assignments, dtype=np.int64)
    v = np.asarray(strat_values, dtype=float)
    if a.shape != v.shape:
        raise DimensionMismatch("assignments and strat_values differ in length")
    n = a.size
    M = int(n_clusters if n_clusters is not None else a.max() + 1)
    md = None if modes is None else np.asarray(modes)
    order = np.argsort(v, kind="stable")
    a_s, v_s = a[order], v[order]
    md_s = None if md is None else md[order]

    w = stratum_frac * n
    half = overlap_frac / 2.0
    lo_c, hi_c = (1 - half) * w, n - (1 - half) * w
    if hi_c < lo_c:
        raise InsufficientData("dataset too small for the requested stratum size")
    centers = np.linspace(lo_c, hi_c, window_steps)
    seeds = np.random.SeedSequence(seed).spawn(window_steps)

    rho = np.full(window_steps, np.nan)
    ci_lo = np.full(window_steps, np.nan)
    ci_hi = np.full(window_steps, np.nan)
    insufficient = []
    ranks = np.arange(n) + 0.5
    for step, c in enumerate(centers):
        tr = (ranks >= c - (1 - half) * w) & (ranks < c + half * w)
        ld = (ranks >= c - half * w) & (ranks < c + (1 - half) * w)
        if not tr.any() or not ld.any():
            insufficient.append(step)
            continue
        ca = _mode_counts(a_s[tr], None if md_s is None else md_s[tr], M, mode_list)
        cb = _mode_counts(a_s[ld], None if md_s is None else md_s[ld], M, mode_list)
        active = (ca.sum(axis=1) > 0) | (cb.sum(axis=1) > 0)
        if not active.any():
            insufficient.append(step)
            continue
        diffs = np.abs(saturate(ca[active].T) - saturate(cb[active].T))  # (M, K_active)
        rho[step] = diffs.mean()
        if bootstrap_n > 0:
            rng = np.random.default_rng(seeds[step])
            per_cluster = diffs.mean(axis=1)
            idx = rng.integers(0, M, size=(bootstrap_n, M))
            boots = per_cluster[idx].mean(axis=1)
            ci_lo[step], ci_hi[step] = np.percentile(boots, [2.5, 97.5])
    # report the window center in units of the stratification variable
    pos = np.interp(centers - 0.5, np.arange(n), v_s)
    params = dict(window_steps=window_steps, stratum_frac=stratum_frac, overlap_frac=overlap_frac,
                  bootstrap_n=bootstrap_n, seed=seed, semantic=modes is not None)
    return RuptureCurve(pos, rho, ci_lo, ci_hi, tuple(insufficient), params)


# ---------------------------------------------------------------------------
# diversity and complexity
# ---------------------------------------------------------------------------
def diversity_series(assignments, years, maps_per_year, n_clusters, min_instances=3):
    """Macro and micro diversity per year.

    A cluster is active in a year when it has at least ``min_instances``
    items that year.  macro = active / M, micro = macro / maps that year.

    Returns
    -------
    years, macro, micro : numpy arrays, sorted by year
    """
    a = np.asarray(assignments, dtype=np.int64)
    y = np.asarray(years)
    ys = np.unique(y)
    macro = np.zeros(ys.size)
    micro = np.zeros(ys.size)
    for i, yr in enumerate(ys):
        nm = maps_per_year.get(int(yr), maps_per_year.get(yr, 0))
        if nm <= 0:
            raise ZeroMaps(f"year {yr} has items but no maps")
        c = np.bincount(a[y == yr], minlength=n_clusters)
        macro[i] = np.count_nonzero(c >= min_instances) / n_clusters
        micro[i] = macro[i] / nm
    return ys, macro, micro


def complexity_series(per_map_assignments, years, min_instances=1):
    """Yearly mean number of distinct clusters per map.

    A cluster counts toward a map when it has ``min_instances`` items there.
    """
    vals = []
    for clusters in per_map_assignments:
        _, c = np.unique(np.asarray(clusters, dtype=np.int64), return_counts=True)
        vals.append(np.count_nonzero(c >= min_instances))
    vals = np.asarray(vals, dtype=float)
    y = np.asarray(years)
    ys = np.unique(y)
    return ys, np.array([vals[y == yr].mean() for yr in ys])


# ---------------------------------------------------------------------------
# complexes
# ---------------------------------------------------------------------------
def presence_matrix(per_map_assignments, n_clusters, min_instances=3) -> np.ndarray:
    """Boolean N x M matrix: cluster present on map with >= min_instances items."""
    X = np.zeros((len(per_map_assignments), n_clusters), dtype=bool)
    for i, clusters in enumerate(per_map_assignments):
        c = np.bincount(np.asarray(clusters, dtype=np.int64), minlength=n_clusters)
        X[i] = c >= min_instances
    return X


def fisher_exact_greater(b, a_j, a_k, n) -> np.ndarray:
    """One-sided Fisher exact p-value P(X >= b) for co-presence.

    ``X`` is hypergeometric: the number of maps holding both clusters when
    ``a_k`` maps are drawn among ``n`` of which ``a_j`` hold cluster j.
    Vectorized over broadcastable integer arrays.

    The whole pmf over the support is evaluated in log space from a
    log-factorial table and the tail is divided by the total mass, so
    rounding in the log-gamma values cancels out.
    """
    b, a_j, a_k, n = np.broadcast_arrays(*(np.asarray(x, dtype=np.int64) for x in (b, a_j, a_k, n)))
    shape = b.shape
    b, a_j, a_k, n = (x.ravel() for x in (b, a_j, a_k, n))
    if np.any((b < 0) | (a_j < b) | (a_k < b) | (a_j + a_k - b > n)):
        raise ValueError("inconsistent contingency table")
    out = np.empty(b.size)
    if b.size == 0:
        return out.reshape(shape)
    lf = gammaln(np.arange(n.max() + 2, dtype=float) + 1)
    lo_support = np.maximum(0, a_j + a_k - n)
    hi_support = np.minimum(a_j, a_k)
    chunk = 32768
    for s in range(0, b.size, chunk):
        sl = slice(s, s + chunk)
        bb, aj, ak, nn = b[sl], a_j[sl], a_k[sl], n[sl]
        lo, hi = lo_support[sl], hi_support[sl]
        width = int((hi - lo).max()) + 1
        x = lo[:, None] + np.arange(width)[None, :]
        valid = x <= hi[:, None]
        x = np.where(valid, x, lo[:, None])
        # log C(aj, x) + log C(n - aj, ak - x); the C(n, ak) denominator cancels
        logf = (-lf[x] - lf[aj[:, None] - x] - lf[ak[:, None] - x]
                - lf[(nn - aj - ak)[:, None] + x])
        logf[~valid] = -np.inf
        w = np.exp(logf - logf.max(axis=1, keepdims=True))
        tail = np.where(x >= bb[:, None], w, 0.0).sum(axis=1)
        out[sl] = np.minimum(tail / w.sum(axis=1), 1.0)
    return out.reshape(shape)


def odds_ratio(b, a_j, a_k, n) -> np.ndarray:
    """Odds ratio of the co-presence table; ``+inf`` when the denominator is 0."""
    b, a_j, a_k, n = (np.asarray(x, dtype=float) for x in (b, a_j, a_k, n))
    num = b * (n - a_j - a_k + b)
    den = (a_j - b) * (a_k - b)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / den
    return np.where(den == 0, np.inf, r)


def benjamini_hochberg(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    m = p.size
    if m == 0:
        return p
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    q = np.minimum.accumulate(ranked[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(q, 1.0)
    return out


@dataclass(frozen=True)
class SignComplex:
    complex_id: int
    member_clusters: frozenset
    support: int


@dataclass(frozen=True)
class ComplexResult:
    complexes: tuple
    labels: np.ndarray
    modularity: float
    edges: tuple  # (j, k, B, p, odds, q)
    n_maps: int


def detect_complexes(X, alpha=0.01, seed=0, use_bh=False, chunk=512) -> ComplexResult:
    """Sign complexes from a presence matrix.

    For every cluster pair the 2x2 co-presence table is tested with a
    one-sided Fisher exact test; pairs with ``p < alpha`` (or BH ``q`` when
    ``use_bh``) become unweighted edges and Louvain partitions the graph.
    Clusters without edges form singleton complexes.
    """
    X = np.asarray(X, dtype=bool)
    N, M = X.shape
    Xi = X.astype(np.int64)
    A = Xi.sum(axis=0)
    rows, cols, Bs, ps, ors = [], [], [], [], []
    for s in range(0, M, chunk):
        e = min(s + chunk, M)
        Bblk = Xi[:, s:e].T @ Xi  # (e - s, M)
        jj, kk = np.nonzero(np.arange(M)[None, :] > np.arange(s, e)[:, None])
        B = Bblk[jj, kk]
        jj = jj + s
        rows.append(jj)
        cols.append(kk)
        Bs.append(B)
        ps.append(fisher_exact_greater(B, A[jj], A[kk], N))
        ors.append(odds_ratio(B, A[jj], A[kk], N))
    jj = np.concatenate(rows) if rows else np.zeros(0, int)
    kk = np.concatenate(cols) if cols else np.zeros(0, int)
    B = np.concatenate(Bs) if Bs else np.zeros(0, int)
    p = np.concatenate(ps) if ps else np.zeros(0)
    orr = np.concatenate(ors) if ors else np.zeros(0)
    q = benjamini_hochberg(p)
    sel = (q if use_bh else p) < alpha
    G = sp.coo_matrix((np.ones(sel.sum()), (jj[sel], kk[sel])), shape=(M, M))
    G = (G + G.T).tocsr()
    labels = louvain(G, seed=seed)
    Q = modularity(G, labels)
    complexes = []
    for c in range(labels.max() + 1 if M else 0):
        members = np.flatnonzero(labels == c)
        support = int(X[:, members].any(axis=1).sum())
        complexes.append(SignComplex(c, frozenset(int(m) for m in members), support))
    edges = tuple(
        (int(j), int(k), int(b), float(pp), float(o), float(qq))
        for j, k, b, pp, o, qq, s_ in zip(jj, kk, B, p, orr, q, sel) if s_
    )
    return ComplexResult(tuple(complexes), labels, Q, edges, N)


# ---------------------------------------------------------------------------
# univocity
# ---------------------------------------------------------------------------
def semantic_symbolic_counts(map_index, clusters, modes, n_maps, n_clusters,
                             n_modes=N_UNIVOCITY_MODES) -> np.ndarray:
    """Build X (maps x clusters x modes) from per-item arrays.

    Items whose mode is outside ``1..n_modes`` (contours, none) are ignored.
    """
    X = np.zeros((n_maps, n_clusters, n_modes), dtype=np.int64)
    m = np.asarray(modes)
    ok = (m >= 1) & (m <= n_modes)
    np.add.at(X, (np.asarray(map_index)[ok], np.asarray(clusters)[ok], m[ok] - 1), 1)
    return X


def _upsilon(Xs) -> float:
    tot = Xs.sum(axis=(0, 2)) if Xs.ndim == 3 else Xs.sum(axis=1)
    per = Xs.sum(axis=0) if Xs.ndim == 3 else Xs
    used = tot > 0
    if not used.any():
        raise EmptySubset("no cluster occurs in the subset")
    return float(np.mean(per[used].max(axis=1) / tot[used]))


def univocity(X, map_subset=None, bootstrap_reps=120, sample_size=200, seed=0):
    """Average univocity of clusters over a set of maps.

    For every cluster occurring in the set, the share of its occurrences
    falling in its most frequent semantic mode; the mean over such clusters.

    With ``bootstrap_reps > 0``, ``sample_size`` maps are drawn (without
    replacement when the subset is large enough, with replacement otherwise)
    per repetition and the mean with the 5 / 95 percentile interval is
    returned.  With ``bootstrap_reps == 0`` the value on the full subset is
    returned with ``ci = None``.

    Returns
    -------
    (float, tuple or None)
    """
    X = np.asarray(X)
    idx = np.arange(X.shape[0]) if map_subset is None else np.asarray(map_subset, dtype=np.int64)
    if idx.size == 0:
        raise EmptySubset("empty map subset")
    if bootstrap_reps == 0:
        return _upsilon(X[idx]), None
    rng = np.random.default_rng(seed)
    vals = []
    replace_ = idx.size < sample_size
    size = sample_size if replace_ else min(sample_size, idx.size)
    for _ in range(bootstrap_reps):
        pick = rng.choice(idx, size=size, replace=replace_)
        try:
            vals.append(_upsilon(X[pick]))
        except EmptySubset:
            continue
    if not vals:
        raise EmptySubset("no cluster occurs in any bootstrap sample")
    vals = np.asarray(vals)
    return float(vals.mean()), (float(np.percentile(vals, 5)), float(np.percentile(vals, 95)))


def univocity_per_map(X) -> float:
    """Mean over maps of the single-map univocity (maps without items skipped)."""
    X = np.asarray(X)
    vals = [_upsilon(X[i:i + 1]) for i in range(X.shape[0]) if X[i].sum() > 0]
    if not vals:
        raise EmptySubset("no map holds any item")
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# geographic rupture and diachronic flow
# ---------------------------------------------------------------------------
def _group_tables(clusters, groups, modes, M, wanted, mode_list):
    """Saturated (M, K) table per group; K = 1 without modes."""
    out = {}
    for g in wanted:
        sel = groups == g
        C = _mode_counts(clusters[sel], None if modes is None else modes[sel], M, mode_list)
        out[g] = (C, saturate(C.T))
    return out


def _pair_rho(ta, tb):
    Ca, Na = ta
    Cb, Nb = tb
    active = (Ca.sum(axis=1) > 0) | (Cb.sum(axis=1) > 0)
    if not active.any():
        return float("nan")
    return float(np.abs(Na[:, active] - Nb[:, active]).mean())


def geographic_rupture_matrix(clusters, item_groups, record_counts, n_clusters=None, modes=None,
                              min_records=125, mode_list=tuple(range(1, 8))):
    """Pairwise rupture between groups (cities, countries...).

    Parameters
    ----------
    clusters : (n,) int
        Cluster id per item.
    item_groups : (n,)
        Group of the map each item comes from.
    record_counts : mapping
        Number of map records per group; groups below ``min_records`` are
        dropped.
    modes : (n,) int, optional
        Per-item semantic mode; when given the coefficient is the
        semantic-conditional one.

    Returns
    -------
    labels : list
    gamma : (G, G) symmetric array with zero diagonal
    """
    c = np.asarray(clusters, dtype=np.int64)
    g = np.asarray(item_groups)
    M = int(n_clusters if n_clusters is not None else c.max() + 1)
    md = None if modes is None else np.asarray(modes)
    kept = sorted(k for k, v in record_counts.items() if v >= min_records)
    if len(kept) < 2:
        raise TooFewGroups(f"{len(kept)} group(s) with >= {min_records} records")
    tabs = _group_tables(c, g, md, M, kept, mode_list)
    G = np.zeros((len(kept), len(kept)))
    for i in range(len(kept)):
        for j in range(i + 1, len(kept)):
            G[i, j] = G[j, i] = _pair_rho(tabs[kept[i]], tabs[kept[j]])
    return kept, G


def equal_count_edges(values, n_strata) -> np.ndarray:
    """Quantile edges splitting ``values`` into ``n_strata`` equal-count strata."""
    v = np.asarray(values, dtype=float)
    return np.quantile(v, np.linspace(0, 1, n_strata + 1))


def diachronic_flow(clusters, item_groups, item_strat, record_groups, record_strat, n_strata=6,
                    n_clusters=None, modes=None, min_records=1, mode_list=tuple(range(1, 8))):
    """Significant low-rupture links between groups in consecutive strata.

    Records are split into ``n_strata`` equal-count strata on their
    stratification value (usually the year).  For each consecutive pair of
    strata, every group at ``t`` is compared with every group at ``t + 1``.
    Over all such pairs, an edge is kept when its coefficient is below
    ``mean - 1.96 sd / sqrt(n_pairs)``.

    Returns
    -------
    dict with ``edges`` (list of dicts), ``nodes`` (group, stratum, records),
    ``mean``, ``sd``, ``threshold`` and ``edges_strata``.
    """
    c = np.asarray(clusters, dtype=np.int64)
    g = np.asarray(item_groups)
    ys = np.asarray(item_strat, dtype=float)
    rg = np.asarray(record_groups)
    rs = np.asarray(record_strat, dtype=float)
    M = int(n_clusters if n_clusters is not None else c.max() + 1)
    md = None if modes is None else np.asarray(modes)
    edges = equal_count_edges(rs, n_strata)
    r_idx = _stratum_index(rs, edges)
    i_idx = _stratum_index(ys, edges)

    nodes, tables = [], {}
    for t in range(n_strata):
        groups_t, counts_t = np.unique(rg[r_idx == t], return_counts=True)
        for grp, cnt in zip(groups_t.tolist(), counts_t.tolist()):
            if cnt < min_records:
                continue
            sel = (g == grp) & (i_idx == t)
            C = _mode_counts(c[sel], None if md is None else md[sel], M, mode_list)
            tables[(grp, t)] = (C, saturate(C.T))
            nodes.append({"group": grp, "stratum": t, "records": int(cnt)})
    pairs = []
    for t in range(n_strata - 1):
        src = sorted(k for k in tables if k[1] == t)
        dst = sorted(k for k in tables if k[1] == t + 1)
        for a in src:
            for b in dst:
                r = _pair_rho(tables[a], tables[b])
                if not math.isnan(r):
                    pairs.append((a, b, r))
    if not pairs:
        return {"edges": [], "nodes": nodes, "mean": None, "sd": None, "threshold": None,
                "edges_strata": edges.tolist()}
    vals = np.array([p[2] for p in pairs])
    mean, sd = float(vals.mean()), float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    thr = mean - 1.96 * sd / math.sqrt(vals.size)
    out = [
        {"source": a[0], "source_stratum": a[1], "target": b[0], "target_stratum": b[1], "rho": r}
        for a, b, r in pairs if r < thr
    ]
    return {"edges": out, "nodes": nodes, "mean": mean, "sd": sd, "threshold": thr,
            "edges_strata": edges.tolist()}
