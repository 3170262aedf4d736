"""Whole-map composition: quadrants, co-location and spatial relationships.

A map's content box is cut into a 3x3 grid of quadrants numbered 1..9
row-major (1 top-left, 5 center, 9 bottom-right).  Each quadrant gets its
share of the six mask classes.  Across a corpus these profiles feed the
class co-location matrix, the 36-edge quadrant correlation graph, t-tests of
edge-set hypotheses, the per-map composition vector Phi and its clustering
into semantic types.  The road-width regression lives here too because it
works on the same per-map summaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import stats

from .clustering import knn_classify, minibatch_kmeans, silhouette, sq_dists
from .core import CLASS_NAMES, N_CLASSES, SemanticMask
from .errors import DegenerateVariance, KTooLarge, NoContent, SingleCluster, UnknownHypothesis

__all__ = [
    "QuadrantProfile", "Colocation", "QuadrantGraph", "RelationshipTest", "CompositionFeatures",
    "SemanticTypes", "RoadWidthResult", "EDGES", "EDGE_SETS", "HYPOTHESES", "PHI_COMPONENTS",
    "content_bounds", "quadrant_ratios", "mirror_quadrants", "colocation_matrix",
    "quadrant_graph", "relationship_tests", "composition_features", "semantic_types",
    "shape_ratio", "roadwidth_regression",
]

CONTENT_THRESHOLD = 0.01
EPS = 1e-6

# all 36 quadrant pairs, 1-based, lexicographic
EDGES = tuple(combinations(range(1, 10), 2))
_EDGE_INDEX = {e: i for i, e in enumerate(EDGES)}


def _rc(q):
    return (q - 1) // 3, (q - 1) % 3


def _q(r, c):
    return 3 * r + c + 1


def _edge(a, b):
    return (a, b) if a < b else (b, a)


def _map_edges(edges, f):
    return tuple(_edge(f(a), f(b)) for a, b in edges)


def _HMIRROR(q):  # left <-> right
    r, c = _rc(q)
    return _q(r, 2 - c)


def _VMIRROR(q):  # top <-> bottom
    r, c = _rc(q)
    return _q(2 - r, c)


def _TRANSPOSE(q):
    r, c = _rc(q)
    return _q(c, r)


_same_row = tuple(e for e in EDGES if _rc(e[0])[0] == _rc(e[1])[0])
_left = tuple(e for e in EDGES
              if {_rc(e[0])[1], _rc(e[1])[1]} <= {0, 1} and 0 in (_rc(e[0])[1], _rc(e[1])[1]))
_top = tuple(e for e in EDGES
             if {_rc(e[0])[0], _rc(e[1])[0]} <= {0, 1} and 0 in (_rc(e[0])[0], _rc(e[1])[0]))

EDGE_SETS = {
    "central_cross": ((2, 5), (4, 5), (5, 6), (5, 8)),
    "outer_square": ((1, 2), (2, 3), (1, 4), (3, 6), (4, 7), (6, 9), (7, 8), (8, 9)),
    "circumjacent": ((1, 2), (2, 3), (1, 4), (3, 6), (4, 7), (6, 9), (7, 8), (8, 9),
                     (2, 4), (2, 6), (4, 8), (6, 8)),
    "radial": ((1, 5), (3, 5), (5, 7), (5, 9)),
    "long_range_horizontal": ((1, 3), (4, 6), (7, 9)),
    "long_range_vertical": ((1, 7), (2, 8), (3, 9)),
    "cross_horizontal": ((4, 5), (5, 6)),
    "cross_vertical": ((2, 5), (5, 8)),
    "horizontal": _same_row,
    "vertical": _map_edges(_same_row, _TRANSPOSE),
    "left": _left,
    "right": _map_edges(_left, _HMIRROR),
    "top": _top,
    "bottom": _map_edges(_top, _VMIRROR),
}

# name -> (design, edge set A, edge set B, layer restriction); tests A > B.
# Paired designs match A[i] with B[i].
HYPOTHESES = {
    "circumjacent>radial": ("unpaired", "circumjacent", "radial", None),
    "long_range_horizontal>vertical": ("paired", "long_range_horizontal", "long_range_vertical", None),
    "central_cross>outer_square": ("unpaired", "central_cross", "outer_square", None),
    "central_cross_horizontal>vertical": ("paired", "cross_horizontal", "cross_vertical", None),
    "water_bottom>top": ("paired", "bottom", "top", "water"),
    "horizontal>vertical": ("paired", "horizontal", "vertical", None),
    "right>left": ("paired", "right", "left", None),
    "top>bottom": ("paired", "top", "bottom", None),
}


# ---------------------------------------------------------------------------
# quadrants
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class QuadrantProfile:
    """Per-quadrant class shares of one map.

    ``bounds`` is ``(y0, y1, x0, x1)`` (half-open) of the content box.
    ``counts`` holds pixel counts (9 x 6), ``ratios`` the row-normalized
    shares.  A quadrant with zero area is reported as pure background.
    """

    bounds: tuple
    counts: np.ndarray
    ratios: np.ndarray
    map_id: str | None = None

    @property
    def overall(self) -> np.ndarray:
        tot = self.counts.sum()
        return self.counts.sum(0) / tot if tot > 0 else np.eye(N_CLASSES)[0]


def _labels(mask):
    return mask.labels if isinstance(mask, SemanticMask) else np.asarray(mask)


def content_bounds(mask, threshold=CONTENT_THRESHOLD) -> tuple:
    """Content box from the non-background projection profiles.

    Rows (columns) whose non-background share exceeds ``threshold`` are
    content; the box spans the first to the last such row and column.
    """
    lab = _labels(mask)
    fg = lab != 0
    rows = np.flatnonzero(fg.mean(1) > threshold)
    cols = np.flatnonzero(fg.mean(0) > threshold)
    if rows.size == 0 or cols.size == 0:
        raise NoContent("mask has no content above the projection threshold")
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def _thirds(n):
    """Symmetric 3-way split: outer parts of round(n/3), the rest in the middle."""
    a = int(math.floor(n / 3 + 0.5))
    return (0, a, n - a, n)


def quadrant_ratios(mask, threshold=CONTENT_THRESHOLD, map_id=None) -> QuadrantProfile:
    """Split the content box 3x3 and compute class shares per quadrant.

    The split is mirror-symmetric (outer thirds of equal width), so the
    profile of a mirrored mask is exactly the mirrored profile.
    """
    lab = _labels(mask)
    y0, y1, x0, x1 = content_bounds(lab, threshold)
    box = lab[y0:y1, x0:x1]
    ys, xs = _thirds(box.shape[0]), _thirds(box.shape[1])
    counts = np.zeros((9, N_CLASSES))
    for r in range(3):
        for c in range(3):
            cell = box[ys[r]:ys[r + 1], xs[c]:xs[c + 1]]
            counts[3 * r + c] = np.bincount(cell.ravel(), minlength=N_CLASSES)[:N_CLASSES]
    tot = counts.sum(1, keepdims=True)
    ratios = np.where(tot > 0, counts / np.where(tot > 0, tot, 1), np.eye(N_CLASSES)[0])
    return QuadrantProfile((y0, y1, x0, x1), counts, ratios, map_id)


def mirror_quadrants(values, axis="horizontal"):
    """Reorder a 9-row quadrant array as seen in a mirrored image."""
    f = _HMIRROR if axis == "horizontal" else _VMIRROR
    return np.asarray(values)[[f(q) - 1 for q in range(1, 10)]]


def shape_ratio(mask, threshold=CONTENT_THRESHOLD) -> float:
    """Height over width of the content box."""
    y0, y1, x0, x1 = content_bounds(mask, threshold)
    return (y1 - y0) / (x1 - x0)


# ---------------------------------------------------------------------------
# correlations
# ---------------------------------------------------------------------------
def _pearson(X):
    """Column-wise Pearson matrix with two-sided p; zero-variance columns -> NaN."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    Z = X - X.mean(0)
    sd = np.sqrt((Z ** 2).sum(0))
    ok = sd > 1e-12 * max(1.0, float(np.abs(X).max(initial=0.0)))
    Zs = np.where(ok, Z / np.where(ok, sd, 1), 0.0)
    R = np.clip(Zs.T @ Zs, -1.0, 1.0)
    R[~ok, :] = np.nan
    R[:, ~ok] = np.nan
    P = _r_pvalue(R, n)
    return R, P, ok


def _r_pvalue(R, n):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = R * np.sqrt((n - 2) / np.maximum(1 - R ** 2, 0.0))
    P = 2 * stats.t.sf(np.abs(t), n - 2)
    P[np.abs(R) >= 1] = 0.0
    P[np.isnan(R)] = np.nan
    return P


@dataclass(frozen=True)
class Colocation:
    """Class co-location matrix; ``undefined`` lists zero-variance classes."""

    r: np.ndarray
    p: np.ndarray
    n: int
    undefined: tuple = ()


def colocation_matrix(profiles) -> Colocation:
    """Pearson correlation between class shares, one sample per quadrant.

    Zero-variance classes get NaN rows and columns and are listed in
    ``undefined``; the diagonal of every defined class is 1.
    """
    X = np.concatenate([p.ratios for p in profiles], axis=0)
    if X.shape[0] < 3:
        raise ValueError("co-location needs at least 3 quadrant samples")
    R, P, ok = _pearson(X)
    d = np.flatnonzero(ok)
    R[d, d] = 1.0
    P[d, d] = 0.0
    return Colocation(R, P, X.shape[0], tuple(CLASS_NAMES[i] for i in np.flatnonzero(~ok)))


@dataclass(frozen=True)
class QuadrantGraph:
    """Quadrant-pair correlations across maps, one row per layer.

    ``r`` and ``p`` have shape (n_layers, 36) with columns in ``EDGES``
    order.  A layer is a class name or ``"content"`` (non-background share).
    """

    layers: tuple
    r: np.ndarray
    p: np.ndarray
    n_maps: int
    undefined: tuple = ()
    edges: tuple = EDGES

    def weight(self, edge, layer=None):
        j = _EDGE_INDEX[_edge(*edge)]
        if layer is None:
            return self.r[:, j]
        return float(self.r[self.layers.index(layer), j])

    def to_records(self):
        return [{"layer": lay, "edge": list(e), "r": float(self.r[i, j]), "p": float(self.p[i, j])}
                for i, lay in enumerate(self.layers) for j, e in enumerate(self.edges)]


def quadrant_graph(profiles, layers="classes") -> QuadrantGraph:
    """Correlate quadrant contents across maps for every quadrant pair.

    Parameters
    ----------
    profiles : sequence of QuadrantProfile
    layers : "classes", "content", a class name, or a sequence of those
        ``"classes"`` means the five non-background classes.
    """
    if isinstance(layers, str):
        layers = list(CLASS_NAMES[1:]) if layers == "classes" else [layers]
    layers = tuple(layers)
    n = len(profiles)
    if n < 3:
        raise ValueError("quadrant graph needs at least 3 maps")
    Q = np.stack([p.ratios for p in profiles])  # (n, 9, 6)
    R = np.full((len(layers), len(EDGES)), np.nan)
    P = np.full_like(R, np.nan)
    ii = np.array([a - 1 for a, _ in EDGES])
    jj = np.array([b - 1 for _, b in EDGES])
    undefined = []
    for li, lay in enumerate(layers):
        V = 1.0 - Q[:, :, 0] if lay == "content" else Q[:, :, CLASS_NAMES.index(lay)]
        Rm, Pm, _ = _pearson(V)
        R[li], P[li] = Rm[ii, jj], Pm[ii, jj]
        undefined += [(lay, e) for e, v in zip(EDGES, R[li]) if np.isnan(v)]
    return QuadrantGraph(layers, R, P, n, tuple(undefined))


@dataclass(frozen=True)
class RelationshipTest:
    hypothesis: str
    design: str
    n: int
    statistic: float
    delta_r: float
    p: float


def _values(graph, edges, layers):
    if isinstance(graph, QuadrantGraph):
        rows = [graph.layers.index(l) for l in layers] if layers else range(len(graph.layers))
        cols = [_EDGE_INDEX[_edge(*e)] for e in edges]
        return np.asarray(graph.r)[np.ix_(list(rows), cols)].T  # (n_edges, n_layers)
    out = []
    for e in edges:
        v = graph.get(e, graph.get((e[1], e[0])))
        if v is None:
            raise KeyError(f"no weight for edge {e}")
        out.append(np.atleast_1d(np.asarray(v, dtype=float)))
    return np.stack(out)


def relationship_tests(edge_weights, hypothesis, edge_sets=None) -> RelationshipTest:
    """One-sided t-test that edge set A correlates more strongly than set B.

    Parameters
    ----------
    edge_weights : QuadrantGraph or dict
        Edge ``(i, j)`` -> correlation (scalar or one value per layer).
    hypothesis : str
        A key of ``HYPOTHESES``.
    edge_sets : dict, optional
        Overrides for ``EDGE_SETS``.

    Returns
    -------
    RelationshipTest
        ``delta_r`` is the absolute difference of the mean correlations.
        When both samples have zero spread the t statistic is undefined and
        p is 1 if mean(A) <= mean(B), else 0.
    """
    if hypothesis not in HYPOTHESES:
        raise UnknownHypothesis(hypothesis)
    design, a_name, b_name, layer = HYPOTHESES[hypothesis]
    sets = {**EDGE_SETS, **(edge_sets or {})}
    if isinstance(edge_weights, QuadrantGraph):
        if layer is not None and layer not in edge_weights.layers:
            raise ValueError(f"hypothesis {hypothesis!r} needs layer {layer!r}")
        layers = (layer,) if layer else None
    else:
        layers = None
    A = _values(edge_weights, sets[a_name], layers)
    B = _values(edge_weights, sets[b_name], layers)
    if design == "paired":
        a, b = A.ravel(), B.ravel()
        keep = ~(np.isnan(a) | np.isnan(b))
        a, b = a[keep], b[keep]
        n = a.size
        d = a - b
        diff = float(d.mean()) if n else float("nan")
        degenerate = n < 2 or np.ptp(d) == 0
        if not degenerate:
            res = stats.ttest_rel(a, b, alternative="greater")
    else:
        a, b = A.ravel(), B.ravel()
        a, b = a[~np.isnan(a)], b[~np.isnan(b)]
        n = a.size + b.size
        diff = float(a.mean() - b.mean()) if a.size and b.size else float("nan")
        degenerate = a.size < 1 or b.size < 1 or n < 3 or (np.ptp(a) == 0 and np.ptp(b) == 0)
        if not degenerate:
            res = stats.ttest_ind(a, b, alternative="greater")
    if degenerate:
        stat = 0.0 if diff == 0 else math.copysign(math.inf, diff)
        p = 1.0 if not diff > 0 else 0.0
    else:
        stat, p = float(res.statistic), float(res.pvalue)
    return RelationshipTest(hypothesis, design, int(n), stat, abs(diff), p)


# ---------------------------------------------------------------------------
# composition vector and semantic types
# ---------------------------------------------------------------------------
# (name, numerator quadrants, numerator factor, denominator quadrants).
# "ratios" is the overall class share and has no quadrant fractions.
PHI_COMPONENTS = (
    ("ratios", None, 1.0, None),
    ("center", (2, 5, 8), 3.0, tuple(range(1, 10))),
    ("vertical", (1, 2, 3), 1.0, (7, 8, 9)),
    ("horizontal", (1, 4, 7), 1.0, (3, 6, 9)),
)


@dataclass(frozen=True)
class CompositionFeatures:
    """Composition vector: one block of 6 class values per component."""

    phi: np.ndarray
    components: tuple

    def block(self, name) -> np.ndarray:
        i = self.components.index(name)
        return self.phi[i * N_CLASSES:(i + 1) * N_CLASSES]


def composition_features(profile: QuadrantProfile, eps=EPS, components=PHI_COMPONENTS) -> CompositionFeatures:
    """Log10 composition ratios per class.

    Defaults, for each class share ``rho_q``:

    * ratios: overall share in the content box;
    * center: ``3 * (rho_2 + rho_5 + rho_8) / (rho_1 + ... + rho_9)``,
      i.e. the middle column against the average column;
    * vertical: top row over bottom row;
    * horizontal: left column over right column.

    ``eps`` is added to numerator and denominator, so the vector is finite
    and the same for any uniform scaling of the counts.
    """
    rho = profile.ratios
    out = []
    for name, num, factor, den in components:
        if num is None:
            v = np.log10(profile.overall + eps)
        else:
            top = factor * rho[[q - 1 for q in num]].sum(0)
            bot = rho[[q - 1 for q in den]].sum(0)
            v = np.log10((top + eps) / (bot + eps))
        out.append(v)
    return CompositionFeatures(np.concatenate(out), tuple(c[0] for c in components))


@dataclass(frozen=True)
class SemanticTypes:
    labels: np.ndarray
    silhouette: float
    train_index: np.ndarray
    method: str


def _standardize(X):
    mu = X.mean(0)
    sd = X.std(0)
    return (X - mu) / np.where(sd > 0, sd, 1.0)


def _spectral_embedding(X, k):
    """Top-k eigenvectors of the normalized RBF affinity, rows unit-normed."""
    D2 = np.maximum(sq_dists(X, X), 0.0)
    off = D2[~np.eye(X.shape[0], dtype=bool)]
    sigma2 = float(np.median(off)) if off.size else 1.0
    W = np.exp(-D2 / (2 * max(sigma2, 1e-12)))
    np.fill_diagonal(W, 0.0)
    d = W.sum(1)
    dinv = 1 / np.sqrt(np.where(d > 0, d, 1.0))
    M = dinv[:, None] * W * dinv[None, :]
    _, vec = np.linalg.eigh(M)
    U = vec[:, -k:][:, ::-1]
    # fix signs so the embedding is reproducible across LAPACK builds
    U = U * np.where(U[np.abs(U).argmax(0), np.arange(k)] < 0, -1.0, 1.0)
    nrm = np.linalg.norm(U, axis=1, keepdims=True)
    return U / np.where(nrm > 0, nrm, 1.0)


def semantic_types(features, k=8, seed=0, method="spectral", train_frac=0.5, train_cap=3000,
                   knn=7) -> SemanticTypes:
    """Cluster composition vectors into ``k`` types.

    A seeded training subset is clustered (spectral: normalized affinity
    eigenvectors then k-means; or plain k-means); every other map is labelled
    by k-nearest-neighbour vote.  The silhouette is computed on the held-out
    maps in the standardized feature space.
    """
    X = _standardize(np.asarray(features, dtype=float))
    n = X.shape[0]
    if k < 2 or k >= n:
        raise KTooLarge(f"k={k} with {n} maps")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = min(max(k + 1, int(round(n * train_frac))), train_cap, n)
    tr = np.sort(perm[:n_train])
    held = np.sort(perm[n_train:])
    Xt = X[tr]
    if method == "spectral":
        Z = _spectral_embedding(Xt, k)
    elif method == "kmeans":
        Z = Xt
    else:
        raise ValueError(f"unknown method {method!r}")
    km = minibatch_kmeans(Z, k, batch_size=max(Z.shape[0], 1), seed=seed)
    labels = np.empty(n, dtype=np.int64)
    labels[tr] = km.assignments
    if held.size:
        labels[held] = knn_classify(Xt, km.assignments, X[held], k=min(knn, n_train))
    score_idx = held if held.size and np.unique(labels[held]).size > 1 else np.arange(n)
    try:
        sil = silhouette(X[score_idx], labels[score_idx], seed=seed)
    except SingleCluster:
        sil = float("nan")
    return SemanticTypes(labels, sil, tr, method)


# ---------------------------------------------------------------------------
# road width against scale
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class RoadWidthResult:
    """Road width / scale regression.

    ``beta`` is (intercept, slope) of the full-data OLS.  ``mae`` and
    ``chance_mae`` are means over random 80/20 splits and target
    permutations; ``ratio`` is ``base**mae / base**chance_mae`` and
    ``explained_share`` is ``1 - ratio`` (base 10 when predicting scale,
    2 when predicting width).
    """

    direction: str
    beta: tuple
    r2: float
    mae: float
    mae_ci: tuple
    chance_mae: float
    chance_ci: tuple
    p_value: float
    ratio: float
    explained_share: float
    n: int
    params: dict = field(default_factory=dict)


def _ols(x, y):
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    b1 = ((x - xm) * (y - ym)).sum() / sxx
    return ym - b1 * xm, b1


def roadwidth_regression(scale_denominators, widths, n_splits=100, n_perm=200, seed=0,
                         direction="scale", test_frac=0.2) -> RoadWidthResult:
    """Regress log scale on log road width (or the reverse).

    ``psi = log10(1/S)`` and ``omega = log2(W)``.  With ``direction="scale"``
    the model is ``psi = b0 + b1 * omega``; ``"width"`` swaps the roles.
    The MAE is averaged over ``n_splits`` random train/test partitions (95%
    percentile interval).  Chance fits the model on permuted training
    targets, ``n_perm`` times; ``p_value`` is the share of permutations (with
    the usual +1 correction) whose MAE is at or below the model MAE.
    """
    S = np.asarray(scale_denominators, dtype=float)
    W = np.asarray(widths, dtype=float)
    if S.shape != W.shape or S.ndim != 1:
        raise ValueError("scale and width must be 1-D of equal length")
    if np.any(S <= 0) or np.any(W <= 0):
        raise ValueError("scale denominators and widths must be positive")
    psi, omega = -np.log10(S), np.log2(W)
    if direction == "scale":
        x, y, base = omega, psi, 10.0
    elif direction == "width":
        x, y, base = psi, omega, 2.0
    else:
        raise ValueError(f"unknown direction {direction!r}")
    n = x.size
    if n < 5 or np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateVariance("regression needs variation in both variables")
    b0, b1 = _ols(x, y)
    r = np.corrcoef(x, y)[0, 1]
    n_test = max(1, int(round(n * test_frac)))
    rng = np.random.default_rng(seed)
    splits = [rng.permutation(n) for _ in range(n_splits)]

    def fit_eval(order, yy):
        te, tr = order[:n_test], order[n_test:]
        if np.ptp(x[tr]) == 0:
            c0, c1 = yy[tr].mean(), 0.0
        else:
            c0, c1 = _ols(x[tr], yy[tr])
        return float(np.abs(y[te] - (c0 + c1 * x[te])).mean())

    maes = np.array([fit_eval(o, y) for o in splits])
    chance = np.empty(n_perm)
    for i in range(n_perm):
        order = splits[i % n_splits]
        yy = y.copy()
        tr = order[n_test:]
        yy[tr] = y[rng.permutation(tr)]
        chance[i] = fit_eval(order, yy)
    mae, ch = float(maes.mean()), float(chance.mean())
    p = (1 + int(np.sum(chance <= mae))) / (n_perm + 1)
    ratio = base ** mae / base ** ch
    return RoadWidthResult(
        direction, (float(b0), float(b1)), float(r * r), mae,
        tuple(float(v) for v in np.percentile(maes, [2.5, 97.5])), ch,
        tuple(float(v) for v in np.percentile(chance, [2.5, 97.5])), float(p),
        float(ratio), float(1 - ratio), int(n),
        {"n_splits": n_splits, "n_perm": n_perm, "seed": seed, "test_frac": test_frac},
    )
