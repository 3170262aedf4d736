"""Vector-space machinery: k-means, density-aware reclustering, exemplars,
Ward trees, layouts, silhouette and nearest-neighbour propagation.

All distances here are Euclidean.  Functions that draw random numbers take
a ``seed`` and are deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCluster, GridTooSmall, KTooLarge, SingleCluster

__all__ = [
    "KMeansResult", "ClusterModel", "Dendrogram",
    "minibatch_kmeans", "density_recluster", "assign_gmm", "select_exemplars",
    "ward_tree", "cut_tree", "pca_layout", "grid_snap", "silhouette", "knn_classify",
    "sq_dists",
]


def sq_dists(X, C) -> np.ndarray:
    """Squared Euclidean distances between rows of X and rows of C (clipped at 0)."""
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _nearest(X, C, chunk=8192):
    """Index of and squared distance to the nearest center, chunked over X."""
    lab = np.empty(X.shape[0], dtype=np.int64)
    dist = np.empty(X.shape[0])
    for s in range(0, X.shape[0], chunk):
        d = sq_dists(X[s:s + chunk], C)
        lab[s:s + chunk] = d.argmin(1)
        dist[s:s + chunk] = d[np.arange(d.shape[0]), lab[s:s + chunk]]
    return lab, dist


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class KMeansResult:
    centers: np.ndarray
    assignments: np.ndarray
    inertia_trace: np.ndarray
    n_iter: int
    converged: bool

    def __iter__(self):
        # allows ``centers, labels, trace = minibatch_kmeans(...)``
        return iter((self.centers, self.assignments, self.inertia_trace))

    @property
    def sizes(self):
        return np.bincount(self.assignments, minlength=self.centers.shape[0])


def _kmeanspp(X, k, rng):
    """k-means++ seeding (D^2 sampling, one candidate per step)."""
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = sq_dists(X, X[idx[0]:idx[0] + 1]).ravel()
    for _ in range(1, k):
        tot = d2.sum()
        if tot <= 0:
            # fewer distinct points than k: pick unused indices in order
            free = np.setdiff1d(np.arange(n), idx)
            j = int(free[0])
        else:
            j = int(rng.choice(n, p=d2 / tot))
        idx.append(j)
        d2 = np.minimum(d2, sq_dists(X, X[j:j + 1]).ravel())
    return X[idx].copy()


def minibatch_kmeans(vectors, k, batch_size=131072, seed=0, max_iter=100, tol=1e-4,
                     patience=5, init_size=None) -> KMeansResult:
    """Mini-batch k-means with k-means++ seeding.

    When ``batch_size >= n`` every iteration is a full Lloyd step and the
    inertia trace (total within-cluster sum of squares) is non-increasing.
    Otherwise each iteration draws a batch and moves centers with
    per-center learning rates ``1 / count``; the recorded inertia is the mean
    squared distance on a fixed evaluation sample.

    Convergence: relative inertia change below ``tol`` for ``patience``
    consecutive iterations.

    Returns
    -------
    KMeansResult
        Also unpacks as ``(centers, assignments, inertia_trace)``.
    """
    X = np.asarray(vectors, dtype=np.float64)
    n = X.shape[0]
    if k < 1 or k > n:
        raise KTooLarge(f"k={k} with n={n}")
    rng = np.random.default_rng(seed)
    full = batch_size >= n
    if init_size is None:
        init_size = n if full else min(n, max(3 * batch_size, 3 * k))
    init_idx = np.sort(rng.choice(n, size=init_size, replace=False)) if init_size < n else np.arange(n)
    C = _kmeanspp(X[init_idx], k, rng)

    trace = []
    calm = 0
    converged = False
    it = 0
    if full:
        for it in range(1, max_iter + 1):
            lab, d = _nearest(X, C)
            trace.append(float(d.sum()))
            counts = np.bincount(lab, minlength=k)
            sums = np.zeros_like(C)
            np.add.at(sums, lab, X)
            nz = counts > 0
            newC = C.copy()
            newC[nz] = sums[nz] / counts[nz, None]
            if np.array_equal(newC, C):
                converged = True
                break
            C = newC
            if len(trace) > 1:
                rel = abs(trace[-2] - trace[-1]) / max(trace[-2], 1e-300)
                calm = calm + 1 if rel < tol else 0
                if calm >= patience:
                    converged = True
                    break
    else:
        eval_idx = np.sort(rng.choice(n, size=min(n, batch_size), replace=False))
        Xe = X[eval_idx]
        seen = np.zeros(k)
        for it in range(1, max_iter + 1):
            b = X[rng.choice(n, size=batch_size, replace=False)]
            lab, _ = _nearest(b, C)
            # per-sample updates with rate 1/count telescope into a running mean
            cnt = np.bincount(lab, minlength=k).astype(float)
            sums = np.zeros_like(C)
            np.add.at(sums, lab, b)
            hit = cnt > 0
            C[hit] = (seen[hit, None] * C[hit] + sums[hit]) / (seen[hit] + cnt[hit])[:, None]
            seen += cnt
            trace.append(float(_nearest(Xe, C)[1].mean()))
            if len(trace) > 1:
                rel = abs(trace[-2] - trace[-1]) / max(trace[-2], 1e-300)
                calm = calm + 1 if rel < tol else 0
                if calm >= patience:
                    converged = True
                    break
    lab, _ = _nearest(X, C)
    return KMeansResult(C, lab, np.asarray(trace), it, converged)


# ---------------------------------------------------------------------------
# density-aware mixture
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ClusterModel:
    """Spherical Gaussian mixture with means fixed at k-means centers."""

    centers: np.ndarray
    weights: np.ndarray
    variance: float
    upsampled_counts: np.ndarray

    @property
    def k(self):
        return self.centers.shape[0]


def upsample_counts(cluster_sizes, total_points) -> np.ndarray:
    """Resample counts proportional to cluster size, at least one per cluster."""
    s = np.asarray(cluster_sizes, dtype=float)
    if np.any(s < 0):
        raise ValueError("cluster sizes must be nonnegative")
    if total_points < s.size:
        raise ValueError("total_points must be >= number of clusters")
    share = s / s.sum() if s.sum() > 0 else np.full(s.size, 1.0 / s.size)
    return np.maximum(1, np.floor(total_points * share + 0.5)).astype(np.int64)


def density_recluster(centers, cluster_sizes, total_points, vectors=None, labels=None,
                      within_ss=None, n_points=None) -> ClusterModel:
    """Fit mixture weights from cluster densities.

    The k-means centers are resampled proportionally to their sizes
    (``total_points`` draws, minimum one per cluster) and the mixture
    weights are the resampled shares.  The component means stay at the
    centers.  The shared spherical variance comes from the within-cluster
    residuals: pass either ``vectors`` with ``labels`` or the total
    ``within_ss`` with ``n_points``.  Without either, a fallback of a
    quarter of the mean squared nearest-center spacing per dimension is used.
    """
    C = np.asarray(centers, dtype=np.float64)
    k, d = C.shape
    counts = upsample_counts(cluster_sizes, total_points)
    weights = counts / counts.sum()
    if vectors is not None and labels is not None:
        V = np.asarray(vectors, dtype=np.float64)
        lab = np.asarray(labels)
        var = float(((V - C[lab]) ** 2).sum() / (V.shape[0] * d))
    elif within_ss is not None and n_points:
        var = float(within_ss) / (n_points * d)
    elif k > 1:
        dd = sq_dists(C, C)
        np.fill_diagonal(dd, np.inf)
        var = float(dd.min(1).mean() / (4.0 * d))
    else:
        var = 1.0
    if not var > 0:
        var = np.finfo(float).tiny
    return ClusterModel(C, weights, var, counts)


def assign_gmm(model: ClusterModel, vectors):
    """Posterior assignment under the mixture.

    Returns
    -------
    labels : (n,) int
        ``argmax`` of the posterior; ties go to the lower index.
    responsibilities : (n, k)
    """
    X = np.asarray(vectors, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    logp = logw[None, :] - sq_dists(X, model.centers) / (2.0 * model.variance)
    mx = logp.max(1, keepdims=True)
    r = np.exp(logp - mx)
    r /= r.sum(1, keepdims=True)
    return logp.argmax(1), r


def select_exemplars(vectors, labels, centers):
    """Nearest sample to each center among that cluster's members.

    Returns
    -------
    exemplars : (k,) int
        Sample index per cluster, -1 for empty clusters.
    empty : list of EmptyCluster
        One entry per empty cluster (reported, not raised).
    """
    X = np.asarray(vectors, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.int64)
    C = np.asarray(centers, dtype=np.float64)
    d = ((X - C[lab]) ** 2).sum(1)
    order = np.lexsort((np.arange(lab.size), d, lab))
    first = np.ones(order.size, bool)
    first[1:] = lab[order][1:] != lab[order][:-1]
    ex = np.full(C.shape[0], -1, dtype=np.int64)
    ex[lab[order][first]] = order[first]
    empty = [EmptyCluster(f"cluster {j} has no sample") for j in np.flatnonzero(ex < 0)]
    return ex, empty


# ---------------------------------------------------------------------------
# Ward
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Dendrogram:
    """Merge list in the usual linkage layout.

    ``merges[i] = (node_a, node_b, height, size)``; leaves are ``0..n-1`` and
    the node created by merge ``i`` is ``n + i``.  Heights follow the common
    convention where two single points merge at their Euclidean distance,
    i.e. ``height = sqrt(2 * increase in within-cluster sum of squares)``.
    """

    merges: np.ndarray
    n_leaves: int

    def to_json(self):
        return [
            {"a": int(a), "b": int(b), "height": float(h), "size": int(s)}
            for a, b, h, s in self.merges
        ]


def ward_tree(centers) -> Dendrogram:
    """Ward agglomeration with the nearest-neighbour chain algorithm.

    Distances are kept squared and updated with the Lance-Williams formula
    for Ward's method; merges are then sorted by height (stable) and node ids
    renumbered.
    """
    X = np.asarray(centers, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points")
    D = sq_dists(X, X)
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    active = np.ones(n, bool)
    raw = []  # (i, j, d2) with i, j slot indices; slot i becomes the merged cluster
    chain = []
    for _ in range(n - 1):
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        while True:
            a = chain[-1]
            row = np.where(active, D[a], np.inf)
            b = int(np.argmin(row))
            # prefer the previous chain element on ties to guarantee termination
            if len(chain) > 1 and row[chain[-2]] <= row[b]:
                b = chain[-2]
            if len(chain) > 1 and b == chain[-2]:
                break
            chain.append(b)
        b = chain.pop()
        a = chain.pop()
        i, j = min(a, b), max(a, b)
        d2 = D[i, j]
        raw.append((i, j, d2))
        ni, nj = size[i], size[j]
        nk = size
        # Lance-Williams on squared Ward distances (height^2 convention)
        new = ((ni + nk) * D[i] + (nj + nk) * D[j] - nk * d2) / (ni + nj + nk)
        D[i, :] = new
        D[:, i] = new
        D[i, i] = np.inf
        active[j] = False
        D[j, :] = np.inf
        D[:, j] = np.inf
        size[i] = ni + nj
    # sort by height and relabel via union-find over slots
    order = sorted(range(len(raw)), key=lambda t: raw[t][2])
    node_of = list(range(n))
    sz = [1] * n
    merges = []
    for step, t in enumerate(order):
        i, j, d2 = raw[t]
        a, b = node_of[i], node_of[j]
        s = sz[i] + sz[j]
        merges.append((min(a, b), max(a, b), float(np.sqrt(max(d2, 0.0))), s))
        node_of[i] = n + step
        sz[i] = s
    return Dendrogram(np.array(merges, dtype=np.float64), n)


def cut_tree(dendrogram: Dendrogram, k: int) -> np.ndarray:
    """Flat labels (0..k-1, by lowest leaf) after undoing the last k-1 merges."""
    n = dendrogram.n_leaves
    if not 1 <= k <= n:
        raise ValueError("k must be in 1..n")
    parent = np.arange(2 * n - 1)
    for step, (a, b, _, _) in enumerate(dendrogram.merges[: n - k]):
        parent[int(a)] = parent[int(b)] = n + step

    def root(x):
        while parent[x] != x:
            x = parent[x]
        return x

    roots = np.array([root(i) for i in range(n)])
    _, first = np.unique(roots, return_index=True)
    rank = {roots[f]: r for r, f in enumerate(sorted(first))}
    return np.array([rank[r] for r in roots])


# ---------------------------------------------------------------------------
# layouts
# ---------------------------------------------------------------------------
def pca_layout(vectors, out_dim=2, return_ratio=False):
    """Project centered data on its top principal axes.

    Each axis is signed so that its largest-magnitude loading is positive.
    """
    if out_dim not in (2, 3):
        raise ValueError("out_dim must be 2 or 3")
    X = np.asarray(vectors, dtype=np.float64)
    Xc = X - X.mean(0)
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    V = Vt[:out_dim]
    if V.shape[0] < out_dim:
        V = np.vstack([V, np.zeros((out_dim - V.shape[0], X.shape[1]))])
    sign = np.sign(V[np.arange(V.shape[0]), np.abs(V).argmax(1)])
    sign[sign == 0] = 1
    V = V * sign[:, None]
    coords = Xc @ V.T
    if not return_ratio:
        return coords
    var = s ** 2
    ratio = var[:out_dim] / var.sum() if var.sum() > 0 else np.zeros(out_dim)
    return coords, ratio


def _grid_cost(P, cells, cols):
    r, c = np.divmod(cells, cols)
    return (P[:, 0] - c) ** 2 + (P[:, 1] - r) ** 2


def grid_snap(coords, rows, cols) -> np.ndarray:
    """Assign items to distinct grid cells (row-major index ``r * cols + c``).

    Coordinates are rescaled to the grid extent (x to columns, y to rows,
    row 0 at the smallest y).  Items are sorted by y, cut into rows of
    ``cols`` items, each row sorted by x and placed left to right; then
    adjacent-cell swaps (including moves into empty cells) are applied while
    any of them lowers the total squared displacement, followed by
    sweeps of best swaps between arbitrary cell pairs until none helps.
    """
    P = np.asarray(coords, dtype=np.float64)
    n = P.shape[0]
    if rows * cols < n:
        raise GridTooSmall(f"{rows}x{cols} grid for {n} items")
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    P = P[:, :2].copy()
    for ax, m in ((0, cols), (1, rows)):
        lo, hi = P[:, ax].min(), P[:, ax].max()
        P[:, ax] = (P[:, ax] - lo) / (hi - lo) * (m - 1) if hi > lo else (m - 1) / 2.0
    order = np.lexsort((P[:, 0], P[:, 1]))
    cell_of = np.empty(n, dtype=np.int64)
    for start in range(0, n, cols):
        chunk = order[start:start + cols]
        chunk = chunk[np.argsort(P[chunk, 0], kind="stable")]
        cell_of[chunk] = start + np.arange(chunk.size)
    occ = np.full(rows * cols, -1, dtype=np.int64)
    occ[cell_of] = np.arange(n)

    def cost(item, cell):
        if item < 0:
            return 0.0
        r, c = divmod(cell, cols)
        return (P[item, 0] - c) ** 2 + (P[item, 1] - r) ** 2

    pairs = [(r * cols + c, r * cols + c + 1) for r in range(rows) for c in range(cols - 1)]
    pairs += [(r * cols + c, (r + 1) * cols + c) for r in range(rows - 1) for c in range(cols)]
    improved = True
    while improved:
        improved = False
        for u, v in pairs:
            a, b = occ[u], occ[v]
            if a < 0 and b < 0:
                continue
            before = cost(a, u) + cost(b, v)
            after = cost(a, v) + cost(b, u)
            if after < before - 1e-12:
                occ[u], occ[v] = b, a
                improved = True
    # adjacent swaps stall in local optima; finish with sweeps in which each
    # cell swaps with whichever other cell gives the largest improvement
    cr, cc = np.divmod(np.arange(rows * cols), cols)
    swapped = True
    while swapped:
        swapped = False
        for u in range(rows * cols):
            a = occ[u]
            if a < 0:
                continue
            filled = occ >= 0
            cur = np.where(filled, (P[occ, 0] - cc) ** 2 + (P[occ, 1] - cr) ** 2, 0.0)
            a_at_v = (P[a, 0] - cc) ** 2 + (P[a, 1] - cr) ** 2
            b_at_u = np.where(filled, (P[occ, 0] - cc[u]) ** 2 + (P[occ, 1] - cr[u]) ** 2, 0.0)
            gain = cur[u] + cur - a_at_v - b_at_u
            gain[u] = 0.0
            v = int(np.argmax(gain))
            if gain[v] > 1e-12:
                occ[u], occ[v] = occ[v], a
                swapped = True
    cell_of[occ[occ >= 0]] = np.flatnonzero(occ >= 0)
    return cell_of


# ---------------------------------------------------------------------------
# silhouette and kNN
# ---------------------------------------------------------------------------
def silhouette(vectors, labels, sample_cap=10000, seed=0) -> float:
    """Mean silhouette coefficient.

    Above ``sample_cap`` items a seeded subsample is scored (distances still
    use only the subsample).  Items alone in their cluster score 0.
    """
    X = np.asarray(vectors, dtype=np.float64)
    lab = np.asarray(labels)
    if np.unique(lab).size < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    if X.shape[0] > sample_cap:
        idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], sample_cap, replace=False))
        X, lab = X[idx], lab[idx]
        if np.unique(lab).size < 2:
            raise SingleCluster("subsample holds a single cluster")
    uniq, li = np.unique(lab, return_inverse=True)
    k = uniq.size
    counts = np.bincount(li, minlength=k).astype(float)
    s = np.empty(X.shape[0])
    for st in range(0, X.shape[0], 2048):
        D = np.sqrt(sq_dists(X[st:st + 2048], X))
        sums = np.zeros((D.shape[0], k))
        for c in range(k):
            sums[:, c] = D[:, li == c].sum(1)
        own = li[st:st + 2048]
        rows = np.arange(D.shape[0])
        n_own = counts[own] - 1
        with np.errstate(divide="ignore", invalid="ignore"):
            a = sums[rows, own] / n_own
            mean_other = sums / counts[None, :]
        mean_other[rows, own] = np.inf
        b = mean_other.min(1)
        m = np.maximum(a, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            si = np.where(m > 0, (b - a) / m, 0.0)
        si[n_own == 0] = 0.0
        s[st:st + 2048] = si
    return float(np.clip(s, -1, 1).mean())


def knn_classify(train_vectors, train_labels, queries, k=7) -> np.ndarray:
    """k-nearest-neighbour majority vote.

    Neighbours are the k smallest distances (ties by training index).  Vote
    ties go to the label with the smallest summed neighbour distance, then
    to the lowest label.
    """
    T = np.asarray(train_vectors, dtype=np.float64)
    y = np.asarray(train_labels)
    Q = np.asarray(queries, dtype=np.float64)
    if not 1 <= k <= T.shape[0]:
        raise KTooLarge(f"k={k} with {T.shape[0]} training points")
    out = np.empty(Q.shape[0], dtype=y.dtype)
    for st in range(0, Q.shape[0], 1024):
        D = np.sqrt(sq_dists(Q[st:st + 1024], T))
        for r in range(D.shape[0]):
            nn = np.lexsort((np.arange(T.shape[0]), D[r]))[:k]
            labs, inv = np.unique(y[nn], return_inverse=True)
            votes = np.bincount(inv)
            dsum = np.bincount(inv, weights=D[r, nn])
            best = np.lexsort((np.arange(labs.size), dsum, -votes))[0]
            out[st + r] = labs[best]
    return out
