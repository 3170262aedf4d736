"""Creator networks: name normalization, the co-publication graph and its
community structure, semantic-domain scores, and the community stylometry
test on icon sets.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from ._graph import louvain, modularity
from .core import EmbeddingTable
from .errors import SingletonBatch

__all__ = [
    "SocialGraph", "SalientScores", "CommunityTest", "normalize_names", "build_social_graph",
    "modularity", "louvain", "temporal_modularity_sweep", "salient_similarity", "map_distance",
    "community_distance_test", "write_name_map",
]


def _unit(X):
    X = np.asarray(X, dtype=np.float64)
    n = np.linalg.norm(X, axis=-1, keepdims=True)
    return X / np.where(n > 0, n, 1.0)


def _cosine_dist(A, B):
    """Cosine distance matrix; float noise around zero is snapped to 0."""
    D = 1.0 - _unit(A) @ _unit(B).T
    D[np.abs(D) < 1e-12] = 0.0
    return np.clip(D, 0.0, 2.0)


# ---------------------------------------------------------------------------
# name normalization
# ---------------------------------------------------------------------------
def normalize_names(names, vectors=None, mention_counts=None, threshold=0.17, knn=3, chunk=2048) -> dict:
    """Merge name variants whose embeddings are close.

    Each name is linked to those of its ``knn`` nearest neighbours (cosine
    distance, ties by index) that lie within ``threshold``.  Connected
    components of the resulting graph are merged; the canonical form is the
    member with the most mentions, ties broken by lexicographic order.

    Parameters
    ----------
    names : sequence of str or EmbeddingTable
    vectors : (n, d) array, optional
        Required unless ``names`` is an EmbeddingTable.
    mention_counts : mapping or sequence, optional
        Defaults to 1 per name.

    Returns
    -------
    dict
        variant -> canonical name, covering every input name.
    """
    if isinstance(names, EmbeddingTable):
        names, vectors = list(names.ids), names.vectors
    names = list(names)
    n = len(names)
    if n == 0:
        return {}
    if mention_counts is None:
        counts = np.ones(n)
    elif hasattr(mention_counts, "get"):
        counts = np.array([mention_counts.get(s, 0) for s in names], dtype=float)
    else:
        counts = np.asarray(mention_counts, dtype=float)
    U = _unit(vectors)
    k = min(knn, n - 1)
    rows, cols = [], []
    if k > 0:
        for st in range(0, n, chunk):
            D = 1.0 - U[st:st + chunk] @ U.T
            D[np.abs(D) < 1e-12] = 0.0
            idx = np.arange(st, min(st + chunk, n))
            D[idx - st, idx] = np.inf  # exclude self
            order = np.argsort(D, axis=1, kind="stable")[:, :k]
            for r in range(D.shape[0]):
                for j in order[r]:
                    if D[r, j] <= threshold:
                        rows.append(st + r)
                        cols.append(j)
    G = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, comp = connected_components(G, directed=False)
    canon = {}
    for c in np.unique(comp):
        members = np.flatnonzero(comp == c)
        best = min(members, key=lambda i: (-counts[i], names[i]))
        for i in members:
            canon[names[i]] = names[best]
    return canon


def write_name_map(mapping, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "canonical"])
        for k in sorted(mapping):
            w.writerow([k, mapping[k]])


# ---------------------------------------------------------------------------
# social graph
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SocialGraph:
    """Co-publication graph.

    ``nodes`` is sorted; ``attrs[name]`` holds publication_count, mean_year,
    main_city and main_country.  ``edges`` maps an ordered pair
    ``(a, b)`` with ``a < b`` to the number of shared maps.
    """

    nodes: tuple
    attrs: dict
    edges: dict

    def index(self) -> dict:
        return {nm: i for i, nm in enumerate(self.nodes)}

    def to_sparse(self) -> sp.csr_matrix:
        ix = self.index()
        n = len(self.nodes)
        if not self.edges:
            return sp.csr_matrix((n, n))
        a = np.array([ix[e[0]] for e in self.edges])
        b = np.array([ix[e[1]] for e in self.edges])
        w = np.array(list(self.edges.values()), dtype=float)
        return sp.csr_matrix((np.r_[w, w], (np.r_[a, b], np.r_[b, a])), shape=(n, n))

    def node_years(self) -> np.ndarray:
        return np.array([self.attrs[nm]["mean_year"] for nm in self.nodes], dtype=float)

    def write_csv(self, edge_path, node_path):
        with open(edge_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["src", "dst", "weight"])
            for (a, b), wt in sorted(self.edges.items()):
                w.writerow([a, b, wt])
        with open(node_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "publication_count", "mean_year", "main_city", "main_country"])
            for nm in self.nodes:
                at = self.attrs[nm]
                my = at["mean_year"]
                w.writerow([nm, at["publication_count"], "" if my is None else f"{my:.6g}",
                            at["main_city"] or "", at["main_country"] or ""])


def _mode(values):
    c = Counter(v for v in values if v)
    if not c:
        return None
    return min(c, key=lambda v: (-c[v], v))


def build_social_graph(records, name_map=None) -> SocialGraph:
    """Build the co-publication graph from map records.

    Creator names pass through ``name_map`` when given.  Every pair of
    distinct creators on a map adds 1 to their edge; solo maps add a node
    only.
    """
    years, cities, countries = {}, {}, {}
    count = Counter()
    edges = Counter()
    for rec in records:
        who = sorted({(name_map or {}).get(c, c) for c in rec.creators if c})
        for c in who:
            count[c] += 1
            years.setdefault(c, []).append(rec.strat_year)
            cities.setdefault(c, []).append(rec.pub_city)
            countries.setdefault(c, []).append(rec.pub_country)
        for a, b in combinations(who, 2):
            edges[(a, b)] += 1
    nodes = tuple(sorted(count))
    attrs = {}
    for nm in nodes:
        ys = [y for y in years[nm] if y is not None]
        attrs[nm] = {
            "publication_count": count[nm],
            "mean_year": float(np.mean(ys)) if ys else None,
            "main_city": _mode(cities[nm]),
            "main_country": _mode(countries[nm]),
        }
    return SocialGraph(nodes, attrs, dict(sorted(edges.items())))


def temporal_modularity_sweep(graph, node_years, bin_widths, origin=None):
    """Modularity of year-bin partitions for a range of bin widths.

    Nodes fall in bin ``floor((year - origin) / width)``, with ``origin``
    defaulting to the earliest year.

    Returns
    -------
    widths : ndarray
    q : ndarray
    best_width : float
        Width with the largest Q (first on ties).
    """
    years = np.asarray(node_years, dtype=float)
    if np.isnan(years).any():
        raise ValueError("every node needs a year")
    org = years.min() if origin is None else origin
    widths = np.asarray(list(bin_widths), dtype=float)
    q = np.array([modularity(graph, np.floor((years - org) / w).astype(np.int64)) for w in widths])
    return widths, q, float(widths[int(np.argmax(q))])


# ---------------------------------------------------------------------------
# semantic domains
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SalientScores:
    domains: tuple
    sigma: np.ndarray
    s: np.ndarray
    assigned: tuple


def salient_similarity(entity_vec, pointer_sets, eps=0.01, threshold=None, polarity=None) -> SalientScores:
    """Salient similarity of an entity to each semantic domain.

    ``sigma_i`` is the smallest cosine distance from the entity to the
    pointers of domain ``i`` and ``s_i = sigma_i / (sum_j sigma_j + eps)``.

    The direction of the threshold test is left to the caller: with
    ``polarity="above"`` the entity joins every domain with ``s > threshold``,
    with ``"below"`` every domain with ``s < threshold``; the default
    assigns nothing.
    """
    if len(pointer_sets) < 2:
        raise ValueError("need at least two domains")
    domains = tuple(pointer_sets)
    e = np.atleast_2d(np.asarray(entity_vec, dtype=np.float64))
    sigma = np.array([float(_cosine_dist(e, np.atleast_2d(pointer_sets[d])).min()) for d in domains])
    s = sigma / (sigma.sum() + eps)
    assigned = ()
    if polarity is not None:
        if threshold is None:
            raise ValueError("a polarity needs a threshold")
        if polarity == "above":
            assigned = tuple(d for d, v in zip(domains, s) if v > threshold)
        elif polarity == "below":
            assigned = tuple(d for d, v in zip(domains, s) if v < threshold)
        else:
            raise ValueError(f"unknown polarity {polarity!r}")
    return SalientScores(domains, sigma, s, assigned)


# ---------------------------------------------------------------------------
# community stylometry
# ---------------------------------------------------------------------------
def map_distance(icons_a, icons_b) -> float:
    """Distance between two maps from their icon embeddings.

    Mean over icons of ``tanh`` of the distance to the closest icon of the
    other map, summed over both directions.
    """
    Om = _cosine_dist(np.atleast_2d(icons_a), np.atleast_2d(icons_b))
    return float(np.tanh(Om.min(1)).mean() + np.tanh(Om.min(0)).mean())


@dataclass(frozen=True)
class CommunityTest:
    """Per-batch correlations (repeats x batches) and their summary."""

    rho: np.ndarray
    mean: float
    sd: float
    ci: tuple
    params: dict = field(default_factory=dict)


def _batch_rho(units, labels):
    n = len(units)
    d, delta = [], []
    for a in range(n):
        for b in range(a + 1, n):
            Om = 1.0 - units[a] @ units[b].T
            Om[np.abs(Om) < 1e-12] = 0.0
            Om = np.clip(Om, 0.0, 2.0)
            d.append(np.tanh(Om.min(1)).mean() + np.tanh(Om.min(0)).mean())
            delta.append(0.0 if labels[a] == labels[b] else 1.0)
    d, delta = np.array(d), np.array(delta)
    if np.ptp(d) == 0 or np.ptp(delta) == 0:
        return float("nan")
    return float(np.corrcoef(d, delta)[0, 1])


def community_distance_test(map_icons, communities, n_batches=17, batch_size=50, n_communities=10,
                            max_icons=128, repeats=10, seed=0) -> CommunityTest:
    """Correlate map distances with the different-community indicator.

    For each repetition and batch, ``n_communities`` communities are drawn,
    then ``batch_size`` maps from them: one map from each of two distinct
    communities first (so every batch mixes communities), the rest
    uniformly.  Maps with more than ``max_icons`` icons use a seeded
    subsample.  ``rho`` is the Pearson correlation between ``d_map`` and the
    0/1 different-community indicator over all map pairs in the batch.
    """
    labels = np.asarray(communities)
    n = labels.size
    if len(map_icons) != n:
        raise ValueError("one community label per map")
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise SingletonBatch("all maps belong to one community")
    rng = np.random.default_rng(seed)
    units = []
    for icons in map_icons:
        X = np.atleast_2d(np.asarray(icons, dtype=np.float64))
        if X.shape[0] > max_icons:
            X = X[np.sort(rng.choice(X.shape[0], max_icons, replace=False))]
        units.append(_unit(X))
    rho = np.full((repeats, n_batches), np.nan)
    for r in range(repeats):
        for b in range(n_batches):
            comms = rng.choice(uniq, size=min(n_communities, uniq.size), replace=False)
            pool = np.flatnonzero(np.isin(labels, comms))
            first = [rng.choice(np.flatnonzero(labels == c)) for c in comms[:2]]
            rest = np.setdiff1d(pool, first)
            m = min(batch_size, pool.size) - 2
            pick = np.r_[first, rng.choice(rest, size=max(m, 0), replace=False)].astype(int)
            rho[r, b] = _batch_rho([units[i] for i in pick], labels[pick])
    per_rep = np.nanmean(rho, axis=1)
    mean = float(np.nanmean(per_rep))
    sd = float(np.nanstd(per_rep, ddof=1)) if repeats > 1 else 0.0
    half = 1.96 * sd / math.sqrt(max(repeats, 1))
    return CommunityTest(rho, mean, sd, (mean - half, mean + half),
                         {"n_batches": n_batches, "batch_size": batch_size, "n_communities": n_communities,
                          "max_icons": max_icons, "repeats": repeats, "seed": seed})
