"""Weighted undirected graphs as sparse matrices: modularity and Louvain.

Graphs are handled in matrix form.  ``A`` is symmetric, ``A[i, j]`` is the
edge weight, and degrees are row sums, so the total weight ``2m`` is
``A.sum()``.  Collapsing a community into a node keeps its internal weight on
the diagonal, which makes the modularity of a partition identical before and
after aggregation.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def as_adjacency(graph) -> sp.csr_matrix:
    """Coerce a dense array, sparse matrix or object with ``to_sparse()``."""
    if hasattr(graph, "to_sparse"):
        graph = graph.to_sparse()
        if isinstance(graph, tuple):
            graph = graph[1]
    A = sp.csr_matrix(graph, dtype=np.float64)
    if A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be square")
    if (abs(A - A.T) > 1e-12).nnz:
        raise ValueError("adjacency must be symmetric")
    return A


def modularity(graph, partition, resolution=1.0) -> float:
    """Newman modularity of a partition.

    Q = (1/2m) sum_ij (A_ij - k_i k_j / 2m) delta(c_i, c_j)

    Parameters
    ----------
    graph : array-like or sparse matrix
        Symmetric weighted adjacency.
    partition : sequence of int
        Community label per node.

    Returns
    -------
    float
        0.0 for an edgeless graph.
    """
    A = as_adjacency(graph)
    labels = np.asarray(partition)
    if labels.shape[0] != A.shape[0]:
        raise ValueError("partition must cover every node")
    two_m = A.sum()
    if two_m == 0:
        return 0.0
    _, c = np.unique(labels, return_inverse=True)
    k = np.asarray(A.sum(axis=1)).ravel()
    coo = A.tocoo()
    same = c[coo.row] == c[coo.col]
    internal = np.bincount(c[coo.row[same]], weights=coo.data[same], minlength=c.max() + 1)
    tot = np.bincount(c, weights=k, minlength=c.max() + 1)
    q = internal.sum() / two_m - resolution * np.sum((tot / two_m) ** 2)
    return float(q)


def _local_moving(A: sp.csr_matrix, rng, resolution):
    """One Louvain level: move single nodes while modularity improves."""
    n = A.shape[0]
    k = np.asarray(A.sum(axis=1)).ravel()
    two_m = k.sum()
    comm = np.arange(n)
    tot = k.copy()
    indptr, indices, data = A.indptr, A.indices, A.data
    order = rng.permutation(n)
    improved_any = False
    while True:
        moved = 0
        for i in order:
            lo, hi = indptr[i], indptr[i + 1]
            nbrs, w = indices[lo:hi], data[lo:hi]
            off = nbrs != i
            nbrs, w = nbrs[off], w[off]
            ci = comm[i]
            tot[ci] -= k[i]
            # link weight from i to each neighbouring community
            cn = comm[nbrs]
            uc, inv = np.unique(cn, return_inverse=True)
            links = np.bincount(inv, weights=w)
            own = links[uc == ci].sum() if ci in uc else 0.0
            best_c = ci
            best_gain = own - resolution * tot[ci] * k[i] / two_m
            if uc.size:
                gains = links - resolution * tot[uc] * k[i] / two_m
                j = int(np.argmax(gains))  # first max -> lowest community id
                if gains[j] > best_gain + 1e-12:
                    best_c, best_gain = uc[j], gains[j]
            tot[best_c] += k[i]
            if best_c != ci:
                comm[i] = best_c
                moved += 1
        if moved == 0:
            break
        improved_any = True
    _, comm = np.unique(comm, return_inverse=True)
    return comm, improved_any


def louvain(graph, seed=0, resolution=1.0, max_levels=32) -> np.ndarray:
    """Louvain community detection.

    Alternates local node moves with graph aggregation until no move
    improves modularity.  Node visiting order is a seeded permutation, so the
    result is deterministic for a given seed.

    Parameters
    ----------
    graph : array-like or sparse matrix
        Symmetric nonnegative adjacency.
    seed : int
    resolution : float
        Resolution parameter (1.0 is standard modularity).

    Returns
    -------
    numpy.ndarray
        Community label per node, numbered 0.. in order of first appearance.
    """
    A = as_adjacency(graph)
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    labels = np.arange(n)
    if n == 0 or A.sum() == 0:
        return labels
    cur = A
    for _ in range(max_levels):
        comm, improved = _local_moving(cur, rng, resolution)
        if not improved:
            break
        labels = comm[labels]
        nc = comm.max() + 1
        P = sp.csr_matrix((np.ones(cur.shape[0]), (np.arange(cur.shape[0]), comm)), shape=(cur.shape[0], nc))
        cur = (P.T @ cur @ P).tocsr()
        if nc == 1:
            break
    # relabel by first appearance for a stable output
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(order.size)
    return remap[np.searchsorted(np.unique(labels), labels)]
