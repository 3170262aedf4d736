import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cartolab.core import MapRecord
from cartolab.errors import SingletonBatch
from cartolab.net_stats import (
    build_social_graph,
    community_distance_test,
    louvain,
    map_distance,
    modularity,
    normalize_names,
    salient_similarity,
    temporal_modularity_sweep,
)
from cartolab.synthetic import planted_partition


def rec(i, creators, year=1800, city=None):
    return MapRecord(f"m{i}", f"{i}.png", year, creators=tuple(creators), pub_city=city)


# ---------------------------------------------------------------------------
# names
# ---------------------------------------------------------------------------
def test_identical_vectors_merge_by_mentions():
    v = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    out = normalize_names(["J. Smith", "John Smith", "Blaeu"], v, {"J. Smith": 2, "John Smith": 9})
    assert out == {"J. Smith": "John Smith", "John Smith": "John Smith", "Blaeu": "Blaeu"}
    tie = normalize_names(["b", "a"], np.ones((2, 3)))
    assert tie == {"a": "a", "b": "a"}


def test_far_names_untouched():
    assert normalize_names(["x", "y", "z"], np.eye(3)) == {"x": "x", "y": "y", "z": "z"}
    assert normalize_names([], np.zeros((0, 2))) == {}


def test_chain_is_transitive():
    # consecutive angles 0.5 rad apart: neighbours within 0.17, ends are not
    ang = np.arange(4) * 0.5
    v = np.column_stack([np.cos(ang), np.sin(ang)])
    assert 1 - np.cos(1.5) > 0.17 and 1 - np.cos(0.5) <= 0.17
    out = normalize_names(list("abcd"), v)
    assert set(out.values()) == {"a"}


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10 ** 6))
def test_normalization_idempotent(n, seed):
    rng = np.random.default_rng(seed)
    names = [f"n{i}" for i in range(n)]
    v = rng.normal(size=(n, 3))
    m = normalize_names(names, v)
    assert set(m) == set(names)
    canon = sorted(set(m.values()))
    idx = [names.index(c) for c in canon]
    again = normalize_names(canon, v[idx])
    # canonical forms are fixed points of their own mapping
    assert all(m[c] == c for c in canon)
    assert len(set(again.values())) <= len(canon)


# ---------------------------------------------------------------------------
# social graph and modularity
# ---------------------------------------------------------------------------
def test_social_graph_edges():
    recs = [rec(0, ["a", "b"], 1800, "Paris"), rec(1, ["a", "b", "c"], 1810, "Paris"),
            rec(2, ["d"], 1820, "Lyon"), rec(3, ["A"], 1830)]
    g = build_social_graph(recs, name_map={"A": "a"})
    assert g.nodes == ("a", "b", "c", "d")
    assert g.edges == {("a", "b"): 2, ("a", "c"): 1, ("b", "c"): 1}
    at = g.attrs["a"]
    assert at["publication_count"] == 3 and at["mean_year"] == pytest.approx((1800 + 1810 + 1830) / 3)
    assert at["main_city"] == "Paris" and at["main_country"] is None
    A = g.to_sparse().toarray()
    assert np.array_equal(A, A.T) and A[3].sum() == 0


def test_modularity_hand_values():
    two_triangles = np.zeros((6, 6))
    for grp in ((0, 1, 2), (3, 4, 5)):
        for i in grp:
            for j in grp:
                if i != j:
                    two_triangles[i, j] = 1
    assert modularity(two_triangles, [0, 0, 0, 1, 1, 1]) == pytest.approx(0.5)
    assert modularity(two_triangles, [0] * 6) == pytest.approx(0.0)
    assert modularity(np.zeros((3, 3)), [0, 1, 2]) == 0.0


def test_random_partition_near_zero():
    rng = np.random.default_rng(0)
    A = (rng.random((400, 400)) < 0.05).astype(float)
    A = np.triu(A, 1)
    A = A + A.T
    assert abs(modularity(A, rng.integers(0, 4, 400))) < 0.02


def test_louvain_recovers_planted():
    A, truth = planted_partition(200, 0.3, 0.01, seed=1)
    lab = louvain(A, seed=0)
    assert modularity(A, lab) >= modularity(A, truth) - 0.01


def test_temporal_sweep():
    # two eras, each a clique of co-authors; no tie crosses the eras
    recs = [rec(0, ["a", "b", "c"], 1700), rec(1, ["d", "e", "f"], 1800)]
    g = build_social_graph(recs)
    w, q, best = temporal_modularity_sweep(g, g.node_years(), [50, 1000])
    assert q.tolist() == [0.5, 0.0] and best == 50.0
    with pytest.raises(ValueError):
        temporal_modularity_sweep(g, np.full(len(g.nodes), np.nan), [1])


# ---------------------------------------------------------------------------
# semantic domains
# ---------------------------------------------------------------------------
def test_salient_hand_value():
    e = np.array([1.0, 0.0])
    p = np.array([[0.8, 0.6]])  # cosine distance 0.2
    s = salient_similarity(e, {"art": p, "science": p * [1, -1]})
    assert s.sigma == pytest.approx([0.2, 0.2])
    assert s.s == pytest.approx([0.2 / 0.41] * 2) and s.s[0] == pytest.approx(0.488, abs=5e-4)
    assert s.assigned == ()


def test_salient_exact_and_orthogonal():
    e = np.array([1.0, 0.0, 0.0])
    s = salient_similarity(e, {"a": [[2.0, 0, 0]], "b": [[0, 1.0, 0]], "c": [[0, 0, 1.0]]},
                           threshold=0.25, polarity="below")
    assert s.s[0] == 0 and s.s[1] == pytest.approx(1 / 2.01)
    assert s.assigned == ("a",)
    above = salient_similarity(e, {"a": [[2.0, 0, 0]], "b": [[0, 1.0, 0]]}, threshold=0.25, polarity="above")
    assert above.assigned == ("b",)
    with pytest.raises(ValueError):
        salient_similarity(e, {"a": [[1.0, 0, 0]]})


# ---------------------------------------------------------------------------
# community stylometry
# ---------------------------------------------------------------------------
def test_map_distance_basics():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(7, 4))
    assert map_distance(a, a) == 0
    assert map_distance(a, b) == pytest.approx(map_distance(b, a))
    assert map_distance([[1.0, 0]], [[-1.0, 0]]) == pytest.approx(2 * np.tanh(2))


def test_community_disjoint_vocabularies():
    rng = np.random.default_rng(1)
    basis = np.eye(40)
    icons, labels = [], []
    for c in range(4):
        for _ in range(15):
            icons.append(basis[c * 10 + rng.integers(0, 10, 6)] + rng.normal(0, 0.01, (6, 40)))
            labels.append(c)
    t = community_distance_test(icons, labels, n_batches=5, batch_size=20, n_communities=4, repeats=3)
    assert t.mean > 0.8 and t.rho.shape == (3, 5)


def test_community_iid_near_zero():
    rng = np.random.default_rng(2)
    icons = [rng.normal(size=(8, 16)) for _ in range(120)]
    labels = rng.integers(0, 6, 120)
    t = community_distance_test(icons, labels, n_batches=8, batch_size=40, n_communities=6, repeats=4)
    assert abs(t.mean) < 0.1 and t.ci[0] <= t.mean <= t.ci[1]
    with pytest.raises(SingletonBatch):
        community_distance_test(icons, np.zeros(120), repeats=1)
