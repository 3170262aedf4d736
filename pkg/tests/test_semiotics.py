from math import comb, log

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cartolab.errors import EmptySubset, TooFewGroups, ZeroMaps
from cartolab.semiotics import (
    StrataTable,
    benjamini_hochberg,
    build_strata_table,
    characteristic_exemplars,
    characteristicity,
    complexity_series,
    detect_complexes,
    diachronic_flow,
    diversity_series,
    fisher_exact_greater,
    geographic_rupture_matrix,
    odds_ratio,
    presence_matrix,
    rupture,
    rupture_curve,
    rupture_semantic,
    saturate,
    semantic_symbolic_counts,
    univocity,
    univocity_per_map,
)

counts = arrays(np.int64, st.tuples(st.integers(1, 30), st.integers(1, 6)), elements=st.integers(0, 500))


# ---------------------------------------------------------------------------
# saturation and characteristicity
# ---------------------------------------------------------------------------
def test_saturate_cases():
    assert saturate([[4, 6]]).tolist() == [[1.0, 1.0]]
    assert saturate(np.zeros((5, 2))).tolist() == np.zeros((5, 2)).tolist()
    c = np.r_[np.arange(1, 100), 10000].astype(float)
    # P95 of 100 values sits between the 95th and 96th sorted values: 95.05
    out = saturate(c[:, None])[:, 0]
    assert out[-1] == 1.0
    assert np.allclose(out[:-1], np.minimum(c[:-1] / 95.05, 1.0))


@settings(max_examples=60, deadline=None)
@given(counts)
def test_saturate_definition(C):
    N = saturate(C)
    p = np.percentile(C, 95, axis=0)
    assert np.all((N >= 0) & (N <= 1))
    ok = p > 0
    assert np.allclose(N[:, ok], np.minimum(C[:, ok] / p[ok], 1))


def test_characteristicity_cases(rng):
    assert np.all(characteristicity(np.full((4, 2), 0.5)) == 0)
    chi = characteristicity(np.array([[1.0], [0.5], [0.0]]))
    assert chi[0, 0] == pytest.approx(log(2)) and chi[2, 0] == -np.inf
    N = rng.random((20, 4))
    assert np.allclose(characteristicity(N), np.log(N / N.mean(0)))
    top = characteristic_exemplars(characteristicity(np.array([[1.0], [0.5], [0.0]])), 5)
    assert top == [[0, 1]]


def test_strata_table_edges():
    t = build_strata_table([0, 1, 1, 2], [1800, 1810, 1820, 1830], [1800, 1815, 1830], 3)
    assert t.counts.tolist() == [[1, 0], [1, 1], [0, 1]]
    cat = build_strata_table([0, 1, 0], ["b", "a", "b"], None, 2)
    assert cat.strata_labels == ("a", "b") and cat.counts.tolist() == [[0, 2], [1, 0]]


# ---------------------------------------------------------------------------
# rupture
# ---------------------------------------------------------------------------
def test_rupture_cases(rng):
    a = rng.random((10, 3))
    assert rupture(a, a) == 0
    assert rupture([[1.0], [0.0]], [[0.0], [1.0]]) == 1.0
    b = rng.random((10, 3))
    assert rupture(a, b) == pytest.approx(np.abs(a - b).mean())


def test_semantic_rupture_cases(rng):
    t = [rng.random((5, 1)) for _ in range(2)]
    assert rupture_semantic(t, t).rho == 0
    other = [t[0], 1 - (t[1] > 0.5)]
    same_mode = [t[0], (t[1] > 0.5).astype(float)]
    assert rupture_semantic(same_mode, other).rho == pytest.approx(0.5)
    A = [rng.random((8, 2)) for _ in range(7)]
    B = [rng.random((8, 2)) for _ in range(7)]
    assert rupture_semantic(A, B).rho == pytest.approx(np.mean([rupture(x, y) for x, y in zip(A, B)]))


@settings(max_examples=80, deadline=None)
@given(counts, st.data())
def test_rupture_metric_properties(C, data):
    D = data.draw(arrays(np.int64, C.shape, elements=st.integers(0, 500)))
    a, b = saturate(C), saturate(D)
    assert rupture(a, a) == 0 and rupture(a, b) == rupture(b, a) and 0 <= rupture(a, b) <= 1


def test_rupture_curve_stationary_is_flat(rng):
    n = 6000
    years = rng.uniform(1600, 1900, n)
    a = rng.choice(30, n, p=rng.dirichlet(np.ones(30)))
    c = rupture_curve(a, years, 30, window_steps=50, bootstrap_n=0)
    assert np.nanmax(c.rho) - np.nanmin(c.rho) < 0.15 and np.nanmax(c.rho) < 0.3


def test_rupture_curve_identical_strata_zero():
    # the same item sequence repeated: trailing and leading strata coincide
    a = np.tile(np.arange(10), 100)
    years = np.repeat(np.arange(100.0), 10)
    c = rupture_curve(a, years, 10, window_steps=20, stratum_frac=0.1, overlap_frac=0.0, bootstrap_n=0)
    assert np.nanmax(c.rho) == 0


def test_rupture_curve_ci_and_determinism(rng):
    n = 2000
    years = rng.uniform(0, 100, n)
    a = rng.integers(0, 20, n)
    c1 = rupture_curve(a, years, 20, window_steps=30, bootstrap_n=200, seed=5)
    c2 = rupture_curve(a, years, 20, window_steps=30, bootstrap_n=200, seed=5)
    assert np.array_equal(c1.rho, c2.rho) and np.array_equal(c1.ci_lo, c2.ci_lo)
    ok = np.isfinite(c1.rho)
    assert np.all(c1.ci_lo[ok] <= c1.ci_hi[ok])


# ---------------------------------------------------------------------------
# diversity and complexity
# ---------------------------------------------------------------------------
def test_diversity_threshold():
    ys, macro, micro = diversity_series([3, 3, 3, 4, 4], [1800] * 5, {1800: 2}, 10)
    assert macro.tolist() == [0.1] and micro.tolist() == [0.05]
    with pytest.raises(ZeroMaps):
        diversity_series([1], [1900], {}, 5)


def test_diversity_brute_force(rng):
    a = rng.integers(0, 12, 500)
    y = rng.integers(1800, 1806, 500)
    maps = {yr: int(rng.integers(1, 5)) for yr in range(1800, 1806)}
    ys, macro, _ = diversity_series(a, y, maps, 12)
    for yr, m in zip(ys, macro):
        active = sum(1 for j in range(12) if np.sum((a == j) & (y == yr)) >= 3)
        assert m == active / 12


def test_complexity_cases(rng):
    _, c = complexity_series([[0, 1, 2], [3, 4, 5, 3]], [1800, 1800])
    assert c.tolist() == [3.0]
    _, c = complexity_series([[0, 0, 1]], [1900])
    assert c.tolist() == [2.0]
    per = [rng.integers(0, 9, rng.integers(1, 20)) for _ in range(30)]
    yrs = rng.integers(0, 4, 30)
    ys, c = complexity_series(per, yrs)
    for y, v in zip(ys, c):
        assert v == np.mean([len(set(p.tolist())) for p, yy in zip(per, yrs) if yy == y])


# ---------------------------------------------------------------------------
# complexes
# ---------------------------------------------------------------------------
def test_fisher_hand_values():
    assert fisher_exact_greater(20, 20, 20, 40) == pytest.approx(1 / comb(40, 20), rel=1e-12)
    assert fisher_exact_greater(0, 3, 4, 10) == 1.0
    assert odds_ratio(5, 5, 5, 5) == np.inf


def test_complexes_pair_and_isolated():
    n = 40
    X = np.zeros((n, 3), bool)
    X[:20, 0] = X[:20, 1] = True
    X[::2, 2] = True  # half of each group: independent of the pair
    res = detect_complexes(X, alpha=0.01)
    assert [(e[0], e[1]) for e in res.edges] == [(0, 1)]
    groups = sorted(sorted(c.member_clusters) for c in res.complexes)
    assert groups == [[0, 1], [2]]


def test_complexes_independent_edge_rate():
    rng = np.random.default_rng(9)
    X = rng.random((200, 60)) < 0.5
    res = detect_complexes(X, alpha=0.01)
    pairs = 60 * 59 / 2
    # 1% nominal rate plus three binomial standard deviations
    assert len(res.edges) / pairs <= 0.01 + 3 * np.sqrt(0.01 * 0.99 / pairs)


def test_complexes_degenerate_table():
    X = np.ones((10, 2), bool)
    res = detect_complexes(X)
    assert res.edges == ()  # p = 1 for a table without information
    assert odds_ratio(10, 10, 10, 10) == np.inf


@settings(max_examples=40, deadline=None)
@given(arrays(np.bool_, st.tuples(st.integers(3, 30), st.integers(1, 15))))
def test_complexes_partition(X):
    res = detect_complexes(X)
    members = [m for c in res.complexes for m in c.member_clusters]
    assert sorted(members) == list(range(X.shape[1]))


def test_bh_monotone(rng):
    p = rng.random(50)
    q = benjamini_hochberg(p)
    assert np.all(q >= p) and np.all(np.diff(q[np.argsort(p)]) >= 0)


def test_presence_threshold():
    X = presence_matrix([[0, 0, 0, 1, 1], [1, 1, 1]], 3)
    assert X.tolist() == [[True, False, False], [False, True, False]]


# ---------------------------------------------------------------------------
# univocity
# ---------------------------------------------------------------------------
def test_univocity_split():
    X = semantic_symbolic_counts([0, 0, 0, 0], [0, 0, 0, 0], [1, 1, 1, 2], 1, 1)
    assert univocity(X, bootstrap_reps=0)[0] == 0.75
    assert univocity(np.zeros((1, 1, 7), int).__add__(np.eye(7, dtype=int)[0]), bootstrap_reps=0)[0] == 1.0


def test_univocity_contours_ignored():
    X = semantic_symbolic_counts([0, 0], [0, 0], [1, 8], 1, 1)
    assert X.sum() == 1


def test_univocity_local_vs_global():
    rng = np.random.default_rng(3)
    X = np.zeros((40, 10, 7), int)
    for m in range(40):
        for j in range(10):
            X[m, j, (j + m) % 7] = rng.integers(1, 5)
    pooled, ci = univocity(X, bootstrap_reps=50, sample_size=20, seed=1)
    assert univocity_per_map(X) == 1.0 and pooled < 0.5 and ci[0] <= pooled <= ci[1]
    with pytest.raises(EmptySubset):
        univocity(np.zeros((2, 2, 7), int), bootstrap_reps=0)


# ---------------------------------------------------------------------------
# geography and flow
# ---------------------------------------------------------------------------
def test_geographic_cases():
    cl = np.r_[np.arange(5).repeat(10), np.arange(5).repeat(10)]
    grp = np.array(["a"] * 50 + ["b"] * 50)
    labels, G = geographic_rupture_matrix(cl, grp, {"a": 200, "b": 200}, 10)
    assert labels == ["a", "b"] and G[0, 1] == 0
    cl2 = np.r_[np.arange(5).repeat(10), np.arange(5, 10).repeat(10)]
    _, G = geographic_rupture_matrix(cl2, grp, {"a": 200, "b": 200}, 10)
    assert G[0, 1] == 1.0
    modes = np.tile([1, 2], 50)
    _, Gm = geographic_rupture_matrix(cl2, grp, {"a": 200, "b": 200}, 10, modes=modes)
    assert Gm[0, 1] == 1.0
    with pytest.raises(TooFewGroups):
        geographic_rupture_matrix(cl, grp, {"a": 200, "b": 10}, 10)


def test_flow_symmetric_cities():
    cl = np.tile(np.arange(6), 40)
    grp = np.tile(np.repeat(["x", "y"], 6), 20)
    yr = np.repeat([1800.0, 1900.0], 120)
    out = diachronic_flow(cl, grp, yr, np.array(["x", "y"] * 10), np.repeat([1800.0, 1900.0], 10), n_strata=2,
                          n_clusters=6)
    assert out["sd"] == 0


def test_flow_stationary_city_self_edge():
    rng = np.random.default_rng(4)
    n = 4000
    yr = rng.uniform(1700, 1900, n)
    grp = rng.choice(["p", "q", "r", "s"], n)
    cl = rng.integers(0, 30, n)
    cl[grp == "p"] = rng.choice(30, (grp == "p").sum(), p=np.r_[np.full(5, 0.19), np.full(25, 0.002)])
    recs_g = grp[:800]
    out = diachronic_flow(cl, grp, yr, recs_g, yr[:800], n_strata=3, n_clusters=30)
    selfs = [e for e in out["edges"] if e["source"] == e["target"] == "p"]
    assert len(selfs) == 2
    assert all(e["rho"] == min(x["rho"] for x in out["edges"] if x["source_stratum"] == e["source_stratum"])
               for e in selfs)
