import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from cartolab.chrono_stats import (
    DyadicDesign,
    attention_raster,
    domestic_share_series,
    dyadic_regression,
    gaussian_kernel,
    gaussian_smooth,
    ks_cumsum,
    ks_statistic,
    lagged_correlation,
    mann_kendall,
    minmax_scale,
    rank_transform,
)
from cartolab.core import CoverageGeom
from cartolab.errors import AllTies, EmptySample, InsufficientData, InsufficientOverlap, RankDeficient


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------
def test_smoothing_cases():
    assert np.allclose(gaussian_smooth(np.full(30, 4.2)), 4.2)
    imp = np.zeros(41)
    imp[20] = 1
    out = gaussian_smooth(imp)
    assert out.sum() == pytest.approx(1.0) and np.allclose(out[15:26], gaussian_kernel())
    ramp = np.arange(40.0)
    assert np.allclose(gaussian_smooth(ramp)[5:-5], ramp[5:-5])


def test_smoothing_keeps_gaps():
    x = np.arange(20.0)
    x[7] = np.nan
    out = gaussian_smooth(x)
    assert np.isnan(out[7]) and np.isfinite(np.delete(out, 7)).all()


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(-1e3, 1e3)))
def test_smoothing_bounded(x):
    out = gaussian_smooth(x)
    assert out.min() >= x.min() - 1e-9 and out.max() <= x.max() + 1e-9


# ---------------------------------------------------------------------------
# lagged correlation
# ---------------------------------------------------------------------------
def test_lag_cases(rng):
    a = rng.normal(size=120)
    b = np.r_[a[5:], rng.normal(size=5)]  # b[t] = a[t + 5]: b leads
    lc = lagged_correlation(a, b, 10)
    assert lc.argmax() == -5 and lc.r[lc.lags == -5][0] == pytest.approx(1.0)
    delayed = np.r_[rng.normal(size=3), a[:-3]]
    assert lagged_correlation(a, delayed, 10).argmax() == 3
    assert lagged_correlation(a, -a, 4).r[4] == pytest.approx(-1.0)
    assert lagged_correlation(a, a, 0).r[0] == 1.0


def test_lag_noise_within_ci(rng):
    lc = lagged_correlation(rng.normal(size=400), rng.normal(size=400), 10)
    assert np.abs(lc.r).max() < 0.2 and np.all(lc.ci_lo <= lc.r) and np.all(lc.r <= lc.ci_hi)
    with pytest.raises(InsufficientOverlap):
        lagged_correlation(np.arange(12.0), np.arange(12.0), 5)


def test_lag_against_numpy(rng):
    a, b = rng.normal(size=60), rng.normal(size=60)
    lc = lagged_correlation(a, b, 3)
    assert lc.r[lc.lags == 2][0] == pytest.approx(np.corrcoef(a[:-2], b[2:])[0, 1])
    assert lc.r[lc.lags == -2][0] == pytest.approx(np.corrcoef(a[2:], b[:-2])[0, 1])


# ---------------------------------------------------------------------------
# trend and distributions
# ---------------------------------------------------------------------------
def test_mann_kendall_cases():
    up = mann_kendall(np.arange(30.0))
    assert up.S == 435 and up.p < 1e-3 and up.sen_slope == 1.0 and up.tau == 1.0
    with pytest.raises(AllTies):
        mann_kendall(np.ones(10))
    with pytest.raises(InsufficientData):
        mann_kendall([1.0, 2.0, 3.0])


def test_mann_kendall_tau_b_agreement(rng):
    x = rng.normal(size=50)
    mk = mann_kendall(x)
    assert mk.tau == pytest.approx(stats.kendalltau(np.arange(50), x).statistic)


def test_ks_cases(rng):
    assert ks_statistic([1, 2, 3], [10, 11]) == 1.0
    a, b = rng.normal(size=200), rng.normal(1, 1, 300)
    assert ks_statistic(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic)
    assert ks_cumsum([1, 0, 0], [0, 0, 1]) == 1.0
    assert ks_cumsum([1, 2, 3], [2, 4, 6]) == 0.0
    with pytest.raises(EmptySample):
        ks_statistic([], [1])


# ---------------------------------------------------------------------------
# attention raster
# ---------------------------------------------------------------------------
def test_raster_cases():
    one = attention_raster([(0.5, 0.5, 1.0)])
    assert one.intensity.sum() == pytest.approx(1.0) and one.intensity.max() == pytest.approx(1.0)
    wide = attention_raster([(0.0, 0.0, 4.0)])
    assert np.isclose(wide.intensity, 0.25).sum() == 4
    tiny = attention_raster([CoverageGeom((0.25, 0.25), 0.0)])
    assert tiny.intensity.max() == pytest.approx(1.0)
    multi = attention_raster([(CoverageGeom((10.5, 10.5), 1.0), CoverageGeom((-10.5, -10.5), 1.0))])
    assert multi.intensity.sum() == pytest.approx(2.0)


def test_raster_clipped_at_pole():
    r = attention_raster([(89.9, 0.5, 1.0)])
    assert r.intensity.sum() == pytest.approx(1.0) and r.intensity[-1].sum() == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# domestic share
# ---------------------------------------------------------------------------
def test_domestic_all_domestic():
    s = domestic_share_series(np.repeat(np.arange(1800, 1820), 3), np.ones(60, bool))
    assert np.allclose(s.share, 1.0) and np.all(s.ci_hi <= 1 + 1e-12)


def test_domestic_alternating():
    yrs = np.arange(1800, 1840)
    s = domestic_share_series(yrs, yrs % 2 == 0, smooth=False)
    inner = s.share[1:-1]
    # a foreign year between two domestic ones averages to 2/3, and the reverse to 1/3
    assert np.allclose(inner[::2], 2 / 3) and np.allclose(inner[1::2], 1 / 3)
    assert s.share[0] == 0.5


def test_domestic_gap_year():
    yrs = np.array([1800, 1800, 1802, 1802])
    s = domestic_share_series(yrs, [True, False, True, True])
    assert np.isnan(s.share[1]) and s.n.tolist() == [2, 0, 2]
    with pytest.raises(EmptySample):
        domestic_share_series([], [])


# ---------------------------------------------------------------------------
# dyadic regression
# ---------------------------------------------------------------------------
def test_transforms():
    assert rank_transform([3, 1, 2]).tolist() == [1.0, 0.0, 0.5]
    assert rank_transform([5, 5]).tolist() == [0.5, 0.5]
    assert minmax_scale([2, 4, 6]).tolist() == [0.0, 0.5, 1.0] and minmax_scale([3, 3]).tolist() == [0, 0]


def dyads(rng, n_nodes=25, beta=2.0, noise=0.1):
    i, j = zip(*[(a, b) for a in range(n_nodes) for b in range(a + 1, n_nodes)])
    x = rng.normal(size=len(i))
    y = 1.0 + beta * x + noise * rng.normal(size=len(i))
    return DyadicDesign(i, j, ("x",), x, y)


@pytest.mark.filterwarnings("ignore::cartolab.errors.NegativeVarianceClamped")
def test_dyadic_recovers_slope(rng):
    res = dyadic_regression(dyads(rng), fixed_effects=False)
    assert res.beta[0] == pytest.approx(2.0, abs=0.02) and res.p[0] < 1e-6
    fe = dyadic_regression(dyads(rng))
    assert fe.beta[0] == pytest.approx(2.0, abs=0.02) and "fixed_effects" in fe.anova


def test_dyadic_backward_drops_noise(rng):
    d = dyads(rng)
    z = rng.normal(size=d.y.size)
    both = DyadicDesign(d.i, d.j, ("x", "z"), np.column_stack([d.X[:, 0], z]), d.y)
    res = dyadic_regression(both, fixed_effects=False, backward=True)
    assert res.names == ("x",) and res.dropped == ("z",)


def test_dyadic_rank_deficient(rng):
    d = dyads(rng, n_nodes=6)
    dup = DyadicDesign(d.i, d.j, ("x", "x2"), np.column_stack([d.X[:, 0], 2 * d.X[:, 0]]), d.y)
    with pytest.raises(RankDeficient):
        dyadic_regression(dup, fixed_effects=False)
    with pytest.raises(ValueError):
        DyadicDesign((0, 1), (1, 0), ("x",), [1.0, 2.0], [0.0, 1.0])
