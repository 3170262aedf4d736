import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cartolab.errors import AllZeroWeights, NoForeground
from cartolab.image_ops import (
    LoadGrid,
    MapelParams,
    bilateral_smooth,
    class_ratio,
    cv_features,
    edge_density,
    extract_mapels,
    foreground_weighted_color,
    graphic_load,
    local_maxima,
    neutralize_rotation,
    orientation_histogram,
    principal_orientation,
    sample_mapel_positions,
    semantic_mode,
    semantic_modes,
)
from cartolab.synthetic import hatched_square, stripes


def angle_gap(a, b):
    d = abs(a - b) % 180
    return min(d, 180 - d)


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------
def test_constant_image_unchanged():
    img = np.full((40, 40, 3), 117, np.uint8)
    assert np.array_equal(bilateral_smooth(img), img)


def test_salt_pixel_matches_direct_kernel():
    field, salt, ss, sr = 100.0, 130.0, 3.0, 25.0
    img = np.full((41, 41), field, np.uint8)
    img[20, 20] = salt
    out = bilateral_smooth(img, ss, sr / 255)
    # direct evaluation over the disk of radius ceil(2 * sigma)
    rad = math.ceil(2 * ss)
    num, den = salt, 1.0
    for dy, dx in itertools.product(range(-rad, rad + 1), repeat=2):
        if (dy or dx) and dy * dy + dx * dx <= rad * rad:
            w = math.exp(-(dy * dy + dx * dx) / (2 * ss * ss)) * math.exp(-(salt - field) ** 2 / (2 * sr * sr))
            num += w * field
            den += w
    expected = num / den
    assert field < out[20, 20] < salt
    assert abs(float(out[20, 20]) - expected) <= 1.0


def test_step_edge_location_kept():
    img = np.zeros((30, 60), np.uint8)
    img[:, 30:] = 200
    out = bilateral_smooth(img).astype(float)
    g = np.abs(np.diff(out[15]))
    assert int(np.argmax(g)) == 29


# ---------------------------------------------------------------------------
# graphic load
# ---------------------------------------------------------------------------
def test_blank_image_zero_load():
    g = graphic_load(np.full((96, 96), 255, np.uint8), 32)
    assert g.values.shape == (3, 3) and not g.values.any()


def test_stripe_density_counts_boundaries():
    # Canny keeps one pixel per step edge, so w-px stripes give 1/w per
    # interior cell; w = 3 is the densest pattern the Sobel stage can see
    x = np.arange(128)
    for w, expected in ((4, 0.25), (8, 0.125)):
        img = np.tile(np.where((x // w) % 2 == 0, 0, 255).astype(np.uint8), (128, 1))
        assert np.all(graphic_load(img, 32).values[:, :3] == expected)


def test_pixel_checkerboard_invisible_to_sobel():
    # the 3x3 Sobel smoothing (1, 2, 1) cancels a pixel-pitch alternation
    y, x = np.mgrid[:128, :128]
    img = np.where((x + y) % 2 == 0, 0, 255).astype(np.uint8)
    assert graphic_load(img, 32).values.max() < 0.01


def test_half_hatched_image():
    img = np.full((128, 256), 255, np.uint8)
    img[:, 128:] = stripes((128, 128), 45, 6, amplitude=120, mean=128)
    v = graphic_load(img, 32).values
    assert np.all(v[:, :3] == 0) and np.all(v[:, 5:] > 0)


def test_partial_cells_and_coverage():
    e = np.ones((70, 50), bool)
    d = edge_density(e, 32)
    assert d.shape == (3, 2) and np.all(d == 1)
    g = LoadGrid(32, d, (70, 50))
    assert g.cell_center(2, 1) == ((32 + 49) / 2, (64 + 69) / 2)


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(16, 64), st.integers(16, 64))))
def test_load_bounds(img):
    v = graphic_load(img, 8).values
    assert v.shape == (math.ceil(img.shape[0] / 8), math.ceil(img.shape[1] / 8))
    assert np.all((v >= 0) & (v <= 1))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------
def grid_from(values, cell=32):
    v = np.asarray(values, float)
    return LoadGrid(cell, v, (v.shape[0] * cell, v.shape[1] * cell))


def test_single_bright_cell():
    v = np.zeros((5, 5))
    v[2, 3] = 0.4
    pos = sample_mapel_positions(grid_from(v))
    assert pos.tolist() == [[3 * 32 + 15.5, 2 * 32 + 15.5]]


def test_close_maxima_excluded():
    v = np.zeros((3, 10))
    v[1, 2] = v[1, 5] = 0.5  # separated by a zero cell: both are maxima, 96 px apart
    grid = LoadGrid(32, v, (96, 320))
    assert (local_maxima(v) & (v > 0)).sum() == 2
    assert len(sample_mapel_positions(grid, min_dist_px=100)) == 1


def test_many_isolated_maxima_capped():
    v = np.zeros((60, 60))
    v[::4, ::3][:15, :20] = 0.3  # 300 maxima, >= 96 px apart horizontally, 128 vertically
    v[::4, ::3][:15, :20] += np.random.default_rng(0).random((15, 20)) * 0.01
    grid = LoadGrid(40, v, (2400, 2400))
    pos = sample_mapel_positions(grid, n_max=256, min_dist_px=100, seed=3)
    assert len(pos) == 256
    rc = {(int(y // 40), int(x // 40)) for x, y in pos}
    assert all(local_maxima(v)[r, c] for r, c in rc)
    d = min(np.hypot(*(a - b)) for a, b in itertools.combinations(pos, 2))
    assert d >= 100


def test_plateau_keeps_one_cell():
    v = np.zeros((4, 4))
    v[1, 1] = v[1, 2] = 0.2
    assert local_maxima(v).sum() == 1


def test_background_everywhere():
    with pytest.raises(NoForeground):
        sample_mapel_positions(grid_from(np.ones((2, 2))), np.ones((64, 64), bool))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.floats(0, 1)),
       st.integers(0, 2 ** 31), st.floats(0, 150))
def test_sampling_min_distance_and_determinism(v, seed, md):
    g = grid_from(v, 16)
    a = sample_mapel_positions(g, n_max=50, min_dist_px=md, seed=seed)
    b = sample_mapel_positions(g, n_max=50, min_dist_px=md, seed=seed)
    assert np.array_equal(a, b) and len(a) <= 50
    for p, q in itertools.combinations(a, 2):
        assert np.hypot(*(p - q)) >= md


# ---------------------------------------------------------------------------
# orientation
# ---------------------------------------------------------------------------
def test_vertical_stripes_zero():
    assert angle_gap(principal_orientation(stripes((49, 49), 0)), 0) < 1e-6


@pytest.mark.parametrize("angle", [0, 30, 60, 120])
def test_stripes_within_half_bin(angle):
    assert angle_gap(principal_orientation(stripes((49, 49), angle, 8.0)), angle) <= 10


def test_rotated_patch():
    from scipy import ndimage

    big = stripes((121, 121), 0, 7.0)
    rot = ndimage.rotate(big.astype(float), 30, reshape=False, order=1)[36:85, 36:85]
    assert angle_gap(principal_orientation(rot), 30) <= 20


def test_constant_patch_zero_energy():
    theta, energy = principal_orientation(np.full((20, 20), 80, np.uint8), return_energy=True)
    assert theta == 0 and energy == 0


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(3, 30), st.integers(3, 30))))
def test_histogram_normalized(patch):
    h = orientation_histogram(patch)
    assert h.shape == (9,)
    assert h.sum() == 0 or abs(h.sum() - 1) < 1e-9
    assert 0 <= principal_orientation(patch) < 180


def test_neutralize_identity_at_integer_center():
    img = np.random.default_rng(0).integers(0, 255, (80, 90, 3), dtype=np.uint8)
    p = neutralize_rotation(img, (40, 35), 0.0, 49)
    assert p.dtype == np.uint8 and np.array_equal(p, img[35 - 24:35 + 25, 40 - 24:40 + 25])


def test_neutralize_quarter_turn():
    img = np.random.default_rng(1).integers(0, 255, (60, 60)).astype(float)
    p = neutralize_rotation(img, (30, 30), 90.0, 21)
    q = img[20:41, 20:41]
    assert np.allclose(p, np.rot90(q, -1)) or np.allclose(p, np.rot90(q, 1))


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------
def test_white_patch_features():
    f = cv_features(np.full((49, 49, 3), 255, np.uint8))
    assert f.graphic_load == 0 and f.n_components == 0
    assert f.color_hist[63] == 1.0


def test_black_square_stroke_width():
    p = np.full((49, 49, 3), 255, np.uint8)
    p[20:30, 20:30] = 0
    f = cv_features(p)
    assert f.n_components == 1
    assert f.line_width == pytest.approx(2 * 100 / 36)


def test_gray_lbp_flat_bin():
    f = cv_features(np.full((49, 49, 3), 128, np.uint8))
    assert f.lbp_hist[8] == 1.0


@settings(max_examples=25, deadline=None)
@given(arrays(np.uint8, (24, 24, 3)))
def test_feature_histograms_sum_to_one(p):
    f = cv_features(p)
    assert abs(f.color_hist.sum() - 1) < 1e-9 and abs(f.lbp_hist.sum() - 1) < 1e-9
    assert f.n_components >= 0 and f.line_width >= 0
    assert np.isfinite(f.to_array()).all()


def test_weighted_color_cases():
    uni = np.full((4, 4, 3), (10, 20, 30), np.uint8)
    bg, fg = foreground_weighted_color(uni, np.full((4, 4), 0.3))
    assert np.allclose(bg, (10, 20, 30)) and np.allclose(fg, (10, 20, 30))
    half = np.full((4, 4, 3), 255, np.uint8)
    half[:, :2] = 0
    y = np.zeros((4, 4))
    y[:, :2] = 1
    bg, fg = foreground_weighted_color(half, y)
    assert np.allclose(fg, 0) and np.allclose(bg, 255)
    bg, fg = foreground_weighted_color(half, np.full((4, 4), 0.25))
    assert np.allclose(bg, 127.5) and np.allclose(fg, 127.5)
    with pytest.raises(AllZeroWeights):
        foreground_weighted_color(half, np.ones((4, 4)))


def test_semantic_modes():
    assert semantic_mode(class_ratio(np.full((5, 5), 4))) == 3
    assert semantic_modes([0, 0.05, 0.95, 0, 0, 0]) == [1, 8]
    assert semantic_mode([0, 0, 0.4, 0.6, 0, 0]) == 5
    assert semantic_mode([1, 0, 0, 0, 0, 0]) is None


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------
def test_blank_page_no_mapels():
    assert extract_mapels(np.full((300, 300, 3), 250, np.uint8)) == []


def test_hatched_square_mapels_inside():
    img = hatched_square(400, (150, 250), period=6, angle=45)
    ms = extract_mapels(img, MapelParams(min_dist_px=20))
    assert ms
    for m in ms:
        x, y = m.center
        assert 150 <= x < 250 and 150 <= y < 250


def test_water_mask_ratio():
    img = hatched_square(300, (100, 200))
    ms = extract_mapels(img, MapelParams(), mask=np.full((300, 300), 4, np.uint8))
    assert ms and all(m.semantic_ratio[4] == 1.0 and m.semantic_mode == 3 for m in ms)


def test_ratios_and_sizes(rng):
    from cartolab.synthetic import synthetic_map

    rgb, lab = synthetic_map(400, n_features=15, seed=2)
    for size in (49, 70, 98):
        ms = extract_mapels(rgb, MapelParams(size=size, seed=1), mask=lab, map_id="s")
        for m in ms:
            assert m.patch.shape == (size, size, 3)
            assert abs(m.semantic_ratio.sum() - 1) < 1e-9 and (m.semantic_ratio >= 0).all()
    with pytest.raises(ValueError):
        MapelParams(size=50)
