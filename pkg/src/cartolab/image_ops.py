"""Pixel-level primitives and the mapel extraction pipeline.

A mapel is a small square fragment cut from a map at a maximum of the
graphic load (edge density).  The pipeline is::

    bilateral smoothing -> Canny edge density per cell -> blank-cell masking
    -> random draw among local maxima (min distance) -> per position:
       orientation from a 9-bin gradient histogram, inverse rotation,
       square crop, hand-crafted features, semantic composition from a mask.

Angles
------
Orientations are in degrees, modulo 180.  The value returned by
:func:`principal_orientation` is the direction of the strokes measured
counter-clockwise from the vertical image axis (equivalently, the dominant
gradient direction measured counter-clockwise from the horizontal axis).
Vertical stripes give 0; rotating the image counter-clockwise by ``a``
adds ``a``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace

import cv2
import numpy as np
from scipy import ndimage
from skimage.feature import local_binary_pattern

from .core import N_CLASSES, EmbeddingTable, MapRecord, SemanticMask, load_image, load_mask, resolve
from .errors import AllZeroWeights, CellLargerThanImage, NoForeground

__all__ = [
    "LoadGrid", "FeatureVector", "Mapel", "MapelParams", "to_gray",
    "bilateral_smooth", "edge_map", "edge_density", "graphic_load", "local_maxima",
    "sample_mapel_positions", "orientation_histogram", "principal_orientation",
    "neutralize_rotation", "cv_features", "foreground_weighted_color",
    "semantic_modes", "semantic_mode", "extract_mapels", "write_mapels", "MAPEL_SIZES",
]

MAPEL_SIZES = (49, 70, 98)
CANNY_LOW, CANNY_HIGH = 50, 150
BLANK_THRESHOLD = 0.005
HOG_BINS = 9


def to_gray(image) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim == 2:
        return img.astype(np.uint8, copy=False)
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0].astype(np.uint8, copy=False)
    return cv2.cvtColor(np.ascontiguousarray(img[:, :, :3], dtype=np.uint8), cv2.COLOR_RGB2GRAY)


def _as_rgb(image) -> np.ndarray:
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim == 2:
        return np.repeat(img[:, :, None], 3, axis=2)
    return np.ascontiguousarray(img[:, :, :3])


# ---------------------------------------------------------------------------
# smoothing and graphic load
# ---------------------------------------------------------------------------
def bilateral_smooth(image, spatial_sigma=3.0, range_sigma=25 / 255) -> np.ndarray:
    """Edge-preserving smoothing of an 8-bit image.

    ``range_sigma`` is given on the [0, 1] intensity scale.  The spatial
    kernel covers a disk of radius ``ceil(2 * spatial_sigma)``.
    """
    img = np.ascontiguousarray(image, dtype=np.uint8)
    radius = int(math.ceil(2 * spatial_sigma))
    return cv2.bilateralFilter(img, 2 * radius + 1, float(range_sigma) * 255.0, float(spatial_sigma))


def edge_map(gray, low=CANNY_LOW, high=CANNY_HIGH) -> np.ndarray:
    """Boolean Canny edge map of an 8-bit luminance image."""
    return cv2.Canny(np.ascontiguousarray(gray, dtype=np.uint8), low, high) > 0


@dataclass(frozen=True)
class LoadGrid:
    """Edge density per ``cell_px`` square cell; the last row/column may be partial."""

    cell_px: int
    values: np.ndarray
    image_shape: tuple

    def cell_center(self, row, col):
        """Center (x, y) of a cell in pixel-index coordinates.

        Pixel ``i`` has coordinate ``i``, so a cell spanning pixels
        ``x0 .. x1 - 1`` is centered at ``(x0 + x1 - 1) / 2``; partial cells
        at the image border are clipped first.
        """
        h, w = self.image_shape
        c = self.cell_px
        x0, y0 = col * c, row * c
        return ((x0 + min(x0 + c, w) - 1) / 2.0, (y0 + min(y0 + c, h) - 1) / 2.0)


def edge_density(edges, cell_px) -> np.ndarray:
    """Fraction of ``True`` pixels per cell of a boolean map."""
    e = np.asarray(edges, dtype=np.float64)
    h, w = e.shape
    rs = np.arange(0, h, cell_px)
    cs = np.arange(0, w, cell_px)
    sums = np.add.reduceat(np.add.reduceat(e, rs, axis=0), cs, axis=1)
    rh = np.minimum(rs + cell_px, h) - rs
    cw = np.minimum(cs + cell_px, w) - cs
    return sums / (rh[:, None] * cw[None, :])


def graphic_load(image, cell_px=32) -> LoadGrid:
    """Graphic map load: Canny edge-pixel density per cell.

    Parameters
    ----------
    image : array
        8-bit grayscale (RGB is converted to luminance).
    cell_px : int
        Cell side, at least 8.
    """
    if cell_px < 8:
        raise ValueError("cell_px must be >= 8")
    gray = to_gray(image)
    h, w = gray.shape
    if cell_px > h or cell_px > w:
        raise CellLargerThanImage(f"cell {cell_px}px exceeds image {w}x{h}")
    return LoadGrid(cell_px, edge_density(edge_map(gray), cell_px), (h, w))


def local_maxima(values) -> np.ndarray:
    """Boolean map of strict 8-neighbourhood maxima.

    Equal neighbours are resolved by row-major order: a cell only has to be
    strictly larger than the neighbours that precede it and at least as large
    as the ones that follow, so a plateau keeps exactly its first cell
    among any pair of adjacent equal cells.
    """
    v = np.asarray(values, dtype=np.float64)
    P = np.pad(v, 1, constant_values=-np.inf)
    h, w = v.shape
    out = np.ones_like(v, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            nb = P[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
            later = dr > 0 or (dr == 0 and dc > 0)
            out &= (v >= nb) if later else (v > nb)
    return out


def sample_mapel_positions(load_grid: LoadGrid, background_mask=None, n_max=256, min_dist_px=100,
                           buffer_px=0, seed=0, blank_threshold=BLANK_THRESHOLD) -> np.ndarray:
    """Draw mapel centers among graphic-load maxima.

    Candidates are the local maxima of the load grid that are not blank
    (load >= ``blank_threshold``) and whose center lies at least
    ``buffer_px`` from any background pixel.  Candidates are visited in a
    seeded random order and accepted when at least ``min_dist_px`` away from
    every accepted center, until ``n_max`` are accepted.

    Parameters
    ----------
    background_mask : bool array of the image shape, optional
        True where the map has no content (e.g. mask class 0).

    Returns
    -------
    (k, 2) float array of (x, y) pixel centers.

    Raises
    ------
    NoForeground
        When ``background_mask`` covers the whole image.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    vals = load_grid.values
    cand = local_maxima(vals) & (vals >= blank_threshold) & (vals > 0)
    rows, cols = np.nonzero(cand)
    centers = np.array([load_grid.cell_center(r, c) for r, c in zip(rows, cols)]).reshape(-1, 2)
    if background_mask is not None:
        bg = np.asarray(background_mask, dtype=bool)
        if bg.shape != tuple(load_grid.image_shape):
            raise ValueError("background_mask must match the image shape")
        if bg.all():
            raise NoForeground("the whole image is background")
        if bg.any() and centers.size:
            xi = np.clip(centers[:, 0].astype(int), 0, bg.shape[1] - 1)
            yi = np.clip(centers[:, 1].astype(int), 0, bg.shape[0] - 1)
            if buffer_px > 0:
                dist = ndimage.distance_transform_edt(~bg)
                ok = dist[yi, xi] >= buffer_px
            else:
                ok = ~bg[yi, xi]
            centers = centers[ok]
    if centers.shape[0] == 0:
        return np.zeros((0, 2))
    rng = np.random.default_rng(seed)
    order = rng.permutation(centers.shape[0])
    acc = np.empty((min(n_max, centers.shape[0]), 2))
    k = 0
    md2 = float(min_dist_px) ** 2
    for i in order:
        p = centers[i]
        if k and np.min(((acc[:k] - p) ** 2).sum(1)) < md2:
            continue
        acc[k] = p
        k += 1
        if k == acc.shape[0]:
            break
    return acc[:k].copy()


# ---------------------------------------------------------------------------
# orientation
# ---------------------------------------------------------------------------
def _gradients(patch):
    """Centered-difference gradients (zero on the border), angle mod 180 with y up."""
    g = np.asarray(patch, dtype=np.float64)
    if g.ndim == 3:
        g = to_gray(patch).astype(np.float64)
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    gx[:, 1:-1] = g[:, 2:] - g[:, :-2]
    gy[1:-1, :] = g[2:, :] - g[:-2, :]
    return np.hypot(gx, gy), np.degrees(np.arctan2(-gy, gx)) % 180.0


def orientation_histogram(patch, n_bins=HOG_BINS):
    """Magnitude-weighted gradient orientation histogram over the patch.

    Centered differences as in HOG.  Orientations are unsigned (mod 180)
    and measured counter-clockwise with the y axis pointing up.  Bin ``i`` is
    centered at ``i * 180 / n_bins`` and votes are split linearly between
    the two nearest bins.  The histogram sums to 1 (all zeros for a flat
    patch).
    """
    mag, ang = _gradients(patch)
    width = 180.0 / n_bins
    pos = ang / width
    lo = np.floor(pos).astype(int) % n_bins
    frac = pos - np.floor(pos)
    hist = np.bincount(lo.ravel(), weights=(mag * (1 - frac)).ravel(), minlength=n_bins)
    hist += np.bincount(((lo + 1) % n_bins).ravel(), weights=(mag * frac).ravel(), minlength=n_bins)
    tot = hist.sum()
    return hist / tot if tot > 0 else hist


def principal_orientation(patch, return_energy=False):
    """Dominant stroke orientation of a patch in degrees, in [0, 180).

    The 9-bin histogram gives the coarse structure; the angle is refined by
    mean shift on doubled angles (magnitude-weighted circular mean of the
    votes within one bin width of the current estimate).  Mean shift starts
    from every bin center and bin edge, and the fixed point holding the most
    gradient energy in its window wins.  The start set maps onto itself under
    a 90 degree turn, so the estimate commutes with 90 degree rotations of
    the patch.  Zero-gradient patches return 0 with zero energy.
    """
    mag, ang = _gradients(patch)
    energy = float(mag.sum())
    if energy <= 1e-9:
        return (0.0, 0.0) if return_energy else 0.0
    width = 180.0 / HOG_BINS
    keep = mag > 0
    mag, ang = mag[keep], ang[keep]
    s2, c2 = np.sin(np.radians(2.0 * ang)), np.cos(np.radians(2.0 * ang))

    def shift(start):
        cur = start
        for _ in range(50):
            near = np.abs((ang - cur + 90.0) % 180.0 - 90.0) <= width
            w = mag[near]
            if w.sum() <= 0:
                return cur, 0.0
            new = np.degrees(np.arctan2((w * s2[near]).sum(), (w * c2[near]).sum())) / 2.0 % 180.0
            step = abs((new - cur + 90.0) % 180.0 - 90.0)
            cur = new
            if step < 1e-9:
                break
        near = np.abs((ang - cur + 90.0) % 180.0 - 90.0) <= width
        return cur, float(mag[near].sum())

    best = (0.0, -1.0)
    for start in np.arange(2 * HOG_BINS) * width / 2.0:
        cand = shift(start)
        if cand[1] > best[1] + 1e-9 * energy:
            best = cand
    angle = best[0]
    if angle >= 180.0 - 1e-9:
        angle = 0.0
    return (float(angle), energy) if return_energy else float(angle)


def neutralize_rotation(image, center, angle_deg, size) -> np.ndarray:
    """Cut a ``size`` square around ``center`` after rotating by ``-angle_deg``.

    Rotating by the negative of the recorded orientation turns the dominant
    strokes vertical.  Bilinear interpolation at exact (sub-pixel)
    coordinates with mirrored borders, so the result commutes with 90 degree
    rotations of the source up to float rounding.  The dtype is preserved.
    """
    img = np.asarray(image)
    cx, cy = float(center[0]), float(center[1])
    a = math.radians(-float(angle_deg))
    c, s = math.cos(a), math.sin(a)
    half = (size - 1) / 2.0
    v, u = np.mgrid[:size, :size].astype(np.float64) - half
    ys, xs = cy + s * u + c * v, cx + c * u - s * v
    # work on a local window when it lies inside the image (same result)
    r = int(math.ceil(half * math.sqrt(2.0))) + 2
    y0, x0 = int(math.floor(cy)) - r, int(math.floor(cx)) - r
    y1, x1 = int(math.ceil(cy)) + r + 1, int(math.ceil(cx)) + r + 1
    if y0 >= 0 and x0 >= 0 and y1 <= img.shape[0] and x1 <= img.shape[1]:
        src = img[y0:y1, x0:x1].astype(np.float64)
        coords = [ys - y0, xs - x0]
    else:
        src = img.astype(np.float64)
        coords = [ys, xs]
    if img.ndim == 2:
        out = ndimage.map_coordinates(src, coords, order=1, mode="mirror")
    else:
        out = np.stack([ndimage.map_coordinates(src[..., ch], coords, order=1, mode="mirror")
                        for ch in range(img.shape[2])], axis=-1)
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(img.dtype)
    return out.astype(img.dtype)


def square_crop(arr, center, size) -> np.ndarray:
    """Axis-aligned ``size`` square around ``center``, clipped to the array."""
    cx, cy = int(round(center[0])), int(round(center[1]))
    lo = size // 2
    y0, x0 = max(cy - lo, 0), max(cx - lo, 0)
    y1, x1 = min(cy - lo + size, arr.shape[0]), min(cx - lo + size, arr.shape[1])
    return arr[y0:y1, x0:x1]


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class FeatureVector:
    color_hist: np.ndarray
    hls_moments: np.ndarray
    cmyk_moments: np.ndarray
    lbp_hist: np.ndarray
    n_components: int
    line_width: float
    graphic_load: float
    harris_max: float
    bg_color: np.ndarray
    fg_color: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.concatenate([
            self.color_hist, self.hls_moments, self.cmyk_moments, self.lbp_hist,
            [self.n_components, self.line_width, self.graphic_load, self.harris_max],
            self.bg_color, self.fg_color,
        ]).astype(np.float64)


def _moments(channels) -> np.ndarray:
    """Mean, standard deviation and skewness per channel (columns of a 2-D array)."""
    x = np.asarray(channels, dtype=np.float64)
    mu = x.mean(0)
    sd = x.std(0)
    with np.errstate(divide="ignore", invalid="ignore"):
        sk = np.where(sd > 1e-12, ((x - mu) ** 3).mean(0) / sd ** 3, 0.0)
    return np.stack([mu, sd, sk], axis=1).ravel()


def _binarize(gray):
    """Otsu ink mask (dark pixels); a constant patch has no ink."""
    if gray.min() == gray.max():
        return np.zeros(gray.shape, dtype=bool)
    thr, _ = cv2.threshold(gray, 0, 255, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
    return gray <= thr


def _perimeter(ink):
    """Ink pixels with at least one 4-neighbour outside the ink (patch border counts as outside)."""
    p = np.pad(ink, 1, constant_values=False)
    interior = p[1:-1, 1:-1] & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return int(np.count_nonzero(ink & ~interior))


def foreground_weighted_color(patch, weight_map):
    """Background and foreground mean colors under a soft foreground map.

    Foreground weights are ``y``; background weights are ``1 - sqrt(y)``.

    Returns
    -------
    bg_rgb, fg_rgb : float arrays of length 3
    """
    rgb = _as_rgb(patch).astype(np.float64).reshape(-1, 3)
    y = np.asarray(weight_map, dtype=np.float64).reshape(-1)
    if y.size != rgb.shape[0]:
        raise ValueError("weight_map must match the patch shape")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("weight_map values must lie in [0, 1]")
    wf = y
    wb = 1.0 - np.sqrt(y)
    if wf.sum() <= 0 or wb.sum() <= 0:
        raise AllZeroWeights("foreground or background weights sum to zero")
    return (wb @ rgb) / wb.sum(), (wf @ rgb) / wf.sum()


def cv_features(patch) -> FeatureVector:
    """Hand-crafted descriptors of an RGB patch.

    - 64-bin joint RGB histogram (4 levels per channel)
    - mean / std / skewness of the H, L, S channels (scaled to [0, 1]) and of C, M, Y, K
    - 10-bin uniform LBP histogram (8 neighbours, radius 1)
    - connected ink components and mean stroke width ``2 * area / perimeter``
      on the Otsu-binarized luminance
    - Canny edge density, maximum Harris response
    - background / foreground colors weighted by the binarized ink map
    """
    rgb = _as_rgb(patch)
    gray = to_gray(rgb)
    n = gray.size

    q = (rgb // 64).reshape(-1, 3).astype(np.int64)
    color_hist = np.bincount(q[:, 0] * 16 + q[:, 1] * 4 + q[:, 2], minlength=64) / n

    hls = cv2.cvtColor(rgb, cv2.COLOR_RGB2HLS).reshape(-1, 3).astype(np.float64)
    hls /= np.array([180.0, 255.0, 255.0])
    f = rgb.reshape(-1, 3).astype(np.float64) / 255.0
    k = 1.0 - f.max(1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmy = np.where((1 - k)[:, None] > 1e-12, (1 - f - k[:, None]) / (1 - k)[:, None], 0.0)
    cmyk = np.column_stack([cmy, k])

    # replicate the border so edge pixels see real neighbours, not zeros
    lbp = local_binary_pattern(np.pad(gray, 1, mode="edge"), 8, 1, method="uniform")[1:-1, 1:-1]
    lbp = lbp.astype(np.int64)
    lbp_hist = np.bincount(lbp.ravel(), minlength=10)[:10] / n

    ink = _binarize(gray)
    n_comp = int(cv2.connectedComponents(ink.astype(np.uint8), connectivity=8)[0] - 1) if ink.any() else 0
    per = _perimeter(ink)
    line_width = 2.0 * np.count_nonzero(ink) / per if per else 0.0

    load = float(edge_map(gray).mean())
    harris = cv2.cornerHarris(gray.astype(np.float32) / 255.0, 2, 3, 0.04)
    try:
        bg, fg = foreground_weighted_color(rgb, ink.astype(np.float64))
    except AllZeroWeights:
        bg = fg = rgb.reshape(-1, 3).mean(0)
    return FeatureVector(
        color_hist=color_hist, hls_moments=_moments(hls), cmyk_moments=_moments(cmyk),
        lbp_hist=lbp_hist, n_components=n_comp, line_width=float(line_width),
        graphic_load=load, harris_max=float(max(harris.max(), 0.0)),
        bg_color=np.asarray(bg, float), fg_color=np.asarray(fg, float),
    )


# ---------------------------------------------------------------------------
# semantic composition
# ---------------------------------------------------------------------------
#: Modes 1-7 as (class indices, threshold); mode 8 is contours > 4 %.
_MODE_RULES = (
    ((2,), 0.90), ((3,), 0.90), ((4,), 0.90), ((5,), 0.90),
    ((2, 3), 0.30), ((4, 3), 0.30), ((5, 3), 0.30),
)
CONTOUR_THRESHOLD = 0.04


def semantic_modes(ratio) -> list:
    """All compositional modes (1..8) matched by a 6-class ratio vector."""
    r = np.asarray(ratio, dtype=float)
    out = [i + 1 for i, (cls, thr) in enumerate(_MODE_RULES) if all(r[c] > thr for c in cls)]
    if r[1] > CONTOUR_THRESHOLD:
        out.append(8)
    return out


def semantic_mode(ratio):
    """Primary mode: the lowest matching mode among 1..7, else 8, else None."""
    m = semantic_modes(ratio)
    return m[0] if m else None


def class_ratio(labels) -> np.ndarray:
    lab = np.asarray(labels).ravel()
    if lab.size == 0:
        return np.r_[1.0, np.zeros(N_CLASSES - 1)]
    return np.bincount(lab, minlength=N_CLASSES)[:N_CLASSES] / lab.size


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MapelParams:
    size: int = 49
    cell_px: int = 32
    spatial_sigma: float = 3.0
    range_sigma: float = 25 / 255
    n_max: int = 256
    min_dist_px: float = 100.0
    buffer_px: float = 0.0
    blank_threshold: float = BLANK_THRESHOLD
    seed: int = 0

    def __post_init__(self):
        if self.size not in MAPEL_SIZES:
            raise ValueError(f"size must be one of {MAPEL_SIZES}")

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Mapel:
    map_id: str
    idx: int
    center: tuple
    size: int
    orientation: float
    features: FeatureVector
    patch: np.ndarray = field(repr=False, compare=False)
    semantic_ratio: np.ndarray | None = None
    semantic_mode: int | None = None
    embedding_id: str | None = None
    cluster_id: int | None = None

    @property
    def key(self):
        return f"{self.map_id}:{self.idx}"


def _map_seed(seed, map_id):
    # stable per-map seed independent of processing order
    h = 0
    for ch in map_id.encode("utf-8"):
        h = (h * 131 + ch) % (2 ** 31)
    return np.random.SeedSequence([int(seed), h])


def extract_mapels(source, params: MapelParams | None = None, mask=None, map_id=None, root=None) -> list:
    """Run the extraction pipeline on one map.

    Parameters
    ----------
    source : MapRecord or array
        A record (image and optional mask are read from its paths, relative
        to ``root``) or an RGB / grayscale uint8 image.
    params : MapelParams
    mask : SemanticMask or array, optional
        Overrides the record's mask.  Class 0 is the background.

    Returns
    -------
    list of Mapel, ordered by sampling order.
    """
    params = params or MapelParams()
    if isinstance(source, MapRecord):
        map_id = source.map_id if map_id is None else map_id
        image = load_image(resolve(source.image_path, root))
        if mask is None and source.mask_path:
            mask = load_mask(resolve(source.mask_path, root))
    else:
        image = np.asarray(source)
    map_id = map_id or ""
    labels = None
    if mask is not None:
        labels = mask.labels if isinstance(mask, SemanticMask) else np.asarray(mask)
        if labels.shape != image.shape[:2]:
            raise ValueError("mask and image dimensions differ")

    smooth = bilateral_smooth(image, params.spatial_sigma, params.range_sigma)
    gray = to_gray(smooth)
    grid = graphic_load(gray, params.cell_px)
    bg = None if labels is None else labels == 0
    seed = int(_map_seed(params.seed, map_id).generate_state(1)[0])
    pos = sample_mapel_positions(grid, bg, params.n_max, params.min_dist_px, params.buffer_px,
                                 seed, params.blank_threshold)
    rgb = _as_rgb(smooth)
    out = []
    for i, (x, y) in enumerate(pos):
        # orientation from a bilinear patch centered exactly on the position
        theta = principal_orientation(neutralize_rotation(gray, (x, y), 0.0, params.size))
        patch = neutralize_rotation(rgb, (x, y), theta, params.size)
        ratio = mode = None
        if labels is not None:
            ratio = class_ratio(square_crop(labels, (x, y), params.size))
            mode = semantic_mode(ratio)
        out.append(Mapel(map_id, i, (float(x), float(y)), params.size, float(theta), cv_features(patch),
                         patch, ratio, mode, embedding_id=f"{map_id}:{i}"))
    return out


SIDECAR_COLUMNS = ("map_id", "idx", "x", "y", "size", "orientation_deg", "semantic_mode",
                   "ratio_bg", "ratio_contours", "ratio_built", "ratio_nonbuilt", "ratio_water", "ratio_road")


def write_mapels(mapels, csv_path, emb_path=None):
    """Write the per-map sidecar CSV and, optionally, the feature matrix as EMB1."""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIDECAR_COLUMNS)
        for m in mapels:
            r = m.semantic_ratio if m.semantic_ratio is not None else [""] * N_CLASSES
            w.writerow([m.map_id, m.idx, f"{m.center[0]:.1f}", f"{m.center[1]:.1f}", m.size,
                        f"{m.orientation:.4f}", "" if m.semantic_mode is None else m.semantic_mode,
                        *[x if x == "" else f"{x:.6f}" for x in r]])
    if emb_path is not None:
        from .core import write_embeddings

        vec = np.array([m.features.to_array() for m in mapels], dtype=np.float32).reshape(len(mapels), -1)
        if not len(mapels):
            vec = np.zeros((0, len(cv_features(np.full((8, 8, 3), 255, np.uint8)).to_array())), np.float32)
        write_embeddings(EmbeddingTable(tuple(m.key for m in mapels), vec), emb_path)


def read_mapel_sidecar(path) -> list:
    """Read a sidecar CSV back as a list of dicts with typed values."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for d in csv.DictReader(fh):
            ratio = [d[c] for c in SIDECAR_COLUMNS[7:]]
            out.append({
                "map_id": d["map_id"], "idx": int(d["idx"]), "x": float(d["x"]), "y": float(d["y"]),
                "size": int(d["size"]), "orientation_deg": float(d["orientation_deg"]),
                "semantic_mode": int(d["semantic_mode"]) if d["semantic_mode"] else None,
                "ratio": None if ratio[0] == "" else np.array([float(v) for v in ratio]),
            })
    return out


def with_cluster(mapel: Mapel, cluster_id) -> Mapel:
    return replace(mapel, cluster_id=cluster_id)
