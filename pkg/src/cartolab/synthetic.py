"""Synthetic inputs: striped patches, hatched maps with masks, small corpora.

Used by the tests, the demos and the end-to-end determinism check.  Every
generator takes a seed and is deterministic.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .core import METADATA_COLUMNS, EmbeddingTable, write_embeddings


def stripes(shape, angle_deg, period=8.0, amplitude=100.0, mean=128.0, phase=0.0) -> np.ndarray:
    """Sinusoidal stripes whose stroke orientation is ``angle_deg``.

    The intensity gradient points along ``(cos a, sin a)`` with y up, so the
    strokes run at ``a`` from the vertical axis (the convention of
    :func:`cartolab.image_ops.principal_orientation`).
    """
    h, w = shape
    y, x = np.mgrid[:h, :w].astype(np.float64)
    a = np.radians(angle_deg)
    u = (x - w / 2) * np.cos(a) + (-(y - h / 2)) * np.sin(a)
    img = mean + amplitude * np.sin(2 * np.pi * u / period + phase)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def hatched_square(size=400, square=(150, 250), period=6, angle=45.0):
    """White page with one hatched square ``[lo, hi)^2``; returns uint8 RGB."""
    img = np.full((size, size), 245, np.uint8)
    lo, hi = square
    st = stripes((hi - lo, hi - lo), angle, period, amplitude=110, mean=120)
    img[lo:hi, lo:hi] = st
    return np.repeat(img[:, :, None], 3, axis=2)


def synthetic_map(size=2000, n_features=60, seed=0):
    """A page with hatched areas, water bodies and road lines, plus its mask.

    Returns
    -------
    rgb : (size, size, 3) uint8
    labels : (size, size) uint8 in 0..5
    """
    rng = np.random.default_rng(seed)
    h = w = size
    img = np.full((h, w, 3), 240, np.float64)
    img += rng.normal(0, 2.0, (h, w, 1))
    labels = np.full((h, w), 3, np.uint8)  # non-built by default
    m = max(size // 20, 2)
    labels[:m] = labels[-m:] = 0
    labels[:, :m] = labels[:, -m:] = 0
    img[labels == 0] = 252
    for _ in range(n_features):
        kind = rng.integers(3)
        cx, cy = rng.uniform(m, w - m), rng.uniform(m, h - m)
        r = rng.uniform(size / 60, size / 15)
        ext = 3 * r + 6
        y0, y1 = int(max(cy - ext, 0)), int(min(cy + ext, h))
        x0, x1 = int(max(cx - ext, 0)), int(min(cx + ext, w))
        y, x = np.mgrid[y0:y1, x0:x1]
        win = img[y0:y1, x0:x1]
        lab = labels[y0:y1, x0:x1]
        if kind == 0:  # built block, hatched
            sel = (np.abs(x - cx) < r) & (np.abs(y - cy) < r * rng.uniform(0.5, 1.5))
            ang = np.radians(rng.uniform(0, 180))
            u = x * np.cos(ang) - y * np.sin(ang)
            ink = (np.mod(u, rng.uniform(5, 10)) < 2.0) & sel
            win[sel] = [225, 190, 180]
            win[ink] = [60, 40, 40]
            lab[sel] = 2
        elif kind == 1:  # water, blue with ripple lines
            sel = (x - cx) ** 2 + (y - cy) ** 2 < r ** 2
            win[sel] = [150, 190, 230]
            ripple = sel & (np.mod(y + 3 * np.sin(x / 7.0), 9) < 1.2)
            win[ripple] = [60, 90, 160]
            lab[sel] = 4
        else:  # road segment
            ang = rng.uniform(0, np.pi)
            d = np.abs((x - cx) * np.sin(ang) - (y - cy) * np.cos(ang))
            along = np.abs((x - cx) * np.cos(ang) + (y - cy) * np.sin(ang))
            sel = (d < rng.uniform(2, 5)) & (along < 3 * r)
            win[sel] = [30, 30, 30]
            lab[sel] = 5
    y, x = np.ogrid[:h, :w]
    img[labels == 0] = 252
    labels[(labels != 0) & (np.mod(x + y, 97) == 0)] = 1  # a few contour pixels
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), labels


def make_corpus(root, n_maps=20, size=320, seed=0, year_span=(1700, 1900)):
    """Write a small synthetic corpus under ``root``.

    Creates ``images/``, ``masks/``, ``metadata.csv``, ``coverage.csv`` and
    ``names.emb`` (name vectors for creator normalization).  Returns the path
    of the metadata file.
    """
    from PIL import Image

    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    cities = [("Paris", "FRA", 48.85, 2.35), ("London", "GBR", 51.5, -0.12),
              ("Amsterdam", "NLD", 52.37, 4.9), ("Vienna", "AUT", 48.2, 16.37)]
    creators = [f"c{i}" for i in range(8)]
    rows, cov = [], []
    years = np.sort(rng.integers(year_span[0], year_span[1] + 1, n_maps))
    for i in range(n_maps):
        mid = f"m{i:03d}"
        rgb, lab = synthetic_map(size, n_features=12, seed=seed * 1000 + i)
        Image.fromarray(rgb).save(root / "images" / f"{mid}.png")
        Image.fromarray(lab, mode="L").save(root / "masks" / f"{mid}.png")
        city, country, lat, lon = cities[i % len(cities)]
        who = sorted(set(rng.choice(creators, size=rng.integers(1, 4), replace=False).tolist()))
        scale = float(10 ** rng.uniform(3, 6))
        rows.append([mid, f"images/{mid}.png", f"masks/{mid}.png", int(years[i]), "", "",
                     f"{scale:.1f}", lat, lon, city, country, ";".join(who),
                     "true" if rng.random() < 0.6 else "false"])
        cov.append([mid, round(float(rng.uniform(-60, 60)), 3), round(float(rng.uniform(-170, 170)), 3),
                    round(float(rng.choice([0.0, 0.25, 4.0, 30.0])), 3)])
    with open(root / "metadata.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METADATA_COLUMNS)
        w.writerows(rows)
    with open(root / "coverage.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["map_id", "lat", "lon", "area_deg2"])
        w.writerows(cov)
    vec = rng.normal(size=(len(creators), 16)).astype(np.float32)
    write_embeddings(EmbeddingTable(tuple(creators), vec), root / "names.emb")
    return root / "metadata.csv"


def planted_partition(n=100, p_in=0.5, p_out=0.02, seed=0):
    """Two equal communities; returns (adjacency, true labels)."""
    rng = np.random.default_rng(seed)
    g = np.repeat([0, 1], [n // 2, n - n // 2])
    P = np.where(g[:, None] == g[None, :], p_in, p_out)
    U = np.triu(rng.random((n, n)) < P, 1)
    return (U | U.T).astype(float), g
