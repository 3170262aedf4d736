"""Domain types and file-format ingestion.

Everything the analysis modules consume enters through this module: map
catalog metadata (CSV or JSONL), coverage geometries, semantic label masks,
embedding tables in the ``EMB1`` binary format and detection boxes.

Loaders are pure functions of their path.  Row-level problems in metadata are
collected in :attr:`Dataset.errors` instead of being dropped silently; pass
``strict=True`` to raise the first one instead.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    BadLabelValue,
    BadLatLon,
    BadMagic,
    BadScale,
    BadYear,
    BoxOutOfBounds,
    CartolabError,
    CountMismatch,
    DanglingReference,
    DuplicateId,
    MissingColumn,
    NegativeExtent,
    NonFiniteValue,
    NotGrayscale,
    RowError,
    ScoreOutOfRange,
)

#: Semantic classes of a mask, in label order.
CLASS_NAMES = ("background", "contours", "built", "non_built", "water", "road")
N_CLASSES = len(CLASS_NAMES)

METADATA_COLUMNS = (
    "map_id", "image_path", "mask_path", "year", "year_lo", "year_hi",
    "scale_denominator", "lat", "lon", "city", "country", "creators", "domestic",
)
COVERAGE_COLUMNS = ("map_id", "lat", "lon", "area_deg2")
DETECTION_COLUMNS = ("map_id", "x", "y", "w", "h", "score")

EMB_MAGIC = b"EMB1"


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CoverageGeom:
    """Footprint of a map: a center and an area in square degrees (0 = point)."""

    center: tuple
    area_deg2: float = 0.0

    def __post_init__(self):
        if not self.area_deg2 >= 0:
            raise ValueError("area_deg2 must be nonnegative")


@dataclass(frozen=True)
class MapRecord:
    """One catalog entry."""

    map_id: str
    image_path: str
    year: int
    mask_path: str | None = None
    year_range: tuple | None = None
    scale_denominator: float | None = None
    pub_place: tuple | None = None
    pub_city: str | None = None
    pub_country: str | None = None
    creators: tuple = ()
    coverage: tuple = ()
    domestic: bool | None = None
    group_id: str | None = None

    @property
    def strat_year(self) -> float:
        """Year used for stratification (range midpoint when only a range is known)."""
        if self.year_range is not None:
            lo, hi = self.year_range
            return 0.5 * (lo + hi)
        return float(self.year)


@dataclass(frozen=True)
class SemanticMask:
    """Per-pixel class labels in 0..5 (see :data:`CLASS_NAMES`)."""

    labels: np.ndarray

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    def class_shares(self) -> np.ndarray:
        """Fraction of pixels per class (length 6, sums to 1)."""
        counts = np.bincount(self.labels.ravel(), minlength=N_CLASSES)[:N_CLASSES]
        return counts / max(counts.sum(), 1)

    def __eq__(self, other):
        return isinstance(other, SemanticMask) and np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Id-indexed float32 vectors."""

    ids: tuple
    vectors: np.ndarray

    def __post_init__(self):
        vec = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vec.ndim != 2:
            raise ValueError("vectors must be 2-D")
        if vec.shape[0] != len(self.ids):
            raise CountMismatch(f"{len(self.ids)} ids for {vec.shape[0]} vectors")
        if len(set(self.ids)) != len(self.ids):
            raise DuplicateId("embedding ids must be unique")
        if not np.isfinite(vec).all():
            raise NonFiniteValue("embedding payload contains NaN or inf")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "vectors", vec)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self):
        return len(self.ids)

    def index(self) -> dict:
        return {k: i for i, k in enumerate(self.ids)}

    def take(self, keys) -> np.ndarray:
        idx = self.index()
        return self.vectors[[idx[k] for k in keys]]

    def __eq__(self, other):
        return (isinstance(other, EmbeddingTable) and self.ids == other.ids
                and np.array_equal(self.vectors, other.vectors))

    __hash__ = None


@dataclass(frozen=True)
class Box:
    x: float
    y: float
    w: float
    h: float
    score: float
    cluster_id: int | None = None
    class_label: str | None = None


@dataclass(frozen=True)
class DetectionSet:
    map_id: str
    boxes: tuple = ()


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of map records plus named stratifications.

    ``errors`` and ``dangling`` hold row-level problems found while loading
    or assembling; they do not take part in equality, so two datasets loaded
    from permuted rows compare equal.
    """

    records: Mapping
    errors: tuple = field(default=(), compare=False)
    dangling: tuple = field(default=(), compare=False)
    extra_strata: Mapping = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def sorted_ids(self) -> list:
        return sorted(self.records)

    @property
    def strata_defs(self) -> dict:
        """Named stratifications, each a ``map_id -> value`` mapping.

        ``year`` uses range midpoints, ``scale`` is ``log10`` of the scale
        denominator, ``creator`` the lexicographically first creator.
        Extra stratifications (e.g. ``community``) can be attached with
        :meth:`with_strata`.
        """
        out = {"year": {}, "scale": {}, "country": {}, "city": {}, "creator": {}}
        for mid, r in self.records.items():
            out["year"][mid] = r.strat_year
            if r.scale_denominator is not None:
                out["scale"][mid] = math.log10(r.scale_denominator)
            if r.pub_country:
                out["country"][mid] = r.pub_country
            if r.pub_city:
                out["city"][mid] = r.pub_city
            if r.creators:
                out["creator"][mid] = min(r.creators)
        for name, mapping in self.extra_strata.items():
            out[name] = dict(mapping)
        return out

    def with_strata(self, name, mapping) -> "Dataset":
        extra = dict(self.extra_strata)
        extra[name] = dict(mapping)
        return replace(self, extra_strata=extra)


# ---------------------------------------------------------------------------
# metadata
# ---------------------------------------------------------------------------
def _blank(v) -> bool:
    return v is None or (isinstance(v, str) and v.strip() == "")


def _parse_int_year(v, row, what):
    if isinstance(v, bool):
        raise BadYear(row, f"{what} {v!r} is not an integer year")
    if isinstance(v, (int, np.integer)):
        return int(v)
    s = str(v).strip()
    try:
        return int(s)
    except ValueError:
        raise BadYear(row, f"{what} {v!r} is not an integer year") from None


def _parse_float(v, row, err, what):
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise err(row, f"{what} {v!r} is not a number") from None
    if not math.isfinite(x):
        raise err(row, f"{what} {v!r} is not finite")
    return x


def _parse_bool(v, row):
    if _blank(v):
        return None
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "t", "yes", "y"):
        return True
    if s in ("0", "false", "f", "no", "n"):
        return False
    raise RowError(row, f"domestic flag {v!r} is not boolean")


def _record_from_row(d: dict, row: int) -> MapRecord:
    map_id = str(d.get("map_id", "")).strip()
    if not map_id:
        raise RowError(row, "empty map_id")

    year = None if _blank(d.get("year")) else _parse_int_year(d["year"], row, "year")
    lo = None if _blank(d.get("year_lo")) else _parse_int_year(d["year_lo"], row, "year_lo")
    hi = None if _blank(d.get("year_hi")) else _parse_int_year(d["year_hi"], row, "year_hi")
    if (lo is None) != (hi is None):
        raise BadYear(row, "year_lo and year_hi must be given together")
    year_range = None
    if lo is not None:
        if lo > hi:
            raise BadYear(row, f"year range {lo}..{hi} is reversed")
        year_range = (lo, hi)
        if year is None:
            year = (lo + hi) // 2
        elif not lo <= year <= hi:
            raise BadYear(row, f"year {year} outside range {lo}..{hi}")
    if year is None:
        raise BadYear(row, "no year or year range")

    scale = None
    if not _blank(d.get("scale_denominator")):
        scale = _parse_float(d["scale_denominator"], row, BadScale, "scale_denominator")
        if scale <= 0:
            raise BadScale(row, f"scale_denominator {scale} must be positive")

    place = None
    lat, lon = d.get("lat"), d.get("lon")
    if not (_blank(lat) and _blank(lon)):
        if _blank(lat) or _blank(lon):
            raise BadLatLon(row, "lat and lon must be given together")
        la = _parse_float(lat, row, BadLatLon, "lat")
        lo_ = _parse_float(lon, row, BadLatLon, "lon")
        if not (-90 <= la <= 90 and -180 <= lo_ <= 180):
            raise BadLatLon(row, f"({la}, {lo_}) out of range")
        place = (la, lo_)

    creators = d.get("creators")
    if _blank(creators):
        creators = ()
    elif isinstance(creators, (list, tuple)):
        creators = tuple(str(c).strip() for c in creators if str(c).strip())
    else:
        creators = tuple(c.strip() for c in str(creators).split(";") if c.strip())

    def opt(key):
        v = d.get(key)
        return None if _blank(v) else str(v).strip()

    return MapRecord(
        map_id=map_id,
        image_path=str(d.get("image_path") or "").strip(),
        mask_path=opt("mask_path"),
        year=year,
        year_range=year_range,
        scale_denominator=scale,
        pub_place=place,
        pub_city=opt("city"),
        pub_country=opt("country"),
        creators=creators,
        domestic=_parse_bool(d.get("domestic"), row),
        group_id=opt("group_id"),
    )


def _read_rows(path: Path):
    """Yield (row_number, dict) from a CSV or JSONL metadata file."""
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".jsonl", ".ndjson"):
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        keys = set().union(*[r.keys() for r in rows]) if rows else set()
        missing = [c for c in ("map_id", "image_path") if c not in keys]
        if missing:
            raise MissingColumn(f"missing column(s): {', '.join(missing)}")
        return list(enumerate(rows, start=1))
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in METADATA_COLUMNS if c not in header]
    if missing:
        raise MissingColumn(f"missing column(s): {', '.join(missing)}")
    return list(enumerate(reader, start=1))


def load_metadata(path, strict=False) -> Dataset:
    """Load a map catalog.

    Parameters
    ----------
    path : str or Path
        CSV with the documented header, or a ``.jsonl`` file with the same keys.
    strict : bool
        Raise the first row error instead of collecting it.

    Returns
    -------
    Dataset
        Valid records keyed by ``map_id``; rejected rows are listed in
        ``Dataset.errors``.
    """
    path = Path(path)
    records, errors = {}, []
    for row, d in _read_rows(path):
        try:
            rec = _record_from_row(d, row)
            if rec.map_id in records:
                raise RowError(row, f"duplicate map_id {rec.map_id!r}")
        except CartolabError as exc:
            if strict:
                raise
            errors.append(exc)
            continue
        records[rec.map_id] = rec
    return Dataset(records=records, errors=tuple(errors))


def load_coverage(path) -> dict:
    """Read a coverage CSV into ``map_id -> tuple of CoverageGeom``."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in COVERAGE_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise MissingColumn(f"missing column(s): {', '.join(missing)}")
    out = {}
    for row, d in enumerate(reader, start=1):
        lat = _parse_float(d["lat"], row, BadLatLon, "lat")
        lon = _parse_float(d["lon"], row, BadLatLon, "lon")
        if not (-90 <= lat <= 90 and -180 <= lon <= 180):
            raise BadLatLon(row, f"({lat}, {lon}) out of range")
        area = _parse_float(d["area_deg2"], row, NegativeExtent, "area_deg2")
        if area < 0:
            raise NegativeExtent(row, f"area {area} < 0")
        out.setdefault(d["map_id"].strip(), []).append(CoverageGeom((lat, lon), area))
    return {k: tuple(v) for k, v in out.items()}


def cap_per_group(dataset: Dataset, cap: int, seed=0) -> Dataset:
    """Keep at most ``cap`` records per ``group_id`` (seeded random choice).

    Records without a group id are never dropped.  This is the knob used to
    thin out over-represented map series.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    rng = np.random.default_rng(seed)
    groups = {}
    for mid in sorted(dataset.records):
        g = dataset.records[mid].group_id
        if g is not None:
            groups.setdefault(g, []).append(mid)
    drop = set()
    for g in sorted(groups):
        ids = groups[g]
        if len(ids) > cap:
            keep = set(rng.choice(len(ids), size=cap, replace=False).tolist())
            drop.update(m for i, m in enumerate(ids) if i not in keep)
    recs = {k: v for k, v in dataset.records.items() if k not in drop}
    return replace(dataset, records=recs)


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------
def mask_from_array(arr) -> SemanticMask:
    """Validate a 2-D integer array and wrap it as a :class:`SemanticMask`."""
    a = np.asarray(arr)
    if a.ndim != 2:
        raise NotGrayscale(f"mask must be 2-D, got shape {a.shape}")
    bad = (a < 0) | (a >= N_CLASSES)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise BadLabelValue(a[y, x], x, y)
    return SemanticMask(labels=a.astype(np.uint8))


def load_mask(path) -> SemanticMask:
    """Read an 8-bit single-channel PNG (or ``.npy``) label image."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        return mask_from_array(np.load(path))
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise NotGrayscale(f"{path.name}: mode {im.mode} is not single-channel 8-bit")
        # palette images store indices; the indices are the labels
        arr = np.asarray(im)
    return mask_from_array(arr)


def write_mask(mask: SemanticMask, path):
    from PIL import Image

    Image.fromarray(mask.labels.astype(np.uint8), mode="L").save(path)


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------
def write_embeddings(table: EmbeddingTable, path):
    """Write ``table`` in the EMB1 format (ids joined by newlines, no trailing one)."""
    vec = np.ascontiguousarray(table.vectors, dtype="<f4")
    n, dim = vec.shape
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<II", dim, n))
        fh.write(vec.tobytes(order="C"))
        fh.write("\n".join(table.ids).encode("utf-8"))


def load_embeddings(path) -> EmbeddingTable:
    """Read an EMB1 file.

    Raises
    ------
    BadMagic, CountMismatch, NonFiniteValue
    """
    raw = Path(path).read_bytes()
    if raw[:4] != EMB_MAGIC:
        raise BadMagic(f"expected {EMB_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 12:
        raise CountMismatch("truncated header")
    dim, n = struct.unpack("<II", raw[4:12])
    if dim == 0:
        raise CountMismatch("dim must be positive")
    nbytes = 4 * dim * n
    if len(raw) < 12 + nbytes:
        raise CountMismatch(f"payload has {len(raw) - 12} bytes, need {nbytes}")
    vec = np.frombuffer(raw, dtype="<f4", count=dim * n, offset=12).reshape(n, dim)
    if not np.isfinite(vec).all():
        raise NonFiniteValue("embedding payload contains NaN or inf")
    tail = raw[12 + nbytes:].decode("utf-8")
    if tail.endswith("\n"):
        tail = tail[:-1]
    ids = tail.split("\n") if n else []
    if n == 0 and tail:
        raise CountMismatch("ids present for an empty payload")
    if len(ids) != n:
        raise CountMismatch(f"{len(ids)} ids for {n} vectors")
    return EmbeddingTable(ids=tuple(ids), vectors=vec.astype(np.float32))


# ---------------------------------------------------------------------------
# detections
# ---------------------------------------------------------------------------
def load_detections(path, image_sizes: Mapping | None = None) -> dict:
    """Read a detection CSV into ``map_id -> DetectionSet``.

    Parameters
    ----------
    path : str or Path
    image_sizes : mapping, optional
        ``map_id -> (width, height)``; boxes of known maps are checked
        against the image bounds.
    """
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in DETECTION_COLUMNS if c not in header]
    if missing:
        raise MissingColumn(f"missing column(s): {', '.join(missing)}")
    image_sizes = image_sizes or {}
    out = {}
    for row, d in enumerate(reader, start=1):
        x, y, w, h, score = (_parse_float(d[k], row, RowError, k) for k in ("x", "y", "w", "h", "score"))
        if w < 0 or h < 0 or x < 0 or y < 0:
            raise NegativeExtent(row, f"box ({x}, {y}, {w}, {h}) has a negative extent")
        if not 0 <= score <= 1:
            raise ScoreOutOfRange(row, f"score {score} outside [0, 1]")
        mid = d["map_id"].strip()
        if mid in image_sizes:
            W, H = image_sizes[mid]
            if x + w > W or y + h > H:
                raise BoxOutOfBounds(row, f"box exceeds image {W}x{H}")
        cid = d.get("cluster_id")
        cls = d.get("class")
        box = Box(x, y, w, h, score,
                  cluster_id=None if _blank(cid) else int(cid),
                  class_label=None if _blank(cls) else cls.strip())
        out.setdefault(mid, []).append(box)
    return {k: DetectionSet(k, tuple(v)) for k, v in out.items()}


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------
def assemble(dataset: Dataset, coverage: Mapping | None = None,
             embeddings: EmbeddingTable | None = None,
             detections: Mapping | None = None, root=None) -> Dataset:
    """Attach coverage and check every cross reference.

    Coverage, embedding ids (``map_id`` or ``map_id:suffix``) and detection
    map ids must name an existing record; mask paths must exist on disk
    (relative to ``root`` when given).  Problems are reported in
    ``Dataset.dangling`` and the offending references are dropped, so no
    dangling reference survives assembly.
    """
    recs = dict(dataset.records)
    dangling = []
    for mid, geoms in sorted((coverage or {}).items()):
        if mid not in recs:
            dangling.append(DanglingReference(f"coverage for unknown map {mid!r}"))
            continue
        recs[mid] = replace(recs[mid], coverage=tuple(geoms))
    if embeddings is not None:
        for eid in embeddings.ids:
            if eid.split(":", 1)[0] not in recs:
                dangling.append(DanglingReference(f"embedding {eid!r} names no record"))
    for mid in sorted(detections or {}):
        if mid not in recs:
            dangling.append(DanglingReference(f"detections for unknown map {mid!r}"))
    base = Path(root) if root is not None else None
    for mid in sorted(recs):
        mp = recs[mid].mask_path
        if mp is None:
            continue
        p = Path(mp)
        if base is not None and not p.is_absolute():
            p = base / p
        if not p.exists():
            dangling.append(DanglingReference(f"mask {mp!r} of {mid!r} not found"))
            recs[mid] = replace(recs[mid], mask_path=None)
    return replace(dataset, records=recs, dangling=tuple(dataset.dangling) + tuple(dangling))


def resolve(path, root=None) -> Path:
    p = Path(path)
    if root is not None and not p.is_absolute():
        p = Path(root) / p
    return p


def write_metadata(records: Iterable[MapRecord], path):
    """Write records back to the documented CSV layout.

    A trailing ``group_id`` column is added when any record has one.
    """
    records = list(records)
    grouped = any(r.group_id is not None for r in records)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METADATA_COLUMNS + (("group_id",) if grouped else ()))
        for r in records:
            lo, hi = r.year_range if r.year_range else ("", "")
            lat, lon = r.pub_place if r.pub_place else ("", "")
            row = [
                r.map_id, r.image_path, r.mask_path or "", r.year, lo, hi,
                "" if r.scale_denominator is None else repr(r.scale_denominator),
                lat, lon, r.pub_city or "", r.pub_country or "", ";".join(r.creators),
                "" if r.domestic is None else str(r.domestic).lower(),
            ]
            w.writerow(row + ([r.group_id or ""] if grouped else []))


def load_image(path, gray=False) -> np.ndarray:
    """Read an image as uint8 RGB (or luminance when ``gray``)."""
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("L" if gray else "RGB")
        return np.asarray(im).copy()
