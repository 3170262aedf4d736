"""Batch front-end.

``cartolab <subcommand> --config run.toml`` runs one analysis and writes its
outputs under ``<out>/<subcommand>/`` next to a ``provenance.json`` that
records the resolved parameters, library versions and SHA-256 digests of
every input and output.  Missing upstream outputs are produced on the fly
(``rupture`` runs ``cluster``, which runs ``mapels``, ...).  Nothing
time-dependent is written, so equal inputs and seed give byte-identical
files.

Exit codes: 0 success, 2 success with skipped records, 1 fatal error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BadValue, CartolabError, GridTooSmall, NoForeground, UnknownKey

log = logging.getLogger("cartolab")

SUBCOMMANDS = ("ingest", "mapels", "cluster", "rupture", "complexes", "univocity", "composition",
               "network", "diffusion", "chrono", "mosaic", "report")
STRATA = ("year", "scale", "country", "city", "creator")

DEFAULTS = {
    "data": {"metadata": "", "coverage": "", "names": "", "root": "", "group_cap": 0},
    "out": "cartolab_out",
    "seed": 0,
    "threads": 1,
    "strata": "year",
    "modes": True,
    "mapels": {"size": 49, "cell_px": 32, "spatial_sigma": 3.0, "range_sigma": 25 / 255, "n_max": 256,
               "min_dist_px": 100.0, "buffer_px": 0.0, "blank_threshold": 0.005},
    "cluster": {"k": 64, "batch_size": 131072, "max_iter": 100, "tol": 1e-4, "patience": 5},
    "rupture": {"window_steps": 200, "stratum_frac": 0.05, "overlap_frac": 0.5, "bootstrap_n": 1000,
                "n_strata": 6},
    "complexes": {"alpha": 0.01, "use_bh": False, "min_instances": 3},
    "univocity": {"bootstrap_reps": 120, "sample_size": 200},
    "composition": {"threshold": 0.01, "eps": 1e-6, "n_types": 8, "method": "spectral", "knn": 7},
    "network": {"threshold": 0.17, "knn": 3, "bin_widths": [10, 20, 30, 40, 50, 60, 70, 80, 90, 100]},
    "diffusion": {"group": "city", "min_records": 125, "n_strata": 6},
    "chrono": {"sigma": 2.5, "radius": 5, "window": 3, "cell_deg": 1.0, "min_cell_deg": 0.5,
               "max_offset": 10},
    "mosaic": {"rows": 8, "cols": 8},
}

_POSITIVE = {
    "threads", "mapels.cell_px", "mapels.spatial_sigma", "mapels.range_sigma", "mapels.n_max",
    "cluster.k", "cluster.batch_size", "cluster.max_iter", "cluster.tol", "cluster.patience",
    "rupture.window_steps", "rupture.stratum_frac", "rupture.n_strata", "complexes.alpha",
    "complexes.min_instances", "univocity.sample_size", "composition.eps", "composition.knn",
    "network.threshold", "network.knn", "diffusion.n_strata", "chrono.sigma", "chrono.radius",
    "chrono.window", "chrono.cell_deg", "chrono.min_cell_deg", "mosaic.rows", "mosaic.cols",
}
_NONNEG = {"seed", "data.group_cap", "mapels.min_dist_px", "mapels.buffer_px", "mapels.blank_threshold",
           "rupture.bootstrap_n", "rupture.overlap_frac", "univocity.bootstrap_reps",
           "composition.threshold", "diffusion.min_records", "chrono.max_offset"}
_CHOICES = {"strata": STRATA, "mapels.size": (49, 70, 98), "composition.method": ("spectral", "kmeans"),
            "diffusion.group": ("city", "country", "creator")}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration: every key present, paths absolute."""

    values: dict
    base_dir: Path

    def __getitem__(self, key):
        return self.values[key]

    def path(self, key) -> Path | None:
        v = self.values["data"][key]
        if not v:
            return None
        return _abs(v, self.base_dir)

    @property
    def root(self) -> Path:
        """Base for paths inside the catalog: ``data.root`` or the metadata directory."""
        r = self.values["data"]["root"]
        if r:
            return _abs(r, self.base_dir)
        meta = self.path("metadata")
        return meta.parent if meta is not None else self.base_dir

    @property
    def params(self) -> dict:
        """Values that affect results (the output location does not)."""
        return {k: v for k, v in self.values.items() if k != "out"}

    @property
    def out(self) -> Path:
        return _abs(self.values["out"], self.base_dir)


def _abs(p, base):
    p = Path(p)
    return p if p.is_absolute() else Path(base) / p


def _check(path, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise BadValue(f"{path}: expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise BadValue(f"{path}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise BadValue(f"{path}: expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise BadValue(f"{path}: expected a string, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list) or not value or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 for v in value):
            raise BadValue(f"{path}: expected a non-empty list of positive numbers")
    if path in _POSITIVE and not value > 0:
        raise BadValue(f"{path}: must be positive, got {value!r}")
    if path in _NONNEG and not value >= 0:
        raise BadValue(f"{path}: must be nonnegative, got {value!r}")
    if path in _CHOICES and value not in _CHOICES[path]:
        raise BadValue(f"{path}: must be one of {_CHOICES[path]}, got {value!r}")
    return value


def _merge(defaults, given, prefix=""):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise UnknownKey(path)
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise BadValue(f"{path}: expected a table")
            out[key] = _merge(defaults[key], value, path + ".")
        else:
            out[key] = _check(path, value, defaults[key])
    return out


def _read_config(path):
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        return json.loads(text.decode("utf-8"))
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    return tomllib.loads(text.decode("utf-8"))


def validate_config(path=None, overrides=None) -> RunConfig:
    """Load a TOML or JSON config, fill defaults and validate every key.

    ``overrides`` (a nested dict, e.g. from command-line flags) is applied on
    top of the file.  Unknown keys raise UnknownKey, wrong types or
    out-of-range values raise BadValue.
    """
    given = _read_config(path) if path else {}
    values = _merge(DEFAULTS, given)
    if overrides:
        values = _merge(values, overrides)
    if values["rupture"]["overlap_frac"] >= 1:
        raise BadValue("rupture.overlap_frac: must be below 1")
    base = Path(path).resolve().parent if path else Path.cwd()
    return RunConfig(values, base)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------
def _sha(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _clean(x):
    """Make a value JSON-safe: numpy scalars to Python, NaN/inf to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, Path):
        return str(x)
    return x


def _dump(obj) -> str:
    return json.dumps(_clean(obj), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _versions():
    import cv2
    import scipy
    import skimage
    import PIL

    return {"cartolab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "opencv": cv2.__version__, "scikit-image": skimage.__version__, "pillow": PIL.__version__}


class _Step:
    """Collects inputs, outputs and skipped items of one subcommand."""

    def __init__(self, name, cfg: RunConfig):
        self.name = name
        self.cfg = cfg
        self.dir = cfg.out / name
        self.dir.mkdir(parents=True, exist_ok=True)
        self.inputs = {}
        self.outputs = []
        self.skipped = []
        self.notes = {}

    def rel(self, p):
        p = Path(p)
        for base in (self.cfg.out, self.cfg.root):
            try:
                return p.resolve().relative_to(base.resolve()).as_posix()
            except ValueError:
                continue
        return p.name

    def use(self, *paths):
        for p in paths:
            if p is not None and Path(p).is_file():
                self.inputs[self.rel(p)] = _sha(p)

    @property
    def digest(self) -> str:
        blob = json.dumps(_clean({"step": self.name, "params": self.cfg.params, "inputs": self.inputs,
                                  "versions": _versions()}), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def path(self, name) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(p)
        return p

    def json(self, name, obj):
        body = dict(obj)
        body["provenance"] = self.digest
        self.path(name).write_text(_dump(body), encoding="utf-8")

    def csv(self, name, header, rows):
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])

    def png(self, name, array):
        from PIL import Image
        from PIL.PngImagePlugin import PngInfo

        info = PngInfo()
        info.add_text("provenance", self.digest)
        Image.fromarray(np.ascontiguousarray(array)).save(self.path(name), pnginfo=info)

    def finish(self):
        outs = {self.rel(p): _sha(p) for p in sorted(set(self.outputs)) if p.is_file()}
        prov = {"step": self.name, "digest": self.digest, "params": self.cfg.params,
                "versions": _versions(), "inputs": self.inputs, "outputs": outs}
        (self.dir / "provenance.json").write_text(_dump(prov), encoding="utf-8")
        return {"subcommand": self.name, "outputs": sorted(outs), "skipped": self.skipped,
                "notes": self.notes}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if not math.isfinite(v) else repr(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return "" if v is None else v


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# shared loading
# ---------------------------------------------------------------------------
def _dataset(cfg: RunConfig):
    from .core import assemble, cap_per_group, load_coverage, load_metadata

    meta = cfg.path("metadata")
    if meta is None:
        raise BadValue("data.metadata: a metadata file is required")
    ds = load_metadata(meta)
    cov_path = cfg.path("coverage")
    cov = load_coverage(cov_path) if cov_path else None
    ds = assemble(ds, coverage=cov, root=cfg.root)
    cap = cfg.values["data"]["group_cap"]
    return cap_per_group(ds, cap, seed=cfg.values["seed"]) if cap else ds


def _need(cfg, step, files):
    """Run ``step`` first when any of its outputs is missing."""
    if not all((cfg.out / step / f).is_file() for f in files):
        log.info("running %s first", step)
        _RUNNERS[step](cfg)


def _items(cfg):
    """Per-mapel table joined with cluster ids: dict of numpy arrays."""
    _need(cfg, "cluster", ["assignments.csv"])
    rows = _read_csv(cfg.out / "cluster" / "assignments.csv")
    side = {}
    for p in sorted((cfg.out / "mapels" / "sidecars").glob("*.csv")):
        for d in _read_csv(p):
            side[f"{d['map_id']}:{d['idx']}"] = d
    mode = [int(side[r["key"]]["semantic_mode"]) if side[r["key"]]["semantic_mode"] else 0 for r in rows]
    return {
        "key": np.array([r["key"] for r in rows]),
        "map_id": np.array([r["map_id"] for r in rows]),
        "cluster": np.array([int(r["cluster"]) for r in rows], dtype=np.int64),
        "mode": np.array(mode, dtype=np.int64),
    }


def _k(cfg):
    return int(json.loads((cfg.out / "cluster" / "summary.json").read_text())["k"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_ingest(cfg):
    from .core import write_metadata

    st = _Step("ingest", cfg)
    st.use(cfg.path("metadata"), cfg.path("coverage"))
    ds = _dataset(cfg)
    write_metadata([ds.records[k] for k in ds.sorted_ids()], st.path("records.csv"))
    st.csv("coverage.csv", ["map_id", "lat", "lon", "area_deg2"],
           [(k, g.center[0], g.center[1], g.area_deg2) for k in ds.sorted_ids()
            for g in ds.records[k].coverage])
    issues = [str(e) for e in ds.errors] + [str(e) for e in ds.dangling]
    st.skipped += issues
    st.json("summary.json", {"records": len(ds), "row_errors": [str(e) for e in ds.errors],
                             "dangling": [str(e) for e in ds.dangling]})
    return st.finish()


def cmd_mapels(cfg):
    from .image_ops import MapelParams, extract_mapels, write_mapels
    from .core import EmbeddingTable, resolve, write_embeddings

    st = _Step("mapels", cfg)
    st.use(cfg.path("metadata"))
    ds = _dataset(cfg)
    params = MapelParams(seed=cfg["seed"], **cfg["mapels"])
    keys, vecs, counts = [], [], {}
    for mid in ds.sorted_ids():
        rec = ds.records[mid]
        st.use(resolve(rec.image_path, cfg.root))
        if rec.mask_path:
            st.use(resolve(rec.mask_path, cfg.root))
        try:
            mapels = extract_mapels(rec, params, root=cfg.root)
        except (NoForeground, OSError, ValueError) as exc:
            st.skipped.append(f"{mid}: {exc}")
            mapels = []
        write_mapels(mapels, st.path(f"sidecars/{mid}.csv"))
        counts[mid] = len(mapels)
        for m in mapels:
            keys.append(m.key)
            vecs.append(m.features.to_array())
    if not vecs:
        raise NoForeground("no map yielded a mapel")
    table = EmbeddingTable(tuple(keys), np.array(vecs, dtype=np.float32))
    write_embeddings(table, st.path("features.emb"))
    st.json("summary.json", {"maps": len(counts), "mapels": len(keys), "per_map": counts,
                             "params": params.as_dict()})
    return st.finish()


def cmd_cluster(cfg):
    from .clustering import minibatch_kmeans, select_exemplars, ward_tree
    from .core import load_embeddings

    _need(cfg, "mapels", ["features.emb"])
    st = _Step("cluster", cfg)
    emb = cfg.out / "mapels" / "features.emb"
    st.use(emb)
    table = load_embeddings(emb)
    X = table.vectors.astype(np.float64)
    if X.shape[0] < 2:
        raise CartolabError("fewer than two mapels to cluster")
    # features mix scales (histograms, pixel counts): standardize per dimension
    sd = X.std(0)
    Z = (X - X.mean(0)) / np.where(sd > 0, sd, 1.0)
    k = min(cfg["cluster"]["k"], X.shape[0] - 1)
    if k < cfg["cluster"]["k"]:
        st.notes["k_reduced"] = f"k lowered from {cfg['cluster']['k']} to {k} (only {X.shape[0]} mapels)"
    c = cfg["cluster"]
    res = minibatch_kmeans(Z, k, batch_size=c["batch_size"], seed=cfg["seed"], max_iter=c["max_iter"],
                           tol=c["tol"], patience=c["patience"])
    ex, empty = select_exemplars(Z, res.assignments, res.centers)
    st.skipped += [str(e) for e in empty]
    ids = list(table.ids)
    st.csv("assignments.csv", ["key", "map_id", "cluster"],
           [(kk, kk.split(":", 1)[0], int(a)) for kk, a in zip(ids, res.assignments)])
    st.csv("centers.csv", ["cluster"] + [f"f{i}" for i in range(Z.shape[1])],
           [[j] + [float(v) for v in row] for j, row in enumerate(res.centers)])
    st.csv("exemplars.csv", ["cluster", "key", "size"],
           [(j, ids[e] if e >= 0 else "", int(s)) for j, (e, s) in enumerate(zip(ex, res.sizes))])
    dend = ward_tree(res.centers) if k >= 2 else None
    st.json("dendrogram.json", {"merges": dend.to_json() if dend else [], "n_leaves": k})
    st.json("summary.json", {"k": k, "n": int(X.shape[0]), "n_iter": res.n_iter, "converged": res.converged,
                             "inertia_trace": [float(v) for v in res.inertia_trace]})
    return st.finish()


def _strat_values(cfg, ds, map_ids):
    defs = ds.strata_defs[cfg["strata"]]
    return [defs.get(m) for m in map_ids]


def cmd_rupture(cfg):
    from .semiotics import (build_strata_table, characteristicity, equal_count_edges,
                            geographic_rupture_matrix, rupture_curve)

    it = _items(cfg)
    st = _Step("rupture", cfg)
    st.use(cfg.path("metadata"), cfg.out / "cluster" / "assignments.csv")
    ds = _dataset(cfg)
    k = _k(cfg)
    vals = _strat_values(cfg, ds, it["map_id"])
    keep = np.array([v is not None for v in vals])
    if not keep.all():
        st.skipped.append(f"{int((~keep).sum())} mapel(s) without a {cfg['strata']} value")
    cl = it["cluster"][keep]
    modes = it["mode"][keep] if cfg["modes"] else None
    v = [x for x in vals if x is not None]
    r = cfg["rupture"]
    out = {"strata": cfg["strata"], "semantic": bool(cfg["modes"])}
    if cfg["strata"] in ("year", "scale"):
        v = np.array(v, dtype=float)
        curve = rupture_curve(cl, v, k, modes, window_steps=r["window_steps"], stratum_frac=r["stratum_frac"],
                              overlap_frac=r["overlap_frac"], bootstrap_n=r["bootstrap_n"], seed=cfg["seed"])
        out["curve"] = curve.to_records()
        out["peak"] = dict(zip(("position", "rho"), curve.peak())) if np.isfinite(curve.rho).any() else None
        out["insufficient_steps"] = list(curve.insufficient)
        edges = np.unique(equal_count_edges(v, r["n_strata"]))
        table = build_strata_table(cl, v, edges, k)
    else:
        counts = {}
        for mid in ds.sorted_ids():
            g = ds.strata_defs[cfg["strata"]].get(mid)
            if g is not None:
                counts[g] = counts.get(g, 0) + 1
        labels, G = geographic_rupture_matrix(cl, np.array(v), counts, k, modes, min_records=1)
        st.csv("gamma.csv", [cfg["strata"]] + list(labels), [[lab] + list(row) for lab, row in zip(labels, G)])
        out["groups"] = labels
        table = build_strata_table(cl, np.array(v), None, k)
    chi = characteristicity(table)
    lab = [f"{t[0]:.6g}-{t[1]:.6g}" if isinstance(t, tuple) else str(t) for t in table.strata_labels]
    st.csv("strata_table.csv", ["cluster"] + lab, [[j] + list(row) for j, row in enumerate(table.counts)])
    st.csv("chi.csv", ["cluster"] + lab, [[j] + list(row) for j, row in enumerate(chi)])
    st.json("curve.json", out)
    return st.finish()


def _per_map(it, ids):
    return [it["cluster"][it["map_id"] == m] for m in ids]


def cmd_complexes(cfg):
    from .semiotics import detect_complexes, presence_matrix

    it = _items(cfg)
    st = _Step("complexes", cfg)
    st.use(cfg.out / "cluster" / "assignments.csv")
    ds = _dataset(cfg)
    ids = ds.sorted_ids()
    k = _k(cfg)
    c = cfg["complexes"]
    X = presence_matrix(_per_map(it, ids), k, c["min_instances"])
    res = detect_complexes(X, alpha=c["alpha"], seed=cfg["seed"], use_bh=c["use_bh"])
    st.json("complexes.json", {
        "modularity": res.modularity, "n_maps": res.n_maps,
        "complexes": [{"id": s.complex_id, "clusters": sorted(s.member_clusters), "support": s.support}
                      for s in res.complexes],
        "edges": [dict(zip(("j", "k", "both", "p", "odds", "q"), e)) for e in res.edges],
    })
    return st.finish()


def cmd_univocity(cfg):
    from .semiotics import semantic_symbolic_counts, univocity, univocity_per_map
    from .errors import EmptySubset

    it = _items(cfg)
    st = _Step("univocity", cfg)
    st.use(cfg.out / "cluster" / "assignments.csv")
    ds = _dataset(cfg)
    ids = ds.sorted_ids()
    index = {m: i for i, m in enumerate(ids)}
    X = semantic_symbolic_counts([index[m] for m in it["map_id"]], it["cluster"], it["mode"], len(ids), _k(cfg))
    u = cfg["univocity"]
    try:
        pooled, ci = univocity(X, bootstrap_reps=u["bootstrap_reps"], sample_size=u["sample_size"],
                               seed=cfg["seed"])
        full, _ = univocity(X, bootstrap_reps=0)
        local = univocity_per_map(X)
        body = {"pooled": pooled, "ci": ci, "pooled_full": full, "per_map": local}
    except EmptySubset as exc:
        st.skipped.append(str(exc))
        body = {"pooled": None, "ci": None, "pooled_full": None, "per_map": None}
    st.json("univocity.json", body)
    return st.finish()


def cmd_composition(cfg):
    from .composition import (HYPOTHESES, colocation_matrix, composition_features, quadrant_graph,
                              quadrant_ratios, relationship_tests, semantic_types, shape_ratio)
    from .core import CLASS_NAMES, load_mask, resolve
    from .errors import NoContent

    st = _Step("composition", cfg)
    st.use(cfg.path("metadata"))
    ds = _dataset(cfg)
    c = cfg["composition"]
    profiles, shapes = [], {}
    for mid in ds.sorted_ids():
        rec = ds.records[mid]
        if not rec.mask_path:
            st.skipped.append(f"{mid}: no mask")
            continue
        p = resolve(rec.mask_path, cfg.root)
        st.use(p)
        mask = load_mask(p)
        try:
            profiles.append(quadrant_ratios(mask, c["threshold"], map_id=mid))
            shapes[mid] = shape_ratio(mask, c["threshold"])
        except NoContent as exc:
            st.skipped.append(f"{mid}: {exc}")
    if len(profiles) < 3:
        raise CartolabError("composition needs at least three maps with content")
    header = ["map_id"] + [f"q{q}_{n}" for q in range(1, 10) for n in CLASS_NAMES]
    st.csv("quadrants.csv", header, [[p.map_id] + list(p.ratios.ravel()) for p in profiles])
    col = colocation_matrix(profiles)
    st.csv("colocation.csv", ["class"] + list(CLASS_NAMES), [[n] + list(r) for n, r in zip(CLASS_NAMES, col.r)])
    graph = quadrant_graph(profiles)
    st.csv("quadrant_graph.csv", ["layer", "a", "b", "r", "p"],
           [(d["layer"], d["edge"][0], d["edge"][1], d["r"], d["p"]) for d in graph.to_records()])
    tests = [relationship_tests(graph, h).__dict__ for h in HYPOTHESES]
    phi = np.stack([composition_features(p, c["eps"]).phi for p in profiles])
    k = min(c["n_types"], len(profiles) - 1)
    types = semantic_types(phi, k=max(k, 2), seed=cfg["seed"], method=c["method"], knn=c["knn"]) \
        if len(profiles) > 2 else None
    st.csv("types.csv", ["map_id", "type", "shape_ratio"],
           [(p.map_id, int(t), shapes[p.map_id]) for p, t in zip(profiles, types.labels)])
    st.json("summary.json", {"maps": len(profiles), "colocation_undefined": list(col.undefined),
                             "tests": tests, "n_types": int(max(k, 2)), "silhouette": types.silhouette})
    return st.finish()


def cmd_network(cfg):
    from .core import load_embeddings
    from .net_stats import (build_social_graph, louvain, modularity, normalize_names,
                            temporal_modularity_sweep, write_name_map)

    st = _Step("network", cfg)
    st.use(cfg.path("metadata"), cfg.path("names"))
    ds = _dataset(cfg)
    n = cfg["network"]
    mentions = {}
    for r in ds.records.values():
        for c in r.creators:
            mentions[c] = mentions.get(c, 0) + 1
    name_map = None
    if cfg.path("names") is not None:
        emb = load_embeddings(cfg.path("names"))
        name_map = normalize_names(emb, mention_counts=mentions, threshold=n["threshold"], knn=n["knn"])
        write_name_map(name_map, st.path("names.csv"))
    g = build_social_graph([ds.records[k] for k in ds.sorted_ids()], name_map)
    g.write_csv(st.path("edges.csv"), st.path("nodes.csv"))
    body = {"nodes": len(g.nodes), "edges": len(g.edges)}
    if g.edges:
        A = g.to_sparse()
        labels = louvain(A, seed=cfg["seed"])
        body["louvain_modularity"] = modularity(A, labels)
        body["communities"] = {nm: int(c) for nm, c in zip(g.nodes, labels)}
        yrs = g.node_years()
        if not np.isnan(yrs).any():
            w, q, best = temporal_modularity_sweep(A, yrs, n["bin_widths"])
            body["temporal_sweep"] = {"widths": w, "q": q, "best_width": best}
    st.json("network.json", body)
    return st.finish()


def cmd_diffusion(cfg):
    from .chrono_stats import DyadicDesign, dyadic_regression
    from .semiotics import diachronic_flow, geographic_rupture_matrix
    from .errors import RankDeficient, TooFewGroups

    it = _items(cfg)
    st = _Step("diffusion", cfg)
    st.use(cfg.path("metadata"), cfg.out / "cluster" / "assignments.csv")
    ds = _dataset(cfg)
    d = cfg["diffusion"]
    gdef = ds.strata_defs[d["group"]]
    ydef = ds.strata_defs["year"]
    keep = np.array([gdef.get(m) is not None for m in it["map_id"]])
    groups = np.array([gdef.get(m, "") for m in it["map_id"]])[keep]
    cl = it["cluster"][keep]
    modes = it["mode"][keep] if cfg["modes"] else None
    counts = {}
    for mid in ds.sorted_ids():
        if gdef.get(mid) is not None:
            counts[gdef[mid]] = counts.get(gdef[mid], 0) + 1
    k = _k(cfg)
    body = {"group": d["group"]}
    try:
        labels, G = geographic_rupture_matrix(cl, groups, counts, k, modes, min_records=d["min_records"])
        st.csv("gamma.csv", [d["group"]] + labels, [[lab] + list(row) for lab, row in zip(labels, G)])
        body["groups"] = labels
        if len(labels) >= 3:
            body["regression"] = _gamma_regression(ds, labels, G, d["group"], DyadicDesign, dyadic_regression)
    except (TooFewGroups, RankDeficient) as exc:
        st.skipped.append(str(exc))
    rid = [m for m in ds.sorted_ids() if gdef.get(m) is not None]
    flow = diachronic_flow(cl, groups, np.array([ydef[m] for m in it["map_id"][keep]], dtype=float),
                           np.array([gdef[m] for m in rid]), np.array([ydef[m] for m in rid], dtype=float),
                           n_strata=d["n_strata"], n_clusters=k, modes=modes)
    body["flow"] = flow
    st.json("diffusion.json", body)
    return st.finish()


def _gamma_regression(ds, labels, G, group, DyadicDesign, dyadic_regression):
    """Rupture between groups against distance and size difference."""
    pos, size = {}, {}
    for r in ds.records.values():
        g = {"city": r.pub_city, "country": r.pub_country}.get(group, min(r.creators) if r.creators else None)
        if g in labels:
            size[g] = size.get(g, 0) + 1
            if r.pub_place:
                pos.setdefault(g, []).append(r.pub_place)
    i, j, dist, dsize, y = [], [], [], [], []
    for a in range(len(labels)):
        for b in range(a + 1, len(labels)):
            la, lb = labels[a], labels[b]
            pa, pb = pos.get(la), pos.get(lb)
            dd = float(np.hypot(*(np.mean(pa, 0) - np.mean(pb, 0)))) if pa and pb else 0.0
            i.append(la)
            j.append(lb)
            dist.append(dd)
            dsize.append(abs(size.get(la, 0) - size.get(lb, 0)))
            y.append(G[a, b])
    cols = {nm: c for nm, c in (("distance", dist), ("size_gap", dsize)) if np.ptp(c) > 0}
    if not cols:
        return {"constant_predictors": ["distance", "size_gap"]}
    design = DyadicDesign.from_columns(i, j, cols, y,
                                       transforms={"distance": "minmax", "size_gap": "minmax+rank"})
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        out = dyadic_regression(design, fixed_effects=False).to_dict()
    out["warnings"] = sorted({str(w.message) for w in caught})
    out["constant_predictors"] = sorted({"distance", "size_gap"} - set(cols))
    return out


def cmd_chrono(cfg):
    from .chrono_stats import attention_raster, domestic_share_series, mann_kendall, gaussian_smooth
    from .errors import AllTies, EmptySample, InsufficientData
    from .semiotics import complexity_series

    st = _Step("chrono", cfg)
    st.use(cfg.path("metadata"), cfg.path("coverage"))
    ds = _dataset(cfg)
    ch = cfg["chrono"]
    recs = [ds.records[k] for k in ds.sorted_ids()]
    years = np.array([r.year for r in recs])
    body = {}
    if years.size:
        yr = np.arange(years.min(), years.max() + 1)
        counts = np.bincount(years - yr[0], minlength=yr.size).astype(float)
        body["yearly_counts"] = {"years": yr, "counts": counts,
                                 "smoothed": gaussian_smooth(counts, ch["sigma"], ch["radius"])}
    try:
        sh = domestic_share_series(recs, window=ch["window"], sigma=ch["sigma"], radius=ch["radius"])
        body["domestic_share"] = {"years": sh.years, "share": sh.share, "ci_lo": sh.ci_lo, "ci_hi": sh.ci_hi}
    except EmptySample as exc:
        st.skipped.append(str(exc))
    it = _items(cfg)
    st.use(cfg.out / "cluster" / "assignments.csv")
    ids = ds.sorted_ids()
    ys, cx = complexity_series(_per_map(it, ids), [ds.records[m].year for m in ids])
    body["complexity"] = {"years": ys, "mean_clusters_per_map": cx}
    try:
        body["complexity_trend"] = mann_kendall(cx, ys).__dict__
    except (AllTies, InsufficientData) as exc:
        st.skipped.append(f"complexity trend: {exc}")
    geoms = [r.coverage for r in recs if r.coverage]
    ras = attention_raster(geoms, cell_deg=ch["cell_deg"], min_cell_deg=ch["min_cell_deg"])
    body["attention_total"] = float(ras.intensity.sum())
    img = np.log1p(ras.intensity[::-1])
    img = (255 * (1 - img / img.max())).astype(np.uint8) if img.max() > 0 else np.full(img.shape, 255, np.uint8)
    st.png("attention.png", img)
    st.json("series.json", body)
    return st.finish()


def cmd_mosaic(cfg):
    from .clustering import grid_snap, pca_layout
    from .core import load_image, resolve
    from .image_ops import bilateral_smooth, neutralize_rotation
    from .semiotics import build_strata_table

    _need(cfg, "cluster", ["exemplars.csv", "centers.csv"])
    st = _Step("mosaic", cfg)
    ex_path, c_path = cfg.out / "cluster" / "exemplars.csv", cfg.out / "cluster" / "centers.csv"
    st.use(ex_path, c_path)
    ex = _read_csv(ex_path)
    centers = np.array([[float(v) for k, v in r.items() if k != "cluster"] for r in _read_csv(c_path)])
    rows, cols = cfg["mosaic"]["rows"], cfg["mosaic"]["cols"]
    if rows * cols < len(ex):
        raise GridTooSmall(f"{rows}x{cols} grid for {len(ex)} clusters")
    coords = pca_layout(centers) if len(centers) > 1 else np.zeros((len(centers), 2))
    cells = grid_snap(coords, rows, cols)
    st.csv("layout.csv", ["cluster", "cell", "row", "col", "x", "y"],
           [(j, int(c), int(c) // cols, int(c) % cols, coords[j, 0], coords[j, 1]) for j, c in enumerate(cells)])
    ds = _dataset(cfg)
    size = cfg["mapels"]["size"]
    canvas = np.full((rows * size, cols * size, 3), 255, np.uint8)
    side = {}
    smooth_cache = {}
    for j, r in enumerate(ex):
        if not r["key"]:
            continue
        mid, idx = r["key"].split(":", 1)
        if mid not in side:
            p = cfg.out / "mapels" / "sidecars" / f"{mid}.csv"
            st.use(p)
            side[mid] = {d["idx"]: d for d in _read_csv(p)}
        d = side[mid][idx]
        if mid not in smooth_cache:
            img_path = resolve(ds.records[mid].image_path, cfg.root)
            st.use(img_path)
            m = cfg["mapels"]
            smooth_cache = {mid: bilateral_smooth(load_image(img_path), m["spatial_sigma"], m["range_sigma"])}
        patch = neutralize_rotation(smooth_cache[mid], (float(d["x"]), float(d["y"])),
                                    float(d["orientation_deg"]), size)
        rr, cc = divmod(int(cells[j]), cols)
        canvas[rr * size:(rr + 1) * size, cc * size:(cc + 1) * size] = patch
    st.png("mosaic.png", canvas)
    # frequency heatmap: clusters (rows) x year strata (columns), saturated, fixed gray ramp
    it = _items(cfg)
    yd = ds.strata_defs["year"]
    v = np.array([yd[m] for m in it["map_id"]], dtype=float)
    from .semiotics import equal_count_edges

    table = build_strata_table(it["cluster"], v, np.unique(equal_count_edges(v, 6)), len(ex))
    heat = (255 * (1 - table.normalized)).astype(np.uint8)
    st.png("heatmap.png", np.kron(heat, np.ones((8, 8), np.uint8)))
    return st.finish()


def cmd_report(cfg):
    st = _Step("report", cfg)
    body = {}
    for name in SUBCOMMANDS[:-1]:
        d = cfg.out / name
        if not (d / "provenance.json").is_file():
            continue
        prov = json.loads((d / "provenance.json").read_text())
        entry = {"digest": prov["digest"], "outputs": prov["outputs"]}
        for f in sorted(d.glob("*.json")):
            if f.name == "provenance.json":
                continue
            st.use(f)
            entry[f.stem] = json.loads(f.read_text())
        body[name] = entry
    st.json("report.json", {"steps": body})
    return st.finish()


_RUNNERS = {
    "ingest": cmd_ingest, "mapels": cmd_mapels, "cluster": cmd_cluster, "rupture": cmd_rupture,
    "complexes": cmd_complexes, "univocity": cmd_univocity, "composition": cmd_composition,
    "network": cmd_network, "diffusion": cmd_diffusion, "chrono": cmd_chrono, "mosaic": cmd_mosaic,
    "report": cmd_report,
}


def run(subcommand, config: RunConfig) -> dict:
    """Run one subcommand and return its exit report.

    Errors from the analysis are caught and reported; the report's
    ``exit_code`` is 0 (ok), 2 (ok with skipped records) or 1 (fatal).
    """
    if subcommand not in _RUNNERS:
        raise BadValue(f"unknown subcommand {subcommand!r}")
    try:
        rep = _RUNNERS[subcommand](config)
        rep["status"] = "partial" if rep["skipped"] else "ok"
        rep["exit_code"] = 2 if rep["skipped"] else 0
    except (CartolabError, OSError, ValueError) as exc:
        log.error("%s failed: %s", subcommand, exc)
        rep = {"subcommand": subcommand, "status": "fatal", "exit_code": 1,
               "error": f"{type(exc).__name__}: {exc}", "outputs": [], "skipped": []}
    out = config.out / subcommand
    out.mkdir(parents=True, exist_ok=True)
    (out / "exit_report.json").write_text(_dump(rep), encoding="utf-8")
    return rep


def _parser():
    p = argparse.ArgumentParser(prog="cartolab", description="Batch analyses of digitized map corpora.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--strata", choices=STRATA)
    p.add_argument("--modes", choices=("on", "off"))
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CARTOLAB_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    over = {}
    for key in ("out", "seed", "threads", "strata"):
        if getattr(args, key) is not None:
            over[key] = getattr(args, key)
    if args.modes is not None:
        over["modes"] = args.modes == "on"
    try:
        cfg = validate_config(args.config, over)
    except (CartolabError, OSError, ValueError) as exc:
        print(f"cartolab: configuration error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    rep = run(args.subcommand, cfg)
    print(_dump({k: rep[k] for k in ("subcommand", "status", "exit_code")}), end="")
    return int(rep["exit_code"])


if __name__ == "__main__":
    sys.exit(main())
