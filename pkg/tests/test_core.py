import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cartolab.core import (
    METADATA_COLUMNS,
    CoverageGeom,
    EmbeddingTable,
    assemble,
    load_coverage,
    load_detections,
    load_embeddings,
    load_mask,
    load_metadata,
    mask_from_array,
    write_embeddings,
    write_mask,
    write_metadata,
)
from cartolab.errors import (
    BadLabelValue,
    BadLatLon,
    BadMagic,
    BadYear,
    CountMismatch,
    DuplicateId,
    NegativeExtent,
    NonFiniteValue,
    ScoreOutOfRange,
)

ROWS = [
    ["a", "img/a.png", "", "1850", "", "", "25000", "48.85", "2.35", "Paris", "FRA", "x;y", "true"],
    ["b", "img/b.png", "", "1790", "1780", "1800", "", "", "", "", "", "", ""],
    ["c", "img/c.png", "", "1901", "", "", "1e6", "51.5", "-0.1", "London", "GBR", "z", "false"],
]


def write_rows(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METADATA_COLUMNS)
        w.writerows(rows)
    return path


def test_three_row_csv(tmp_path):
    ds = load_metadata(write_rows(tmp_path / "m.csv", ROWS))
    assert len(ds) == 3 and not ds.errors
    a = ds.records["a"]
    assert a.creators == ("x", "y") and a.pub_place == (48.85, 2.35) and a.domestic is True
    assert ds.records["b"].strat_year == 1790.0


def test_range_midpoint_used_for_strata(tmp_path):
    rows = [ROWS[0], ["d", "img/d.png", "", "1785", "1780", "1800", "", "", "", "", "", "", ""]]
    ds = load_metadata(write_rows(tmp_path / "m.csv", rows))
    assert ds.strata_defs["year"]["d"] == 1790.0
    assert ds.records["d"].year_range == (1780, 1800)


def test_bad_year_and_latlon_collected(tmp_path):
    rows = ROWS + [["d", "i.png", "", "185?", "", "", "", "", "", "", "", "", ""],
                   ["e", "i.png", "", "1850", "", "", "", "91", "0", "", "", "", ""]]
    ds = load_metadata(write_rows(tmp_path / "m.csv", rows))
    assert len(ds) == 3
    assert {type(e) for e in ds.errors} == {BadYear, BadLatLon}
    with pytest.raises(BadYear):
        load_metadata(tmp_path / "m.csv", strict=True)


def test_row_order_does_not_matter(tmp_path):
    a = load_metadata(write_rows(tmp_path / "a.csv", ROWS))
    b = load_metadata(write_rows(tmp_path / "b.csv", ROWS[::-1]))
    assert a == b


def test_metadata_roundtrip(tmp_path):
    ds = load_metadata(write_rows(tmp_path / "m.csv", ROWS))
    write_metadata([ds.records[k] for k in ds.sorted_ids()], tmp_path / "out.csv")
    assert load_metadata(tmp_path / "out.csv") == ds


def test_mask_values():
    m = mask_from_array(np.array([[0, 2], [4, 5]]))
    assert m.labels.tolist() == [[0, 2], [4, 5]]
    with pytest.raises(BadLabelValue):
        mask_from_array(np.array([[0, 7]]))
    big = mask_from_array(np.full((768, 768), 3))
    assert big.class_shares()[3] == 1.0


def test_mask_png_roundtrip(tmp_path):
    m = mask_from_array(np.random.default_rng(0).integers(0, 6, (20, 30)))
    write_mask(m, tmp_path / "m.png")
    assert load_mask(tmp_path / "m.png") == m


def test_embedding_cases(tmp_path):
    t = EmbeddingTable(("a",), np.array([[1.0, 0.0]]))
    write_embeddings(t, tmp_path / "e.emb")
    assert load_embeddings(tmp_path / "e.emb") == t
    raw = (tmp_path / "e.emb").read_bytes()
    (tmp_path / "short.emb").write_bytes(raw[:14])
    with pytest.raises(CountMismatch):
        load_embeddings(tmp_path / "short.emb")
    nan = raw[:12] + np.array([np.nan, 0], "<f4").tobytes() + b"a"
    (tmp_path / "nan.emb").write_bytes(nan)
    with pytest.raises(NonFiniteValue):
        load_embeddings(tmp_path / "nan.emb")
    (tmp_path / "bad.emb").write_bytes(b"EMB2" + raw[4:])
    with pytest.raises(BadMagic):
        load_embeddings(tmp_path / "bad.emb")
    with pytest.raises(DuplicateId):
        EmbeddingTable(("a", "a"), np.zeros((2, 2)))


ids = st.lists(st.text(st.characters(blacklist_categories=("Cs", "Cc")), min_size=1, max_size=8),
               unique=True, max_size=12)


@settings(max_examples=60, deadline=None)
@given(ids, st.integers(1, 6), st.data())
def test_embedding_roundtrip_bit_exact(tmp_path_factory, names, dim, data):
    vec = data.draw(arrays(np.float32, (len(names), dim),
                           elements=st.floats(-1e6, 1e6, allow_nan=False, width=32)))
    t = EmbeddingTable(tuple(names), vec)
    p = tmp_path_factory.mktemp("emb") / "t.emb"
    write_embeddings(t, p)
    back = load_embeddings(p)
    assert back.ids == t.ids and back.vectors.tobytes() == t.vectors.tobytes()


def test_detections(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("map_id,x,y,w,h,score\na,10,10,20,20,0.9\n")
    d = load_detections(p)
    assert len(d["a"].boxes) == 1 and d["a"].boxes[0].score == 0.9
    p.write_text("map_id,x,y,w,h,score\na,10,10,20,20,1.3\n")
    with pytest.raises(ScoreOutOfRange):
        load_detections(p)
    p.write_text("map_id,x,y,w,h,score\na,10,10,-1,20,0.5\n")
    with pytest.raises(NegativeExtent):
        load_detections(p)


def test_coverage_and_assembly(tmp_path):
    ds = load_metadata(write_rows(tmp_path / "m.csv", ROWS))
    cov = tmp_path / "c.csv"
    cov.write_text("map_id,lat,lon,area_deg2\na,10,20,4\nzz,0,0,0\n")
    out = assemble(ds, coverage=load_coverage(cov))
    assert out.records["a"].coverage == (CoverageGeom((10.0, 20.0), 4.0),)
    assert len(out.dangling) == 1 and "zz" in str(out.dangling[0])
    with pytest.raises(ValueError):
        CoverageGeom((0, 0), -1.0)


def test_missing_mask_is_dangling(tmp_path):
    rows = [r[:] for r in ROWS]
    rows[0][2] = "masks/none.png"
    ds = assemble(load_metadata(write_rows(tmp_path / "m.csv", rows)), root=tmp_path)
    assert ds.records["a"].mask_path is None and len(ds.dangling) == 1
