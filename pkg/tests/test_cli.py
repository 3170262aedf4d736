import json
import shutil

import pytest

from cartolab.cli import DEFAULTS, main, run, validate_config
from cartolab.errors import BadValue, UnknownKey


def write_config(path, body):
    path.write_text(json.dumps(body))
    return path


def test_defaults_filled(tmp_path):
    cfg = validate_config(write_config(tmp_path / "c.json", {"seed": 3}))
    assert cfg.values["seed"] == 3
    assert cfg.values["cluster"] == DEFAULTS["cluster"]
    assert "out" not in cfg.params


def test_unknown_and_bad_values(tmp_path):
    with pytest.raises(UnknownKey, match="tsne"):
        validate_config(write_config(tmp_path / "a.json", {"cluster": {"tsne": 1}}))
    with pytest.raises(BadValue):
        validate_config(overrides={"seed": -1})
    with pytest.raises(BadValue):
        validate_config(overrides={"rupture": {"overlap_frac": 1.0}})
    with pytest.raises(BadValue):
        validate_config(overrides={"mapels": {"size": 50}})


def test_toml_config(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 7\n[composition]\nn_types = 4\n')
    cfg = validate_config(p)
    assert cfg.values["seed"] == 7 and cfg.values["composition"]["n_types"] == 4


def test_main_config_error(tmp_path, capsys):
    code = main(["ingest", "--config", str(write_config(tmp_path / "c.json", {"bogus": 1}))])
    assert code == 1 and "UnknownKey" in capsys.readouterr().err


def test_missing_metadata_is_fatal(tmp_path):
    cfg = write_config(tmp_path / "c.json", {"data": {"metadata": "nowhere.csv"}, "out": "out"})
    assert main(["ingest", "--config", str(cfg)]) == 1
    rep = json.loads((tmp_path / "out" / "ingest" / "exit_report.json").read_text())
    assert rep["status"] == "fatal" and rep["outputs"] == []


def test_ingest_ok_and_partial(tmp_path, corpus):
    cfg = write_config(tmp_path / "ok.json", {"data": {"metadata": str(corpus / "metadata.csv"),
                                                       "coverage": str(corpus / "coverage.csv")},
                                              "out": "ok"})
    assert main(["ingest", "--config", str(cfg)]) == 0
    assert (tmp_path / "ok" / "ingest" / "records.csv").is_file()
    assert (tmp_path / "ok" / "ingest" / "provenance.json").is_file()

    bad = tmp_path / "meta.csv"
    shutil.copy(corpus / "metadata.csv", bad)
    with open(bad, "a", encoding="utf-8") as fh:
        fh.write("zz,images/zz.png,,17??,,,,,,,,,\n")
    cfg = write_config(tmp_path / "bad.json", {"data": {"metadata": str(bad), "root": str(corpus)},
                                               "out": "bad"})
    assert main(["ingest", "--config", str(cfg)]) == 2
    rep = json.loads((tmp_path / "bad" / "ingest" / "exit_report.json").read_text())
    assert rep["status"] == "partial" and any("17??" in s for s in rep["skipped"])


def test_run_rejects_unknown_subcommand():
    with pytest.raises(BadValue):
        run("tsne", validate_config())


def test_mosaic_grid_too_small(tmp_path, corpus):
    cfg = validate_config(write_config(tmp_path / "c.json", {
        "data": {"metadata": str(corpus / "metadata.csv")}, "out": "o",
        "cluster": {"k": 8}, "mosaic": {"rows": 1, "cols": 2}}))
    rep = run("mosaic", cfg)
    assert rep["exit_code"] == 1 and "GridTooSmall" in rep["error"]


def test_group_cap(tmp_path, corpus):
    lines = (corpus / "metadata.csv").read_text().splitlines()
    rows = [lines[0] + ",group_id"] + [ln + (",atlas" if i < 8 else ",") for i, ln in enumerate(lines[1:])]
    meta = tmp_path / "meta.csv"
    meta.write_text("\n".join(rows) + "\n")
    body = {"data": {"metadata": str(meta), "root": str(corpus), "group_cap": 3}, "out": "o"}
    assert main(["ingest", "--config", str(write_config(tmp_path / "c.json", body))]) == 0
    kept = (tmp_path / "o" / "ingest" / "records.csv").read_text().splitlines()
    assert len(kept) - 1 == len(lines) - 1 - 5
    assert sum(ln.endswith(",atlas") for ln in kept) == 3
