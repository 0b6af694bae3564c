import json

import pytest

from actionvocab.cli import main
from actionvocab.encoders import EncodedDataset
from actionvocab.sampler import FeaturePool


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--out", str(out), "--seed", "2", "--classes", "3",
                 "--videos-per-class", "6", "--features-per-video", "40",
                 "--small-layout", "a:4,b:5"]) == 0
    return out


def test_stats(data, capsys):
    main(["stats", str(data / "manifest.tsv")])
    out = capsys.readouterr().out
    assert "Videos" in out and "18" in out and "40.0" in out


def test_pipeline_subcommands(data, tmp_path, capsys):
    m = str(data / "manifest.tsv")
    main(["sample", "--manifest", m, "--mode", "balanced", "--k", "2", "--out",
          str(tmp_path / "pool.f32")])
    pool = FeaturePool.load(tmp_path / "pool.f32")
    assert len(set(pool.class_counts())) == 1
    main(["fit-vocab", "--manifest", m, "--pool", str(tmp_path / "pool.f32"), "--k", "2",
          "--method", "vlad", "--pca-dims", "3", "--restarts", "1",
          "--out", str(tmp_path / "v")])
    main(["encode", "--manifest", m, "--vocab", str(tmp_path / "v"), "--out",
          str(tmp_path / "e")])
    enc = EncodedDataset.load(tmp_path / "e")
    assert enc.X.shape == (18, 3 * 2 * 2)
    main(["train", "--encodings", str(tmp_path / "e"), "--manifest", m, "--out",
          str(tmp_path / "model")])
    capsys.readouterr()
    main(["predict", "--model", str(tmp_path / "model"), "--encodings", str(tmp_path / "e"),
          "--manifest", m, "--out", str(tmp_path / "pred.tsv")])
    assert capsys.readouterr().out.startswith("Acc ")
    rows = (tmp_path / "pred.tsv").read_text().splitlines()
    assert rows[0].split("\t")[:2] == ["truth", "predicted"] and len(rows) == 1 + 9


def test_run_and_report(data, tmp_path, capsys):
    cfg = tmp_path / "grid.json"
    cfg.write_text(json.dumps({"manifest": str(data / "manifest.tsv"), "K": [2],
                               "representations": ["3a", "3c"], "pca_dims": 3,
                               "restarts": 1, "output_dir": "out"}))
    assert main(["run", "--config", str(cfg), "--workers", "2"]) == 0
    assert main(["run", "--config", str(cfg), "--resume"]) == 0
    capsys.readouterr()
    assert main(["report", "--dir", str(tmp_path / "out")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("variables\tK\tD") and "metric\tbest" in out
    assert len(list((tmp_path / "out" / "records").glob("*.json"))) == 8


def test_report_on_empty_dir(tmp_path):
    assert main(["report", "--dir", str(tmp_path)]) == 1


def test_bad_subcommand():
    with pytest.raises(SystemExit):
        main(["nope"])
