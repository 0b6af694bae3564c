import json

import pytest

from actionvocab.evaluation import SplitMetrics, aggregate
from actionvocab.harness import (Cell, ExperimentConfig, RunRecord, best_per_metric,
                                 emit_results, load_records, plot_series, run_grid,
                                 summary_table)


def _config(manifest, out, **kw):
    base = dict(manifest=str(manifest.root) + "/manifest.tsv", K=[2], pca_dims=3, restarts=1,
                output_dir=str(out))
    base.update(kw)
    return ExperimentConfig(**base)


def test_grid_sizes(tiny_dataset):
    cfg = ExperimentConfig(manifest="x", representations=["3d"], K=[32])
    assert len(cfg.cells()) == 4
    assert len(ExperimentConfig(manifest="x").cells()) == 2 * 2 * 7 * 4 == 112


def test_variables_string():
    c = Cell("1a", "2a", "3d", 64)
    assert c.variables == "3d-2a-1a" and c.method == "fisher" and c.svm_kind == "linear"
    assert Cell("1b", "2b", "3b", 4).svm_kind == "chi2"


def test_aliases_normalised():
    cfg = ExperimentConfig(manifest="x", sampling=["balanced", "uniform"],
                           schemes=["per_component", "joint"], representations=["fisher"])
    assert cfg.sampling == ["1a", "1b"] and cfg.schemes == ["2a", "2b"]
    assert cfg.representations == ["3d"]


def test_config_file(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"manifest": "d/m.tsv", "K": [4, 8]}))
    cfg = ExperimentConfig.from_file(tmp_path / "c.json")
    assert cfg.manifest == str(tmp_path / "d/m.tsv") and cfg.K == [4, 8]
    (tmp_path / "bad.json").write_text(json.dumps({"manifest": "m", "Kay": 3}))
    with pytest.raises(ValueError, match="Kay"):
        ExperimentConfig.from_file(tmp_path / "bad.json")


def test_rerun_touches_only_the_cache(tiny_dataset, tmp_path):
    cfg = _config(tiny_dataset, tmp_path / "out", representations=["3a", "3d"])
    first = run_grid(cfg, manifest=tiny_dataset)
    assert all(r.error is None for r in first) and len(first) == 8
    assert any(sum(r.timings.values()) > 0 for r in first)
    second = run_grid(cfg, manifest=tiny_dataset)
    for a, b in zip(first, second):
        assert all(b.cache_hits.values())
        assert sum(b.timings.values()) == 0.0
        assert a.report.to_dict() == b.report.to_dict()


def test_stage_cache_without_results(tiny_dataset, tmp_path):
    import shutil
    cfg = _config(tiny_dataset, tmp_path / "out", representations=["3c"], sampling=["1a"],
                  schemes=["2a"])
    first = run_grid(cfg, manifest=tiny_dataset)
    shutil.rmtree(tmp_path / "out" / "cache" / "results")
    second = run_grid(cfg, manifest=tiny_dataset)
    t = second[0].timings
    assert t["sample"] == t["fit"] == t["encode"] == 0.0
    assert first[0].report.to_dict() == second[0].report.to_dict()


def test_cache_is_byte_identical_across_runs(tiny_dataset, tmp_path):
    kw = dict(representations=["3b", "3d"], sampling=["1b"])
    run_grid(_config(tiny_dataset, tmp_path / "a", **kw), manifest=tiny_dataset)
    run_grid(_config(tiny_dataset, tmp_path / "b", **kw), manifest=tiny_dataset, workers=3)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a" / "cache").rglob("*")
                     if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b" / "cache").rglob("*")
                     if p.is_file())
    assert files_a == files_b and files_a
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_failing_cell_is_recorded(tiny_dataset, tmp_path):
    cfg = _config(tiny_dataset, tmp_path / "out", representations=["3c"], pca_dims=40,
                  sampling=["1a"], schemes=["2a"])
    (rec,) = run_grid(cfg, manifest=tiny_dataset)
    assert rec.report is None and "VocabularyError" in rec.error


def test_resume_reads_records(tiny_dataset, tmp_path):
    cfg = _config(tiny_dataset, tmp_path / "out", representations=["3a"])
    first = run_grid(cfg, manifest=tiny_dataset)
    again = run_grid(cfg, manifest=tiny_dataset, resume=True)
    assert [r.to_dict() for r in again] == [r.to_dict() for r in first]
    assert [r.to_dict() for r in load_records(tmp_path / "out")] == \
        sorted([r.to_dict() for r in first], key=lambda d: (d["variables"], d["cell"]["K"]))


def _record(rep, K, acc, D=10):
    r = aggregate([SplitMetrics(acc, acc / 2, acc / 3)])
    return RunRecord(Cell("1a", "2a", rep, K), D, report=r)


def test_best_of_one_record():
    r = _record("3a", 4, 0.3)
    assert all(b is r for b in best_per_metric([r]).values())


def test_summary_names_the_argmax():
    a, b = _record("3a", 4, 0.6), _record("3d", 8, 0.7, D=960)
    assert best_per_metric([a, b])["acc"] is b
    assert "3d-2a-1a\t8 - 960" in summary_table([a, b])


def test_plot_rows_per_series(tmp_path):
    recs = [_record(rep, K, 0.1 * K, D=K * 3) for rep in ("3a", "3c") for K in (4, 8, 16)]
    rows = plot_series(recs, "acc", "K")
    for rep in ("3a", "3c"):
        assert len([r for r in rows if r["representation"] == rep]) == 3
    assert sorted({r["x_rank"] for r in rows}) == [0, 1, 2]
    written = emit_results(recs, tmp_path)
    lines = written["acc_vs_D"].read_text().splitlines()
    assert lines[0].split("\t")[-1] == "x_rank" and len(lines) == 7
    assert written["table"].read_text().count("\n") == 7
