"""Experiment grid: sampling mode x vocabulary scheme x representation x K.

Every cell runs the full pipeline on each train/test split of a manifest
and aggregates the metrics. Intermediate artifacts are cached under
``<output_dir>/cache`` by content hash:

=========  ============================================================
stage      key
=========  ============================================================
raw pool   manifest hash, split, sampling mode, memory budget, seed
pool       raw pool key, K
vocab      pool key, scheme, vocabulary kind, per-category flag, params
encoding   vocab key, method
result     encoding key, SVM kind, C
=========  ============================================================

A finished cell is written to ``<output_dir>/records/<cell>.json``.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import threading
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .classifier import SVM_C, chi2_gram, svm_predict, svm_train
from .encoders import (CODE_OF_METHOD, METHOD_CODES, EncodedDataset, encode_dataset,
                       encoding_dims, vocabulary_kind)
from .evaluation import METRICS, EvalReport, SplitMetrics, aggregate, evaluate
from .features import DatasetManifest, read_manifest
from .sampler import (FeaturePool, final_subsample, load_pool, mean_feature_count,
                      compute_vmax, normalize_mode, sample_videos)
from .vocabulary import KMEANS_RESTARTS, PCA_DIMS, VocabularySet, fit_vocabularies, \
    normalize_scheme

log = logging.getLogger(__name__)

DEFAULT_K = (4, 8, 16, 32, 64, 128, 256)
STAGES = ("sample", "fit", "encode", "train", "eval")
REPRESENTATIONS = ("3a", "3b", "3c", "3d")


@dataclass
class ExperimentConfig:
    manifest: str
    sampling: list = field(default_factory=lambda: ["1a", "1b"])
    schemes: list = field(default_factory=lambda: ["2a", "2b"])
    representations: list = field(default_factory=lambda: list(REPRESENTATIONS))
    K: list = field(default_factory=lambda: list(DEFAULT_K))
    memory_gb: float = 1.6
    seed: int = 0
    output_dir: str = "results"
    splits: list | None = None
    restarts: int = KMEANS_RESTARTS
    pca_dims: int = PCA_DIMS
    C: float = SVM_C

    def __post_init__(self):
        self.sampling = [normalize_mode(m) for m in _as_list(self.sampling)]
        self.schemes = [normalize_scheme(s) for s in _as_list(self.schemes)]
        self.representations = [CODE_OF_METHOD.get(r, r) for r in _as_list(self.representations)]
        self.K = [int(k) for k in _as_list(self.K)]
        bad = [r for r in self.representations if r not in METHOD_CODES]
        if bad:
            raise ValueError(f"unknown representations {bad}")
        if any(k < 1 for k in self.K):
            raise ValueError("K values must be positive")
        if not self.memory_gb > 0:
            raise ValueError("memory_gb must be positive")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Read a JSON config; relative paths resolve against the file's directory."""
        path = Path(path)
        data = json.loads(path.read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields {sorted(unknown)}")
        for key in ("manifest", "output_dir"):
            if key in data and not Path(data[key]).is_absolute():
                data[key] = str(path.parent / data[key])
        return cls(**data)

    def cells(self) -> list["Cell"]:
        return [Cell(s, v, r, k) for s, v, r, k in itertools.product(
            self.sampling, self.schemes, self.representations, self.K)]


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass(frozen=True)
class Cell:
    sampling: str
    scheme: str
    representation: str
    K: int

    @property
    def variables(self) -> str:
        return f"{self.representation}-{self.scheme}-{self.sampling}"

    @property
    def name(self) -> str:
        return f"{self.variables}-K{self.K}"

    @property
    def method(self) -> str:
        return METHOD_CODES[self.representation]

    @property
    def svm_kind(self) -> str:
        return "chi2" if self.representation in ("3a", "3b") else "linear"


@dataclass
class RunRecord:
    cell: Cell
    D: int
    timings: dict = field(default_factory=dict)
    report: EvalReport | None = None
    cache_keys: dict = field(default_factory=dict)
    cache_hits: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return {"cell": asdict(self.cell), "variables": self.cell.variables, "D": self.D,
                "timings": self.timings, "report": self.report.to_dict() if self.report else None,
                "cache_keys": self.cache_keys, "cache_hits": self.cache_hits,
                "error": self.error}

    @classmethod
    def from_dict(cls, d) -> "RunRecord":
        return cls(Cell(**d["cell"]), d["D"], d["timings"],
                   EvalReport.from_dict(d["report"]) if d["report"] else None,
                   d["cache_keys"], d.get("cache_hits", {}), d["error"])


def content_key(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True).encode())
        h.update(b"\x00")
    return h.hexdigest()[:24]


class ArtifactCache:
    """Content-addressed files under one directory, written atomically."""

    def __init__(self, root):
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def path(self, stage: str, key: str, suffix: str) -> Path:
        return self.root / stage / f"{key}{suffix}"

    def lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def get_or_create(self, stage, key, suffix, create, save, load):
        """Return ``(value, hit, seconds)``; ``seconds`` counts only computation."""
        p = self.path(stage, key, suffix)
        with self.lock(f"{stage}/{key}"):
            if p.exists():
                return load(p), True, 0.0
            t0 = time.perf_counter()
            value = create()
            elapsed = time.perf_counter() - t0
            p.parent.mkdir(parents=True, exist_ok=True)
            save(value, p)
            return value, False, elapsed


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}.{threading.get_ident()}")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True))
    os.replace(tmp, path)


class GridRunner:
    def __init__(self, config: ExperimentConfig, manifest: DatasetManifest | None = None):
        self.config = config
        self.manifest = manifest or read_manifest(config.manifest)
        self.out = Path(config.output_dir)
        self.cache = ArtifactCache(self.out / "cache")
        self.mhash = self.manifest.content_hash()
        self.splits = config.splits if config.splits is not None else list(
            range(len(self.manifest.splits)))
        if not self.splits:
            raise ValueError("manifest defines no train/test splits")

    # -- stages -------------------------------------------------------------

    def raw_pool(self, mode: str, split: int):
        c = self.config
        key = content_key("raw-pool", self.mhash, split, mode, c.memory_gb, c.seed)

        def create():
            mu = mean_feature_count(self.manifest)
            v_max = compute_vmax(c.memory_gb, mu, self.manifest.layout.feature_size_gb)
            selected = sample_videos(self.manifest, v_max, mode, c.seed, split)
            return load_pool(self.manifest, selected, mode, mu, c.seed)

        pool, hit, t = self.cache.get_or_create("pools", key, ".f32", create,
                                                lambda v, p: v.save(p), FeaturePool.load)
        return pool, key, hit, t

    def pool(self, mode: str, split: int, K: int):
        c = self.config
        raw_key = content_key("raw-pool", self.mhash, split, mode, c.memory_gb, c.seed)
        key = content_key("pool", raw_key, K)

        def create():
            raw = self.raw_pool(mode, split)[0]
            return final_subsample(raw, K, mode, c.seed)

        pool, hit, t = self.cache.get_or_create("pools", key, ".f32", create,
                                                lambda v, p: v.save(p), FeaturePool.load)
        return pool, key, hit, t

    def vocabulary(self, pool, pool_key, cell: Cell):
        c = self.config
        kind, per_cat = vocabulary_kind(cell.method)
        key = content_key("vocab", pool_key, cell.scheme, kind, per_cat, c.pca_dims,
                          c.restarts, c.seed)

        def create():
            return fit_vocabularies(pool(), cell.K, cell.scheme, per_cat, c.seed, kind,
                                    pca_dims=c.pca_dims, restarts=c.restarts,
                                    layout=self.manifest.layout)

        vocab, hit, t = self.cache.get_or_create("vocab", key, ".vocab", create,
                                                 lambda v, p: v.save(p), VocabularySet.load)
        return vocab, key, hit, t

    def encodings(self, vocab, vocab_key, cell: Cell, split: int):
        key = content_key("enc", vocab_key, cell.method, split)
        s = self.manifest.splits[split]

        def create():
            return encode_dataset(self.manifest, vocab(), cell.method,
                                  video_ids=s.train | s.test)

        enc, hit, t = self.cache.get_or_create("enc", key, ".enc", create,
                                               lambda v, p: v.save(p), EncodedDataset.load)
        return enc, key, hit, t

    def run_split(self, cell: Cell, split: int, timings: dict, keys: dict, hits: dict):
        c = self.config
        base_key = content_key("result", self.mhash, split, cell.sampling, c.memory_gb, c.seed,
                               cell.K, cell.scheme, cell.representation, c.pca_dims,
                               c.restarts, cell.svm_kind, c.C)
        result_path = self.cache.path("results", base_key, ".json")
        if result_path.exists():
            data = json.loads(result_path.read_text())
            keys[split] = data["keys"]
            hits[split] = True
            return SplitMetrics(**data["metrics"])

        # stages are resolved lazily so a cached encoding never loads its pool
        memo = {}

        def get_pool():
            if "pool" not in memo:
                memo["pool"] = self.pool(cell.sampling, split, cell.K)
            return memo["pool"]

        def get_vocab():
            if "vocab" not in memo:
                _, pkey, phit, pt = get_pool()
                timings["sample"] += pt
                memo["vocab"] = self.vocabulary(lambda: get_pool()[0], pkey, cell)
            return memo["vocab"]

        pool_key = content_key("pool", content_key("raw-pool", self.mhash, split, cell.sampling,
                                                   c.memory_gb, c.seed), cell.K)
        kind, per_cat = vocabulary_kind(cell.method)
        vocab_key = content_key("vocab", pool_key, cell.scheme, kind, per_cat, c.pca_dims,
                                c.restarts, c.seed)
        enc, enc_key, enc_hit, t_enc = self.encodings(
            lambda: get_vocab()[0], vocab_key, cell, split)
        if "vocab" in memo:
            timings["fit"] += memo["vocab"][3]
        timings["encode"] += t_enc

        s = self.manifest.splits[split]
        is_train = np.array([v in s.train for v in enc.video_ids])
        Xtr, ytr = enc.X[is_train], enc.labels[is_train]
        Xte, yte = enc.X[~is_train], enc.labels[~is_train]
        C = self.manifest.class_count
        t0 = time.perf_counter()
        if cell.svm_kind == "chi2":
            gram = chi2_gram(Xtr, Xte)
            model = svm_train(Xtr, ytr, "chi2", c.C, class_count=C, gram=gram)
            t1 = time.perf_counter()
            pred, scores = svm_predict(model, gram=gram.test)
        else:
            model = svm_train(Xtr, ytr, "linear", c.C, class_count=C)
            t1 = time.perf_counter()
            pred, scores = svm_predict(model, Xte)
        metrics = evaluate(pred, scores, yte, C)
        t2 = time.perf_counter()
        timings["train"] += t1 - t0
        timings["eval"] += t2 - t1
        keys[split] = {"pool": pool_key, "vocab": vocab_key, "encoding": enc_key,
                       "result": base_key}
        hits[split] = False
        _write_json(result_path, {"keys": keys[split], "metrics": metrics.as_dict()})
        return metrics

    def run_cell(self, cell: Cell) -> RunRecord:
        m = self.manifest
        D = encoding_dims(cell.method, cell.scheme, cell.K, m.class_count,
                          len(m.layout.components), self.config.pca_dims)
        record = RunRecord(cell, D, {s: 0.0 for s in STAGES})
        try:
            per_split = [self.run_split(cell, s, record.timings, record.cache_keys,
                                        record.cache_hits) for s in self.splits]
            record.report = aggregate(per_split, {
                "method": cell.method, "scheme": cell.scheme, "sampling": cell.sampling,
                "K": cell.K, "D": D, "seed": self.config.seed})
        except Exception as exc:
            log.warning("cell %s failed: %s", cell.name, exc)
            record.error = f"{type(exc).__name__}: {exc}"
            log.debug(traceback.format_exc())
        record.cache_keys = {str(k): v for k, v in record.cache_keys.items()}
        record.cache_hits = {str(k): v for k, v in record.cache_hits.items()}
        return record

    def record_path(self, cell: Cell) -> Path:
        return self.out / "records" / f"{cell.name}.json"


def run_grid(config: ExperimentConfig, workers: int = 1, resume: bool = False,
             manifest: DatasetManifest | None = None) -> list[RunRecord]:
    """Run every grid cell once; a failing cell is recorded, not raised.

    With ``resume`` a cell whose record already exists without error is read
    back instead of re-run. Without it the cell is re-run, reusing any cached
    stage artifacts.
    """
    runner = GridRunner(config, manifest)
    cells = config.cells()

    def one(cell):
        path = runner.record_path(cell)
        if resume and path.exists():
            rec = RunRecord.from_dict(json.loads(path.read_text()))
            if rec.error is None:
                return rec
        rec = runner.run_cell(cell)
        _write_json(path, rec.to_dict())
        return rec

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            records = list(ex.map(one, cells))
    else:
        records = [one(c) for c in cells]
    return records


def load_records(out_dir) -> list[RunRecord]:
    paths = sorted((Path(out_dir) / "records").glob("*.json"))
    return [RunRecord.from_dict(json.loads(p.read_text())) for p in paths]


# -- reporting -----------------------------------------------------------------

_METRIC_LABEL = {"acc": "Acc", "map": "mAP", "mf1": "mF1"}


def best_per_metric(records) -> dict[str, RunRecord]:
    ok = [r for r in records if r.report is not None]
    if not ok:
        raise ValueError("no successful records")
    return {m: max(ok, key=lambda r: (r.report.mean[m], -ok.index(r))) for m in METRICS}


def plot_series(records, metric: str, axis: str) -> list[dict]:
    """Rows for a metric-vs-K or metric-vs-D plot with ordinal x positions."""
    ok = [r for r in records if r.report is not None]
    values = sorted({getattr(r.cell, "K") if axis == "K" else r.D for r in ok})
    rank = {v: i for i, v in enumerate(values)}
    rows = []
    for r in sorted(ok, key=lambda r: (r.cell.representation, r.cell.scheme, r.cell.sampling,
                                        r.cell.K)):
        x = r.cell.K if axis == "K" else r.D
        rows.append({"representation": r.cell.representation, "scheme": r.cell.scheme,
                     "sampling": r.cell.sampling, "K": r.cell.K, "D": r.D, "metric": metric,
                     "mean": r.report.mean[metric], "std": r.report.std[metric],
                     "x_rank": rank[x]})
    return rows


def _pct(mean, std, n_splits):
    s = f"{100 * mean:.2f}"
    return s + (f" ±{100 * std:.2f}" if n_splits > 1 else "")


def results_table(records) -> str:
    lines = ["variables\tK\tD\tAcc\tmAP\tmF1\terror"]
    for r in sorted(records, key=lambda r: (r.cell.variables, r.cell.K)):
        if r.report is None:
            lines.append(f"{r.cell.variables}\t{r.cell.K}\t{r.D}\t-\t-\t-\t{r.error}")
            continue
        n = len(r.report.per_split)
        cols = [_pct(r.report.mean[m], r.report.std[m], n) for m in METRICS]
        lines.append(f"{r.cell.variables}\t{r.cell.K}\t{r.D}\t" + "\t".join(cols) + "\t")
    return "\n".join(lines) + "\n"


def summary_table(records) -> str:
    """Best configuration per metric: value, variables string and K - D pair."""
    best = best_per_metric(records)
    lines = ["metric\tbest\tvariables\tK-D"]
    for m, r in best.items():
        n = len(r.report.per_split)
        lines.append(f"{_METRIC_LABEL[m]}\t{_pct(r.report.mean[m], r.report.std[m], n)}\t"
                     f"{r.cell.variables}\t{r.cell.K} - {r.D:,}")
    return "\n".join(lines) + "\n"


PLOT_COLUMNS = ("representation", "scheme", "sampling", "K", "D", "metric", "mean", "std",
                "x_rank")


def emit_results(records, out_dir) -> dict[str, Path]:
    """Write the results table, best-per-metric summary, JSON and plot-data files."""
    records = list(records)
    if not records:
        raise ValueError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    written["table"] = out / "results.tsv"
    written["table"].write_text(results_table(records))
    written["json"] = out / "results.json"
    written["json"].write_text(json.dumps([r.to_dict() for r in records], indent=1,
                                          sort_keys=True))
    if any(r.report is not None for r in records):
        written["summary"] = out / "summary.tsv"
        written["summary"].write_text(summary_table(records))
        for metric in METRICS:
            for axis in ("K", "D"):
                p = out / f"plot_{metric}_vs_{axis}.tsv"
                rows = plot_series(records, metric, axis)
                with open(p, "w") as fh:
                    fh.write("\t".join(PLOT_COLUMNS) + "\n")
                    for row in rows:
                        fh.write("\t".join(_fmt(row[c]) for c in PLOT_COLUMNS) + "\n")
                written[f"{metric}_vs_{axis}"] = p
    return written


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)
