"""Memory-bounded feature sampling for vocabulary learning.

Two regimes are supported:

``1a`` (balanced)
    equal video quotas per class, at most ``floor(mu_d)`` features per
    video, then an equal number of features per class in the final pool.
``1b`` (uniform)
    videos drawn uniformly from the training set, all their features
    loaded, then a uniform draw for the final pool.

All randomness derives from one integer seed. Each stage (and each video
within the loading stage) gets its own child stream, so results do not
depend on the order in which videos are processed.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import (FEATURE_DTYPE, ComponentLayout, DatasetManifest,
                       read_features)

MAX_POOL = 10 ** 6
POOL_PER_CLUSTER = 10 ** 4

_STAGE_VIDEOS = 1
_STAGE_LOAD = 2
_STAGE_FINAL = 3

_MODE_ALIASES = {"1a": "1a", "balanced": "1a", "balanced_1a": "1a",
                 "1b": "1b", "uniform": "1b", "uniform_1b": "1b"}


class SamplingError(ValueError):
    pass


def normalize_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[str(mode).lower()]
    except KeyError:
        raise ValueError(f"unknown sampling mode {mode!r}") from None


def stage_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *keys]))


@dataclass(frozen=True)
class SamplingConfig:
    mode: str = "1a"
    memory_gb: float = 1.6
    K: int = 32
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        if not self.memory_gb > 0:
            raise ValueError("memory budget must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass
class FeaturePool:
    """Sampled descriptors with the (video, class) each row came from."""

    rows: np.ndarray
    video_ids: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.video_ids = np.asarray(self.video_ids, dtype=object)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.rows) == len(self.video_ids) == len(self.labels)):
            raise ValueError("provenance length must equal the number of rows")

    def __len__(self) -> int:
        return len(self.rows)

    def take(self, idx) -> "FeaturePool":
        idx = np.asarray(idx, dtype=np.int64)
        return FeaturePool(self.rows[idx], self.video_ids[idx], self.labels[idx],
                           self.class_count)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def save(self, path) -> None:
        """Rows as headerless float32 records plus a ``.prov.tsv`` sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.write_bytes(np.ascontiguousarray(self.rows, dtype=FEATURE_DTYPE).tobytes())
        side = _sidecar(path)
        stmp = side.with_name(side.name + f".tmp{os.getpid()}")
        with open(stmp, "w") as fh:
            fh.write(f"#classes\t{self.class_count}\t{self.rows.shape[1]}\n")
            for vid, lab in zip(self.video_ids, self.labels):
                fh.write(f"{vid}\t{lab}\n")
        os.replace(stmp, side)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "FeaturePool":
        path = Path(path)
        with open(_sidecar(path)) as fh:
            head = fh.readline().rstrip("\n").split("\t")
            class_count, dims = int(head[1]), int(head[2])
            prov = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
        rows = np.fromfile(path, dtype=FEATURE_DTYPE)
        if rows.size != len(prov) * dims:
            raise ValueError(f"{path}: {rows.size} values for {len(prov)} provenance rows")
        return cls(rows.reshape(len(prov), dims), [p[0] for p in prov],
                   [int(p[1]) for p in prov], class_count)


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".prov.tsv")


def pool_cap(K: int) -> int:
    """Final pool size limit: 10^4 features per cluster, at most 10^6."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return min(MAX_POOL, K * POOL_PER_CLUSTER)


def mean_feature_count(manifest_or_counts) -> float:
    if isinstance(manifest_or_counts, DatasetManifest):
        counts = [v.feature_count for v in manifest_or_counts.videos]
    else:
        counts = list(manifest_or_counts)
    if not counts:
        raise ValueError("mean feature count of an empty dataset")
    return math.fsum(counts) / len(counts)


def compute_vmax(memory_gb: float, mean_count: float,
                 feature_size_gb: float | None = None) -> int:
    """Largest number of average-length videos that fit in ``memory_gb``.

    ``feature_size_gb`` defaults to the size of one 426-dim float32 feature.
    """
    if feature_size_gb is None:
        feature_size_gb = ComponentLayout.default().feature_size_gb
    if memory_gb <= 0 or mean_count <= 0 or feature_size_gb <= 0:
        raise ValueError("compute_vmax inputs must be positive")
    return math.floor(memory_gb / (mean_count * feature_size_gb))


def sample_videos(manifest: DatasetManifest, v_max: int, mode: str, seed: int,
                  split: int = 0) -> list[str]:
    """Pick training videos for the pool; result is in manifest order."""
    mode = normalize_mode(mode)
    if v_max < 1:
        raise SamplingError("V_max is 0: memory budget too small for one average video")
    train = manifest.train_videos(split)
    rng = stage_rng(seed, _STAGE_VIDEOS, split)
    C = manifest.class_count
    chosen: set[str] = set()
    if mode == "1a":
        per_class = v_max // C
        if per_class < 1:
            raise SamplingError(f"V_max={v_max} is smaller than the class count {C}")
        for c in range(C):
            ids = [v.video_id for v in train if v.class_label == c]
            if not ids:
                raise SamplingError(f"class {c} has no training videos")
            if len(ids) <= per_class:
                chosen.update(ids)
            else:
                chosen.update(ids[j] for j in rng.choice(len(ids), per_class, replace=False))
    else:
        ids = [v.video_id for v in train]
        if len(ids) <= v_max:
            chosen.update(ids)
        else:
            chosen.update(ids[j] for j in rng.choice(len(ids), v_max, replace=False))
    return [v.video_id for v in train if v.video_id in chosen]


def load_pool(manifest: DatasetManifest, selected: Sequence[str], mode: str,
              mean_count: float, seed: int = 0) -> FeaturePool:
    """Read features of the selected videos.

    Mode 1a keeps ``min(n, floor(mean_count))`` rows per video, drawn without
    replacement; mode 1b keeps every row.
    """
    mode = normalize_mode(mode)
    if not selected:
        raise SamplingError("no videos selected")
    by_id = {v.video_id: (i, v) for i, v in enumerate(manifest.videos)}
    per_video_cap = int(math.floor(mean_count))
    blocks, vids, labs = [], [], []
    for vid in selected:
        index, entry = by_id[vid]
        if mode == "1a" and entry.feature_count > per_video_cap:
            rng = stage_rng(seed, _STAGE_LOAD, index)
            rows = rng.choice(entry.feature_count, per_video_cap, replace=False)
            block = read_features(entry, manifest.layout, manifest.root, rows=rows)
        else:
            block = read_features(entry, manifest.layout, manifest.root)
        blocks.append(block)
        vids.extend([vid] * len(block))
        labs.extend([entry.class_label] * len(block))
    rows = np.concatenate(blocks) if blocks else np.empty((0, manifest.layout.total_dims),
                                                         FEATURE_DTYPE)
    return FeaturePool(rows, vids, labs, manifest.class_count)


def _balanced_quota(available: np.ndarray, s: int) -> np.ndarray:
    """Per-class draw sizes summing to ``s``: equal shares, deficits water-filled."""
    C = len(available)
    take = np.minimum(available, s // C)
    while True:
        deficit = s - take.sum()
        open_ = np.flatnonzero(take < available)
        share = deficit // len(open_) if len(open_) else 0
        if share == 0:
            break
        take[open_] = np.minimum(available[open_], take[open_] + share)
    return take


def final_subsample(pool: FeaturePool, K: int, mode: str, seed: int) -> FeaturePool:
    """Cap the pool at ``min(10^6, 10^4 K)`` rows, balanced per class under 1a."""
    mode = normalize_mode(mode)
    n = len(pool)
    if n == 0:
        raise SamplingError("empty pool")
    s = min(pool_cap(K), n)
    rng = stage_rng(seed, _STAGE_FINAL)
    if mode == "1b":
        idx = rng.choice(n, s, replace=False)
    else:
        by_class = [np.flatnonzero(pool.labels == c) for c in range(pool.class_count)]
        quota = _balanced_quota(np.array([len(b) for b in by_class]), s)
        picked = [b[rng.choice(len(b), q, replace=False)] if q else b[:0]
                  for b, q in zip(by_class, quota)]
        idx = np.concatenate(picked)
        short = s - len(idx)
        if short:
            rest = np.setdiff1d(np.arange(n), idx)
            idx = np.concatenate([idx, rest[rng.choice(len(rest), short, replace=False)]])
    return pool.take(np.sort(idx))


def build_pool(manifest: DatasetManifest, config: SamplingConfig, split: int = 0,
               with_intermediate: bool = False):
    """Mean count, V_max, video choice, loading and the final cap, for one split."""
    mu = mean_feature_count(manifest)
    v_max = compute_vmax(config.memory_gb, mu, manifest.layout.feature_size_gb)
    selected = sample_videos(manifest, v_max, config.mode, config.seed, split)
    raw = load_pool(manifest, selected, config.mode, mu, config.seed)
    final = final_subsample(raw, config.K, config.mode, config.seed)
    return (final, raw) if with_intermediate else final
