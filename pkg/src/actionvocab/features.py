"""On-disk feature store: layouts, manifests, binary feature files.

Feature files are headerless little-endian float32 matrices, one file per
video, ``feature_count x layout.total_dims`` values in row-major order.
The layout and per-video metadata live in a line-oriented manifest.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

FEATURE_DTYPE = np.dtype("<f4")
BYTES_PER_VALUE = FEATURE_DTYPE.itemsize
GIB = 1024 ** 3

MANIFEST_MAGIC = "#actionvocab-manifest"
MANIFEST_VERSION = 1


class FeatureFileError(ValueError):
    """A feature file is truncated, unreadable or inconsistent with its entry."""


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ComponentLayout:
    """Ordered named slices of one descriptor."""

    components: tuple[tuple[str, int], ...]

    def __post_init__(self):
        comps = tuple((str(n), int(d)) for n, d in self.components)
        if not comps:
            raise ValueError("layout needs at least one component")
        names = [n for n, _ in comps]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate component names in {names}")
        for name, dims in comps:
            if dims <= 0:
                raise ValueError(f"component {name!r} has non-positive dims {dims}")
            if not name or any(c in name for c in ",:\t\n "):
                raise ValueError(f"invalid component name {name!r}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def default(cls) -> "ComponentLayout":
        return cls((("traj", 30), ("hog", 96), ("hof", 108), ("mbhx", 96), ("mbhy", 96)))

    @property
    def total_dims(self) -> int:
        return sum(d for _, d in self.components)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.components]

    @property
    def bytes_per_feature(self) -> int:
        return self.total_dims * BYTES_PER_VALUE

    @property
    def feature_size_gb(self) -> float:
        """Memory for one feature in GiB (the per-feature size used by V_max)."""
        return self.bytes_per_feature / GIB

    def slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, dims in self.components:
            out[name] = slice(start, start + dims)
            start += dims
        return out

    def to_text(self) -> str:
        return ",".join(f"{n}:{d}" for n, d in self.components)

    @classmethod
    def from_text(cls, text: str) -> "ComponentLayout":
        comps = []
        for part in text.strip().split(","):
            name, _, dims = part.partition(":")
            comps.append((name, int(dims)))
        return cls(tuple(comps))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    class_label: int
    feature_count: int
    feature_path: str

    def __post_init__(self):
        if self.feature_count < 0:
            raise ValueError(f"{self.video_id}: negative feature count")
        if not self.video_id or any(c in self.video_id for c in ",\t\n "):
            raise ValueError(f"invalid video id {self.video_id!r}")


@dataclass(frozen=True)
class Split:
    train: frozenset[str]
    test: frozenset[str]


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    class_names: tuple[str, ...]
    videos: tuple[VideoEntry, ...]
    splits: tuple[Split, ...]
    layout: ComponentLayout = field(default_factory=ComponentLayout.default)
    root: str = "."

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "videos", tuple(self.videos))
        object.__setattr__(self, "splits", tuple(
            Split(frozenset(s.train), frozenset(s.test)) for s in self.splits))
        self.validate()

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    def validate(self) -> None:
        C = self.class_count
        if C < 2:
            raise ManifestError("a dataset needs at least two classes")
        ids = [v.video_id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate video ids")
        for v in self.videos:
            if not 0 <= v.class_label < C:
                raise ManifestError(f"{v.video_id}: class {v.class_label} outside [0, {C})")
        known = set(ids)
        labels = self.labels_by_id()
        for i, split in enumerate(self.splits):
            if split.train & split.test:
                raise ManifestError(f"split {i}: train and test overlap")
            unknown = (split.train | split.test) - known
            if unknown:
                raise ManifestError(f"split {i}: unknown videos {sorted(unknown)[:5]}")
            present = {labels[v] for v in split.train}
            missing = set(range(C)) - present
            if missing:
                raise ManifestError(f"split {i}: classes {sorted(missing)} have no training video")

    def labels_by_id(self) -> dict[str, int]:
        return {v.video_id: v.class_label for v in self.videos}

    def path_of(self, entry: VideoEntry) -> Path:
        p = Path(entry.feature_path)
        return p if p.is_absolute() else Path(self.root) / p

    def train_videos(self, split: int = 0) -> list[VideoEntry]:
        ids = self.splits[split].train
        return [v for v in self.videos if v.video_id in ids]

    def test_videos(self, split: int = 0) -> list[VideoEntry]:
        ids = self.splits[split].test
        return [v for v in self.videos if v.video_id in ids]

    def content_hash(self) -> str:
        """Hash of everything that determines downstream results."""
        h = hashlib.sha256()
        h.update(manifest_text(self).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class DatasetStats:
    video_count: int
    sum: int
    mean: float
    std_dev: float
    median: float
    max: int
    min: int
    memory_gb: float

    def as_rows(self) -> list[tuple[str, str]]:
        return [
            ("Videos", f"{self.video_count}"),
            ("Sum", f"{self.sum}"),
            ("Memory (GB)", f"{self.memory_gb:.3f}"),
            ("Mean", f"{self.mean:.1f}"),
            ("Std Dev", f"{self.std_dev:.1f}"),
            ("Median", f"{self.median:.1f}"),
            ("Maximum", f"{self.max}"),
            ("Minimum", f"{self.min}"),
        ]


def _as_records(records, layout: ComponentLayout) -> np.ndarray:
    if isinstance(records, np.ndarray):
        arr = records
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, layout.total_dims)
    else:
        rows = [np.asarray(r, dtype=np.float64) for r in records]
        for r in rows:
            if r.shape != (layout.total_dims,):
                raise ValueError(f"record has {r.size} values, layout expects {layout.total_dims}")
        arr = np.stack(rows) if rows else np.empty((0, layout.total_dims))
    if arr.ndim != 2 or arr.shape[1] != layout.total_dims:
        raise ValueError(f"records have shape {arr.shape}, layout expects (*, {layout.total_dims})")
    if not np.all(np.isfinite(arr)):
        raise ValueError("records contain NaN or Inf")
    out = arr.astype(FEATURE_DTYPE)
    if not np.all(np.isfinite(out)):
        raise ValueError("records overflow float32")
    return out


def write_features(records, layout: ComponentLayout, path, video_id=None,
                   class_label=0) -> VideoEntry:
    """Write a video's features as a headerless little-endian float32 file.

    ``records`` may be an ``(n, total_dims)`` array or a sequence of rows.
    Non-finite values are rejected. The write is atomic.
    """
    arr = _as_records(records, layout)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(np.ascontiguousarray(arr).tobytes())
    os.replace(tmp, path)
    return VideoEntry(video_id or path.stem, int(class_label), int(arr.shape[0]), str(path))


def _checked_count(path: Path, layout: ComponentLayout) -> int:
    try:
        size = path.stat().st_size
    except OSError as exc:
        raise FeatureFileError(f"cannot read {path}: {exc}") from exc
    per = layout.bytes_per_feature
    if size % per:
        raise FeatureFileError(
            f"{path}: {size} bytes is not a multiple of {per} (truncated or wrong layout)")
    return size // per


def _open_entry(entry: VideoEntry, layout: ComponentLayout, root=None) -> Path:
    path = Path(entry.feature_path)
    if root is not None and not path.is_absolute():
        path = Path(root) / path
    n = _checked_count(path, layout)
    if n != entry.feature_count:
        raise FeatureFileError(
            f"{entry.video_id}: file holds {n} features, manifest says {entry.feature_count}")
    return path


def iter_feature_chunks(entry: VideoEntry, layout: ComponentLayout, chunk_rows=4096,
                        root=None) -> Iterator[np.ndarray]:
    """Yield the video's features as float32 blocks of at most ``chunk_rows`` rows."""
    path = _open_entry(entry, layout, root)
    D = layout.total_dims
    with open(path, "rb") as fh:
        while True:
            buf = fh.read(chunk_rows * layout.bytes_per_feature)
            if not buf:
                break
            yield np.frombuffer(buf, dtype=FEATURE_DTYPE).reshape(-1, D)


def stream_features(entry: VideoEntry, layout: ComponentLayout, root=None,
                    chunk_rows=4096) -> Iterator[np.ndarray]:
    """Yield one record at a time in file order, reading in bounded chunks."""
    for block in iter_feature_chunks(entry, layout, chunk_rows, root):
        yield from block


def read_features(entry: VideoEntry, layout: ComponentLayout, root=None,
                  rows: Sequence[int] | None = None) -> np.ndarray:
    """Load all features of a video, or only the given row indices."""
    path = _open_entry(entry, layout, root)
    if entry.feature_count == 0:
        return np.empty((0, layout.total_dims), dtype=FEATURE_DTYPE)
    mm = np.memmap(path, dtype=FEATURE_DTYPE, mode="r",
                   shape=(entry.feature_count, layout.total_dims))
    try:
        if rows is None:
            return np.array(mm)
        return np.array(mm[np.sort(np.asarray(rows, dtype=np.int64))])
    finally:
        del mm


def load_video(manifest: DatasetManifest, entry: VideoEntry) -> np.ndarray:
    return read_features(entry, manifest.layout, root=manifest.root)


def dataset_stats(manifest_or_counts, layout: ComponentLayout | None = None) -> DatasetStats:
    """Per-video feature-count statistics over a manifest (or a list of counts)."""
    if isinstance(manifest_or_counts, DatasetManifest):
        counts = [v.feature_count for v in manifest_or_counts.videos]
        layout = manifest_or_counts.layout
    else:
        counts = list(manifest_or_counts)
        layout = layout or ComponentLayout.default()
    if not counts:
        raise ValueError("dataset_stats needs at least one video")
    c = np.asarray(counts, dtype=np.int64)
    total = int(c.sum())
    return DatasetStats(
        video_count=len(c),
        sum=total,
        mean=total / len(c),
        std_dev=float(np.std(c)),
        median=float(np.median(c)),
        max=int(c.max()),
        min=int(c.min()),
        memory_gb=total * layout.bytes_per_feature / GIB,
    )


# -- manifest text format ---------------------------------------------------

def manifest_text(m: DatasetManifest) -> str:
    lines = [f"{MANIFEST_MAGIC}\t{MANIFEST_VERSION}",
             f"name\t{m.name}",
             f"layout\t{m.layout.to_text()}"]
    for i, cname in enumerate(m.class_names):
        lines.append(f"class\t{i}\t{cname}")
    for v in m.videos:
        lines.append(f"video\t{v.video_id}\t{v.class_label}\t{v.feature_count}\t{v.feature_path}")
    order = {v.video_id: i for i, v in enumerate(m.videos)}
    for i, s in enumerate(m.splits):
        for part, ids in (("train", s.train), ("test", s.test)):
            lines.append(f"split\t{i}\t{part}\t{','.join(sorted(ids, key=order.get))}")
    return "\n".join(lines) + "\n"


def write_manifest(m: DatasetManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(manifest_text(m))
    os.replace(tmp, path)
    return path


def parse_manifest(text: str, root: str = ".") -> DatasetManifest:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(MANIFEST_MAGIC):
        raise ManifestError("not a manifest file (missing header)")
    version = int(lines[0].split("\t")[1])
    if version != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {version}")
    name, layout = "", ComponentLayout.default()
    classes: dict[int, str] = {}
    videos: list[VideoEntry] = []
    splits: dict[int, dict[str, set]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        cols = line.split("\t")
        try:
            kind = cols[0]
            if kind == "name":
                name = cols[1]
            elif kind == "layout":
                layout = ComponentLayout.from_text(cols[1])
            elif kind == "class":
                classes[int(cols[1])] = cols[2]
            elif kind == "video":
                videos.append(VideoEntry(cols[1], int(cols[2]), int(cols[3]), cols[4]))
            elif kind == "split":
                ids = {x for x in cols[3].split(",") if x} if len(cols) > 3 else set()
                splits.setdefault(int(cols[1]), {"train": set(), "test": set()})[cols[2]] |= ids
            else:
                raise ManifestError(f"unknown record type {kind!r}")
        except (IndexError, ValueError) as exc:
            raise ManifestError(f"line {lineno}: {exc}") from exc
    if sorted(classes) != list(range(len(classes))):
        raise ManifestError("class indices must be 0..C-1")
    return DatasetManifest(
        name=name,
        class_names=tuple(classes[i] for i in range(len(classes))),
        videos=tuple(videos),
        splits=tuple(Split(frozenset(splits[i]["train"]), frozenset(splits[i]["test"]))
                     for i in sorted(splits)),
        layout=layout,
        root=root,
    )


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    return parse_manifest(path.read_text(), root=str(path.parent))


def verify_manifest(m: DatasetManifest) -> None:
    """Check every feature file against its entry's count."""
    for v in m.videos:
        _open_entry(v, m.layout, m.root)

