"""Fixed-length video encodings: BoF, BoF per category, VLAD and Fisher vectors.

Every encoder works block by block (one block per layout component under
scheme 2a, a single joint block under 2b), normalises each block, then
normalises the concatenation:

=================  ====================================  ==================
method             per block                             joint
=================  ====================================  ==================
bof / per-cat      hard-assignment histogram, L1         L1
vlad               residual sums, L2                     L2
fisher             mean/variance gradients, sqrt, L2     L2
=================  ====================================  ==================
"""
from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import DatasetManifest, iter_feature_chunks
from .vocabulary import VocabularySet, nearest

METHODS = ("bof", "bof_per_category", "vlad", "fisher")
METHOD_CODES = {"3a": "bof", "3b": "bof_per_category", "3c": "vlad", "3d": "fisher"}
CODE_OF_METHOD = {v: k for k, v in METHOD_CODES.items()}
ENCODING_MAGIC = b"ACTIONVOCAB-ENCODING"
ENCODING_VERSION = 1
_ROUNDING = 64 * np.finfo(float).eps


class EncodingError(ValueError):
    pass


def normalize_method(method: str) -> str:
    m = METHOD_CODES.get(method, method)
    if m not in METHODS:
        raise ValueError(f"unknown encoding method {method!r}")
    return m


def vocabulary_kind(method: str) -> tuple[str, bool]:
    """(vocabulary kind, per_category) needed by an encoding method."""
    method = normalize_method(method)
    return {"bof": ("bof", False), "bof_per_category": ("bof", True),
            "vlad": ("vlad", False), "fisher": ("fisher", False)}[method]


def encoding_dims(method: str, scheme: str, K: int, class_count: int = 1,
                  n_components: int = 5, pca_dims: int = 24) -> int:
    """Length of the encoding for a (method, scheme, K, C) combination."""
    method = normalize_method(method)
    blocks = n_components if scheme == "2a" else 1
    if method == "bof":
        return K * blocks
    if method == "bof_per_category":
        return K * class_count * blocks
    # the joint PCA block has pca_dims * n_components inputs, so D matches 2a
    per_cluster = pca_dims * n_components
    return per_cluster * K * (2 if method == "fisher" else 1)


@dataclass
class Encoding:
    vector: np.ndarray
    method: str
    scheme: str
    empty: bool = False

    @property
    def D(self) -> int:
        return len(self.vector)


def _l1(v):
    s = np.abs(v).sum()
    return v / s if s > 0 else v


def _l2(v):
    s = np.sqrt(np.dot(v, v))
    return v / s if s > 0 else v


def power_normalize(v, alpha: float = 0.5):
    return np.sign(v) * np.abs(v) ** alpha


def _check(features, vocab: VocabularySet, kinds) -> np.ndarray:
    if vocab.kind not in kinds:
        raise EncodingError(f"vocabulary kind {vocab.kind!r} cannot produce this encoding")
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1 and X.size == 0:
        X = X.reshape(0, vocab.layout.total_dims)
    if X.ndim != 2 or X.shape[1] != vocab.layout.total_dims:
        raise EncodingError(f"features of shape {X.shape} do not match layout "
                            f"({vocab.layout.total_dims} dims)")
    return X


def _finish(blocks, method, scheme, norm) -> Encoding:
    vec = norm(np.concatenate([norm(b) for b in blocks]))
    empty = not np.any(vec)
    return Encoding(vec, method, scheme, empty)


# -- hard assignment ----------------------------------------------------------

def bof_histograms(vocab: VocabularySet, X: np.ndarray) -> list[np.ndarray]:
    """Raw per-block assignment counts."""
    out = []
    for key, Z in vocab.project(X).items():
        C = vocab.universal_centroids(key)
        counts = np.bincount(nearest(Z, C)[0], minlength=len(C)) if len(Z) else np.zeros(len(C))
        out.append(counts.astype(np.float64))
    return out


def bof_encode(features, vocab: VocabularySet) -> Encoding:
    """Nearest-centroid histogram, L1 per component and then jointly.

    Per-category vocabularies act as one universal codebook of K*C words.
    """
    X = _check(features, vocab, ("bof",))
    method = "bof_per_category" if vocab.per_category else "bof"
    return _finish(bof_histograms(vocab, X), method, vocab.scheme, _l1)


def vlad_blocks(vocab: VocabularySet, X: np.ndarray) -> list[np.ndarray]:
    out = []
    for key, Z in vocab.project(X).items():
        C = vocab.universal_centroids(key)
        acc = np.zeros_like(C)
        if len(Z):
            lab = nearest(Z, C)[0]
            np.add.at(acc, lab, Z - C[lab])
            # residuals at rounding level (features on their centroids) count as zero
            scale = np.linalg.norm(Z) + np.linalg.norm(C[lab])
            if np.linalg.norm(acc) <= _ROUNDING * scale:
                acc[:] = 0.0
        out.append(acc.ravel())
    return out


def vlad_encode(features, vocab: VocabularySet) -> Encoding:
    """Residual sums to the nearest PCA-space centroid, L2 per component then jointly."""
    X = _check(features, vocab, ("vlad",))
    return _finish(vlad_blocks(vocab, X), "vlad", vocab.scheme, _l2)


# -- Fisher vectors -------------------------------------------------------------

def fisher_raw(gmm, Z: np.ndarray) -> np.ndarray:
    """Unnormalised Fisher vector (mean block, then variance block) of reduced features.

    For Gaussian k with weight w, mean mu and std sigma::

        G_mu  = 1/(n sqrt(w))   sum_i g_ik (x_i - mu) / sigma
        G_sig = 1/(n sqrt(2w))  sum_i g_ik [((x_i - mu) / sigma)^2 - 1]
    """
    K, d = gmm.means.shape
    n = len(Z)
    if n == 0:
        return np.zeros(2 * K * d)
    R = gmm.responsibilities(Z)                       # (n, K)
    sigma = np.sqrt(gmm.variances)
    Nk = R.sum(axis=0)[:, None]
    S1 = R.T @ Z                                       # sum_i g_ik x_i
    S2 = R.T @ (Z * Z)
    # expand sum g ((x - mu)/sigma) and sum g ((x - mu)/sigma)^2 from moments
    first = (S1 - Nk * gmm.means) / sigma
    second = (S2 - 2.0 * gmm.means * S1 + Nk * gmm.means ** 2) / gmm.variances - Nk
    w = gmm.weights[:, None]
    g_mu = first / (n * np.sqrt(w))
    g_sig = second / (n * np.sqrt(2.0 * w))
    return np.concatenate([g_mu.ravel(), g_sig.ravel()])


def fisher_blocks(vocab: VocabularySet, X: np.ndarray) -> list[np.ndarray]:
    out = []
    for key, Z in vocab.project(X).items():
        out.append(np.concatenate([fisher_raw(g, Z) for g in vocab.models(key)]))
    return out


def fisher_encode(features, vocab: VocabularySet, alpha: float = 0.5) -> Encoding:
    """Fisher vector with signed power normalisation and L2 per component, then joint L2."""
    X = _check(features, vocab, ("fisher",))
    blocks = [_l2(power_normalize(b, alpha)) for b in fisher_blocks(vocab, X)]
    vec = _l2(np.concatenate(blocks))
    return Encoding(vec, "fisher", vocab.scheme, not np.any(vec))


def encode(features, vocab: VocabularySet, method: str | None = None) -> Encoding:
    method = normalize_method(method) if method else {
        "bof": "bof_per_category" if vocab.per_category else "bof",
        "vlad": "vlad", "fisher": "fisher"}[vocab.kind]
    kind, per_cat = vocabulary_kind(method)
    if kind != vocab.kind or per_cat != vocab.per_category:
        raise EncodingError(f"method {method!r} needs a {kind!r} vocabulary "
                            f"(per_category={per_cat})")
    if method == "fisher":
        return fisher_encode(features, vocab)
    if method == "vlad":
        return vlad_encode(features, vocab)
    return bof_encode(features, vocab)


def vocab_dims(vocab: VocabularySet) -> int:
    method = {"bof": "bof_per_category" if vocab.per_category else "bof",
              "vlad": "vlad", "fisher": "fisher"}[vocab.kind]
    return encoding_dims(method, vocab.scheme, vocab.K, vocab.class_count,
                         len(vocab.layout.components), vocab.pca_dims)


# -- datasets -------------------------------------------------------------------

@dataclass
class EncodedDataset:
    X: np.ndarray
    labels: np.ndarray
    video_ids: list[str]
    empty: np.ndarray
    method: str
    scheme: str
    K: int
    layout_hash: str

    @property
    def D(self) -> int:
        return self.X.shape[1]

    def save(self, path) -> None:
        """Text header line (JSON) followed by raw little-endian arrays."""
        header = {"version": ENCODING_VERSION, "method": self.method, "scheme": self.scheme,
                  "K": self.K, "D": self.D, "N": len(self.X), "layout_hash": self.layout_hash,
                  "video_ids": list(self.video_ids)}
        buf = io.BytesIO()
        buf.write(ENCODING_MAGIC + b" " + json.dumps(header).encode() + b"\n")
        buf.write(np.ascontiguousarray(self.X, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        buf.write(np.ascontiguousarray(self.empty, dtype="u1").tobytes())
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.write_bytes(buf.getvalue())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "EncodedDataset":
        data = Path(path).read_bytes()
        line, _, body = data.partition(b"\n")
        if not line.startswith(ENCODING_MAGIC):
            raise EncodingError(f"{path} is not an encoding file")
        h = json.loads(line[len(ENCODING_MAGIC) + 1:])
        if h["version"] != ENCODING_VERSION:
            raise EncodingError(f"unsupported encoding version {h['version']}")
        N, D = h["N"], h["D"]
        if len(body) != N * D * 8 + N * 8 + N:
            raise EncodingError(f"{path}: body length does not match header")
        X = np.frombuffer(body, "<f8", N * D).reshape(N, D).copy()
        labels = np.frombuffer(body, "<i8", N, offset=N * D * 8).copy()
        empty = np.frombuffer(body, "u1", N, offset=N * D * 8 + N * 8).astype(bool)
        return cls(X, labels, h["video_ids"], empty, h["method"], h["scheme"], h["K"],
                   h["layout_hash"])


def _read_video(manifest, entry, chunk_rows):
    blocks = list(iter_feature_chunks(entry, manifest.layout, chunk_rows, manifest.root))
    if not blocks:
        return np.empty((0, manifest.layout.total_dims))
    return np.concatenate(blocks)


def encode_dataset(manifest: DatasetManifest, vocab: VocabularySet, method: str | None = None,
                   video_ids=None, chunk_rows: int = 65536) -> EncodedDataset:
    """Encode videos (all, or ``video_ids``) in manifest order."""
    wanted = None if video_ids is None else set(video_ids)
    entries = [v for v in manifest.videos if wanted is None or v.video_id in wanted]
    vecs, labels, empty = [], [], []
    method_name = None
    for entry in entries:
        try:
            enc = encode(_read_video(manifest, entry, chunk_rows), vocab, method)
        except Exception as exc:
            raise EncodingError(f"video {entry.video_id}: {exc}") from exc
        method_name = enc.method
        vecs.append(enc.vector)
        labels.append(entry.class_label)
        empty.append(enc.empty)
    D = vocab_dims(vocab)
    X = np.vstack(vecs) if vecs else np.empty((0, D))
    return EncodedDataset(X, np.asarray(labels, dtype=np.int64),
                          [e.video_id for e in entries], np.asarray(empty, dtype=bool),
                          method_name or normalize_method(method or vocab.kind), vocab.scheme,
                          vocab.K, vocab.layout.fingerprint())
