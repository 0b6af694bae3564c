"""Visual vocabularies: restarted k-means, randomized PCA and diagonal GMMs.

A :class:`VocabularySet` bundles the models one encoding method needs:

* ``kind="bof"``: k-means codebooks on raw descriptor slices;
* ``kind="vlad"``: per-component PCA, then k-means in the reduced space;
* ``kind="fisher"``: per-component PCA, then diagonal-covariance GMMs.

Under scheme ``2a`` there is one model per layout component, under ``2b``
a single "joint" model on the concatenated descriptor (for the PCA kinds,
the concatenation of the reduced components).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import qr, svd
from scipy.special import logsumexp

from ._binio import read_arrays, write_arrays
from .features import ComponentLayout
from .sampler import FeaturePool

JOINT = "joint"
VOCAB_FORMAT_VERSION = 1

KMEANS_RESTARTS = 8
KMEANS_MAX_ITER = 300
PCA_DIMS = 24
PCA_OVERSAMPLE = 10
PCA_POWER_ITERS = 2
GMM_MAX_ITER = 100
GMM_TOL = 1e-6
GMM_VAR_FLOOR = 1e-4
GMM_MIN_WEIGHT = 1e-8

_SCHEMES = {"2a": "2a", "per_component": "2a", "per_component_2a": "2a",
            "2b": "2b", "joint": "2b", "joint_2b": "2b"}
KINDS = ("bof", "vlad", "fisher")


class VocabularyError(ValueError):
    pass


def normalize_scheme(scheme: str) -> str:
    try:
        return _SCHEMES[str(scheme).lower()]
    except KeyError:
        raise ValueError(f"unknown vocabulary scheme {scheme!r}") from None


def sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of X and rows of C."""
    d = (np.einsum("ij,ij->i", X, X)[:, None] - 2.0 * (X @ C.T)
         + np.einsum("ij,ij->i", C, C)[None, :])
    np.maximum(d, 0.0, out=d)
    return d


def nearest(X: np.ndarray, C: np.ndarray, chunk: int = 8192):
    """Index of (and squared distance to) the nearest centroid; ties go to the lower index."""
    n = len(X)
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    c2 = np.einsum("ij,ij->i", C, C)
    for s in range(0, n, chunk):
        Xs = X[s:s + chunk]
        # ||x||^2 is constant per row, so it only matters for the returned distance
        partial = c2 - 2.0 * (Xs @ C.T)
        lab = np.argmin(partial, axis=1)
        labels[s:s + chunk] = lab
        dist[s:s + chunk] = np.maximum(
            partial[np.arange(len(Xs)), lab] + np.einsum("ij,ij->i", Xs, Xs), 0.0)
    return labels, dist


@dataclass
class Codebook:
    centroids: np.ndarray
    component: str = JOINT
    category: int | None = None
    training_error: float = 0.0
    restart_errors: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def K(self) -> int:
        return len(self.centroids)

    def assign(self, X) -> np.ndarray:
        return nearest(np.asarray(X, dtype=np.float64), self.centroids)[0]


def _check_rows(X, K) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise VocabularyError(f"expected a 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise VocabularyError("input contains NaN or Inf")
    if K < 1 or len(X) < K:
        raise VocabularyError(f"need at least K={K} rows, got {len(X)}")
    return X


def _init_centroids(X, K, rng) -> np.ndarray:
    idx = rng.choice(len(X), K, replace=False)
    init = X[idx]
    if len(np.unique(init, axis=0)) == K:
        return init.copy()
    uniq = np.unique(X, axis=0)
    if len(uniq) < K:
        raise VocabularyError(f"only {len(uniq)} distinct rows for K={K}")
    return uniq[rng.choice(len(uniq), K, replace=False)]


def lloyd(X, centroids, max_iter=KMEANS_MAX_ITER):
    """Lloyd iterations until the assignment stops changing.

    Returns ``(centroids, labels, error, n_iter)``.
    """
    n, K = len(X), len(centroids)
    C = centroids.copy()
    prev = None
    for it in range(1, max_iter + 1):
        labels, dist = nearest(X, C)
        if prev is not None and np.array_equal(labels, prev):
            break
        counts = np.bincount(labels, minlength=K)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            # re-seed from the points worst served by their current centroid
            far = np.argsort(-dist, kind="stable")
            taken = 0
            for j in empty:
                while counts[labels[far[taken]]] <= 1:
                    taken += 1
                p = far[taken]
                counts[labels[p]] -= 1
                labels[p] = j
                counts[j] = 1
                taken += 1
        onehot = sp.csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(K, n))
        C = np.asarray(onehot @ X) / counts[:, None]
        prev = labels
    labels, dist = nearest(X, C)
    return C, labels, float(dist.sum()), it


def kmeans_fit(rows, K: int, restarts: int = KMEANS_RESTARTS, seed: int = 0,
               max_iter: int = KMEANS_MAX_ITER, component: str = JOINT,
               category: int | None = None) -> Codebook:
    """Best of ``restarts`` Lloyd runs, each seeded from distinct random rows.

    The restart with the lowest sum of squared distances is kept; all restart
    errors are recorded on the returned codebook.
    """
    X = _check_rows(rows, K)
    best, errors = None, []
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        C, _, err, it = lloyd(X, _init_centroids(X, K, rng), max_iter)
        errors.append(err)
        if best is None or err < best[1]:
            best = (C, err, it)
    return Codebook(best[0], component, category, best[1], errors, best[2])


@dataclass
class PcaModel:
    mean: np.ndarray
    projection: np.ndarray          # (target_dims, d), orthonormal rows
    explained_variance: np.ndarray
    component: str = JOINT

    @property
    def dims(self) -> int:
        return self.projection.shape[0]

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.projection.T

    def inverse_transform(self, Z) -> np.ndarray:
        return Z @ self.projection + self.mean


def randomized_range(A: np.ndarray, size: int, power_iters: int, rng) -> np.ndarray:
    """Orthonormal basis approximating the range of A (n x d) with ``size`` columns."""
    Q = qr(A @ rng.standard_normal((A.shape[1], size)), mode="economic")[0]
    for _ in range(power_iters):
        Q = qr(A.T @ Q, mode="economic")[0]
        Q = qr(A @ Q, mode="economic")[0]
    return Q


def pca_fit(rows, target_dims: int = PCA_DIMS, seed: int = 0,
            oversample: int = PCA_OVERSAMPLE, power_iters: int = PCA_POWER_ITERS,
            component: str = JOINT) -> PcaModel:
    """Randomized PCA (range finder + power iterations + small SVD)."""
    X = np.asarray(rows, dtype=np.float64)
    n, d = X.shape
    if d < target_dims or n < target_dims:
        raise VocabularyError(f"cannot reduce {n}x{d} data to {target_dims} dims")
    mean = X.mean(axis=0)
    A = X - mean
    size = min(d, n, target_dims + oversample)
    rng = np.random.default_rng(seed)
    Q = randomized_range(A, size, power_iters, rng)
    _, s, Vt = svd(Q.T @ A, full_matrices=False)
    if s[0] == 0 or s[target_dims - 1] <= s[0] * max(n, d) * np.finfo(float).eps:
        raise VocabularyError(f"data has rank below {target_dims}")
    return PcaModel(mean, Vt[:target_dims].copy(), s[:target_dims] ** 2 / max(n - 1, 1),
                    component)


@dataclass
class GmmModel:
    weights: np.ndarray             # (K,)
    means: np.ndarray               # (K, d)
    variances: np.ndarray           # (K, d)
    component: str = JOINT
    category: int | None = None
    loglik_history: list[float] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.weights)

    def log_joint(self, X) -> np.ndarray:
        """log w_k + log N(x | mu_k, diag var_k), shape (n, K)."""
        X = np.asarray(X, dtype=np.float64)
        prec = 1.0 / self.variances
        quad = ((X * X) @ prec.T - 2.0 * X @ (self.means * prec).T
                + np.sum(self.means ** 2 * prec, axis=1))
        log_det = np.sum(np.log(self.variances), axis=1)
        d = X.shape[1]
        return np.log(self.weights) - 0.5 * (d * np.log(2 * np.pi) + log_det + quad)

    def responsibilities(self, X) -> np.ndarray:
        lj = self.log_joint(X)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def mean_loglik(self, X) -> float:
        return float(np.mean(logsumexp(self.log_joint(X), axis=1)))

    def sample(self, n: int, rng) -> np.ndarray:
        comp = rng.choice(self.K, size=n, p=self.weights)
        return self.means[comp] + rng.standard_normal((n, self.means.shape[1])) \
            * np.sqrt(self.variances[comp])


def _em(X, gmm: GmmModel, floor: np.ndarray, max_iter, tol) -> GmmModel:
    history = []
    X2 = X * X
    for _ in range(max_iter):
        lj = gmm.log_joint(X)
        norm = logsumexp(lj, axis=1, keepdims=True)
        ll = float(np.mean(norm))
        history.append(ll)
        if len(history) > 1 and abs(ll - history[-2]) < tol * abs(history[-2]):
            break
        R = np.exp(lj - norm)
        Nk = R.sum(axis=0)
        if np.any(Nk <= 0):
            gmm.weights = Nk / len(X)
            break
        means = (R.T @ X) / Nk[:, None]
        var = (R.T @ X2) / Nk[:, None] - means ** 2
        gmm = GmmModel(Nk / len(X), means, np.maximum(var, floor), gmm.component,
                       gmm.category)
    gmm.loglik_history = history
    return gmm


def gmm_fit(rows, K: int, seed: int = 0, restarts: int = KMEANS_RESTARTS,
            max_iter: int = GMM_MAX_ITER, tol: float = GMM_TOL,
            component: str = JOINT, category: int | None = None) -> GmmModel:
    """EM for a diagonal-covariance mixture, initialised from k-means.

    Variances are floored at 1e-4 times the per-dimension data variance. A
    fit that leaves a component with weight below 1e-8 is retried once with
    a fresh k-means seed before raising :class:`VocabularyError`.
    """
    X = _check_rows(rows, K)
    floor = GMM_VAR_FLOOR * np.maximum(X.var(axis=0), np.finfo(float).tiny)
    for attempt in np.random.SeedSequence(seed).spawn(2):
        cb = kmeans_fit(X, K, restarts=restarts, seed=int(attempt.generate_state(1)[0]))
        labels = cb.assign(X)
        counts = np.bincount(labels, minlength=K).astype(float)
        var = np.empty_like(cb.centroids)
        for k in range(K):
            members = X[labels == k]
            var[k] = members.var(axis=0) if len(members) else X.var(axis=0)
        init = GmmModel(np.maximum(counts, 1.0) / np.maximum(counts, 1.0).sum(),
                        cb.centroids.copy(), np.maximum(var, floor), component, category)
        gmm = _em(X, init, floor, max_iter, tol)
        if np.all(gmm.weights >= GMM_MIN_WEIGHT):
            return gmm
    raise VocabularyError(f"GMM with K={K} has a degenerate component after re-seeding")


# -- vocabulary sets ----------------------------------------------------------

@dataclass
class VocabularySet:
    kind: str
    scheme: str
    per_category: bool
    K: int
    layout: ComponentLayout
    class_count: int
    codebooks: dict = field(default_factory=dict)     # (key, category) -> Codebook
    gmms: dict = field(default_factory=dict)          # (key, category) -> GmmModel
    pcas: dict = field(default_factory=dict)          # component -> PcaModel
    pca_dims: int = PCA_DIMS

    @property
    def keys(self) -> list[str]:
        return self.layout.names if self.scheme == "2a" else [JOINT]

    @property
    def categories(self) -> list:
        return list(range(self.class_count)) if self.per_category else [None]

    def models(self, key):
        """Models for one block, in category order."""
        store = self.gmms if self.kind == "fisher" else self.codebooks
        return [store[(key, c)] for c in self.categories]

    def universal_centroids(self, key) -> np.ndarray:
        """Per-category codebooks stacked into one K*C codebook."""
        return np.concatenate([cb.centroids for cb in self.models(key)])

    def block_input_dims(self, key) -> int:
        if self.kind == "bof":
            return self.layout.total_dims if key == JOINT else dict(self.layout.components)[key]
        return self.pca_dims * (len(self.layout.components) if key == JOINT else 1)

    def project(self, X) -> dict[str, np.ndarray]:
        """Slice (and for vlad/fisher, PCA-reduce) descriptors per block key."""
        X = np.asarray(X, dtype=np.float64)
        sl = self.layout.slices()
        if self.kind == "bof":
            if self.scheme == "2b":
                return {JOINT: X}
            return {name: X[:, sl[name]] for name in self.layout.names}
        reduced = {name: self.pcas[name].transform(X[:, sl[name]]) for name in self.layout.names}
        if self.scheme == "2b":
            return {JOINT: np.concatenate([reduced[n] for n in self.layout.names], axis=1)}
        return reduced

    def save(self, path) -> None:
        """Write layout, flags and all matrices (float64) to one versioned file."""
        arrays = {}
        meta = {
            "kind": self.kind, "scheme": self.scheme, "per_category": self.per_category,
            "K": self.K, "layout": self.layout.to_text(), "class_count": self.class_count,
            "pca_dims": self.pca_dims, "codebooks": [], "gmms": [], "pcas": [],
        }
        for i, ((key, cat), cb) in enumerate(sorted(self.codebooks.items(), key=_order)):
            arrays[f"cb{i}_centroids"] = cb.centroids.astype(np.float64)
            meta["codebooks"].append({"key": key, "category": cat, "error": cb.training_error,
                                      "restart_errors": cb.restart_errors, "n_iter": cb.n_iter})
        for i, ((key, cat), g) in enumerate(sorted(self.gmms.items(), key=_order)):
            arrays[f"gmm{i}_weights"] = g.weights
            arrays[f"gmm{i}_means"] = g.means
            arrays[f"gmm{i}_variances"] = g.variances
            meta["gmms"].append({"key": key, "category": cat, "loglik": g.loglik_history})
        for i, (name, p) in enumerate(sorted(self.pcas.items())):
            arrays[f"pca{i}_mean"] = p.mean
            arrays[f"pca{i}_projection"] = p.projection
            arrays[f"pca{i}_explained"] = p.explained_variance
            meta["pcas"].append({"component": name})
        write_arrays(path, "vocabulary", VOCAB_FORMAT_VERSION, meta,
                     {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})

    @classmethod
    def load(cls, path) -> "VocabularySet":
        meta, z = read_arrays(path, "vocabulary", VOCAB_FORMAT_VERSION)
        vs = cls(meta["kind"], meta["scheme"], meta["per_category"], meta["K"],
                 ComponentLayout.from_text(meta["layout"]), meta["class_count"],
                 pca_dims=meta["pca_dims"])
        for i, m in enumerate(meta["codebooks"]):
            vs.codebooks[(m["key"], m["category"])] = Codebook(
                z[f"cb{i}_centroids"], m["key"], m["category"], m["error"],
                m["restart_errors"], m["n_iter"])
        for i, m in enumerate(meta["gmms"]):
            vs.gmms[(m["key"], m["category"])] = GmmModel(
                z[f"gmm{i}_weights"], z[f"gmm{i}_means"], z[f"gmm{i}_variances"],
                m["key"], m["category"], m["loglik"])
        for i, m in enumerate(meta["pcas"]):
            vs.pcas[m["component"]] = PcaModel(
                z[f"pca{i}_mean"], z[f"pca{i}_projection"], z[f"pca{i}_explained"],
                m["component"])
        return vs


def _order(item):
    (key, cat), _ = item
    return (key, -1 if cat is None else cat)


def _stream(seed: int, block: int, category) -> int:
    ss = np.random.SeedSequence([int(seed), block, 0 if category is None else category])
    return int(ss.generate_state(1)[0])


def fit_vocabularies(pool: FeaturePool, K: int, scheme: str = "2a",
                     per_category: bool = False, seed: int = 0, kind: str = "bof",
                     pca_dims: int = PCA_DIMS, restarts: int = KMEANS_RESTARTS,
                     layout: ComponentLayout | None = None) -> VocabularySet:
    """Learn every model one encoding method needs from a sampled pool."""
    scheme = normalize_scheme(scheme)
    if kind not in KINDS:
        raise ValueError(f"unknown vocabulary kind {kind!r}")
    if per_category and kind == "fisher":
        raise ValueError("per-category vocabularies are defined for k-means kinds only")
    layout = layout or ComponentLayout.default()
    if pool.rows.shape[1] != layout.total_dims:
        raise VocabularyError(f"pool rows have {pool.rows.shape[1]} dims, layout {layout.total_dims}")
    vs = VocabularySet(kind, scheme, bool(per_category), int(K), layout, pool.class_count,
                       pca_dims=pca_dims)
    X = np.asarray(pool.rows, dtype=np.float64)
    if kind != "bof":
        for i, (name, sl) in enumerate(layout.slices().items()):
            vs.pcas[name] = pca_fit(X[:, sl], pca_dims, seed=_stream(seed, 1000 + i, None),
                                    component=name)
    blocks = vs.project(X)
    if per_category:
        counts = pool.class_counts()
        short = [c for c in range(pool.class_count) if counts[c] < K]
        if short:
            raise VocabularyError(f"classes {short} have fewer than K={K} pooled rows")
    for b, key in enumerate(vs.keys):
        data = blocks[key]
        for cat in vs.categories:
            rows = data if cat is None else data[pool.labels == cat]
            s = _stream(seed, b, cat)
            if kind == "fisher":
                vs.gmms[(key, cat)] = gmm_fit(rows, K, seed=s, restarts=restarts,
                                              component=key, category=cat)
            else:
                vs.codebooks[(key, cat)] = kmeans_fit(rows, K, restarts=restarts, seed=s,
                                                      component=key, category=cat)
    return vs
